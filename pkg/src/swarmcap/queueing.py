"""Queueing-network approximation of the saturated swarm.

The network tracks peers outside the one-club.  Top queues ``F_0..F_J`` hold
newcomers and peers with ``1..J`` popular blocks; each is a birth-death
queue served at ``n * mu_prime`` by the one-club plus a state-independent
share of the publisher.  Peers that obtain the rarest block move to
infinite-server "gifted" queues whose members feed the one-club.  The
departure rate of the whole network is fed back as the newcomer arrival
rate until it reproduces itself.

Assumes the publisher runs most-deprived / rarest-first and peers run
random-peer / random-useful-block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams
from .errors import DegenerateRates, NotConverged, Unstable

TAIL_TOL = 1e-12
MAX_LEVELS = 1_000_000


@dataclass(frozen=True)
class QueueSolution:
    """Stationary summary of one birth-death queue.

    Death rate with ``n >= 1`` peers queued is
    ``n * base_service + bonus_service``.
    """

    pi0: float
    mean_n: float
    arrival: float
    base_service: float
    bonus_service: float

    @property
    def departure_rate(self) -> float:
        return self.bonus_service * (1.0 - self.pi0) + self.mean_n * self.base_service


def solve_birth_death(arrival: float, per_peer: float, bonus: float, tail_tol: float = TAIL_TOL) -> QueueSolution:
    """Empty probability and mean occupancy of a birth-death queue.

    Unbounded levels are truncated adaptively, doubling until the neglected
    tail carries less than ``tail_tol`` of the mass.
    """
    if arrival < 0 or per_peer < 0 or bonus < 0:
        raise ValueError("rates must be non-negative")
    if arrival == 0:
        return QueueSolution(1.0, 0.0, arrival, per_peer, bonus)
    if per_peer == 0:
        if arrival >= bonus:
            raise Unstable(f"arrival {arrival} >= service {bonus} with no per-peer service")
        rho = arrival / bonus
        return QueueSolution(1.0 - rho, rho / (1.0 - rho), arrival, per_peer, bonus)

    size = 64
    while True:
        n = np.arange(1, size + 1)
        ratio = arrival / (n * per_peer + bonus)
        with np.errstate(divide="ignore"):  # underflowing ratios give exact zeros
            log_p = np.concatenate([[0.0], np.cumsum(np.log(ratio))])
        p = np.exp(log_p - log_p.max())
        total = p.sum()
        last = ratio[-1]
        if last < 1.0 and p[-1] * last / (1.0 - last) <= tail_tol * total:
            break
        if size >= MAX_LEVELS:
            raise Unstable(f"occupancy not concentrated within {MAX_LEVELS} levels")
        size = min(2 * size, MAX_LEVELS)
    p /= total
    levels = np.arange(size + 1)
    return QueueSolution(float(p[0]), float(levels @ p), arrival, per_peer, bonus)


def flow_rates(queues: list[QueueSolution], params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Rarest-block (gift) and popular-block outflow of each top queue.

    The publisher reaches ``F_j`` only when every lower queue is empty,
    which is approximated by the product of their stationary empty
    probabilities.
    """
    pi0 = np.array([q.pi0 for q in queues])
    upstream_idle = np.concatenate([[1.0], np.cumprod(pi0)[:-1]])
    gamma_r = params.U * upstream_idle * (1.0 - pi0)
    gamma_p = np.array([q.mean_n for q in queues]) * params.mu_prime
    return gamma_r, gamma_p


def _check_rates(params: ModelParams):
    if params.K < 2:
        raise DegenerateRates("the queueing network needs K >= 2")
    if params.mu_prime <= 0:
        raise DegenerateRates("mu_prime must be positive")


def psi(gamma_r, params: ModelParams, J: int | None = None) -> float:
    """Rate at which gifted peers deliver the rarest block to the one-club."""
    _check_rates(params)
    gamma_r = np.asarray(gamma_r, dtype=float)
    J = len(gamma_r) - 1 if J is None else J
    l = np.arange(J + 1)
    ratio = params.mu / params.mu_prime
    return float(ratio * np.sum(((params.K - 2 - l) + 1.0 / ratio) * gamma_r[: J + 1]))


def psi_by_occupancy(gamma_r, params: ModelParams, J: int | None = None) -> float:
    """Same rate as :func:`psi`, summed queue by queue over the gifted queues.

    Gifted queue ``G+i`` (``i < J``) is infinite-server with arrival
    ``sum(gamma_r[:i+1])`` and per-peer rate ``mu_prime``; the catch-all
    queue serves at ``mu`` except for the fraction that already holds
    ``K-1`` blocks, which serves at ``mu_prime``.
    """
    _check_rates(params)
    gamma_r = np.asarray(gamma_r, dtype=float)
    J = len(gamma_r) - 1 if J is None else J
    K, mu, mu_p = params.K, params.mu, params.mu_prime
    cumulative = np.cumsum(gamma_r[: J + 1])
    occupancy = cumulative[:J] / mu_p
    tail = ((K - (J + 2)) * mu + mu_p) / mu_p * cumulative[J]
    return float(mu * occupancy.sum() + tail)


def total_departure(gamma_r, psi_rate: float, pi0s, params: ModelParams) -> float:
    """Network departure rate: gifted peers, one-club fed by gifted peers, one-club fed by the publisher."""
    return float(np.sum(gamma_r) + psi_rate + params.U * np.prod(pi0s))


def proposition1_bound(params: ModelParams) -> float:
    """Throughput ceiling when the publisher spends all of U on newcomers."""
    _check_rates(params)
    return ((params.K - 2) * params.mu / params.mu_prime + 2) * params.U


@dataclass
class QueueNetworkSolution:
    J: int
    queues: list
    gamma_r: np.ndarray
    gamma_p: np.ndarray
    psi: float
    Gamma0: float
    lambda_s: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def solve_network(arrival: float, params: ModelParams, J: int = 1) -> QueueNetworkSolution:
    """One pass of the network for a given newcomer arrival rate."""
    _check_rates(params)
    J = min(J, params.K - 2)
    queues = []
    publisher_share = params.U
    inflow = arrival
    for _ in range(J + 1):
        q = solve_birth_death(inflow, params.mu_prime, publisher_share)
        queues.append(q)
        publisher_share *= q.pi0
        inflow = q.mean_n * params.mu_prime
    gamma_r, gamma_p = flow_rates(queues, params)
    rate = psi(gamma_r, params, J)
    Gamma0 = total_departure(gamma_r, rate, [q.pi0 for q in queues], params)
    return QueueNetworkSolution(J, queues, gamma_r, gamma_p, rate, Gamma0, arrival, 0, False)


def fixed_point(
    params: ModelParams,
    J: int = 1,
    tolerance: float = 1e-8,
    max_iter: int = 100_000,
    damping: float = 0.5,
    initial: float | None = None,
) -> QueueNetworkSolution:
    """Iterate arrival -> departure until the network reproduces its own input.

    Starts from ``U`` and uses a damped update.  Stops once the departure
    rate matches the arrival rate to ``tolerance`` (relative).
    """
    _check_rates(params)
    if not 0 <= J <= max(params.K - 2, 1):
        raise ValueError(f"J must lie in 0..{params.K - 2}")
    lam = params.U if initial is None else float(initial)
    history = []
    for it in range(1, max_iter + 1):
        sol = solve_network(lam, params, J)
        history.append(lam)
        if abs(sol.Gamma0 - lam) <= tolerance * lam:
            sol.iterations, sol.converged, sol.history = it, True, history
            return sol
        lam = (1.0 - damping) * lam + damping * sol.Gamma0
    raise NotConverged(f"fixed point not reached in {max_iter} iterations (last lambda {lam})")
