"""Event-driven sampling of the closed swarm chain.

Trajectories are drawn with the direct (Gillespie) method on the occupancy
vector.  Rates come from :func:`swarmcap.rates.event_rates`, the same
function the exact generator is built from, and are memoized per visited
state.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .core import ModelParams, SwarmState, contains_table
from .errors import InvalidParams
from .rates import event_rates, event_table


class InitialCondition(str, enum.Enum):
    ALL_EMPTY = "ALL_EMPTY"
    ONE_CLUB = "ONE_CLUB"


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    horizon: float
    seed: int = 0
    warmup: float = 0.0
    replications: int = 1
    initial_condition: InitialCondition | SwarmState = InitialCondition.ALL_EMPTY

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise InvalidParams(f"need horizon > warmup >= 0, got {self.horizon}, {self.warmup}")
        if self.replications < 1:
            raise InvalidParams("replications must be >= 1")
        if not isinstance(self.initial_condition, SwarmState):
            object.__setattr__(self, "initial_condition", InitialCondition(self.initial_condition))

    def initial_state(self) -> np.ndarray:
        p = self.params
        ic = self.initial_condition
        if isinstance(ic, SwarmState):
            if ic.K != p.K or ic.N != p.N or (ic.seeds is not None) != p.seeds_enabled:
                raise InvalidParams("custom initial state does not match params")
            return ic.to_array()
        x = np.zeros(p.width, dtype=np.int64)
        if ic is InitialCondition.ALL_EMPTY or p.K == 1:
            x[0] = p.N
        else:
            # everyone but one newcomer misses block K
            x[2 ** (p.K - 1) - 1] = p.N - 1
            x[0] = 1
        return x


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(replication,)))


def one_club_size(x: np.ndarray, K: int) -> int:
    """Peers missing exactly the rarest block (lowest index on ties)."""
    M = 2**K - 1
    replicas = x[:M] @ contains_table(K)
    rarest = int(np.argmin(replicas))
    return int(x[M - (1 << rarest)])


@dataclass
class Trajectory:
    """Outcome of one replication."""

    final_time: float
    final_state: np.ndarray
    departures: int
    departures_after_warmup: int
    events: int
    stopped: bool = False
    log: list | None = None


class Simulator:
    """Samples trajectories for one parameter set; caches rates per state."""

    def __init__(self, params: ModelParams, cache_size: int = 500_000):
        self.params = params
        self.table = event_table(params.K, params.seeds_enabled)
        delta = np.zeros((self.table.size, params.width), dtype=np.int64)
        rows = np.arange(self.table.size)
        np.add.at(delta, (rows, self.table.src), -1)
        np.add.at(delta, (rows, self.table.dst), 1)
        self.delta = delta
        self.cache_size = cache_size
        self._cache: dict[bytes, tuple[np.ndarray, float]] = {}

    def rates(self, x: np.ndarray) -> np.ndarray:
        return event_rates(x[None, :], self.params)[0]

    def _cumulative(self, x: np.ndarray):
        key = x.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            cum = np.cumsum(self.rates(x))
            hit = (cum, float(cum[-1]))
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def run(
        self,
        x0: np.ndarray,
        horizon: float,
        rng: np.random.Generator,
        warmup: float = 0.0,
        stop: Callable[[np.ndarray, float], bool] | None = None,
        record: bool = False,
    ) -> Trajectory:
        """Advance from ``x0`` until ``horizon`` or until ``stop(x, t)`` is true."""
        x = np.array(x0, dtype=np.int64)
        departure = self.table.departure
        t = 0.0
        deps = deps_after = events = 0
        log = [] if record else None
        if stop is not None and stop(x, t):
            return Trajectory(t, x, 0, 0, 0, True, log)
        batch = 4096
        u = rng.random((batch, 2))
        k = 0
        while True:
            cum, total = self._cumulative(x)
            if total <= 0.0:
                t = horizon
                break
            if k == batch:
                u = rng.random((batch, 2))
                k = 0
            t -= math.log1p(-u[k, 0]) / total
            if t > horizon:
                t = horizon
                break
            e = int(np.searchsorted(cum, u[k, 1] * total, side="right"))
            e = min(e, len(cum) - 1)
            k += 1
            x += self.delta[e]
            events += 1
            if departure[e]:
                deps += 1
                if t >= warmup:
                    deps_after += 1
            if record:
                log.append((t, e))
            if stop is not None and stop(x, t):
                return Trajectory(t, x, deps, deps_after, events, True, log)
        return Trajectory(t, x, deps, deps_after, events, False, log)


def simulate(config: SimConfig, replication: int = 0, record: bool = False, simulator: Simulator | None = None) -> Trajectory:
    """Run one replication of ``config`` on its private random stream."""
    sim = simulator or Simulator(config.params)
    rng = replication_rng(config.seed, replication)
    return sim.run(config.initial_state(), config.horizon, rng, warmup=config.warmup, record=record)


def event_log(traj: Trajectory) -> str:
    """Text rendering of a recorded trajectory, one ``time event`` pair per line."""
    return "".join(f"{t!r} {e}\n" for t, e in traj.log or [])


# ---------------------------------------------------------------------------
# steady-state throughput


@dataclass
class ThroughputEstimate:
    mean: float
    ci_halfwidth: float
    replications: int
    samples: np.ndarray = field(repr=False, default=None)


def _throughput_rep(args):
    config, rep = args
    traj = simulate(config, rep)
    return traj.departures_after_warmup / (config.horizon - config.warmup)


def replicate_throughput(config: SimConfig, n_jobs: int = 1) -> np.ndarray:
    jobs = [(config, r) for r in range(config.replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            return np.array(list(pool.map(_throughput_rep, jobs)))
    sim = Simulator(config.params)
    span = config.horizon - config.warmup
    return np.array([simulate(config, r, simulator=sim).departures_after_warmup / span for r in range(config.replications)])


def estimate_throughput(config: SimConfig, confidence: float = 0.95, n_jobs: int = 1) -> ThroughputEstimate:
    """Mean departure rate after warmup with a Student-t interval across replications."""
    if config.replications < 2:
        raise InvalidParams("a confidence interval needs at least 2 replications")
    samples = replicate_throughput(config, n_jobs)
    R = len(samples)
    half = stats.t.ppf(0.5 + confidence / 2, R - 1) * samples.std(ddof=1) / math.sqrt(R)
    return ThroughputEstimate(float(samples.mean()), float(half), R, samples)


# ---------------------------------------------------------------------------
# transient one-club metrics


@dataclass
class TransientResult:
    """Per-replication stopping times; censored samples carry the horizon."""

    samples: np.ndarray
    censored: np.ndarray
    grid: np.ndarray
    cdf: np.ndarray

    @property
    def replications(self) -> int:
        return len(self.samples)

    def prob_le(self, t: float) -> float:
        """Empirical P(stopping time <= t); censored samples never count."""
        return float(np.mean((self.samples <= t) & ~self.censored))


def _transient(config: SimConfig, stop, grid) -> TransientResult:
    sim = Simulator(config.params)
    x0 = config.initial_state()
    samples = np.empty(config.replications)
    censored = np.zeros(config.replications, dtype=bool)
    for r in range(config.replications):
        traj = sim.run(x0, config.horizon, replication_rng(config.seed, r), stop=stop)
        samples[r] = traj.final_time
        censored[r] = not traj.stopped
    if grid is None:
        grid = np.linspace(0.0, config.horizon, 101)
    grid = np.asarray(grid, dtype=float)
    done = np.sort(samples[~censored])
    cdf = np.searchsorted(done, grid, side="right") / config.replications
    return TransientResult(samples, censored, grid, cdf)


def transient_time_to_one_club(config: SimConfig, fraction: float = 0.9, grid=None) -> TransientResult:
    """Time until at least ``fraction * N`` peers miss only the rarest block."""
    if config.initial_condition is not InitialCondition.ALL_EMPTY:
        raise InvalidParams("entry time is measured from the all-empty state")
    K, threshold = config.params.K, fraction * config.params.N
    return _transient(config, lambda x, t: one_club_size(x, K) >= threshold, grid)


def transient_time_to_leave_one_club(config: SimConfig, fraction: float = 0.5, grid=None) -> TransientResult:
    """Time until fewer than ``fraction * N`` peers remain in the one-club."""
    if config.initial_condition is not InitialCondition.ONE_CLUB:
        raise InvalidParams("exit time is measured from the one-club state")
    K, threshold = config.params.K, fraction * config.params.N
    return _transient(config, lambda x, t: one_club_size(x, K) < threshold, grid)
