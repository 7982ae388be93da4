"""Transition rates of the closed swarm chain, vectorized over batches of states.

Both the exact generator builder and the stochastic simulator draw their
rates from :func:`event_rates`, so the two can only disagree through
sampling noise.

A batch is an integer array ``X`` of shape ``(n, width)``; see
:mod:`swarmcap.core` for the slot layout.  Rates for "peers of signature
C receive block j" come back as ``(n, 2**K - 1, K)`` arrays that are zero
wherever ``j`` is already in ``C``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ModelParams, PeerPolicy, PublisherPolicy, cardinality_table, contains_table


@dataclass(frozen=True)
class EventTable:
    """Static description of every possible transition.

    Event ``e`` moves one peer from slot ``src[e]`` to slot ``dst[e]``;
    ``departure[e]`` marks events that count toward throughput.  The first
    ``len(sig)`` events are block transfers ``(sig[e], block[e])``; when
    seeds are enabled a final event is the seed departure.
    """

    src: np.ndarray
    dst: np.ndarray
    departure: np.ndarray
    sig: np.ndarray
    block: np.ndarray

    @property
    def size(self):
        return len(self.src)


@lru_cache(maxsize=None)
def event_table(K: int, seeds_enabled: bool) -> EventTable:
    M = 2**K - 1
    card = cardinality_table(K)
    src, dst, dep, sig, block = [], [], [], [], []
    for C in range(M):
        for j in range(K):
            if C >> j & 1:
                continue
            src.append(C)
            sig.append(C)
            block.append(j)
            if card[C] < K - 1:
                dst.append(C | 1 << j)
                dep.append(False)
            elif seeds_enabled:
                dst.append(M)
                dep.append(False)
            else:
                dst.append(0)
                dep.append(True)
    if seeds_enabled:
        src.append(M)
        dst.append(0)
        dep.append(True)
    arrays = [np.asarray(a) for a in (src, dst, dep)]
    table = EventTable(arrays[0], arrays[1], arrays[2].astype(bool), np.asarray(sig), np.asarray(block))
    for a in (table.src, table.dst, table.departure, table.sig, table.block):
        a.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _donor_tables(K: int, seeds_enabled: bool):
    """Donor-side constants.

    ``share[S, C, j]`` is ``1/|S - C|`` when ``j`` is in ``S - C``, else 0,
    the chance that a donor with signature S picks block j for a recipient
    with signature C.  ``helps[S, C]`` flags ``S - C`` non-empty.  Donor
    rows run over the stored signatures plus, with seeds, the full set.
    """
    M = 2**K - 1
    donors = list(range(M)) + ([M] if seeds_enabled else [])
    contains = contains_table(K)
    full = np.ones(K, dtype=np.int64)
    donor_bits = np.array([contains[S] if S < M else full for S in donors])
    gives = donor_bits[:, None, :] * (1 - contains)[None, :, :]
    n_useful = gives.sum(axis=2)
    share = np.divide(gives, n_useful[:, :, None], out=np.zeros(gives.shape), where=n_useful[:, :, None] > 0)
    helps = n_useful > 0
    card = donor_bits.sum(axis=1)
    return share, helps, card


def peer_rates(X: np.ndarray, params: ModelParams) -> np.ndarray:
    """Aggregate peer-to-peer transfer rates, shape ``(n, M, K)``."""
    X = np.asarray(X, dtype=np.float64)
    K, N = params.K, params.N
    M = 2**K - 1
    share, helps, card = _donor_tables(K, params.seeds_enabled)
    sigma = X[:, :M]
    donors = X[:, : share.shape[0]]

    # seeds have every block; mu_prime only applies to the K-1 stage
    mu_s = np.where(card == K - 1, params.mu_prime, params.mu)
    if params.seeds_enabled:
        mu_s[-1] = params.mu

    # newcomers the tracker withholds from other peers
    hidden = np.zeros((len(X), 1))
    if params.shield_newcomers:
        limit = sigma[:, :1] if params.shield_limit is None else np.minimum(sigma[:, :1], params.shield_limit)
        hidden = limit
    visible = sigma.copy()
    visible[:, :1] -= hidden

    if params.peer_policy is PeerPolicy.RUP_RUB:
        neighbours = (visible[:, None, :] * helps[None, :, :]).sum(axis=2)
    else:
        neighbours = np.broadcast_to(N - 1 - hidden, donors.shape)
    weight = mu_s * donors / np.maximum(neighbours, 1.0)
    return visible[:, :, None] * np.einsum("ns,scj->ncj", weight, share)


def rarest_useful(X: np.ndarray, K: int) -> np.ndarray:
    """Boolean ``(n, M, K)``: block j is among the least replicated blocks useful to C."""
    M = 2**K - 1
    contains = contains_table(K)
    useful = (1 - contains).astype(bool)
    replicas = np.asarray(X)[:, :M] @ contains
    masked = np.where(useful[None, :, :], replicas[:, None, :], np.iinfo(np.int64).max)
    return useful[None, :, :] & (masked == masked.min(axis=2, keepdims=True))


def publisher_rates(X: np.ndarray, params: ModelParams) -> np.ndarray:
    """Publisher transfer rates, shape ``(n, M, K)``."""
    K, N, U = params.K, params.N, params.U
    M = 2**K - 1
    X = np.asarray(X)
    sigma = X[:, :M].astype(np.float64)
    contains = contains_table(K)
    policy = params.publisher_policy

    if policy is PublisherPolicy.RP_RUB:
        useful = 1.0 - contains
        return (U / N) * sigma[:, :, None] * useful / useful.sum(axis=1)[:, None]

    rarest = rarest_useful(X, K)
    per_block = rarest / rarest.sum(axis=2, keepdims=True)
    if policy is PublisherPolicy.RP_RFB:
        return (U / N) * sigma[:, :, None] * per_block

    card = cardinality_table(K)
    present_card = np.where(sigma > 0, card[None, :], K)
    most_deprived = card[None, :] == present_card.min(axis=1, keepdims=True)
    served = sigma * most_deprived
    total = served.sum(axis=1, keepdims=True)
    frac = np.divide(served, total, out=np.zeros_like(served), where=total > 0)
    return U * frac[:, :, None] * per_block


def event_rates(X: np.ndarray, params: ModelParams) -> np.ndarray:
    """Total rate of every event in :func:`event_table`, shape ``(n, n_events)``."""
    X = np.atleast_2d(np.asarray(X))
    table = event_table(params.K, params.seeds_enabled)
    transfer = publisher_rates(X, params) + peer_rates(X, params)
    n_transfer = len(table.sig)
    out = np.empty((X.shape[0], table.size))
    out[:, :n_transfer] = transfer[:, table.sig, table.block]
    if params.seeds_enabled:
        out[:, -1] = params.gamma * X[:, -1]
    return out
