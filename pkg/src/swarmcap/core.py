"""Swarm state types, state-space enumeration and block-relabeling lumping.

A peer's content is a *signature*: the subset of the K blocks it holds.
Internally a signature is a K-bit mask where block ``j`` (1-based) is bit
``j - 1``.  The full mask ``2**K - 1`` is never stored because peers leave
as soon as they complete, so masks ``0 .. 2**K - 2`` index the ``2**K - 1``
occupancy slots of a state vector directly.  When seeds are enabled the
state vector carries one extra trailing slot holding the seed count.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .errors import EnumerationLimitExceeded, InvalidParams

DEFAULT_STATE_CAP = 5_000_000


class PublisherPolicy(str, enum.Enum):
    RP_RUB = "RP_RUB"
    RP_RFB = "RP_RFB"
    MDP_RFB = "MDP_RFB"


class PeerPolicy(str, enum.Enum):
    RP_RUB = "RP_RUB"
    RUP_RUB = "RUP_RUB"  # experimental


@dataclass(frozen=True, order=True)
class Signature:
    """Set of 1-based block indices held by a peer."""

    blocks: frozenset = frozenset()

    def __post_init__(self):
        blocks = frozenset(int(b) for b in self.blocks)
        if any(b < 1 for b in blocks):
            raise InvalidParams(f"block indices start at 1, got {sorted(blocks)}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def mask(self) -> int:
        return sum(1 << (b - 1) for b in self.blocks)

    @classmethod
    def from_mask(cls, mask: int) -> "Signature":
        return cls(frozenset(b + 1 for b in range(mask.bit_length()) if mask >> b & 1))

    def __len__(self):
        return len(self.blocks)

    def __contains__(self, block):
        return block in self.blocks

    def __repr__(self):
        return "{" + ",".join(map(str, sorted(self.blocks))) + "}"


def _as_signature(key) -> Signature:
    if isinstance(key, Signature):
        return key
    return Signature(frozenset(key))


@dataclass(frozen=True)
class ModelParams:
    """Scenario definition for every solver.

    ``gamma`` is the seed departure rate; ``math.inf`` (the default) means
    completed peers leave at once and no seed slot exists.  ``mu_prime``
    defaults to ``mu``.
    """

    K: int
    N: int
    U: float
    mu: float
    mu_prime: float | None = None
    publisher_policy: PublisherPolicy = PublisherPolicy.RP_RUB
    peer_policy: PeerPolicy = PeerPolicy.RP_RUB
    shield_newcomers: bool = False
    gamma: float = math.inf
    shield_limit: int | None = 1

    def __post_init__(self):
        if self.mu_prime is None:
            object.__setattr__(self, "mu_prime", self.mu)
        object.__setattr__(self, "publisher_policy", PublisherPolicy(self.publisher_policy))
        object.__setattr__(self, "peer_policy", PeerPolicy(self.peer_policy))
        if int(self.K) != self.K or self.K < 1:
            raise InvalidParams(f"K must be a positive integer, got {self.K}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParams(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "N", int(self.N))
        if not self.U > 0:
            raise InvalidParams(f"U must be positive, got {self.U}")
        if self.mu < 0 or self.mu_prime < 0:
            raise InvalidParams("peer rates must be non-negative")
        if self.mu_prime > self.mu:
            raise InvalidParams(f"mu_prime ({self.mu_prime}) may not exceed mu ({self.mu})")
        if not self.gamma > 0:
            raise InvalidParams(f"gamma must be positive (inf disables seeds), got {self.gamma}")

    @property
    def n_signatures(self) -> int:
        return 2**self.K - 1

    @property
    def seeds_enabled(self) -> bool:
        return math.isfinite(self.gamma)

    @property
    def width(self) -> int:
        """Length of the occupancy vector (signatures plus optional seed slot)."""
        return self.n_signatures + int(self.seeds_enabled)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SwarmState:
    """Occupancy vector: ``counts[mask]`` peers hold signature ``mask``.

    ``seeds`` is ``None`` unless the lingering-seed extension is active.
    """

    K: int
    counts: tuple
    seeds: int | None = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 2**self.K - 1:
            raise InvalidParams(f"expected {2**self.K - 1} counts for K={self.K}, got {len(counts)}")
        if any(c < 0 for c in counts) or (self.seeds is not None and self.seeds < 0):
            raise InvalidParams("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_mapping(cls, K: int, mapping: Mapping, seeds: int | None = None) -> "SwarmState":
        """Build a state from ``{signature: count}``; keys may be Signatures or block iterables."""
        counts = [0] * (2**K - 1)
        for key, n in mapping.items():
            sig = _as_signature(key)
            if sig.blocks and max(sig.blocks) > K:
                raise InvalidParams(f"signature {sig} has blocks outside 1..{K}")
            if len(sig) == K:
                raise InvalidParams("the full signature is never stored")
            counts[sig.mask] += n
        return cls(K, tuple(counts), seeds)

    @classmethod
    def all_empty(cls, params: ModelParams) -> "SwarmState":
        counts = [0] * params.n_signatures
        counts[0] = params.N
        return cls(params.K, tuple(counts), 0 if params.seeds_enabled else None)

    @classmethod
    def from_array(cls, K: int, row, seeds_enabled: bool = False) -> "SwarmState":
        row = [int(v) for v in row]
        M = 2**K - 1
        return cls(K, tuple(row[:M]), row[M] if seeds_enabled else None)

    @property
    def N(self) -> int:
        return sum(self.counts) + (self.seeds or 0)

    def count(self, signature) -> int:
        return self.counts[_as_signature(signature).mask]

    def items(self) -> Iterable[tuple[Signature, int]]:
        """Non-zero ``(signature, count)`` pairs in mask order."""
        for mask, n in enumerate(self.counts):
            if n:
                yield Signature.from_mask(mask), n

    def to_array(self) -> np.ndarray:
        row = list(self.counts)
        if self.seeds is not None:
            row.append(self.seeds)
        return np.asarray(row, dtype=np.int64)

    def __repr__(self):
        body = ", ".join(f"{sig!r}:{n}" for sig, n in self.items())
        tail = f", seeds={self.seeds}" if self.seeds is not None else ""
        return f"SwarmState(K={self.K}, {{{body}}}{tail})"


@dataclass(frozen=True)
class ReplicaProfile:
    replicas: tuple

    def __getitem__(self, block):
        return self.replicas[block - 1]


# ---------------------------------------------------------------------------
# mask tables


@lru_cache(maxsize=None)
def contains_table(K: int) -> np.ndarray:
    """``(2**K - 1, K)`` 0/1 matrix, entry ``[m, b]`` is 1 iff mask m has bit b."""
    M = 2**K - 1
    masks = np.arange(M)[:, None]
    table = (masks >> np.arange(K)[None, :]) & 1
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def cardinality_table(K: int) -> np.ndarray:
    card = contains_table(K).sum(axis=1)
    card.setflags(write=False)
    return card


# ---------------------------------------------------------------------------
# enumeration


def count_states(params: ModelParams) -> int:
    """Number of weak compositions of N over the occupancy slots."""
    w = params.width
    return math.comb(params.N + w - 1, w - 1)


@lru_cache(maxsize=256)
def _compositions(n: int, w: int) -> np.ndarray:
    if w == 1:
        return np.array([[n]], dtype=np.int32)
    parts = []
    for v in range(n + 1):
        rest = _compositions(n - v, w - 1)
        parts.append(np.hstack([np.full((len(rest), 1), v, dtype=np.int32), rest]))
    out = np.vstack(parts)
    out.setflags(write=False)
    return out


def state_array(params: ModelParams, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All occupancy vectors as an ``(n_states, width)`` array in lexicographic order."""
    n_states = count_states(params)
    if n_states > cap:
        raise EnumerationLimitExceeded(n_states, cap)
    return _compositions(params.N, params.width)


@lru_cache(maxsize=64)
def _binomials(top: int, width: int) -> np.ndarray:
    table = np.zeros((top + 1, width + 1), dtype=np.int64)
    for a in range(top + 1):
        for b in range(min(a, width) + 1):
            table[a, b] = math.comb(a, b)
    return table


def composition_rank(X: np.ndarray, N: int) -> np.ndarray:
    """Index of each row of ``X`` within :func:`state_array` order.

    Rows must be compositions of ``N``.  The rank counts the compositions that
    precede a row lexicographically, slot by slot, via the hockey-stick
    identity, so no lookup table over the state space is needed.
    """
    X = np.asarray(X, dtype=np.int64)
    n, w = X.shape
    binom = _binomials(N + w, w)
    rank = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, N, dtype=np.int64)
    for i in range(w - 1):
        d = w - 1 - i
        x = X[:, i]
        rank += binom[remaining + d, d] - binom[remaining - x + d, d]
        remaining -= x
    return rank


def lump_array(X: np.ndarray, K: int) -> np.ndarray:
    """Vectorized canonical relabeling of a batch of occupancy vectors.

    Blocks are relabeled by ascending replica count, ties by ascending
    original index; any trailing seed slot is carried over unchanged.
    """
    X = np.asarray(X)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    M = 2**K - 1
    contains = contains_table(K)
    sig = X[:, :M]
    replicas = sig @ contains
    order = np.argsort(replicas, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(K), order.shape), axis=1)
    new_mask = (contains[None, :, :] << rank[:, None, :]).sum(axis=2)
    out = np.empty_like(X)
    np.put_along_axis(out[:, :M], new_mask, sig, axis=1)
    out[:, M:] = X[:, M:]
    return out[0] if single else out


def lumped_state_array(params: ModelParams, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Distinct canonical states, sorted lexicographically."""
    X = state_array(params, cap)
    canon = lump_array(X, params.K)
    ranks = np.unique(composition_rank(canon, params.N))
    return X[ranks]


def _to_states(X: np.ndarray, params: ModelParams) -> list[SwarmState]:
    return [SwarmState.from_array(params.K, row, params.seeds_enabled) for row in X.tolist()]


def enumerate_states(params: ModelParams, cap: int = DEFAULT_STATE_CAP) -> list[SwarmState]:
    return _to_states(state_array(params, cap), params)


def enumerate_lumped_states(params: ModelParams, cap: int = DEFAULT_STATE_CAP) -> list[SwarmState]:
    return _to_states(lumped_state_array(params, cap), params)


def lump_state(state: SwarmState) -> SwarmState:
    """Canonical representative of ``state`` under block relabeling."""
    out = lump_array(state.to_array(), state.K)
    return SwarmState.from_array(state.K, out, state.seeds is not None)


def replica_profile(state: SwarmState) -> ReplicaProfile:
    """Peers holding each block.  Seeds and the publisher are not counted."""
    replicas = np.asarray(state.counts, dtype=np.int64) @ contains_table(state.K)
    return ReplicaProfile(tuple(int(r) for r in replicas))
