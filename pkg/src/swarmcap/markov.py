"""Exact closed-swarm Markov chain: generator assembly, stationary solve, throughput."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .core import (
    DEFAULT_STATE_CAP,
    ModelParams,
    Signature,
    SwarmState,
    cardinality_table,
    composition_rank,
    lump_array,
    lumped_state_array,
    state_array,
)
from .errors import InvalidParams, InvalidTransition, NotConverged, ReducibleChain
from .rates import event_rates, event_table, peer_rates, publisher_rates

log = logging.getLogger(__name__)

GTH_LIMIT = 1500
RESIDUAL_TOL = 1e-10


@dataclass
class GeneratorMatrix:
    """Sparse infinitesimal generator.

    Only off-diagonal rates are stored; the diagonal is minus the row sum.
    ``departure[i]`` is the total rate of departure events out of state i,
    including departures that return the chain to the same state (possible
    when K=1), which have no off-diagonal entry.
    """

    offdiag: sp.csr_matrix
    departure: np.ndarray
    states: np.ndarray | None = None
    params: ModelParams | None = None
    lumped: bool = False

    @classmethod
    def from_entries(cls, dimension: int, entries: Iterable[tuple[int, int, float]], departure=None):
        rows, cols, vals = [], [], []
        for i, j, rate in entries:
            if rate < 0:
                raise InvalidParams(f"negative rate {rate} at ({i}, {j})")
            if i != j and rate > 0:
                rows.append(i)
                cols.append(j)
                vals.append(rate)
        offdiag = sp.csr_matrix((vals, (rows, cols)), shape=(dimension, dimension))
        offdiag.sum_duplicates()
        dep = np.zeros(dimension) if departure is None else np.asarray(departure, dtype=float)
        return cls(offdiag, dep)

    @property
    def dimension(self) -> int:
        return self.offdiag.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return -np.asarray(self.offdiag.sum(axis=1)).ravel()

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.offdiag.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def matrix(self) -> sp.csr_matrix:
        return (self.offdiag + sp.diags(self.diagonal)).tocsr()

    def to_dense(self) -> np.ndarray:
        return self.matrix().toarray()

    def state(self, i: int) -> SwarmState:
        if self.states is None or self.params is None:
            raise ValueError("generator carries no state labels")
        return SwarmState.from_array(self.params.K, self.states[i], self.params.seeds_enabled)

    def index_of(self, state: SwarmState) -> int:
        row = state.to_array()
        if self.lumped:
            row = lump_array(row, state.K)
        hits = np.flatnonzero((self.states == row).all(axis=1))
        if not len(hits):
            raise KeyError(state)
        return int(hits[0])


@dataclass
class StationaryDistribution:
    probabilities: np.ndarray
    residual: float = 0.0
    method: str = ""
    iterations: int = 0

    def __len__(self):
        return len(self.probabilities)

    def __getitem__(self, i):
        return self.probabilities[i]


# ---------------------------------------------------------------------------
# scalar rate accessors


def _check_transfer(C, j, state: SwarmState, params: ModelParams):
    sig = C if isinstance(C, Signature) else Signature(frozenset(C))
    if state.K != params.K or state.N != params.N:
        raise InvalidParams("state does not match params (K or N differ)")
    if not 1 <= j <= params.K:
        raise InvalidTransition(f"block {j} outside 1..{params.K}")
    if j in sig:
        raise InvalidTransition(f"block {j} already held by {sig}")
    if len(sig) >= params.K:
        raise InvalidTransition("the full signature receives nothing")
    return sig.mask, j - 1


def peer_rate(C, j: int, state: SwarmState, params: ModelParams) -> float:
    """Aggregate rate at which peers holding ``C`` receive block ``j`` from other peers."""
    mask, b = _check_transfer(C, j, state, params)
    return float(peer_rates(state.to_array()[None, :], params)[0, mask, b])


def publisher_rate(C, j: int, state: SwarmState, params: ModelParams) -> float:
    """Aggregate rate at which peers holding ``C`` receive block ``j`` from the publisher."""
    mask, b = _check_transfer(C, j, state, params)
    return float(publisher_rates(state.to_array()[None, :], params)[0, mask, b])


# ---------------------------------------------------------------------------
# generator assembly


def _successors(X: np.ndarray, params: ModelParams):
    """Occupancy vectors after each event, shape ``(n, n_events, width)``."""
    table = event_table(params.K, params.seeds_enabled)
    delta = np.zeros((table.size, params.width), dtype=X.dtype)
    np.add.at(delta, (np.arange(table.size), table.src), -1)
    np.add.at(delta, (np.arange(table.size), table.dst), 1)
    return X[:, None, :] + delta[None, :, :]


def reachable_from(offdiag: sp.csr_matrix, start: int) -> np.ndarray:
    order = csgraph.breadth_first_order(offdiag, start, directed=True, return_predecessors=False)
    return np.sort(order)


def build_generator(
    params: ModelParams,
    lumped: bool = True,
    reachable_only: bool = True,
    cap: int = DEFAULT_STATE_CAP,
    chunk: int = 200_000,
) -> GeneratorMatrix:
    """Assemble the generator of the closed swarm chain.

    With ``lumped`` the state space is the set of canonical representatives
    and every successor is canonicalized before its rate is accumulated.
    With ``reachable_only`` the chain is restricted to states reachable
    from the all-empty state.
    """
    X = lumped_state_array(params, cap) if lumped else state_array(params, cap)
    X = np.ascontiguousarray(X, dtype=np.int32)
    keys = composition_rank(X, params.N)
    table = event_table(params.K, params.seeds_enabled)

    rows, cols, vals = [], [], []
    departure = np.empty(len(X))
    for lo in range(0, len(X), chunk):
        block = X[lo : lo + chunk]
        rates = event_rates(block, params)
        departure[lo : lo + chunk] = rates[:, table.departure].sum(axis=1)
        src, ev = np.nonzero(rates > 0)
        succ = _successors(block, params)[src, ev]
        if lumped:
            succ = lump_array(succ, params.K)
        dst = np.searchsorted(keys, composition_rank(succ, params.N))
        src = src + lo
        keep = dst != src
        rows.append(src[keep])
        cols.append(dst[keep])
        vals.append(rates[src[keep] - lo, ev[keep]])
    rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
    offdiag = sp.csr_matrix((vals, (rows, cols)), shape=(len(X), len(X)))
    offdiag.sum_duplicates()

    if reachable_only:
        empty = SwarmState.all_empty(params).to_array()[None, :]
        start = int(np.searchsorted(keys, composition_rank(empty, params.N))[0])
        keep = reachable_from(offdiag, start)
        offdiag = offdiag[keep][:, keep].tocsr()
        X, departure = X[keep], departure[keep]
    log.debug("generator: %d states, %d transitions", offdiag.shape[0], offdiag.nnz)
    return GeneratorMatrix(offdiag, departure, X, params, lumped)


# ---------------------------------------------------------------------------
# stationary solvers


def gth(rates: np.ndarray) -> np.ndarray:
    """Grassmann-Taksar-Heyman elimination on a dense off-diagonal rate matrix.

    Uses no subtractions, so the result is accurate even for stiff chains.
    The chain must be irreducible.
    """
    P = np.array(rates, dtype=np.float64)
    np.fill_diagonal(P, 0.0)
    n = len(P)
    for k in range(n - 1, 0, -1):
        s = P[k, :k].sum()
        if s <= 0.0:
            raise ReducibleChain(f"state {k} cannot reach lower-indexed states")
        P[:k, k] /= s
        P[:k, :k] += np.outer(P[:k, k], P[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ P[:k, k]
    return pi / pi.sum()


def _closed_classes(offdiag: sp.csr_matrix):
    n_comp, labels = csgraph.connected_components(offdiag, directed=True, connection="strong")
    coo = offdiag.tocoo()
    leaks = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaks]]] = True
    return [np.flatnonzero(labels == c) for c in range(n_comp) if not open_comp[c]]


def _solve_sparse(offdiag: sp.csr_matrix) -> np.ndarray:
    n = offdiag.shape[0]
    Q = offdiag - sp.diags(np.asarray(offdiag.sum(axis=1)).ravel())
    A = Q.T.tolil()
    A[0, :] = np.ones(n)
    b = np.zeros(n)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _solve_uniformized(offdiag, tol=1e-12, max_iter=1_000_000, pi0=None):
    n = offdiag.shape[0]
    out = np.asarray(offdiag.sum(axis=1)).ravel()
    lam = 1.01 * out.max()
    PT = (offdiag.T / lam + sp.diags(1.0 - out / lam)).tocsr()
    pi = np.full(n, 1.0 / n) if pi0 is None else pi0.copy()
    for it in range(max_iter):
        nxt = PT @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt, it + 1
        pi = nxt
    raise NotConverged(f"power iteration did not converge in {max_iter} iterations")


def state_levels(states: np.ndarray, params: ModelParams) -> np.ndarray:
    """Total blocks held in each state, seeds counting as K.

    Every transition changes this level, so states of equal level are never
    adjacent.
    """
    M = params.n_signatures
    level = states[:, :M] @ cardinality_table(params.K)
    if params.seeds_enabled:
        level = level + params.K * states[:, M]
    return np.asarray(level, dtype=np.int64)


def _solve_levels(offdiag, levels, tol=1e-13, max_iter=100_000, pi0=None):
    """Block Gauss-Seidel sweeping states level by level.

    Because no transition stays within a level, each level's block update
    is an exact solve given the other levels.
    """
    n = offdiag.shape[0]
    out = np.asarray(offdiag.sum(axis=1)).ravel()
    QT = offdiag.T.tocsr()
    groups = [g for g in (np.flatnonzero(levels == l) for l in np.unique(levels)) if len(g)]
    blocks = [(g, QT[g], out[g]) for g in groups]
    pi = np.full(n, 1.0 / n) if pi0 is None else pi0.copy()
    for it in range(max_iter):
        prev = pi.copy()
        for g, rows, rate in blocks:
            pi[g] = (rows @ pi) / rate
        pi /= pi.sum()
        if np.abs(pi - prev).max() < tol:
            return pi, it + 1
    raise NotConverged(f"level Gauss-Seidel did not converge in {max_iter} sweeps")


def residual(pi: np.ndarray, offdiag: sp.csr_matrix) -> float:
    out = np.asarray(offdiag.sum(axis=1)).ravel()
    return float(np.abs(offdiag.T @ pi - out * pi).max())


def solve_stationary(Q: GeneratorMatrix, method: str = "auto", max_iter: int = 100_000) -> StationaryDistribution:
    """Stationary distribution of ``Q``.

    Transient states get probability zero; more than one closed class
    raises :class:`ReducibleChain`.  ``method`` is one of

    ``"gth"``     dense elimination, exact to rounding
    ``"levels"``  block Gauss-Seidel over block-count levels (needs state labels)
    ``"sparse"``  sparse LU, only sensible for small chains
    ``"power"``   uniformized power iteration
    ``"auto"``    gth up to ``GTH_LIMIT`` states, else levels (power without labels)

    Iterative results whose residual exceeds ``RESIDUAL_TOL`` raise
    :class:`NotConverged`.
    """
    n = Q.dimension
    closed = _closed_classes(Q.offdiag)
    if len(closed) != 1:
        raise ReducibleChain(f"{len(closed)} closed communicating classes")
    keep = closed[0]
    sub = Q.offdiag[keep][:, keep].tocsr() if len(keep) < n else Q.offdiag
    labelled = Q.states is not None and Q.params is not None

    if method == "auto":
        if len(keep) <= GTH_LIMIT:
            method = "gth"
        else:
            method = "levels" if labelled else "power"
    iterations = 0
    if len(keep) == 1:
        pi_sub = np.ones(1)
    elif method == "gth":
        pi_sub = gth(sub.toarray())
    elif method == "levels":
        if not labelled:
            raise ValueError("level ordering needs a generator with state labels")
        levels = state_levels(Q.states[keep], Q.params)
        pi_sub, iterations = _solve_levels(sub, levels, max_iter=max_iter)
    elif method == "sparse":
        pi_sub = _solve_sparse(sub)
    elif method == "power":
        pi_sub, iterations = _solve_uniformized(sub, max_iter=max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    pi = np.zeros(n)
    pi[keep] = pi_sub
    res = residual(pi, Q.offdiag)
    scale = max(float(np.abs(Q.diagonal).max()), 1.0)
    if method != "gth" and res > RESIDUAL_TOL * scale:
        raise NotConverged(f"{method} solve left residual {res:.3g}")
    log.debug("stationary: %d states via %s, %d iterations, residual %.3g", n, method, iterations, res)
    return StationaryDistribution(pi, res, method, iterations)


def throughput(pi: StationaryDistribution, Q: GeneratorMatrix) -> float:
    """Long-run departure rate."""
    return float(np.dot(pi.probabilities, Q.departure))


def exact_throughput(params: ModelParams, lumped: bool = True, **kwargs) -> float:
    Q = build_generator(params, lumped=lumped, **kwargs)
    return throughput(solve_stationary(Q), Q)


@dataclass
class PopulationCurve:
    N: list = field(default_factory=list)
    throughput: list = field(default_factory=list)

    @property
    def lambda_c(self) -> float:
        """Peak throughput over the computed populations."""
        return max(self.throughput)

    @property
    def lambda_s(self) -> float:
        """Plateau estimate: throughput at the largest population computed."""
        return self.throughput[int(np.argmax(self.N))]

    @property
    def argmax_N(self) -> int:
        return self.N[int(np.argmax(self.throughput))]


def sweep_population(params: ModelParams, N_values: Sequence[int], lumped: bool = True, **kwargs) -> PopulationCurve:
    curve = PopulationCurve()
    for n in sorted(N_values):
        curve.N.append(int(n))
        curve.throughput.append(exact_throughput(params.replace(N=int(n)), lumped=lumped, **kwargs))
    return curve
