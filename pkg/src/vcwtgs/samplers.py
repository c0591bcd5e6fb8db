"""wTGS, Subset wTGS and variable-complexity wTGS chains.

Draw order (all uniforms come from :class:`~vcwtgs.rng.RngStream`):

VC-wTGS / wTGS use a positional layout over the first ``P + 2T`` uniforms
``u``.  ``u[0:P]`` initialise ``gamma_j = u_j < h``.  Iteration ``t``
(1-based) owns ``u[P + 2(t-1)]`` for the activity coin (``Q = u < S/P``;
ignored at ``t = 1``, which is always active) and ``u[P + 2(t-1) + 1]``
for the coordinate draw.  Inactive iterations leave their coordinate slot
unused.

Subset wTGS reads uniforms sequentially: one for ``i^(0)``, then the free
subset slots of ``S^(0)``, then per iteration one for the coordinate draw
followed by the free slots of ``S^(t)``.

Coordinate draws are inverse-CDF over the cumulative weights in index
order; subset draws are a partial Fisher-Yates shuffle of the free indices
in ascending order, each swap position being ``floor(u * remaining)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import log_expit

from .errors import ConfigError, NumericalError
from .model_core import (
    Dataset,
    Hyperparams,
    flip,
    log_conditional_odds,
    log_flip_weights,
    logsumexp1d,
    rebuild_state,
)
from .rng import RngStream, UniformStream

__all__ = [
    "SamplerTrace",
    "ConditionalTable",
    "tabulate_conditionals",
    "run_vc_wtgs",
    "run_wtgs",
    "run_subset_wtgs",
    "sample_categorical",
    "draw_subset",
    "correlation_anchors",
    "flip",
    "TABLE_MAX_P",
]

TABLE_MAX_P = 16
ANCHOR_ADAPT_EVERY = 100


@dataclass
class SamplerTrace:
    """Per-iteration records of one chain.

    Row ``t`` (0-based) holds iteration ``t + 1``.  ``flipped`` is -1 on
    inactive iterations; ``cond_pips`` is NaN wherever no conditional was
    computed (inactive rows, and coordinates outside the subset for Subset
    wTGS).  ``n_cond`` counts conditional-PIP evaluations per iteration;
    ``n_cond_init`` those spent on the initial state.
    """

    sampler: str
    S: int
    gamma0: np.ndarray
    gamma: np.ndarray
    rho_tilde_log: np.ndarray
    q: np.ndarray
    flipped: np.ndarray
    cond_pips: np.ndarray
    n_cond: np.ndarray
    n_cond_init: int = 0
    subset: np.ndarray | None = None
    anchors: np.ndarray | None = None
    burn: int = 0
    seed: int = 0
    stream: int = 0

    @property
    def T(self) -> int:
        return int(self.q.shape[0])

    @property
    def P(self) -> int:
        return int(self.gamma0.shape[0])

    @property
    def active(self) -> np.ndarray:
        return self.q.astype(bool)

    def same_chain(self, other: "SamplerTrace") -> bool:
        """Bit-identical records (sampler label excluded)."""
        pairs = [
            (self.gamma0, other.gamma0),
            (self.gamma, other.gamma),
            (self.rho_tilde_log, other.rho_tilde_log),
            (self.q, other.q),
            (self.flipped, other.flipped),
            (self.n_cond, other.n_cond),
        ]
        if not all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs):
            return False
        return np.array_equal(self.cond_pips, other.cond_pips, equal_nan=True)


# ---------------------------------------------------------------------------
# per-state derived quantities


def _cumulative(lw: np.ndarray) -> np.ndarray:
    return np.cumsum(np.exp(lw - np.max(lw)))


def _pick(cum: np.ndarray, u: float) -> int:
    n = cum.shape[0]
    i = int(np.searchsorted(cum, u * cum[n - 1], side="right"))
    if i >= n:
        # u * total rounded up to total: take the last index with mass
        i = n - 1
        while i > 0 and cum[i] == cum[i - 1]:
            i -= 1
    return i


def sample_categorical(log_weights, rng) -> int:
    """Index drawn with probability proportional to ``exp(log_weights)``.

    ``rng`` is a :class:`UniformStream`, an :class:`RngStream` (first
    uniform of the stream) or a float in [0, 1).
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.ndim != 1 or lw.shape[0] == 0:
        raise ValueError("log_weights must be a non-empty vector")
    if not np.any(np.isfinite(lw)) or np.any(lw == np.inf):
        raise ValueError("log_weights need at least one finite entry and no +inf")
    lw = np.where(np.isnan(lw), -np.inf, lw)
    if isinstance(rng, UniformStream):
        u = rng.next()
    elif isinstance(rng, RngStream):
        u = float(rng.uniforms(1)[0])
    else:
        u = float(rng)
    return _pick(_cumulative(lw), u)


@dataclass
class _Sweep:
    """Everything the chains need about one state."""

    log_odds: np.ndarray
    pips: np.ndarray
    lw: np.ndarray
    log_phi: float
    cum: np.ndarray


def _derive(log_odds: np.ndarray, gamma: np.ndarray, eps: float) -> _Sweep:
    lw = log_flip_weights(log_odds, gamma, eps)
    return _Sweep(
        log_odds=log_odds,
        pips=np.exp(log_expit(log_odds)),
        lw=lw,
        log_phi=logsumexp1d(lw),
        cum=_cumulative(lw),
    )


def _sweep(gamma: np.ndarray, ds: Dataset, hp: Hyperparams) -> _Sweep:
    st = rebuild_state(gamma, ds, hp)
    return _derive(log_conditional_odds(st, ds, hp), gamma, hp.eps)


def _bits(states: np.ndarray, P: int) -> np.ndarray:
    return ((states[:, None] >> np.arange(P)) & 1).astype(bool)


def _code(gamma: np.ndarray) -> int:
    return sum(1 << int(j) for j in np.flatnonzero(gamma))


@dataclass
class ConditionalTable:
    """All-state lookup of the per-state sweep, indexed by ``sum_j g_j 2^j``.

    Rows are produced by the same per-state routine as the direct path, so
    a chain run from the table is bit-identical to a direct run.
    """

    P: int
    eps: float
    log_odds: np.ndarray
    pips: np.ndarray
    lw: np.ndarray
    log_phi: np.ndarray
    cum: np.ndarray

    def sweep(self, code: int) -> _Sweep:
        return _Sweep(
            log_odds=self.log_odds[code],
            pips=self.pips[code],
            lw=self.lw[code],
            log_phi=float(self.log_phi[code]),
            cum=self.cum[code],
        )


def tabulate_conditionals(ds: Dataset, hp: Hyperparams, max_p: int = TABLE_MAX_P) -> ConditionalTable:
    P = ds.P
    if P > max_p:
        raise ValueError(f"tabulation capped at P={max_p}, got P={P}")
    n = 1 << P
    lo = np.empty((n, P))
    pips = np.empty((n, P))
    lw = np.empty((n, P))
    lphi = np.empty(n)
    cum = np.empty((n, P))
    G = _bits(np.arange(n, dtype=np.int64), P)
    for s in range(n):
        sw = _sweep(G[s], ds, hp)
        lo[s], pips[s], lw[s], lphi[s], cum[s] = sw.log_odds, sw.pips, sw.lw, sw.log_phi, sw.cum
    return ConditionalTable(P=P, eps=hp.eps, log_odds=lo, pips=pips, lw=lw, log_phi=lphi, cum=cum)


# ---------------------------------------------------------------------------
# VC-wTGS


@numba.njit(cache=True)
def _vc_table_chain(s0, active_t, u_cat, cum):
    n = active_t.shape[0]
    P = cum.shape[1]
    states = np.empty(n, np.int64)
    flips = np.empty(n, np.int64)
    s = s0
    for k in range(n):
        row = cum[s]
        i = np.searchsorted(row, u_cat[active_t[k]] * row[P - 1], side="right")
        if i >= P:
            i = P - 1
            while i > 0 and row[i] == row[i - 1]:
                i -= 1
        s = s ^ (np.int64(1) << i)
        states[k] = s
        flips[k] = i
    return states, flips


def _activity(u: np.ndarray, P: int, S: int, T: int):
    slots = u[P:].reshape(T, 2)
    q = slots[:, 0] < S / P
    q[0] = True
    return q, slots[:, 1]


def _expand(q: np.ndarray, per_active: np.ndarray, fill) -> np.ndarray:
    """Spread per-active-iteration rows over all iterations (carry forward)."""
    out_shape = (q.shape[0],) + per_active.shape[1:]
    out = np.full(out_shape, fill, dtype=per_active.dtype)
    out[q] = per_active
    return out


def _want_table(P: int, T: int, backend: str, table) -> bool:
    if backend == "direct":
        return False
    if backend == "table" or table is not None:
        return True
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r}")
    return P <= TABLE_MAX_P and (1 << P) <= T


def run_vc_wtgs(
    ds: Dataset,
    hp: Hyperparams,
    rng: RngStream,
    *,
    backend: str = "auto",
    table: ConditionalTable | None = None,
    _label: str = "vc",
) -> SamplerTrace:
    """Variable-complexity wTGS.

    Each iteration after the first is active with probability S/P.  An
    active iteration draws a coordinate from the flip weights cached at the
    last active iteration, flips it, and recomputes all P conditionals at
    the new state; an inactive one repeats the state with unit weight.
    ``backend="table"`` looks states up in a :class:`ConditionalTable`
    (small P) and yields a bit-identical trace.
    """
    P, T, S = ds.P, hp.T, hp.S
    hp.check_against(P)
    u = rng.uniforms(P + 2 * T)
    gamma0 = u[:P] < hp.h
    q, u_cat = _activity(u, P, S, T)
    active_t = np.flatnonzero(q)
    n_act = active_t.shape[0]

    if _want_table(P, T, backend, table):
        if table is None:
            table = tabulate_conditionals(ds, hp)
        if table.P != P or table.eps != hp.eps:
            raise ValueError("conditional table does not match dataset/hyperparameters")
        states, flips = _vc_table_chain(_code(gamma0), active_t, u_cat, table.cum)
        if not np.all(np.isfinite(table.log_phi[states])):
            bad = int(active_t[np.argmin(np.isfinite(table.log_phi[states]))]) + 1
            raise NumericalError("non-finite weight", iteration=bad)
        g_act = _bits(states, P)
        pip_act = table.pips[states]
        lphi_act = table.log_phi[states]
        # one table row stands for one full sweep of P conditionals
        cnt_act = np.count_nonzero(np.isfinite(table.log_odds[states]), axis=1)
    else:
        g_act = np.empty((n_act, P), dtype=bool)
        pip_act = np.empty((n_act, P))
        lphi_act = np.empty(n_act)
        flips = np.empty(n_act, dtype=np.int64)
        cnt_act = np.empty(n_act, dtype=np.int64)
        g = gamma0.copy()
        try:
            sw = _sweep(g, ds, hp)
        except NumericalError as e:
            e.iteration = 0
            raise
        for k, t in enumerate(active_t):
            i = _pick(sw.cum, u_cat[t])
            g[i] = not g[i]
            try:
                sw = _sweep(g, ds, hp)
            except NumericalError as e:
                e.iteration = int(t) + 1
                raise
            if not math.isfinite(sw.log_phi):
                raise NumericalError("non-finite weight", iteration=int(t) + 1)
            g_act[k] = g
            pip_act[k] = sw.pips
            lphi_act[k] = sw.log_phi
            flips[k] = i
            cnt_act[k] = sw.log_odds.shape[0]

    last = np.cumsum(q) - 1
    return SamplerTrace(
        sampler=_label,
        S=S,
        gamma0=gamma0,
        gamma=g_act[last],
        rho_tilde_log=_expand(q, -lphi_act, 0.0),
        q=q.astype(np.int8),
        flipped=_expand(q, np.asarray(flips, dtype=np.int64), -1),
        cond_pips=_expand(q, pip_act, np.nan),
        n_cond=_expand(q, cnt_act.astype(np.int32), 0),
        n_cond_init=P,
        seed=rng.seed,
        stream=rng.stream,
    )


def run_wtgs(ds: Dataset, hp: Hyperparams, rng: RngStream, **kw) -> SamplerTrace:
    """Classic weighted tempered Gibbs: VC-wTGS with every iteration active."""
    return run_vc_wtgs(ds, dataclasses.replace(hp, S=ds.P), rng, _label="wtgs", **kw)


# ---------------------------------------------------------------------------
# Subset wTGS


def correlation_anchors(ds: Dataset, size: int) -> np.ndarray:
    """Indices of the ``size`` columns with largest |corr(X_j, Y)|, ties by index."""
    if size == 0:
        return np.zeros(0, dtype=np.intp)
    order = np.argsort(-np.abs(_corr(ds)), kind="stable")
    return np.sort(order[:size])


def draw_subset(i: int, anchors, P: int, S: int, rng) -> np.ndarray:
    """Uniform size-S subset of range(P) containing ``i`` and ``anchors``.

    ``rng`` is a :class:`UniformStream` or :class:`RngStream`.
    """
    if isinstance(rng, RngStream):
        rng = UniformStream(rng)
    mask = np.ones(P, dtype=bool)
    mask[np.asarray(anchors, dtype=np.intp)] = False
    mask[i] = False
    m = S - (P - int(np.count_nonzero(mask)))
    if m < 0:
        raise ValueError(f"subset size {S} cannot hold {P - int(np.count_nonzero(mask))} fixed coordinates")
    free = np.flatnonzero(mask)
    n = free.shape[0]
    for k in range(m):
        j = k + rng.index(n - k)
        free[k], free[j] = free[j], free[k]
    mask[free[:m]] = False
    return np.flatnonzero(~mask)


def _subset_log_factor(anchors: np.ndarray, P: int, S: int) -> np.ndarray:
    """log U(S | j, A) per coordinate, relative to a non-anchor coordinate.

    Subsets containing j and A number C(P-a-1, S-a-1) for j outside A and
    C(P-a, S-a) for j in A; their ratio is (S - a) / (P - a).
    """
    out = np.zeros(P)
    a = anchors.shape[0]
    if a:
        out[anchors] = math.log((S - a) / (P - a))
    return out


def run_subset_wtgs(
    ds: Dataset,
    hp: Hyperparams,
    anchor_size: int,
    t_burn: int,
    rng: RngStream,
    *,
    table: ConditionalTable | None = None,
) -> SamplerTrace:
    """Subset wTGS: S conditionals per iteration on a random subset.

    The subset contains the anchor set and the last flipped coordinate.
    Coordinate draws and the weight normaliser both carry the subset-law
    factor ``U(S | j, A)``, which is constant when the anchor set is empty.
    During burn-in the anchors are reset every 100 iterations to the
    coordinates with the highest running mean conditional PIP.
    """
    P, T, S = ds.P, hp.T, hp.S
    hp.check_against(P)
    if not 0 <= anchor_size < S:
        raise ConfigError(f"need 0 <= anchor_size < S, got anchor_size={anchor_size}, S={S}")
    if not 0 <= t_burn < T:
        raise ConfigError(f"need 0 <= t_burn < T, got t_burn={t_burn}, T={T}")
    if table is not None and (table.P != P or table.eps != hp.eps):
        raise ValueError("conditional table does not match dataset/hyperparameters")

    us = UniformStream(rng)
    anchors = correlation_anchors(ds, anchor_size)
    init_rank = np.empty(P)
    init_rank[np.argsort(-np.abs(_corr(ds)), kind="stable")] = np.arange(P)
    pip_sum = np.zeros(P)
    pip_cnt = np.zeros(P)

    g = np.zeros(P, dtype=bool)
    code = 0

    def conditionals(sub):
        if table is not None:
            return table.log_odds[code, sub]
        st = rebuild_state(g, ds, hp)
        return log_conditional_odds(st, ds, hp, sub)

    i0 = us.index(P)
    sub = draw_subset(i0, anchors, P, S, us)
    lo = conditionals(sub)

    gam = np.empty((T, P), dtype=bool)
    rho = np.empty(T)
    flipped = np.empty(T, dtype=np.int64)
    cond = np.full((T, P), np.nan)
    n_cond = np.empty(T, dtype=np.int32)
    subsets = np.empty((T, S), dtype=np.intp)
    anchor_hist = np.empty((T, anchor_size), dtype=np.intp)

    ufac = _subset_log_factor(anchors, P, S)
    lw = log_flip_weights(lo, g[sub], hp.eps, P) + ufac[sub]
    for t in range(T):
        try:
            i = int(sub[_pick(_cumulative(lw), us.next())])
            g[i] = not g[i]
            code ^= 1 << i
            sub = draw_subset(i, anchors, P, S, us)
            lo = conditionals(sub)
            lw = log_flip_weights(lo, g[sub], hp.eps, P) + ufac[sub]
            lphi = logsumexp1d(lw)
        except NumericalError as e:
            e.iteration = t + 1
            raise
        if not math.isfinite(lphi):
            raise NumericalError("non-finite weight", iteration=t + 1)
        pips = np.exp(log_expit(lo))
        gam[t] = g
        rho[t] = -lphi
        flipped[t] = i
        cond[t, sub] = pips
        n_cond[t] = lo.shape[0]
        subsets[t] = sub
        anchor_hist[t] = anchors
        if t + 1 <= t_burn and anchor_size > 0:
            pip_sum[sub] += pips
            pip_cnt[sub] += 1
            if (t + 1) % ANCHOR_ADAPT_EVERY == 0:
                mean = np.where(pip_cnt > 0, pip_sum / np.maximum(pip_cnt, 1), -1.0)
                order = np.lexsort((init_rank, -mean))
                anchors = np.sort(order[:anchor_size])
                ufac = _subset_log_factor(anchors, P, S)
                # the next coordinate draw uses the adapted anchor factors
                lw = log_flip_weights(lo, g[sub], hp.eps, P) + ufac[sub]

    return SamplerTrace(
        sampler="subset",
        S=S,
        gamma0=np.zeros(P, dtype=bool),
        gamma=gam,
        rho_tilde_log=rho,
        q=np.ones(T, dtype=np.int8),
        flipped=flipped,
        cond_pips=cond,
        n_cond=n_cond,
        n_cond_init=S,
        subset=subsets,
        anchors=anchor_hist,
        burn=t_burn,
        seed=rng.seed,
        stream=rng.stream,
    )


def _corr(ds: Dataset) -> np.ndarray:
    Xc = ds.X - ds.X.mean(axis=0)
    yc = ds.Y - ds.Y.mean()
    sx = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    sy = math.sqrt(float(yc @ yc))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((sx > 0) & (sy > 0), (Xc.T @ yc) / (sx * sy), 0.0)
