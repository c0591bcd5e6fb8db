"""Posterior algebra for the conjugate Gaussian linear model.

Model::

    gamma_i        ~ Bern(h)
    sigma^2        ~ InvGamma(nu0 / 2, nu0 * lambda0 / 2)
    beta_gamma     ~ N(0, sigma^2 / tau * I)
    Y | beta, sigma ~ N(X_gamma beta_gamma, sigma^2 I)

Everything is computed in natural-log space.  The conditional inclusion
odds for all P coordinates share one Cholesky factor of
``X_g^T X_g + tau I`` per state, which gives the O(|g|^3 + P |g|^2) cost
per sweep when the Gram matrix ``A = X^T X`` is precomputed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.special import log_expit

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "Dataset",
    "Hyperparams",
    "ModelState",
    "CovariateScratch",
    "rebuild_state",
    "log_marginal_likelihood",
    "log_marginal_likelihood_state",
    "log_conditional_odds",
    "conditional_odds",
    "conditional_pip",
    "all_conditional_pips",
    "covariate_scratch",
    "log_flip_weights",
    "log_phi",
    "phi",
    "flip",
    "DEFAULT_GRAM_BUDGET",
    "PROB_FLOOR",
    "logsumexp1d",
]

logger = logging.getLogger(__name__)

DEFAULT_GRAM_BUDGET = 2 * 1024**3  # bytes
PROB_FLOOR = 1e-300
_LOG_PROB_FLOOR = math.log(PROB_FLOOR)
_LOG_2PI = math.log(2.0 * math.pi)


def logsumexp1d(v: np.ndarray) -> float:
    """log(sum(exp(v))) for a 1-D vector; -inf when every entry is -inf."""
    m = float(np.max(v))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix ``X`` (N x P) and response ``Y`` (N,).

    ``A = X^T X`` is cached when it fits in ``gram_budget`` bytes; otherwise
    the needed rows of it are formed on demand from ``X``.  ``nu = X^T Y``,
    ``yty = Y^T Y`` and ``adiag = diag(X^T X)`` are always cached.
    """

    X: np.ndarray
    Y: np.ndarray
    A: np.ndarray | None = None
    nu: np.ndarray | None = None
    yty: float | None = None
    adiag: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        if Y.ndim != 1:
            raise DataError(f"Y must be 1-D, got shape {Y.shape}")
        N, P = X.shape
        if N < 1 or P < 1:
            raise DataError(f"need N >= 1 and P >= 1, got N={N}, P={P}")
        if Y.shape[0] != N:
            raise DataError(f"X has {N} rows but Y has {Y.shape[0]} entries")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite entries")
        if not np.all(np.isfinite(Y)):
            raise DataError("Y contains non-finite entries")
        set_ = object.__setattr__
        set_(self, "X", _readonly(X))
        set_(self, "Y", _readonly(Y))
        if self.A is not None:
            A = np.asarray(self.A, dtype=np.float64)
            if A.shape != (P, P):
                raise DataError(f"A must be {P}x{P}, got {A.shape}")
            if __debug__:
                ref = X.T @ X
                scale = max(1.0, float(np.max(np.abs(ref))))
                if not np.allclose(A, A.T, rtol=0, atol=1e-10 * scale):
                    raise DataError("A is not symmetric")
                if not np.allclose(A, ref, rtol=0, atol=1e-10 * scale):
                    raise DataError("A does not match X^T X")
            set_(self, "A", _readonly(A))
        set_(self, "nu", _readonly(X.T @ Y if self.nu is None else self.nu))
        set_(self, "yty", float(Y @ Y) if self.yty is None else float(self.yty))
        adiag = np.diag(self.A) if self.A is not None else np.einsum("ij,ij->j", X, X)
        set_(self, "adiag", _readonly(adiag))

    @classmethod
    def from_arrays(cls, X, Y, *, gram_budget=DEFAULT_GRAM_BUDGET):
        """Build a dataset, precomputing ``X^T X`` if P*P doubles fit the budget."""
        X = np.asarray(X, dtype=np.float64)
        A = None
        if X.ndim == 2 and X.shape[1] ** 2 * 8 <= gram_budget:
            A = X.T @ X
        return cls(X, Y, A=A)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    def gram_rows(self, idx) -> np.ndarray:
        """Rows ``A[idx, :]`` of the Gram matrix, shape (len(idx), P)."""
        if self.A is not None:
            return self.A[idx, :]
        Xi = self.X[:, idx]
        return Xi.T @ self.X


@dataclass(frozen=True)
class Hyperparams:
    h: float
    tau: float = 1.0
    nu0: float = 1.0
    lambda0: float = 1.0
    eps: float = 0.0
    S: int = 1
    T: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise ConfigError(f"h must lie in (0, 1), got {self.h}")
        if not self.tau > 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.nu0 < 0 or self.lambda0 < 0:
            raise ConfigError("nu0 and lambda0 must be nonnegative")
        if self.eps < 0:
            raise ConfigError(f"eps must be nonnegative, got {self.eps}")
        if self.S < 1:
            raise ConfigError(f"S must be >= 1, got {self.S}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def default_for(cls, P: int, **overrides) -> "Hyperparams":
        """Defaults: h = min(0.5, 5/P), tau = nu0 = lambda0 = 1, eps = 0, S = P."""
        kw = dict(h=min(0.5, 5.0 / P), S=P)
        kw.update(overrides)
        return cls(**kw)

    def check_against(self, P: int) -> None:
        if self.S > P:
            raise ConfigError(f"S={self.S} exceeds P={P}")

    @property
    def improper_prior(self) -> bool:
        """True when the inverse-gamma normalizing constant is dropped."""
        return self.nu0 == 0 or self.lambda0 == 0

    @property
    def log_prior_odds(self) -> float:
        return math.log(self.h) - math.log1p(-self.h)


@dataclass
class ModelState:
    """Inclusion vector plus the factorization of ``X_g^T X_g + tau I``."""

    gamma: np.ndarray
    included: np.ndarray
    chol: np.ndarray
    s_gamma: float
    logdet: float
    # L^{-1} nu_I, reused by every conditional
    z: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.included.shape[0])


def flip(gamma, i: int) -> np.ndarray:
    """Copy of ``gamma`` with coordinate ``i`` toggled."""
    out = np.array(gamma, dtype=bool, copy=True)
    if not 0 <= i < out.shape[0]:
        raise IndexError(f"coordinate {i} out of range for P={out.shape[0]}")
    out[i] = not out[i]
    return out


def _cholesky(M: np.ndarray) -> np.ndarray:
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info != 0:
        if info > 0:
            k = info - 1
            pivot = float(M[k, k] - L[k, :k] @ L[k, :k])
        else:
            pivot = float("nan")
        raise NumericalError(
            "Cholesky factorization of X_g^T X_g + tau I failed",
            size=M.shape[0],
            min_pivot=pivot,
        )
    return L


def _trisolve(L: np.ndarray, B: np.ndarray, trans: int = 0) -> np.ndarray:
    x, info = lapack.dtrtrs(L, B, lower=1, trans=trans)
    if info != 0:
        raise NumericalError("triangular solve failed", size=L.shape[0])
    return x


def rebuild_state(gamma, ds: Dataset, hp: Hyperparams) -> ModelState:
    """Factorize from scratch for inclusion vector ``gamma``."""
    g = np.asarray(gamma, dtype=bool)
    if g.shape != (ds.P,):
        raise ValueError(f"gamma must have length P={ds.P}, got shape {g.shape}")
    idx = np.flatnonzero(g)
    k = idx.shape[0]
    base = ds.yty + hp.nu0 * hp.lambda0
    if k == 0:
        return ModelState(
            gamma=g.copy(),
            included=idx,
            chol=np.zeros((0, 0)),
            s_gamma=base,
            logdet=0.0,
            z=np.zeros(0),
        )
    M = ds.gram_rows(idx)[:, idx] + hp.tau * np.eye(k)
    L = _cholesky(M)
    z = _trisolve(L, ds.nu[idx])
    s = base - float(z @ z)
    if not s > 0.0:
        raise NumericalError(f"S_gamma is non-positive ({s:.3e})", size=k)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return ModelState(gamma=g.copy(), included=idx, chol=L, s_gamma=s, logdet=logdet, z=z)


def _log_prior_constant(N: int, hp: Hyperparams) -> float:
    c = -0.5 * N * _LOG_2PI + math.lgamma(0.5 * (N + hp.nu0))
    if not hp.improper_prior:
        a = 0.5 * hp.nu0
        c += a * math.log(0.5 * hp.nu0 * hp.lambda0) - math.lgamma(a)
    return c


def log_marginal_likelihood_state(state: ModelState, ds: Dataset, hp: Hyperparams) -> float:
    k = state.size
    return (
        _log_prior_constant(ds.N, hp)
        - 0.5 * state.logdet
        + 0.5 * k * math.log(hp.tau)
        - 0.5 * (ds.N + hp.nu0) * math.log(0.5 * state.s_gamma)
    )


def log_marginal_likelihood(gamma, ds: Dataset, hp: Hyperparams) -> float:
    """log p(Y | gamma, X), integrating out beta and sigma^2.

    With ``nu0 == 0`` or ``lambda0 == 0`` the inverse-gamma normalizer is
    dropped (improper prior); it cancels in every ratio the samplers use.
    """
    return log_marginal_likelihood_state(rebuild_state(gamma, ds, hp), ds, hp)


@dataclass
class CovariateScratch:
    """Per-candidate quantities for toggling each coordinate of a state.

    For every ``i``, with ``g0`` the state with ``i`` excluded and ``g1``
    with ``i`` included:

    * ``d[i] = det(X_g0^T X_g0 + tau I) / det(X_g1^T X_g1 + tau I)``
    * ``delta_s[i] = S(g0) - S(g1)``
    * ``proj[i] = nu_g0^T F a_i`` (only for currently excluded ``i``; NaN
      otherwise, as ``g0`` is then not the current state)
    """

    d: np.ndarray
    delta_s: np.ndarray
    proj: np.ndarray
    s0: np.ndarray
    s1: np.ndarray


def covariate_scratch(state: ModelState, ds: Dataset, hp: Hyperparams, cols=None) -> CovariateScratch:
    P = ds.P
    cols = np.arange(P) if cols is None else np.asarray(cols, dtype=np.intp)
    m = cols.shape[0]
    k = state.size
    inc = state.gamma[cols]
    d = np.empty(m)
    delta = np.empty(m)
    proj = np.full(m, np.nan)

    ex = ~inc
    ex_cols = cols[ex]
    nu_ex = ds.nu[ex_cols]
    if k == 0:
        q = np.zeros(ex_cols.shape[0])
        r = np.zeros(ex_cols.shape[0])
    else:
        B = ds.gram_rows(state.included)[:, ex_cols]
        U = _trisolve(state.chol, B)
        q = np.einsum("ij,ij->j", U, U)
        r = state.z @ U
    denom = ds.adiag[ex_cols] + hp.tau - q
    if np.any(denom <= 0.0):
        bad = float(np.min(denom))
        raise NumericalError("Schur complement is non-positive", size=k, min_pivot=bad)
    d[ex] = 1.0 / denom
    delta[ex] = d[ex] * (r - nu_ex) ** 2
    proj[ex] = r

    if np.any(inc):
        pos = np.searchsorted(state.included, cols[inc])
        Linv = _trisolve(state.chol, np.eye(k))
        Fdiag = np.einsum("ij,ij->j", Linv, Linv)[pos]
        bhat = (Linv.T @ state.z)[pos]
        if np.any(Fdiag <= 0.0):
            raise NumericalError("inverse diagonal is non-positive", size=k)
        d[inc] = Fdiag
        delta[inc] = bhat**2 / Fdiag

    s0 = np.where(inc, state.s_gamma + delta, state.s_gamma)
    s1 = np.where(inc, state.s_gamma, state.s_gamma - delta)
    if np.any(s1 <= 0.0):
        raise NumericalError(f"S(gamma_1) is non-positive ({float(np.min(s1)):.3e})", size=k)
    return CovariateScratch(d=d, delta_s=delta, proj=proj, s0=s0, s1=s1)


def log_conditional_odds(state: ModelState, ds: Dataset, hp: Hyperparams, cols=None) -> np.ndarray:
    """log[p(g_i = 1 | g_-i, D) / p(g_i = 0 | g_-i, D)] for each ``i`` in ``cols``."""
    sc = covariate_scratch(state, ds, hp, cols)
    return (
        hp.log_prior_odds
        + 0.5 * math.log(hp.tau)
        + 0.5 * np.log(sc.d)
        + 0.5 * (ds.N + hp.nu0) * (np.log(sc.s0) - np.log(sc.s1))
    )


def conditional_odds(i: int, state: ModelState, ds: Dataset, hp: Hyperparams) -> float:
    if not 0 <= i < ds.P:
        raise IndexError(f"coordinate {i} out of range for P={ds.P}")
    return float(np.exp(log_conditional_odds(state, ds, hp, [i])[0]))


def conditional_pip(i: int, state: ModelState, ds: Dataset, hp: Hyperparams) -> float:
    """p(g_i = 1 | g_-i, D) = odds / (1 + odds), evaluated as expit(log odds)."""
    if not 0 <= i < ds.P:
        raise IndexError(f"coordinate {i} out of range for P={ds.P}")
    lo = log_conditional_odds(state, ds, hp, [i])[0]
    return float(np.exp(log_expit(lo)))


def all_conditional_pips(state: ModelState, ds: Dataset, hp: Hyperparams) -> np.ndarray:
    """Vector of p(g_j = 1 | g_-j, D) for every j, sharing one factorization."""
    return np.exp(log_expit(log_conditional_odds(state, ds, hp)))


def log_flip_weights(log_odds, gamma, eps: float = 0.0, P: int | None = None) -> np.ndarray:
    """log of 0.5 * eta(g_-j) / p(g_j | g_-j, D) for the given coordinates.

    ``eta(g_-j) = p(g_j = 1 | g_-j, D) + eps / P``.  The probability of the
    current value is floored at 1e-300 before dividing.
    """
    lo = np.asarray(log_odds, dtype=np.float64)
    g = np.asarray(gamma, dtype=bool)
    P = lo.shape[0] if P is None else P
    log_p1 = log_expit(lo)
    log_cur = np.where(g, log_p1, log_expit(-lo))
    if np.any(log_cur < _LOG_PROB_FLOOR):
        logger.warning(
            "conditional probability below %.0e floored for %d coordinate(s)",
            PROB_FLOOR,
            int(np.sum(log_cur < _LOG_PROB_FLOOR)),
        )
        log_cur = np.maximum(log_cur, _LOG_PROB_FLOOR)
    log_eta = log_p1 if eps == 0 else np.logaddexp(log_p1, math.log(eps / P))
    return log_eta - log_cur - math.log(2.0)


def log_phi(state: ModelState, ds: Dataset, hp: Hyperparams) -> float:
    lo = log_conditional_odds(state, ds, hp)
    return logsumexp1d(log_flip_weights(lo, state.gamma, hp.eps))


def phi(state: ModelState, ds: Dataset, hp: Hyperparams) -> float:
    """sum_j 0.5 * eta(g_-j) / p(g_j | g_-j, D)."""
    return math.exp(log_phi(state, ds, hp))
