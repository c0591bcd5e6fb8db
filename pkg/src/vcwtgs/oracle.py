"""Exact small-P machinery: posterior enumeration, explicit kernels, spectral gaps.

States are encoded as P-bit integers with bit ``j`` equal to ``gamma_j``.
Conditionals here come from the enumerated posterior table, not from the
Cholesky fast path, so they serve as an independent check on it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .model_core import Dataset, Hyperparams, log_marginal_likelihood

__all__ = [
    "ExactPosterior",
    "KernelPair",
    "enumerate_posterior",
    "exact_conditionals",
    "exact_phi",
    "exact_log_phi",
    "build_kernel",
    "check_detailed_balance",
    "stationarity_error",
    "spectral_gap",
    "verify_gap_bound",
    "epsilon0",
    "variance_bound_eval",
    "oracle_report",
    "ENUMERATION_MAX_P",
    "KERNEL_MAX_P",
]

logger = logging.getLogger(__name__)

ENUMERATION_MAX_P = 20
KERNEL_MAX_P = 12


def _bits(P: int) -> np.ndarray:
    codes = np.arange(1 << P, dtype=np.int64)
    return ((codes[:, None] >> np.arange(P)) & 1).astype(bool)


def _normalize_log(v: np.ndarray) -> np.ndarray:
    m = v.max()
    w = np.exp(v - m)
    return w / w.sum()


@dataclass
class ExactPosterior:
    log_post: np.ndarray
    probs: np.ndarray
    pips: np.ndarray

    @property
    def P(self) -> int:
        return int(self.pips.shape[0])


def enumerate_posterior(ds: Dataset, hp: Hyperparams) -> ExactPosterior:
    """p(gamma | D) over all 2^P models."""
    P = ds.P
    if P > ENUMERATION_MAX_P:
        raise ConfigError(f"enumeration is capped at P={ENUMERATION_MAX_P}, got P={P}")
    G = _bits(P)
    size = G.sum(axis=1)
    log_lik = np.array([log_marginal_likelihood(g, ds, hp) for g in G])
    log_post = log_lik + size * math.log(hp.h) + (P - size) * math.log1p(-hp.h)
    probs = _normalize_log(log_post)
    pips = probs @ G
    return ExactPosterior(log_post=log_post, probs=probs, pips=pips)


def _log_conditionals(post: ExactPosterior) -> tuple[np.ndarray, np.ndarray]:
    """log p(gamma_j = 1 | gamma_-j, D) and log p(gamma_j = 0 | gamma_-j, D) per state."""
    P = post.P
    codes = np.arange(1 << P, dtype=np.int64)
    d = np.empty((codes.shape[0], P))
    for j in range(P):
        d[:, j] = post.log_post[codes | (1 << j)] - post.log_post[codes & ~(1 << j)]
    return -np.logaddexp(0.0, -d), -np.logaddexp(0.0, d)


def exact_conditionals(post: ExactPosterior) -> np.ndarray:
    """Table ``c[s, j] = p(gamma_j = 1 | gamma_-j, D)`` from the enumerated posterior."""
    return np.exp(_log_conditionals(post)[0])


def _log_flip_weights(post: ExactPosterior, eps: float) -> np.ndarray:
    log_p1, log_p0 = _log_conditionals(post)
    log_cur = np.where(_bits(post.P), log_p1, log_p0)
    log_eta = log_p1 if eps == 0 else np.logaddexp(log_p1, math.log(eps / post.P))
    return log_eta - log_cur - math.log(2.0)


def exact_log_phi(post: ExactPosterior, eps: float = 0.0) -> np.ndarray:
    """log phi(gamma) for every state, from enumerated conditionals."""
    return logsumexp(_log_flip_weights(post, eps), axis=1)


def exact_phi(post: ExactPosterior, eps: float = 0.0) -> np.ndarray:
    """phi(gamma) for every state, from enumerated conditionals."""
    return np.exp(exact_log_phi(post, eps))


@dataclass
class KernelPair:
    """Gamma-marginal kernel of VC-wTGS with its stationary law and gaps.

    ``gap_full`` is the absolute spectral gap of the explicit (gamma, Q)
    chain, ``gap_P`` that of the S = P (wTGS) chain.
    """

    K_star: np.ndarray
    pi_gamma: np.ndarray
    gap_full: float
    gap_P: float
    S: int
    P: int
    K_wtgs: np.ndarray | None = None


def _kernel_from_weights(lw: np.ndarray, S: int) -> np.ndarray:
    n, P = lw.shape
    f = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    K = np.zeros((n, n))
    rows = np.arange(n)
    a = S / P
    for j in range(P):
        K[rows, rows ^ (1 << j)] += a * f[:, j]
    K[rows, rows] += 1.0 - a
    return K


def spectral_gap(K: np.ndarray, pi: np.ndarray) -> float:
    """1 - (largest |eigenvalue| other than the unit one) of a pi-reversible kernel.

    States with zero stationary mass are dropped before symmetrising.
    """
    keep = pi > 0
    K = K[np.ix_(keep, keep)]
    s = np.sqrt(pi[keep])
    M = s[:, None] * K / s[None, :]
    M = 0.5 * (M + M.T)
    try:
        ev = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as e:
        raise ArithmeticError(f"eigensolver failed: {e}") from e
    if ev.shape[0] == 1:
        return 1.0
    unit = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, unit)
    return float(1.0 - np.max(np.abs(rest)))


def build_kernel(ds: Dataset, hp: Hyperparams, post: ExactPosterior | None = None) -> KernelPair:
    P, S = ds.P, hp.S
    if P > KERNEL_MAX_P:
        raise ConfigError(f"explicit kernels are capped at P={KERNEL_MAX_P}, got P={P}")
    hp.check_against(P)
    post = enumerate_posterior(ds, hp) if post is None else post
    lw = _log_flip_weights(post, hp.eps)
    pi = _normalize_log(post.log_post + logsumexp(lw, axis=1))

    K_star = _kernel_from_weights(lw, S)
    K_P = K_star if S == P else _kernel_from_weights(lw, P)

    # explicit (gamma, Q) chain: index 2*g + Q
    qv = np.array([1.0 - S / P, S / P])
    K_full = np.kron(np.kron(K_star, np.ones((2, 1))), qv[None, :])
    pi_full = np.kron(pi, qv)
    gap_full = spectral_gap(K_full, pi_full)
    gap_P = spectral_gap(K_P, pi)
    return KernelPair(K_star=K_star, pi_gamma=pi, gap_full=gap_full, gap_P=gap_P, S=S, P=P, K_wtgs=K_P)


def check_detailed_balance(kp: KernelPair) -> float:
    """max over pairs of |pi(g) K*(g, g') - pi(g') K*(g', g)|."""
    F = kp.pi_gamma[:, None] * kp.K_star
    return float(np.max(np.abs(F - F.T)))


def stationarity_error(kp: KernelPair) -> float:
    """||pi K* - pi||_inf."""
    return float(np.max(np.abs(kp.pi_gamma @ kp.K_star - kp.pi_gamma)))


def verify_gap_bound(kp: KernelPair, S: int | None = None, P: int | None = None, tol: float = 1e-9) -> dict:
    """Check gap_full >= 1 - (S/P) lambda_P >= 1 - S/P, with lambda_P = 1 - gap_P."""
    S = kp.S if S is None else S
    P = kp.P if P is None else P
    lhs = kp.gap_full
    rhs1 = 1.0 - (S / P) * (1.0 - kp.gap_P)
    rhs2 = 1.0 - S / P
    return {
        "lhs": lhs,
        "rhs1": rhs1,
        "rhs2": rhs2,
        "pass": bool(lhs >= rhs1 - tol and rhs1 >= rhs2 - tol),
    }


def epsilon0(ds: Dataset, hp: Hyperparams, i: int, T: int, kp: KernelPair | None = None,
             post: ExactPosterior | None = None) -> float:
    """P / (PIP(i) E_pi[phi_hat] S) * sqrt(64 e log T / ((1 - lambda) T)).

    ``phi_hat = phi^{-1} / max phi^{-1}`` and ``1 - lambda`` is the absolute
    gap of the (gamma, Q) chain; returns inf when that gap is zero.
    """
    post = enumerate_posterior(ds, hp) if post is None else post
    kp = build_kernel(ds, hp, post) if kp is None else kp
    log_phi = exact_log_phi(post, hp.eps)
    phi_hat = np.exp(log_phi.min() - log_phi)
    e_phi_hat = float(kp.pi_gamma @ phi_hat)
    gap = kp.gap_full
    if gap <= 0:
        return math.inf
    P, S = ds.P, hp.S
    return P / (post.pips[i] * e_phi_hat * S) * math.sqrt(64 * math.e * math.log(T) / (gap * T))


def variance_bound_eval(ds: Dataset, hp: Hyperparams, i: int, T: int, kp: KernelPair | None = None,
                        post: ExactPosterior | None = None) -> float:
    """Finite-T bound on E|estimate - PIP(i)|^2 for VC-wTGS.

    ``4 eps0^2 / (1 - eps0)^2 PIP(i)^2 + (4P/S) / (min_g pi(g) T)``; returns
    inf (and logs a warning) when ``eps0 >= 1`` and the bound is vacuous.
    """
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    post = enumerate_posterior(ds, hp) if post is None else post
    kp = build_kernel(ds, hp, post) if kp is None else kp
    e0 = epsilon0(ds, hp, i, T, kp, post)
    if not e0 < 1.0:
        logger.warning("variance bound is vacuous: eps0 = %.3g >= 1", e0)
        return math.inf
    P, S = ds.P, hp.S
    pip = post.pips[i]
    return 4 * e0**2 / (1 - e0) ** 2 * pip**2 + (4 * P / S) / (float(kp.pi_gamma.min()) * T)


def oracle_report(ds: Dataset, hp: Hyperparams, T: int, *, table_max_p: int = KERNEL_MAX_P) -> dict:
    """All oracle checks for one instance, JSON-ready."""
    post = enumerate_posterior(ds, hp)
    kp = build_kernel(ds, hp, post)
    gb = verify_gap_bound(kp)
    db = check_detailed_balance(kp)
    st = stationarity_error(kp)
    bounds = []
    for i in range(ds.P):
        b = variance_bound_eval(ds, hp, i, T, kp, post)
        bounds.append(None if math.isinf(b) else b)
    report = {
        "P": ds.P,
        "N": ds.N,
        "S": hp.S,
        "T": T,
        "pips": post.pips.tolist(),
        "detailed_balance_violation": db,
        "stationarity_error": st,
        "gap_full": kp.gap_full,
        "gap_P": kp.gap_P,
        "gap_bound": gb,
        "variance_bounds": bounds,
    }
    if ds.P <= table_max_p:
        report["log_post"] = post.log_post.tolist()
    return report


def dump_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
