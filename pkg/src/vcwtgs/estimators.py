"""Rao-Blackwellized PIP estimators and the replicate-variance harness."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .model_core import Dataset, Hyperparams
from .rng import RngStream
from .samplers import (
    ConditionalTable,
    SamplerTrace,
    TABLE_MAX_P,
    run_subset_wtgs,
    run_vc_wtgs,
    run_wtgs,
    tabulate_conditionals,
)

__all__ = [
    "PipEstimate",
    "VarianceReport",
    "normalize_weights",
    "rao_blackwell_pip_vc",
    "rao_blackwell_pip_subset",
    "running_estimates",
    "variance_harness",
    "write_variance_csv",
    "write_variance_json",
    "VARIANCE_CSV_FIELDS",
]

VARIANCE_CSV_FIELDS = ("S", "covariate", "mean", "variance", "R", "T", "seed0")


@dataclass
class PipEstimate:
    values: np.ndarray
    weights_used: np.ndarray
    t_effective: int


def _retained(trace: SamplerTrace, burn: int) -> np.ndarray:
    if not 0 <= burn < trace.T:
        raise ValueError(f"burn must lie in [0, T={trace.T}), got {burn}")
    keep = trace.active.copy()
    keep[:burn] = False
    return keep


def normalize_weights(trace: SamplerTrace, burn: int = 0) -> np.ndarray:
    """rho^(t) = rho~^(t) Q^(t) / sum_s rho~^(s) Q^(s), over iterations after ``burn``.

    Computed by log-sum-exp; excluded and inactive iterations get exactly 0.
    """
    keep = _retained(trace, burn)
    if not np.any(keep):
        raise ValueError("no active iterations to weight")
    lw = trace.rho_tilde_log[keep]
    w = np.exp(lw - lw.max())
    out = np.zeros(trace.T)
    out[keep] = w / w.sum()
    return out


def rao_blackwell_pip_vc(trace: SamplerTrace, burn: int = 0) -> PipEstimate:
    """PIP(i) ~ sum_t rho^(t) p(g_i^(t) = 1 | g_-i^(t), D) over retained active iterations."""
    rho = normalize_weights(trace, burn)
    keep = rho > 0
    if not np.any(keep):
        raise ValueError("no retained active iterations")
    cp = trace.cond_pips[keep]
    if np.isnan(cp).any():
        raise ValueError("trace lacks conditional PIPs on some active iterations")
    values = np.clip(rho[keep] @ cp, 0.0, 1.0)
    return PipEstimate(values=values, weights_used=rho, t_effective=int(keep.sum()))


def rao_blackwell_pip_subset(trace: SamplerTrace, burn: int | None = None) -> PipEstimate:
    """Mix of conditional PIPs (inside the subset) and raw indicators (outside).

    Weights are normalised over iterations after ``burn`` (default: the
    trace's own burn-in).  When every subset is the full index set this is
    the plain Rao-Blackwellized estimate on the same trace.
    """
    if trace.subset is None:
        raise ValueError("trace has no subset records")
    rho = normalize_weights(trace, trace.burn if burn is None else burn)
    keep = rho > 0
    inside = ~np.isnan(trace.cond_pips[keep])
    per_t = np.where(inside, trace.cond_pips[keep], trace.gamma[keep])
    values = np.clip(rho[keep] @ per_t, 0.0, 1.0)
    return PipEstimate(values=values, weights_used=rho, t_effective=int(keep.sum()))


def running_estimates(trace: SamplerTrace, covariates, burn: int = 0) -> np.ndarray:
    """Estimate after each iteration, shape (T, len(covariates)).

    Uses the subset estimator for subset traces and the VC estimator
    otherwise.  Rows before the first retained iteration are NaN.
    """
    cov = np.asarray(covariates, dtype=np.intp)
    if trace.subset is not None:
        burn = trace.burn
    keep = _retained(trace, burn)
    vals = trace.cond_pips[:, cov]
    if trace.subset is not None:
        vals = np.where(np.isnan(vals), trace.gamma[:, cov], vals)
    lw = np.where(keep, trace.rho_tilde_log, -np.inf)
    log_den = np.logaddexp.accumulate(lw)
    with np.errstate(divide="ignore"):
        log_vals = np.where(keep[:, None], np.log(np.where(keep[:, None], vals, 1.0)), -np.inf)
    log_num = np.logaddexp.accumulate(lw[:, None] + log_vals, axis=0)
    out = np.full((trace.T, cov.shape[0]), np.nan)
    ok = np.isfinite(log_den)
    out[ok] = np.exp(log_num[ok] - log_den[ok, None])
    return out


@dataclass
class VarianceReport:
    """Across-replicate mean and unbiased variance of per-covariate estimates."""

    S: int
    mean: np.ndarray
    variance: np.ndarray
    R: int
    T: int
    P: int
    seeds: list = field(default_factory=list)
    sampler: str = "vc"
    estimates: np.ndarray | None = None

    def rows(self):
        seed0 = self.seeds[0][0] if self.seeds else 0
        for j in range(self.P):
            yield {
                "S": self.S,
                "covariate": j,
                "mean": float(self.mean[j]),
                "variance": float(self.variance[j]),
                "R": self.R,
                "T": self.T,
                "seed0": seed0,
            }


def _as_stream(s) -> RngStream:
    if isinstance(s, RngStream):
        return s
    if isinstance(s, (tuple, list)):
        return RngStream(int(s[0]), int(s[1]))
    return RngStream(int(s))


def _one_replicate(args):
    ds, hp, rng, sampler, burn, anchor_size, t_burn, table = args
    if sampler == "vc":
        return rao_blackwell_pip_vc(run_vc_wtgs(ds, hp, rng, table=table), burn).values
    if sampler == "wtgs":
        return rao_blackwell_pip_vc(run_wtgs(ds, hp, rng, table=table), burn).values
    if sampler == "subset":
        return rao_blackwell_pip_subset(run_subset_wtgs(ds, hp, anchor_size, t_burn, rng, table=table)).values
    raise ValueError(f"unknown sampler {sampler!r}")


def variance_harness(
    ds: Dataset,
    hp: Hyperparams,
    S_grid,
    R: int,
    T: int,
    base_seed: int,
    *,
    sampler: str = "vc",
    seeds=None,
    burn: int = 0,
    anchor_size: int = 0,
    t_burn: int = 0,
    threads: int = 1,
    table: ConditionalTable | bool | None = None,
) -> list[VarianceReport]:
    """Run R independent chains per S and report per-covariate estimator variance.

    Replicate ``r`` uses ``RngStream(base_seed, r)`` unless ``seeds`` gives
    explicit ``(seed, stream)`` pairs, which must be distinct.  The same
    replicate streams are reused for every S.  Chains fan out over
    ``threads`` worker processes; results are reduced in replicate order.
    ``table=True`` precomputes all-state conditionals once (P <= 16) and
    shares them across replicates.
    """
    if R < 2:
        raise ConfigError(f"need R >= 2 replicates, got {R}")
    if seeds is None:
        streams = [RngStream(base_seed, r) for r in range(R)]
    else:
        streams = [_as_stream(s) for s in seeds]
        if len(streams) != R:
            raise ConfigError(f"got {len(streams)} seeds for R={R} replicates")
        if len(set(streams)) != R:
            raise ConfigError("replicate seeds must be distinct")
    if table is True or (table is None and ds.P <= TABLE_MAX_P and (1 << ds.P) <= R * T):
        table = tabulate_conditionals(ds, hp)
    elif table is False:
        table = None

    reports = []
    for S in S_grid:
        hp_s = Hyperparams(**{**asdict(hp), "S": int(S), "T": int(T)})
        hp_s.check_against(ds.P)
        jobs = [(ds, hp_s, rng, sampler, burn, anchor_size, t_burn, table) for rng in streams]
        est = np.empty((R, ds.P))
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_one_replicate, j) for j in jobs]
                for r, fut in enumerate(futures):
                    try:
                        est[r] = fut.result()
                    except Exception as e:
                        raise RuntimeError(f"replicate {r} failed: {e}") from e
        else:
            for r, job in enumerate(jobs):
                try:
                    est[r] = _one_replicate(job)
                except Exception as e:
                    raise RuntimeError(f"replicate {r} failed: {e}") from e
        reports.append(
            VarianceReport(
                S=int(S),
                mean=est.mean(axis=0),
                variance=est.var(axis=0, ddof=1),
                R=R,
                T=int(T),
                P=ds.P,
                seeds=[(s.seed, s.stream) for s in streams],
                sampler=sampler,
                estimates=est,
            )
        )
    return reports


def write_variance_csv(reports, path, *, with_sampler: bool = False) -> None:
    fields = (("sampler",) if with_sampler else ()) + VARIANCE_CSV_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                if with_sampler:
                    row = {"sampler": rep.sampler, **row}
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_variance_json(reports, path) -> None:
    rows = []
    for rep in reports:
        for row in rep.rows():
            rows.append({"sampler": rep.sampler, **row})
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
