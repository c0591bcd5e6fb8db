"""Synthetic Gaussian designs and CSV ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model_core import Dataset
from .rng import RngStream

__all__ = [
    "SynthConfig",
    "Truth",
    "generate_gaussian",
    "write_csv",
    "write_truth",
    "load_csv",
]


@dataclass(frozen=True)
class SynthConfig:
    """Sparse-truth simulation protocol.

    X rows are standard normal (equicorrelated through one shared factor
    when ``correlation > 0``); beta is ``beta_scale`` on the first
    ``k_true`` coordinates and 0 elsewhere; Y = X beta + noise_sd * noise.
    """

    N: int = 100
    P: int = 200
    k_true: int = 5
    beta_scale: float = 1.0
    noise_sd: float = 1.0
    correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.P < 1:
            raise ConfigError(f"need N, P >= 1, got N={self.N}, P={self.P}")
        if not 0 <= self.k_true <= self.P:
            raise ConfigError(f"need 0 <= k_true <= P, got k_true={self.k_true}, P={self.P}")
        if not (self.noise_sd > 0 and math.isfinite(self.noise_sd)):
            raise ConfigError(f"noise_sd must be positive, got {self.noise_sd}")
        if not 0 <= self.correlation < 1:
            raise ConfigError(f"correlation must lie in [0, 1), got {self.correlation}")
        if not math.isfinite(self.beta_scale):
            raise ConfigError("beta_scale must be finite")


@dataclass
class Truth:
    beta: np.ndarray
    active_set: list
    noise_sd: float
    seed: int

    def to_json(self) -> dict:
        return {
            "beta": [float(b) for b in self.beta],
            "active_set": [int(j) for j in self.active_set],
            "noise_sd": float(self.noise_sd),
            "seed": int(self.seed),
        }


def generate_gaussian(cfg: SynthConfig) -> tuple[Dataset, Truth]:
    """Draw (X, Y) from ``cfg``; deterministic in ``cfg.seed``."""
    gen = RngStream(cfg.seed, 0).generator()
    Z = gen.standard_normal((cfg.N, cfg.P))
    if cfg.correlation > 0:
        f = gen.standard_normal((cfg.N, 1))
        X = math.sqrt(1.0 - cfg.correlation) * Z + math.sqrt(cfg.correlation) * f
    else:
        X = Z
    beta = np.zeros(cfg.P)
    beta[: cfg.k_true] = cfg.beta_scale
    Y = X @ beta + cfg.noise_sd * gen.standard_normal(cfg.N)
    truth = Truth(beta=beta, active_set=list(range(cfg.k_true)), noise_sd=cfg.noise_sd, seed=cfg.seed)
    return Dataset.from_arrays(X, Y), truth


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_csv(ds: Dataset, path, *, response_column: str = "y", names=None) -> None:
    """Response first, then covariates ``x0..x{P-1}``, 17 significant digits."""
    names = [f"x{j}" for j in range(ds.P)] if names is None else list(names)
    if len(names) != ds.P:
        raise ValueError(f"got {len(names)} column names for P={ds.P}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response_column, *names])
        for n in range(ds.N):
            w.writerow([_fmt(ds.Y[n]), *(_fmt(v) for v in ds.X[n])])


def write_truth(truth: Truth, path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_json(), fh, indent=1)
        fh.write("\n")


def load_csv(path, response_column: str, *, center: bool = False, scale: bool = False,
             return_names: bool = False):
    """Read a header-first numeric CSV into a :class:`Dataset`.

    X keeps the remaining columns in header order.  ``center`` subtracts
    column means from X and Y; ``scale`` divides X columns by their standard
    deviation.  Both default off.  Rows are numbered from 1 after the header.
    """
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot open {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names")
        if response_column not in header:
            raise DataError(f"{path}: no column named {response_column!r}")
        width = len(header)
        rows = []
        for r, row in enumerate(reader, start=1):
            if len(row) != width:
                raise DataError(f"{path}: row {r} has {len(row)} cells, header has {width}")
            vals = []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise DataError(f"{path}: missing value at row {r}, column {header[c]!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column {header[c]!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r} at row {r}, column {header[c]!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    M = np.array(rows)
    k = header.index(response_column)
    Y = M[:, k]
    names = [h for j, h in enumerate(header) if j != k]
    X = np.delete(M, k, axis=1)
    if X.shape[1] == 0:
        raise DataError(f"{path}: no covariate columns")
    if np.ptp(Y) == 0:
        raise DataError(f"{path}: response {response_column!r} is constant")
    if center:
        X = X - X.mean(axis=0)
        Y = Y - Y.mean()
    if scale:
        sd = X.std(axis=0)
        bad = np.flatnonzero(sd == 0)
        if bad.size:
            raise DataError(f"{path}: cannot scale constant column {names[bad[0]]!r}")
        X = X / sd
    ds = Dataset.from_arrays(X, Y)
    return (ds, names) if return_names else ds


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
