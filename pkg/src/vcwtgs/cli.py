"""Command-line experiment driver.

Subcommands: ``run``, ``compare``, ``oracle-check`` and ``gen-data``.
Settings come from an optional ``key=value`` config file and are then
overridden by flags.  Each output directory receives ``config.resolved.txt``
(the full resolved settings) and ``metadata.json`` (the only file carrying a
timestamp), so reruns with the same settings reproduce every other file
byte for byte.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error,
5 oracle-check failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import SynthConfig, generate_gaussian, load_csv, write_csv, write_truth
from .errors import ConfigError, DataError, NumericalError
from .estimators import (
    rao_blackwell_pip_subset,
    rao_blackwell_pip_vc,
    running_estimates,
    variance_harness,
    write_variance_csv,
    write_variance_json,
)
from .model_core import Hyperparams
from .oracle import (
    KERNEL_MAX_P,
    build_kernel,
    check_detailed_balance,
    enumerate_posterior,
    stationarity_error,
    variance_bound_eval,
    verify_gap_bound,
)
from .rng import RngStream
from .samplers import run_subset_wtgs, run_vc_wtgs, run_wtgs
from .svg import line_chart
from .trace_io import write_journal, write_trace_csv

__all__ = ["main", "parse_config_text", "resolve", "DEFAULTS"]

logger = logging.getLogger("vcwtgs")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_ORACLE = 0, 2, 3, 4, 5
SAMPLERS = ("vc", "wtgs", "subset")

# None means "derived": h = min(0.5, 5/P), S = P, k_true = min(5, P),
# threads = logical cores; otherwise "unset".
DEFAULTS: dict = {
    "sampler": "vc",
    "S": None,
    "T": 1000,
    "R": 10,
    "seed": 0,
    "burn": 0,
    "eps": 0.0,
    "anchor": 0,
    "threads": None,
    "h": None,
    "tau": 1.0,
    "nu0": 1.0,
    "lambda0": 1.0,
    "data": None,
    "response": "y",
    "center": False,
    "scale": False,
    "N": 100,
    "P": 200,
    "k_true": None,
    "beta_scale": 1.0,
    "noise_sd": 1.0,
    "correlation": 0.0,
    "data_seed": 0,
    "S_grid": None,
    "samplers": "subset,vc",
    "covariates": None,
    "n_plot": 5,
    "journal": False,
    "svg": True,
    "out": "out",
    "oracle_T": 1000000,
}

_INT = {"S", "T", "R", "seed", "burn", "anchor", "threads", "N", "P", "k_true", "data_seed", "n_plot", "oracle_T"}
_FLOAT = {"eps", "h", "tau", "nu0", "lambda0", "beta_scale", "noise_sd", "correlation"}
_BOOL = {"center", "scale", "journal", "svg"}
_INT_LIST = {"S_grid", "covariates"}


def _convert(key: str, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in _INT:
            return int(text)
        if key in _FLOAT:
            return float(text)
        if key in _BOOL:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key in _INT_LIST:
            return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve(config_path=None, overrides=None) -> dict:
    cfg = dict(DEFAULTS)
    if config_path is not None:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from e
        cfg.update(parse_config_text(text, str(config_path)))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            cfg[key] = _convert(key, value)
    if cfg["sampler"] not in SAMPLERS:
        raise ConfigError(f"sampler must be one of {SAMPLERS}, got {cfg['sampler']!r}")
    return cfg


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _write_resolved(cfg: dict, out: Path, command: str) -> None:
    lines = [f"# resolved settings for `{command}`"]
    lines += [f"{k} = {_format_value(cfg[k])}" for k in sorted(cfg)]
    (out / "config.resolved.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "command": command,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=1) + "\n")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    return out


def _load_data(cfg: dict):
    """Dataset from ``data`` (CSV path) or from the synthetic protocol."""
    if cfg["data"]:
        path = Path(cfg["data"])
        if not path.is_file():
            raise ConfigError(f"data file not found: {path}")
        return load_csv(path, cfg["response"], center=cfg["center"], scale=cfg["scale"])
    ds, _ = generate_gaussian(_synth(cfg))
    return ds


def _synth(cfg: dict) -> SynthConfig:
    k_true = min(5, cfg["P"]) if cfg["k_true"] is None else cfg["k_true"]
    return SynthConfig(N=cfg["N"], P=cfg["P"], k_true=k_true, beta_scale=cfg["beta_scale"],
                       noise_sd=cfg["noise_sd"], correlation=cfg["correlation"], seed=cfg["data_seed"])


def _hyper(cfg: dict, P: int, S=None) -> Hyperparams:
    S = cfg["S"] if S is None else S
    hp = Hyperparams(
        h=min(0.5, 5.0 / P) if cfg["h"] is None else cfg["h"],
        tau=cfg["tau"],
        nu0=cfg["nu0"],
        lambda0=cfg["lambda0"],
        eps=cfg["eps"],
        S=P if S is None else S,
        T=cfg["T"],
        seed=cfg["seed"],
    )
    hp.check_against(P)
    return hp


def _threads(cfg: dict) -> int:
    n = cfg["threads"] if cfg["threads"] is not None else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _fmt(v: float) -> str:
    return "%.17g" % v


def cmd_run(cfg: dict) -> int:
    out = _out_dir(cfg)
    ds = _load_data(cfg)
    hp = _hyper(cfg, ds.P)
    rng = RngStream(hp.seed, 0)
    sampler = cfg["sampler"]
    if not 0 <= cfg["burn"] < hp.T:
        raise ConfigError(f"burn must lie in [0, T), got {cfg['burn']}")
    if sampler == "subset":
        trace = run_subset_wtgs(ds, hp, cfg["anchor"], cfg["burn"], rng)
        est = rao_blackwell_pip_subset(trace)
    else:
        run = run_vc_wtgs if sampler == "vc" else run_wtgs
        trace = run(ds, hp, rng)
        est = rao_blackwell_pip_vc(trace, cfg["burn"])

    write_trace_csv(trace, out / "trace.csv")
    if cfg["journal"]:
        write_journal(trace, out / "trace.bin")
    with open(out / "pip_estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "estimate"])
        for j, v in enumerate(est.values):
            w.writerow([j, _fmt(v)])

    cov = cfg["covariates"]
    if cov is None:
        cov = np.argsort(-est.values, kind="stable")[: cfg["n_plot"]]
        cov = sorted(int(j) for j in cov)
    bad = [j for j in cov if not 0 <= j < ds.P]
    if bad:
        raise ConfigError(f"covariates out of range: {bad}")
    traj = running_estimates(trace, cov, 0 if sampler == "subset" else cfg["burn"])
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *(f"x{j}" for j in cov)])
        for t in range(trace.T):
            w.writerow([t + 1, *("" if math.isnan(v) else _fmt(v) for v in traj[t])])
    if cfg["svg"]:
        x = np.arange(1, trace.T + 1)
        line_chart([(f"covariate {j}", x, traj[:, k]) for k, j in enumerate(cov)], out / "trajectory.svg",
                   title=f"{sampler} running PIP estimates (S={hp.S})", xlabel="iteration",
                   ylabel="estimate")
    _write_resolved(cfg, out, "run")
    print(f"{sampler}: T={hp.T} S={hp.S} P={ds.P}, active iterations {int(trace.q.sum())}; wrote {out}")
    return EXIT_OK


def cmd_compare(cfg: dict) -> int:
    out = _out_dir(cfg)
    ds = _load_data(cfg)
    hp = _hyper(cfg, ds.P, S=ds.P)
    grid = cfg["S_grid"]
    if grid is None:
        grid = sorted({min(2**k, ds.P) for k in range(1, ds.P.bit_length() + 1)})
    samplers = [s.strip() for s in cfg["samplers"].split(",") if s.strip()]
    for s in samplers:
        if s not in SAMPLERS:
            raise ConfigError(f"unknown sampler {s!r} in samplers")
    if cfg["R"] < 2:
        raise ConfigError(f"compare needs R >= 2, got {cfg['R']}")
    threads = _threads(cfg)
    reports = []
    for s in samplers:
        anchor = cfg["anchor"] if s == "subset" else 0
        t_burn = cfg["burn"] if s == "subset" else 0
        burn = 0 if s == "subset" else cfg["burn"]
        if s == "subset" and any(anchor >= S for S in grid):
            raise ConfigError(f"anchor={anchor} must be below every S in the grid")
        reports += variance_harness(ds, hp, grid, cfg["R"], cfg["T"], cfg["seed"], sampler=s, burn=burn,
                                    anchor_size=anchor, t_burn=t_burn, threads=threads)
    write_variance_csv(reports, out / "variance.csv", with_sampler=True)
    write_variance_json(reports, out / "variance.json")
    if cfg["svg"]:
        series = []
        for s in samplers:
            reps = [r for r in reports if r.sampler == s]
            series.append((s, [r.S for r in reps], [float(np.mean(r.variance)) for r in reps]))
        line_chart(series, out / "variance.svg", title="mean per-covariate estimator variance",
                   xlabel="S", ylabel="variance", logy=True)
    _write_resolved(cfg, out, "compare")
    for r in reports:
        print(f"{r.sampler:>6} S={r.S:<4} mean variance {np.mean(r.variance):.3e}")
    return EXIT_OK


def cmd_oracle_check(cfg: dict) -> int:
    out = _out_dir(cfg)
    ds = _load_data(cfg)
    if ds.P > KERNEL_MAX_P:
        raise ConfigError(f"oracle-check is capped at P={KERNEL_MAX_P}, got P={ds.P}")
    hp = _hyper(cfg, ds.P)
    post = enumerate_posterior(ds, hp)
    kp = build_kernel(ds, hp, post)
    db = check_detailed_balance(kp)
    st = stationarity_error(kp)
    gb = verify_gap_bound(kp)
    T = cfg["oracle_T"]
    bounds = [variance_bound_eval(ds, hp, i, T, kp, post) for i in range(ds.P)]
    rows = [
        ("detailed balance", f"{db:.3e} < 1e-10", db < 1e-10),
        ("stationarity", f"{st:.3e} < 1e-10", st < 1e-10),
        ("gap bound", f"{gb['lhs']:.6g} >= {gb['rhs1']:.6g} >= {gb['rhs2']:.6g}", gb["pass"]),
    ]
    if hp.S == ds.P:
        eq = abs(kp.gap_full - kp.gap_P) <= 1e-9
        rows.append(("gap equality at S=P", f"{kp.gap_full:.6g} == {kp.gap_P:.6g}", eq))
    for name, detail, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<22} {detail}")
    for i, b in enumerate(bounds):
        shown = "vacuous" if math.isinf(b) else f"{b:.4g}"
        print(f"info  variance bound x{i:<3}      {shown} (T={T})")
    report = {
        "P": ds.P,
        "S": hp.S,
        "pips": post.pips.tolist(),
        "detailed_balance_violation": db,
        "stationarity_error": st,
        "gap_full": kp.gap_full,
        "gap_P": kp.gap_P,
        "gap_bound": gb,
        "variance_bound_T": T,
        "variance_bounds": [None if math.isinf(b) else b for b in bounds],
        "pass": all(ok for _, _, ok in rows),
    }
    (out / "oracle_report.json").write_text(json.dumps(report, indent=1) + "\n")
    _write_resolved(cfg, out, "oracle-check")
    return EXIT_OK if report["pass"] else EXIT_ORACLE


def cmd_gen_data(cfg: dict) -> int:
    out = _out_dir(cfg)
    ds, truth = generate_gaussian(_synth(cfg))
    write_csv(ds, out / "data.csv", response_column=cfg["response"])
    write_truth(truth, out / "truth.json")
    _write_resolved(cfg, out, "gen-data")
    print(f"wrote {ds.N}x{ds.P} dataset to {out / 'data.csv'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "oracle-check": cmd_oracle_check, "gen-data": cmd_gen_data}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--sampler", choices=SAMPLERS)
    common.add_argument("--S", type=int, help="subset size (default P)")
    common.add_argument("--T", type=int, help="iterations per chain")
    common.add_argument("--R", type=int, help="replicates (compare)")
    common.add_argument("--seed", type=int, help="chain seed")
    common.add_argument("--burn", type=int, help="burn-in iterations")
    common.add_argument("--eps", type=float, help="flip-weight regularizer")
    common.add_argument("--anchor", type=int, help="anchor-set size (subset sampler)")
    common.add_argument("--threads", type=int, help="worker processes (default: logical cores)")
    common.add_argument("--no-svg", dest="svg", action="store_const", const=False, help="skip SVG output")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    p = argparse.ArgumentParser(prog="vcwtgs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one chain and estimate PIPs")
    sub.add_parser("compare", parents=[common], help="replicate variance across an S grid")
    sub.add_parser("oracle-check", parents=[common], help="exact checks on a small instance")
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k) for k in ("sampler", "S", "T", "R", "seed", "burn", "eps", "anchor",
                                           "threads", "svg", "out")}
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            flags[k.strip()] = v
        cfg = resolve(args.config, flags)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RuntimeError as e:
        cause = e.__cause__
        if isinstance(cause, NumericalError):
            print(f"numerical error: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(cause, DataError):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
