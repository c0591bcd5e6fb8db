"""Trace serialization: columnar CSV and a little-endian binary journal.

CSV columns: ``t, q, flipped, rho_tilde_log, gamma``.  ``t`` is 1-based,
``flipped`` is -1 on inactive iterations, ``rho_tilde_log`` is written with
17 significant digits and ``gamma`` is ``packbits(gamma, bitorder="little")``
as lowercase hex, so bit ``j % 8`` of byte ``j // 8`` is ``gamma_j``.

Journal layout (all little-endian)::

    header  magic b"VCWJ" | version u16 = 1 | reserved u16 | T u64 | P u32 | nbytes u32
    record  t u64 | q u8 | flipped i32 | rho_tilde_log f64 | gamma nbytes x u8

with ``nbytes = ceil(P / 8)`` and one packed record per iteration.
"""

from __future__ import annotations

import csv

import numpy as np

from .samplers import SamplerTrace

__all__ = ["write_trace_csv", "write_journal", "read_journal", "pack_gamma", "unpack_gamma"]

_MAGIC = b"VCWJ"
_VERSION = 1
_HEADER = np.dtype([("magic", "S4"), ("version", "<u2"), ("reserved", "<u2"), ("T", "<u8"),
                    ("P", "<u4"), ("nbytes", "<u4")])


def pack_gamma(gamma: np.ndarray) -> np.ndarray:
    """(T, P) bool -> (T, ceil(P/8)) uint8, little bit order."""
    return np.packbits(np.asarray(gamma, dtype=bool), axis=-1, bitorder="little")


def unpack_gamma(packed: np.ndarray, P: int) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, count=P, bitorder="little").astype(bool)


def _record_dtype(nbytes: int) -> np.dtype:
    return np.dtype([("t", "<u8"), ("q", "u1"), ("flipped", "<i4"), ("rho_tilde_log", "<f8"),
                     ("gamma", "u1", (nbytes,))])


def write_trace_csv(trace: SamplerTrace, path) -> None:
    packed = pack_gamma(trace.gamma)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "q", "flipped", "rho_tilde_log", "gamma"])
        for t in range(trace.T):
            w.writerow([t + 1, int(trace.q[t]), int(trace.flipped[t]),
                        "%.17g" % trace.rho_tilde_log[t], packed[t].tobytes().hex()])


def write_journal(trace: SamplerTrace, path) -> None:
    nbytes = (trace.P + 7) // 8
    head = np.zeros(1, dtype=_HEADER)
    head[0] = (_MAGIC, _VERSION, 0, trace.T, trace.P, nbytes)
    rec = np.zeros(trace.T, dtype=_record_dtype(nbytes))
    rec["t"] = np.arange(1, trace.T + 1)
    rec["q"] = trace.q
    rec["flipped"] = trace.flipped
    rec["rho_tilde_log"] = trace.rho_tilde_log
    rec["gamma"] = pack_gamma(trace.gamma)
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(rec.tobytes())


def read_journal(path) -> dict:
    """Inverse of :func:`write_journal`; returns arrays keyed by field name."""
    raw = open(path, "rb").read()
    head = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    if head["magic"] != _MAGIC or head["version"] != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} trace journal")
    T, P, nbytes = int(head["T"]), int(head["P"]), int(head["nbytes"])
    rec = np.frombuffer(raw[_HEADER.itemsize:], dtype=_record_dtype(nbytes), count=T)
    return {
        "t": rec["t"].astype(np.int64),
        "q": rec["q"].astype(np.int8),
        "flipped": rec["flipped"].astype(np.int64),
        "rho_tilde_log": rec["rho_tilde_log"].astype(np.float64),
        "gamma": unpack_gamma(rec["gamma"], P),
    }
