"""Trajectory records: data model, deterministic RNG stream derivation, file I/O.

File format (``.qpetraj``): line 1 is a JSON metadata object with keys
``model, params, fixed, dt, tau, n, seed, dim, kappa, eta, version``;
lines 2..N+1 are CSV rows ``t,I[,x_truth]``.  Floats are written with 17
significant digits, which round-trips 64-bit floats exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def derive_seed(base_seed: int, stream_index: int) -> int:
    """Deterministically derive an independent 64-bit stream seed.

    Splitmix64-style: advance the base by (index+1) increments of the golden
    gamma, then apply the standard avalanche.  Distinct indices give distinct,
    well-mixed streams regardless of evaluation order.
    """
    z = (base_seed + (stream_index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def make_rng(base_seed: int, stream_index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, stream_index)))


@dataclass(frozen=True)
class Metadata:
    """Reproducibility metadata carried with every trajectory record."""

    model: str
    params: dict
    fixed: dict
    dt: float
    tau: float
    n: int
    seed: int
    dim: int
    kappa: float
    eta: float
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.n != round(self.tau / self.dt):
            raise ValueError(f"sample count {self.n} inconsistent with tau/dt = {self.tau / self.dt}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Metadata":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad metadata header (line 1): {exc}") from exc
        required = {"model", "params", "fixed", "dt", "tau", "n", "seed", "dim", "kappa", "eta", "version"}
        missing = required - obj.keys()
        if missing:
            raise FormatError(f"metadata header missing keys: {sorted(missing)}")
        if obj["version"] != FORMAT_VERSION:
            raise FormatError(f"unknown format version {obj['version']}")
        return cls(**{k: obj[k] for k in required})


@dataclass(frozen=True)
class TrajectoryRecord:
    """A measurement-current time series with optional hidden truth channel."""

    times: np.ndarray
    currents: np.ndarray
    meta: Metadata
    truth: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        currents = np.asarray(self.currents, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "currents", currents)
        if times.shape != currents.shape:
            raise ValueError("times and currents must have equal length")
        if len(times) >= 2:
            spacing = np.diff(times)
            if np.max(np.abs(spacing - self.meta.dt)) > 1e-12:
                raise ValueError("times must be uniformly spaced at meta.dt")
        if not np.all(np.isfinite(currents)):
            raise ValueError("currents must be finite")
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=float)
            if truth.shape != currents.shape:
                raise ValueError("truth channel length must match currents")
            object.__setattr__(self, "truth", truth)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def has_truth(self) -> bool:
        return self.truth is not None


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_record(rec: TrajectoryRecord, path) -> None:
    with open(path, "w") as fh:
        fh.write(rec.meta.to_json() + "\n")
        if rec.truth is None:
            for t, i in zip(rec.times, rec.currents):
                fh.write(f"{_fmt(t)},{_fmt(i)}\n")
        else:
            for t, i, x in zip(rec.times, rec.currents, rec.truth):
                fh.write(f"{_fmt(t)},{_fmt(i)},{_fmt(x)}\n")


def read_record(path) -> TrajectoryRecord:
    with open(path) as fh:
        header = fh.readline()
        if not header.strip():
            raise FormatError("empty file: missing metadata header on line 1")
        meta = Metadata.from_json(header)
        times, currents, truth = [], [], []
        n_cols = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if n_cols is None:
                if len(parts) not in (2, 3):
                    raise FormatError(f"line {lineno}: expected 2 or 3 columns, got {len(parts)}")
                n_cols = len(parts)
            elif len(parts) != n_cols:
                raise FormatError(f"line {lineno}: expected {n_cols} columns, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad float: {exc}") from exc
            times.append(vals[0])
            currents.append(vals[1])
            if n_cols == 3:
                truth.append(vals[2])
    if len(times) != meta.n:
        raise FormatError(f"expected {meta.n} samples per header, found {len(times)} (truncated file?)")
    return TrajectoryRecord(
        times=np.array(times),
        currents=np.array(currents),
        meta=meta,
        truth=np.array(truth) if truth else None,
    )
