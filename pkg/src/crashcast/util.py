"""Small shared helpers: quantiles, seeding, hashing, stable JSON/CSV output."""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def ceil_quantile(values: Sequence[float] | np.ndarray, q: float) -> float:
    """Empirical quantile via the ceiling order statistic ("higher" method).

    Returns the k-th smallest value with k = ceil(q * n), clamped to [1, n].
    Every module that needs a percentile uses this one function so that
    thresholds agree bit-for-bit across the pipeline.
    """
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("quantile of empty sequence")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level must be in [0, 1], got {q}")
    k = math.ceil(q * arr.size)
    k = min(max(k, 1), arr.size)
    return float(np.sort(arr)[k - 1])


def sub_rng(seed: int, name: str) -> np.random.Generator:
    """Named child generator so components can be re-run independently."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, fixed separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 over the canonical JSON form of a config-like object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path: str | Path, obj) -> None:
    """Write JSON with stable key order; output is byte-reproducible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal form; keeps CSV output reproducible."""
    return repr(float(x))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v) if isinstance(v, float) else str(v) for v in row) + "\n")
