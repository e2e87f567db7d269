"""Scoring for interval forecasts and event localization.

Point metrics (rmse/mae/smape/r2) score single values; interval diagnostics
(picp/width/dice/spike coverage) score (low, high) bounds with inclusive
endpoints. All quantile thresholds use the shared ceiling order statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .util import ceil_quantile, fmt_float, write_json


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size == 0 or p.size != t.size:
        raise DataError(f"metric inputs must be equal-length and non-empty "
                        f"({p.size} vs {t.size})")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def smape(pred, truth) -> float:
    """Symmetric percentage error in [0, 200]; 0/0 pairs contribute 0."""
    p, t = _pair(pred, truth)
    denom = np.abs(p) + np.abs(t)
    terms = np.where(denom > 0, 2.0 * np.abs(p - t) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(100.0 * terms.mean())


def r_squared(pred, truth) -> float | None:
    """1 - SS_res/SS_tot; None (undefined) when the truth is constant."""
    p, t = _pair(pred, truth)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return float(1.0 - np.sum((p - t) ** 2) / ss_tot)


def picp(lows, highs, truths) -> float:
    """Fraction of truths inside their intervals, endpoints inclusive."""
    lo, t = _pair(lows, truths)
    hi, _ = _pair(highs, truths)
    return float(np.mean((t >= lo) & (t <= hi)))


def mean_width(lows, highs) -> float:
    lo = np.asarray(lows, dtype=float).ravel()
    hi = np.asarray(highs, dtype=float).ravel()
    if lo.size == 0:
        raise DataError("mean width of zero intervals")
    if np.any(hi < lo):
        raise DataError("intervals must be ordered (repair before scoring)")
    return float(np.mean(hi - lo))


def dice(a: tuple[float, float], b: tuple[float, float]) -> float:
    """2*overlap / (len(a) + len(b)); identical points 1, distinct points 0."""
    (a_lo, a_hi), (b_lo, b_hi) = a, b
    if a_hi < a_lo or b_hi < b_lo:
        raise DataError("dice expects ordered intervals")
    overlap = max(0.0, min(a_hi, b_hi) - max(a_lo, b_lo))
    denom = (a_hi - a_lo) + (b_hi - b_lo)
    if denom == 0.0:
        return 1.0 if a_lo == b_lo else 0.0
    return 2.0 * overlap / denom


def spike_coverage(lows, highs, truths, q: float = 0.95,
                   threshold: float | None = None) -> float | None:
    """Coverage restricted to truths at or above the spike threshold.

    The threshold defaults to the ceiling q-quantile of the truths themselves;
    returns None ("no spikes") when nothing reaches an explicit threshold.
    """
    lo, t = _pair(lows, truths)
    hi, _ = _pair(highs, truths)
    if threshold is None:
        threshold = ceil_quantile(t, q)
    mask = t >= threshold
    if not mask.any():
        return None
    return float(np.mean((t[mask] >= lo[mask]) & (t[mask] <= hi[mask])))


@dataclass
class MetricReport:
    """Nested scores: forecast[target][horizon] and localization[dim]."""

    forecast: dict[str, dict[str, dict[str, float | int | None]]] = field(default_factory=dict)
    localization: dict[str, dict[str, float | int | None]] = field(default_factory=dict)

    def validate(self) -> None:
        for target, horizons in self.forecast.items():
            for h, cell in horizons.items():
                if cell.get("n", 0) <= 0:
                    raise DataError(f"forecast {target}/{h}: empty sample")
                if cell["rmse"] < cell["mae"] - 1e-12:
                    raise DataError(f"forecast {target}/{h}: rmse < mae")
                for key in ("picp", "spike_cov"):
                    v = cell.get(key)
                    if v is not None and not 0.0 <= v <= 1.0:
                        raise DataError(f"forecast {target}/{h}: {key}={v} out of [0,1]")
                if cell["width"] < 0:
                    raise DataError(f"forecast {target}/{h}: negative width")
        for dim, cell in self.localization.items():
            for key in ("picp", "dice"):
                v = cell.get(key)
                if v is not None and not 0.0 <= v <= 1.0:
                    raise DataError(f"localization {dim}: {key}={v} out of [0,1]")

    def to_dict(self) -> dict:
        return {"forecast": self.forecast, "localization": self.localization}

    def write_json(self, path: str | Path) -> None:
        self.validate()
        write_json(path, self.to_dict())

    def write_csv(self, path: str | Path) -> None:
        """Flat rows for spreadsheet diffing: section,name,horizon,metric,value."""
        self.validate()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write("section,name,horizon,metric,value\n")
            for target in sorted(self.forecast):
                for h in sorted(self.forecast[target], key=int):
                    for metric, value in sorted(self.forecast[target][h].items()):
                        out = "" if value is None else (
                            fmt_float(value) if isinstance(value, float) else str(value))
                        fh.write(f"forecast,{target},{h},{metric},{out}\n")
            for dim in sorted(self.localization):
                for metric, value in sorted(self.localization[dim].items()):
                    out = "" if value is None else (
                        fmt_float(value) if isinstance(value, float) else str(value))
                    fh.write(f"localization,{dim},,{metric},{out}\n")
