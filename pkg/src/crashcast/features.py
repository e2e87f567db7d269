"""Edge-time feature tensors from per-vehicle logs.

Channels per (edge, bin): [tti, ce, speed, collision, spike].

* tti: mean over traversals completing in the bin of observed dwell divided by
  that vehicle's own free-flow dwell on the edge; untouched bins fill with 1.
* ce: sum of per-step emissions in the bin (math.fsum, so a brute-force
  recount reproduces values bit-for-bit); empty bins are 0.
* speed: mean instantaneous speed of step records in the bin; empty bins fill
  with the edge speed limit.
* collision: 1 iff a collision record falls in the (edge, bin).
* spike: 1 iff the edge's raw tti meets or exceeds the configured percentile
  of that edge's whole tti series (ceiling order statistic).

Binary channels are never standardized and pass through bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .emissions import emission_rate  # noqa: F401  (re-export: polynomial lives here)
from .errors import DataError
from .network import RoadGraph
from .simulator import ScenarioResult
from .util import ceil_quantile, fmt_float, read_json, write_json

CHANNELS = ("tti", "ce", "speed", "collision", "spike")
CONTINUOUS = (0, 1, 2)
BINARY = (3, 4)


def travel_time_index(tt_obs: float, tt_ff: float) -> float:
    """Observed over free-flow travel time; 1 means uncongested."""
    if tt_ff <= 0:
        raise DataError(f"free-flow travel time must be positive, got {tt_ff}")
    if tt_obs < 0:
        raise DataError(f"observed travel time must be non-negative, got {tt_obs}")
    return tt_obs / tt_ff


@dataclass
class FeatureTensor:
    values: np.ndarray          # (E, T, 5)
    mu: np.ndarray              # (E, 5); 0 for binary channels
    sigma: np.ndarray           # (E, 5); 1 for binary channels
    edge_ids: list[str]
    bin_s: float
    standardized: bool = False

    @property
    def n_edges(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def edge_row(self, edge_id: str) -> int:
        return self.edge_ids.index(edge_id)


def time_bin(t: float, bin_s: float) -> int:
    """Bin index for a log timestamp; bin b covers (b*bin_s, (b+1)*bin_s]."""
    return max(0, math.ceil(t / bin_s) - 1)


def aggregate(scenario: ScenarioResult, baseline: ScenarioResult, graph: RoadGraph,
              bin_s: float, horizon_s: float, dt: float,
              spike_percentile: float = 0.95) -> FeatureTensor:
    """Fold step logs, traversals, and collisions into a raw feature tensor."""
    if bin_s <= 0 or abs(bin_s / dt - round(bin_s / dt)) > 1e-9:
        raise DataError(f"bin width {bin_s} must be a positive multiple of dt={dt}")
    edge_ids = graph.edge_ids()
    e_index = {eid: i for i, eid in enumerate(edge_ids)}
    n_e = len(edge_ids)
    n_t = math.ceil(horizon_s / bin_s)

    freeflow: dict[tuple[str, str], float] = {}
    for tr in baseline.traversals:
        freeflow.setdefault((tr.veh_id, tr.edge_id), tr.dwell_s)

    ratio_bins: dict[tuple[int, int], list[float]] = {}
    for tr in scenario.traversals:
        key = (tr.veh_id, tr.edge_id)
        if key not in freeflow:
            raise DataError(f"vehicle {tr.veh_id} has no baseline for edge {tr.edge_id} "
                            "(alignment violation)")
        b = min(time_bin(tr.t_exit, bin_s), n_t - 1)
        ratio_bins.setdefault((e_index[tr.edge_id], b), []).append(
            travel_time_index(tr.dwell_s, freeflow[key]))

    ce_bins: dict[tuple[int, int], list[float]] = {}
    spd_bins: dict[tuple[int, int], list[float]] = {}
    for rec in scenario.records:
        b = min(time_bin(rec.t, bin_s), n_t - 1)
        key = (e_index[rec.edge_id], b)
        ce_bins.setdefault(key, []).append(rec.ce_step)
        spd_bins.setdefault(key, []).append(rec.speed)

    values = np.zeros((n_e, n_t, 5))
    values[:, :, 0] = 1.0
    for i, eid in enumerate(edge_ids):
        values[i, :, 2] = graph.edge(eid).vmax_mps
    for (i, b), ratios in ratio_bins.items():
        values[i, b, 0] = math.fsum(ratios) / len(ratios)
    for (i, b), steps in ce_bins.items():
        values[i, b, 1] = math.fsum(steps)
    for (i, b), speeds in spd_bins.items():
        values[i, b, 2] = math.fsum(speeds) / len(speeds)
    for rec in scenario.collisions:
        values[e_index[rec.edge_id], min(time_bin(rec.t, bin_s), n_t - 1), 3] = 1.0
    for i in range(n_e):
        threshold = ceil_quantile(values[i, :, 0], spike_percentile)
        values[i, :, 4] = (values[i, :, 0] >= threshold).astype(float)

    mu = np.zeros((n_e, 5))
    sigma = np.ones((n_e, 5))
    return FeatureTensor(values=values, mu=mu, sigma=sigma, edge_ids=list(edge_ids),
                         bin_s=bin_s, standardized=False)


def standardize(tensor: FeatureTensor) -> FeatureTensor:
    """Per-edge z-scoring of the continuous channels (population variance)."""
    if tensor.standardized:
        raise DataError("tensor is already standardized")
    if tensor.n_bins < 2:
        raise DataError("standardization needs at least two time bins")
    values = tensor.values.copy()
    mu = np.zeros((tensor.n_edges, 5))
    sigma = np.ones((tensor.n_edges, 5))
    for ch in CONTINUOUS:
        m = tensor.values[:, :, ch].mean(axis=1)
        s = tensor.values[:, :, ch].std(axis=1)     # population (ddof=0)
        mu[:, ch] = m
        sigma[:, ch] = s
        nz = s > 0
        values[nz, :, ch] = (tensor.values[nz, :, ch] - m[nz, None]) / s[nz, None]
        values[~nz, :, ch] = 0.0
    return FeatureTensor(values=values, mu=mu, sigma=sigma, edge_ids=list(tensor.edge_ids),
                         bin_s=tensor.bin_s, standardized=True)


def inverse_standardize(tensor: FeatureTensor) -> FeatureTensor:
    """Undo standardize(); zero-sigma channels restore to their constant mean."""
    if not tensor.standardized:
        raise DataError("tensor is not standardized")
    values = tensor.values.copy()
    for ch in CONTINUOUS:
        s = tensor.sigma[:, ch].copy()
        restored = tensor.values[:, :, ch] * np.where(s > 0, s, 0.0)[:, None] \
            + tensor.mu[:, ch][:, None]
        values[:, :, ch] = restored
    return replace(tensor, values=values, standardized=False)


def unstandardize_values(tensor: FeatureTensor, edge_row: int, channel: int,
                         values: np.ndarray) -> np.ndarray:
    """Map standardized channel values for one edge back to raw units."""
    s = tensor.sigma[edge_row, channel]
    return values * (s if s > 0 else 0.0) + tensor.mu[edge_row, channel]


# -- tensor file format -----------------------------------------------------------
# Long CSV: edge_id, t_bin, tti, ce, speed, c, s (raw units) plus a JSON
# sidecar `<stem>.meta.json` with mu/sigma, the edge index, and bin width.

def write_feature_csv(tensor: FeatureTensor, path: str | Path,
                      extra_meta: dict | None = None) -> None:
    if tensor.standardized:
        raise DataError("feature files store raw values; inverse-standardize first")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("edge_id,t_bin,tti,ce,speed,c,s\n")
        for i, eid in enumerate(tensor.edge_ids):
            for b in range(tensor.n_bins):
                row = tensor.values[i, b]
                fh.write(f"{eid},{b},{fmt_float(row[0])},{fmt_float(row[1])},"
                         f"{fmt_float(row[2])},{int(row[3])},{int(row[4])}\n")
    stats = standardize(tensor) if tensor.n_bins >= 2 else tensor
    meta = {
        "bin_s": tensor.bin_s,
        "edge_ids": tensor.edge_ids,
        "mu": [[float(v) for v in row] for row in stats.mu],
        "sigma": [[float(v) for v in row] for row in stats.sigma],
        "n_bins": tensor.n_bins,
        "channels": list(CHANNELS),
    }
    meta.update(extra_meta or {})
    write_json(meta_path(path), meta)


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(".meta.json")


def read_feature_csv(path: str | Path) -> tuple[FeatureTensor, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    meta = read_json(meta_path(path))
    edge_ids = list(meta["edge_ids"])
    e_index = {eid: i for i, eid in enumerate(edge_ids)}
    n_t = int(meta["n_bins"])
    values = np.zeros((len(edge_ids), n_t, 5))
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        if header != ["edge_id", "t_bin", "tti", "ce", "speed", "c", "s"]:
            raise DataError(f"unexpected feature csv header in {path}")
        for line in fh:
            eid, b, tti, ce, spd, c, s = line.rstrip("\n").split(",")
            values[e_index[eid], int(b)] = [float(tti), float(ce), float(spd),
                                            float(c), float(s)]
    tensor = FeatureTensor(values=values,
                           mu=np.array(meta["mu"], dtype=float),
                           sigma=np.array(meta["sigma"], dtype=float),
                           edge_ids=edge_ids, bin_s=float(meta["bin_s"]),
                           standardized=False)
    return tensor, meta
