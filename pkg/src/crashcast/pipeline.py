"""End-to-end pipeline stages behind the CLI verbs.

A run directory is the unit of provenance: every artifact written into it
carries the config hash from manifest.json, and stages refuse to mix inputs
with different hashes. Nothing in here writes wall-clock time, so repeated
runs from one config are byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, DataError
from .features import (FeatureTensor, aggregate, read_feature_csv, standardize,
                       time_bin, write_feature_csv)
from .metrics import (MetricReport, dice, mae, mean_width, picp, r_squared, rmse,
                      smape, spike_coverage)
from .network import RoadGraph, load_network, save_network, transition_matrices
from .neural.model import (Checkpoint, ModelHyper, TARGETS, load_checkpoint,
                           save_checkpoint)
from .neural.training import (EventIntervals, SplitOrigins, calibrate_localizer,
                              chronological_split, conformal_calibrate, forecast,
                              localization_examples, localization_target_stats,
                              localize, train_forecaster, train_localizer,
                              window_origins)
from .simulator import (CollisionRecord, EdgeTraversal, RunSummary, ScenarioResult,
                        StepRecord, build_vehicle_specs, plan_events, run_baseline,
                        run_scenario)
from .util import fmt_float, read_json, write_json

LOG_HEADER = ["veh_id", "class", "edge_id", "t", "speed", "accel", "dwell_s", "ce_step"]
TRAVERSAL_HEADER = ["veh_id", "edge_id", "dwell_s", "t_exit"]
COLLISION_HEADER = ["event_id", "type", "leader", "follower", "x", "y", "t", "edge_id"]
VARIANTS = ("collision", "control", "baseline")
LOC_DIMS = ("x", "y", "t")


# -- log file IO ---------------------------------------------------------------------

def write_log_csv(records: list[StepRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.veh_id},{r.vclass},{r.edge_id},{fmt_float(r.t)},"
                     f"{fmt_float(r.speed)},{fmt_float(r.accel)},"
                     f"{fmt_float(r.dwell_s)},{fmt_float(r.ce_step)}\n")


def read_log_csv(path: Path) -> list[StepRecord]:
    if not path.exists():
        raise DataError(f"log file not found: {path}")
    out = []
    with path.open() as fh:
        if fh.readline().strip().split(",") != LOG_HEADER:
            raise DataError(f"unexpected log header in {path}")
        for line in fh:
            v, c, e, t, s, a, d, ce = line.rstrip("\n").split(",")
            out.append(StepRecord(v, c, e, float(t), float(s), float(a),
                                  float(d), float(ce)))
    return out


def write_traversals_csv(traversals: list[EdgeTraversal], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(TRAVERSAL_HEADER) + "\n")
        for tr in traversals:
            fh.write(f"{tr.veh_id},{tr.edge_id},{fmt_float(tr.dwell_s)},"
                     f"{fmt_float(tr.t_exit)}\n")


def read_traversals_csv(path: Path) -> list[EdgeTraversal]:
    if not path.exists():
        raise DataError(f"traversal file not found: {path}")
    out = []
    with path.open() as fh:
        if fh.readline().strip().split(",") != TRAVERSAL_HEADER:
            raise DataError(f"unexpected traversal header in {path}")
        for line in fh:
            v, e, d, t = line.rstrip("\n").split(",")
            out.append(EdgeTraversal(v, e, float(d), float(t)))
    return out


def write_collisions_csv(collisions: list[CollisionRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(COLLISION_HEADER) + "\n")
        for c in collisions:
            fh.write(f"{c.event_id},{c.kind},{c.leader},{c.follower},"
                     f"{fmt_float(c.x)},{fmt_float(c.y)},{fmt_float(c.t)},{c.edge_id}\n")


def read_collisions_csv(path: Path) -> list[CollisionRecord]:
    if not path.exists():
        raise DataError(f"collisions file not found: {path}")
    out = []
    with path.open() as fh:
        if fh.readline().strip().split(",") != COLLISION_HEADER:
            raise DataError(f"unexpected collisions header in {path}")
        for line in fh:
            ev, kind, lead, foll, x, y, t, edge = line.rstrip("\n").split(",")
            out.append(CollisionRecord(ev, kind, lead, foll, float(x), float(y),
                                       float(t), edge))
    return out


# -- simulate ------------------------------------------------------------------------

def _variant_task(args):
    kind, graph, specs, events, dt, horizon, coeffs = args
    if kind == "baseline":
        return kind, run_baseline(graph, specs, dt=dt, coefficients=coeffs)
    return kind, run_scenario(graph, specs, events if kind == "collision" else [],
                              dt=dt, horizon_s=horizon, coefficients=coeffs)


def simulate(cfg: ExperimentConfig, run_dir: Path, workers: int = 1,
             base_dir: Path | None = None) -> dict[str, ScenarioResult]:
    """Run collision, control, and per-vehicle free-flow variants; write the run dir."""
    run_dir = Path(run_dir)
    graph = cfg.build_network(base_dir)
    specs = cfg.explicit_specs()
    if specs is None:
        counts = cfg.vehicle_counts()
        if counts is None:
            raise ConfigError("scenario needs either vehicle counts or explicit specs")
        specs = build_vehicle_specs(graph, counts, cfg.seed,
                                    depart_window_s=cfg.sim.depart_window_s)
    explicit_events, requests = cfg.event_entries()
    events = explicit_events + (plan_events(graph, specs, requests, cfg.seed)
                                if requests else [])
    coeffs = cfg.features.ce_coefficients
    tasks = [(kind, graph, specs, events, cfg.sim.dt, cfg.sim.horizon_s, coeffs)
             for kind in VARIANTS]
    results: dict[str, ScenarioResult] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            for kind, res in pool.map(_variant_task, tasks):
                results[kind] = res
    else:
        for task in tasks:
            kind, res = _variant_task(task)
            results[kind] = res

    save_network(graph, run_dir / "network.json")
    write_json(run_dir / "scenario.json", {
        "sim": {"dt": cfg.sim.dt, "horizon_s": cfg.sim.horizon_s,
                "depart_window_s": cfg.sim.depart_window_s},
        "specs": [{"id": s.id, "class": s.vclass, "route": s.route,
                   "depart_s": s.depart_s, "vmax": s.vmax, "accel": s.accel,
                   "decel": s.decel, "length": s.length, "min_gap": s.min_gap,
                   "vmax_speeding": s.vmax_speeding} for s in specs],
        "events": [{"event_id": e.event_id, "kind": e.kind, "leader": e.leader,
                    "follower": e.follower, "trigger_s": e.trigger_s,
                    "dwell_s": e.dwell_s, "clearance_s": e.clearance_s,
                    "stop_edge": e.stop_edge, "node": e.node} for e in events],
    })
    for kind, res in results.items():
        write_log_csv(res.records, run_dir / "logs" / f"{kind}.csv")
        write_traversals_csv(res.traversals, run_dir / "logs" / f"{kind}_traversals.csv")
    write_collisions_csv(results["collision"].collisions, run_dir / "collisions.csv")
    write_json(run_dir / "summary.json", {
        kind: _summary_dict(res.summary) for kind, res in results.items()})
    write_json(run_dir / "manifest.json", {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": _manifest_config(cfg),
    })
    return results


def _summary_dict(s: RunSummary) -> dict:
    return {"departed": s.departed, "arrived": s.arrived, "cleared": s.cleared,
            "active_at_end": s.active_at_end, "not_departed": s.not_departed,
            "unrealized_events": list(s.unrealized_events),
            "reconciles": s.reconciles()}


def _manifest_config(cfg: ExperimentConfig) -> dict:
    doc = dict(cfg.raw)
    doc["seed"] = cfg.seed
    doc["scenario"] = cfg.scenario      # inline any file reference
    doc.pop("out_dir", None)            # output location is not provenance
    return doc


def load_run(run_dir: Path) -> tuple[ExperimentConfig, RoadGraph, dict]:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"not a run directory (no manifest.json): {run_dir}")
    manifest = read_json(manifest_path)
    cfg = ExperimentConfig.from_dict(manifest["config"], base_dir=run_dir)
    graph = load_network(run_dir / "network.json")
    return cfg, graph, manifest


# -- featurize ------------------------------------------------------------------------

def featurize(run_dir: Path) -> dict[str, FeatureTensor]:
    """Fold the run's logs into raw feature files for both scenario variants."""
    run_dir = Path(run_dir)
    cfg, graph, manifest = load_run(run_dir)
    baseline = ScenarioResult(
        records=[], traversals=read_traversals_csv(run_dir / "logs" / "baseline_traversals.csv"),
        collisions=[], summary=RunSummary())
    collisions = read_collisions_csv(run_dir / "collisions.csv")
    out: dict[str, FeatureTensor] = {}
    for variant in ("collision", "control"):
        result = ScenarioResult(
            records=read_log_csv(run_dir / "logs" / f"{variant}.csv"),
            traversals=read_traversals_csv(run_dir / "logs" / f"{variant}_traversals.csv"),
            collisions=collisions if variant == "collision" else [],
            summary=RunSummary())
        tensor = aggregate(result, baseline, graph, bin_s=cfg.features.bin_s,
                           horizon_s=cfg.sim.horizon_s, dt=cfg.sim.dt,
                           spike_percentile=cfg.features.spike_percentile)
        write_feature_csv(tensor, run_dir / "features" / f"{variant}.csv",
                          extra_meta={"config_hash": manifest["config_hash"],
                                      "variant": variant,
                                      "horizon_s": cfg.sim.horizon_s,
                                      "dt": cfg.sim.dt})
        out[variant] = tensor
    return out


# -- train ----------------------------------------------------------------------------

def _splits_for(tensor: FeatureTensor, cfg: ExperimentConfig) -> SplitOrigins:
    origins = window_origins(tensor.n_bins, cfg.model.lookback, cfg.model.horizons)
    return chronological_split(origins, cfg.split_fractions(), gap=cfg.model.horizons)


def train(run_dir: Path) -> Checkpoint:
    """Train forecaster and localizer, calibrate both, write the checkpoint."""
    run_dir = Path(run_dir)
    cfg, graph, manifest = load_run(run_dir)
    raw, meta = read_feature_csv(run_dir / "features" / "collision.csv")
    if meta.get("config_hash") != manifest["config_hash"]:
        raise DataError("feature file does not belong to this run (config hash mismatch)")
    tensor = standardize(raw)
    splits = _splits_for(tensor, cfg)
    transitions = transition_matrices(graph.W)
    model, curve = train_forecaster(tensor, transitions, cfg.model, cfg.seed, splits)
    calibration = conformal_calibrate(model, tensor, splits.calib, cfg.model)

    collisions = read_collisions_csv(run_dir / "collisions.csv")
    localizer = None
    loc_calib = None
    loc_curve: list[float] = []
    if collisions:
        examples = localization_examples(collisions, tensor, cfg.model.lookback,
                                         cfg.model.loc_offsets)
        if examples:
            train_set = set(splits.train)
            calib_set = set(splits.calib)
            loc_train = [e for e in examples if e.tau in train_set]
            loc_cal = [e for e in examples if e.tau in calib_set]
            if not loc_train:
                loc_train = examples            # toy-scale fallback: too few events
            if not loc_cal:
                loc_cal = loc_train
            mu, sigma = localization_target_stats(loc_train)
            localizer, loc_curve = train_localizer(tensor, loc_train, cfg.model,
                                                   cfg.seed, mu, sigma)
            loc_calib = calibrate_localizer(localizer, tensor, loc_cal, cfg.model,
                                            mu, sigma)
    ckpt = Checkpoint(
        hyper=cfg.model, edge_ids=list(tensor.edge_ids), bin_s=tensor.bin_s,
        feature_mu=tensor.mu, feature_sigma=tensor.sigma,
        forecaster=model, localizer=localizer, calibration=calibration,
        localization=loc_calib, config_hash=manifest["config_hash"],
        extras={"loss_curve": curve, "loc_curve": loc_curve,
                "splits": {"train": splits.train, "calib": splits.calib,
                           "test": splits.test}})
    save_checkpoint(ckpt, run_dir / "model" / "checkpoint.json")
    return ckpt


def _load_trained(run_dir: Path) -> tuple[ExperimentConfig, RoadGraph, dict,
                                          Checkpoint, FeatureTensor]:
    run_dir = Path(run_dir)
    cfg, graph, manifest = load_run(run_dir)
    ckpt = load_checkpoint(run_dir / "model" / "checkpoint.json")
    raw, meta = read_feature_csv(run_dir / "features" / "collision.csv")
    hashes = {manifest["config_hash"], meta.get("config_hash"), ckpt.config_hash}
    if len(hashes) != 1:
        raise DataError("mixed provenance: manifest, features, and checkpoint "
                        "carry different config hashes")
    tensor = standardize(raw)
    ckpt.forecaster.set_transitions(transition_matrices(graph.W))
    return cfg, graph, manifest, ckpt, tensor


# -- evaluate -----------------------------------------------------------------------

def evaluate(run_dir: Path) -> MetricReport:
    """Score the test split and event localization; write metrics files."""
    run_dir = Path(run_dir)
    cfg, graph, manifest, ckpt, tensor = _load_trained(run_dir)
    raw, _ = read_feature_csv(run_dir / "features" / "collision.csv")
    splits = SplitOrigins(**{k: list(v) for k, v in ckpt.extras["splits"].items()})
    report = MetricReport()
    report.forecast = forecast_scores(ckpt, tensor, raw, splits.test, cfg.model)
    collisions = read_collisions_csv(run_dir / "collisions.csv")
    if ckpt.localizer is not None and collisions:
        report.localization = localization_scores(ckpt, tensor, collisions,
                                                  cfg.truth_halfwidth)
    report.validate()
    write_json(run_dir / "eval" / "metrics.json",
               {**report.to_dict(), "config_hash": manifest["config_hash"]})
    report.write_csv(run_dir / "eval" / "metrics.csv")
    return report


def forecast_scores(ckpt: Checkpoint, tensor: FeatureTensor, raw: FeatureTensor,
                    origins: list[int], hyper: ModelHyper) -> dict:
    """Interval and midpoint metrics per target and horizon on raw-unit truths."""
    if not origins:
        raise DataError("no evaluation origins")
    H = hyper.horizons
    n_q = len(TARGETS)
    lows = {(q, h): [] for q in range(n_q) for h in range(H)}
    highs = {(q, h): [] for q in range(n_q) for h in range(H)}
    truths = {(q, h): [] for q in range(n_q) for h in range(H)}
    for tau in origins:
        out = forecast(ckpt.forecaster, tensor, int(tau), ckpt.calibration, hyper)
        for h in range(H):
            for q in range(n_q):
                lows[(q, h)].append(out.low[h, :, q])
                highs[(q, h)].append(out.high[h, :, q])
                truths[(q, h)].append(raw.values[:, int(tau) + h + 1, q])
    scores: dict = {}
    for q, name in enumerate(TARGETS):
        scores[name] = {}
        for h in range(H):
            lo = np.concatenate(lows[(q, h)])
            hi = np.concatenate(highs[(q, h)])
            z = np.concatenate(truths[(q, h)])
            mid = 0.5 * (lo + hi)
            scores[name][str(h + 1)] = {
                "rmse": rmse(mid, z),
                "mae": mae(mid, z),
                "smape": smape(mid, z),
                "r2": r_squared(mid, z),
                "picp": picp(lo, hi, z),
                "width": mean_width(lo, hi),
                "spike_cov": spike_coverage(lo, hi, z, q=0.95),
                "n": int(z.size),
            }
    return scores


def localization_scores(ckpt: Checkpoint, tensor: FeatureTensor,
                        collisions: list[CollisionRecord],
                        truth_halfwidth: dict[str, float]) -> dict:
    """Interval metrics per dimension over one pre-event window per collision."""
    rows = predict_events(ckpt, tensor, collisions)
    if not rows:
        raise DataError("no collision event leaves room for a lookback window")
    scores: dict = {}
    for d, dim in enumerate(LOC_DIMS):
        bounds = [getattr(iv, dim) for _, iv in rows]
        zs = np.array([(rec.x, rec.y, rec.t)[d] for rec, _ in rows])
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        half = truth_halfwidth[dim]
        dices = [dice((z - half, z + half), b) for z, b in zip(zs, bounds)]
        scores[dim] = {
            "rmse": rmse(np.concatenate([lo, hi]), np.concatenate([zs, zs])),
            "picp": picp(lo, hi, zs),
            "width": mean_width(lo, hi),
            "dice": float(np.mean(dices)),
            "n": len(rows),
        }
    return scores


def predict_events(ckpt: Checkpoint, tensor: FeatureTensor,
                   collisions: list[CollisionRecord]
                   ) -> list[tuple[CollisionRecord, EventIntervals]]:
    """One localization per event, from the window ending just before it."""
    if ckpt.localizer is None or ckpt.localization is None:
        raise DataError("checkpoint has no localizer (run recorded no collisions)")
    rows = []
    for rec in collisions:
        tau = min(time_bin(rec.t, tensor.bin_s), tensor.n_bins - 1) - 1
        if tau < ckpt.hyper.lookback - 1:
            continue
        iv = localize(ckpt.localizer, tensor, tau, ckpt.localization, ckpt.hyper)
        rows.append((rec, iv))
    return rows


# -- forecast / localize commands ----------------------------------------------------

def forecast_to_csv(run_dir: Path, origin: int | None, out_path: Path | None) -> Path:
    run_dir = Path(run_dir)
    cfg, graph, manifest, ckpt, tensor = _load_trained(run_dir)
    tau = origin if origin is not None else tensor.n_bins - cfg.model.horizons - 1
    out = forecast(ckpt.forecaster, tensor, int(tau), ckpt.calibration, cfg.model)
    path = out_path or run_dir / "forecasts.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("origin_bin,horizon,edge_id,target,low,high\n")
        for h in range(cfg.model.horizons):
            for q, name in enumerate(TARGETS):
                for e, eid in enumerate(out.edge_ids):
                    fh.write(f"{tau},{h + 1},{eid},{name},"
                             f"{fmt_float(out.low[h, e, q])},"
                             f"{fmt_float(out.high[h, e, q])}\n")
    return path


def localize_to_csv(run_dir: Path, origin: int | None, out_path: Path | None) -> Path:
    run_dir = Path(run_dir)
    cfg, graph, manifest, ckpt, tensor = _load_trained(run_dir)
    if ckpt.localizer is None or ckpt.localization is None:
        raise DataError("checkpoint has no localizer (run recorded no collisions)")
    tau = origin if origin is not None else tensor.n_bins - 1
    iv = localize(ckpt.localizer, tensor, int(tau), ckpt.localization, cfg.model)
    path = out_path or run_dir / "localization.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("origin_bin,x_low,x_high,y_low,y_high,t_low,t_high\n")
        fh.write(f"{tau},{fmt_float(iv.x[0])},{fmt_float(iv.x[1])},"
                 f"{fmt_float(iv.y[0])},{fmt_float(iv.y[1])},"
                 f"{fmt_float(iv.t[0])},{fmt_float(iv.t[1])}\n")
    return path
