"""Experiment configuration: one JSON file drives the whole pipeline.

The seed is mandatory (there is no entropy default) and all randomness flows
from it through named sub-streams. Environment variable CRASHCAST_OUT is the
only ambient override, and it only moves the output directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .emissions import EmissionCoefficients, coefficients_from_dict
from .errors import ConfigError
from .network import RoadGraph, grid_network, load_network
from .neural.model import ModelHyper
from .simulator import EventRequest, ScriptedEvent, VehicleSpec
from .util import config_hash, read_json

DEFAULT_SPLITS = {"train": 0.6, "calib": 0.2, "test": 0.2}
DEFAULT_TRUTH_HALFWIDTH = {"x": 20.0, "y": 20.0, "t": 60.0}


@dataclass
class SimParams:
    dt: float = 0.5
    horizon_s: float = 3600.0
    depart_window_s: float = 600.0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("sim.dt must be positive")
        if self.horizon_s <= 0 or self.depart_window_s < 0:
            raise ConfigError("sim horizon and depart window must be positive")
        if self.depart_window_s > self.horizon_s:
            raise ConfigError("depart window cannot exceed the horizon")


@dataclass
class FeatureParams:
    bin_s: float = 30.0
    spike_percentile: float = 0.95
    ce_coefficients: dict[str, EmissionCoefficients] = field(
        default_factory=lambda: coefficients_from_dict({}))

    def validate(self, dt: float) -> None:
        if self.bin_s <= 0 or abs(self.bin_s / dt - round(self.bin_s / dt)) > 1e-9:
            raise ConfigError(f"features.bin_s={self.bin_s} must be a multiple of dt={dt}")
        if not 0.0 < self.spike_percentile <= 1.0:
            raise ConfigError("features.spike_percentile must be in (0, 1]")


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    network: dict
    scenario: dict
    sim: SimParams
    features: FeatureParams
    model: ModelHyper
    splits: dict[str, float]
    truth_halfwidth: dict[str, float]
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        base = base_dir or Path.cwd()
        network = doc.get("network")
        if not network or not ({"grid", "path"} & set(network)):
            raise ConfigError("config.network needs either 'grid' params or a 'path'")
        scenario = doc.get("scenario")
        if not scenario:
            raise ConfigError("config.scenario is required")
        if "path" in scenario:
            scenario_path = (base / scenario["path"])
            if not scenario_path.exists():
                raise ConfigError(f"scenario file not found: {scenario_path}")
            scenario = read_json(scenario_path)
        if "path" in network and not (base / network["path"]).exists():
            raise ConfigError(f"network file not found: {network['path']}")

        sim_doc = dict(scenario.get("sim", {}))
        sim_seed = sim_doc.pop("seed", None)       # scenario files may carry the seed
        seed_value = doc.get("seed", sim_seed)
        if seed_value is None:
            raise ConfigError("config requires an explicit seed (no entropy default)")
        try:
            seed = int(seed_value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seed must be an integer: {exc}") from exc
        sim = SimParams(**sim_doc)
        sim.validate()
        feat_doc = dict(doc.get("features", {}))
        coeff_doc = feat_doc.pop("ce_coefficients", {})
        features = FeatureParams(ce_coefficients=coefficients_from_dict(coeff_doc),
                                 **feat_doc)
        features.validate(sim.dt)
        model = ModelHyper.from_dict(doc.get("model", {}))
        splits = {**DEFAULT_SPLITS, **doc.get("splits", {})}
        total = sum(splits.get(k, 0.0) for k in ("train", "calib", "test"))
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {total}")
        halfwidth = {**DEFAULT_TRUTH_HALFWIDTH,
                     **doc.get("eval", {}).get("truth_halfwidth", {})}
        out_dir = os.environ.get("CRASHCAST_OUT") or doc.get("out_dir") or "run"
        return cls(seed=seed, out_dir=out_dir, network=network, scenario=scenario,
                   sim=sim, features=features, model=model, splits=splits,
                   truth_halfwidth=halfwidth, raw=doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_dict(read_json(path), base_dir=path.parent)

    def hash(self) -> str:
        doc = dict(self.raw)
        doc["seed"] = self.seed          # include any CLI seed override
        doc.pop("out_dir", None)         # output location is not provenance
        return config_hash(doc)

    def split_fractions(self) -> tuple[float, float, float]:
        return (self.splits["train"], self.splits["calib"], self.splits["test"])

    # -- resolution -------------------------------------------------------------
    def build_network(self, base_dir: Path | None = None) -> RoadGraph:
        if "path" in self.network:
            return load_network((base_dir or Path.cwd()) / self.network["path"])
        grid = dict(self.network["grid"])
        return grid_network(rows=int(grid.pop("rows")), cols=int(grid.pop("cols")),
                            **grid)

    def vehicle_counts(self) -> dict[str, int] | None:
        counts = self.scenario.get("vehicles")
        return None if counts is None else {k: int(v) for k, v in counts.items()}

    def explicit_specs(self) -> list[VehicleSpec] | None:
        specs = self.scenario.get("specs")
        if specs is None:
            return None
        out = []
        for rec in specs:
            rec = dict(rec)
            out.append(VehicleSpec.from_class(
                vid=str(rec.pop("id")), vclass=str(rec.pop("class")),
                route=[str(e) for e in rec.pop("route")],
                depart_s=float(rec.pop("depart_s")), **rec))
        return out

    def event_entries(self) -> tuple[list[ScriptedEvent], list[EventRequest]]:
        """Split configured events into explicit scripts and plannable requests."""
        explicit: list[ScriptedEvent] = []
        requests: list[EventRequest] = []
        for i, rec in enumerate(self.scenario.get("events", [])):
            rec = dict(rec)
            kind = rec.get("kind")
            if kind not in ("rear", "inter"):
                raise ConfigError(f"event {i}: kind must be 'rear' or 'inter'")
            if "leader" in rec and "follower" in rec:
                explicit.append(ScriptedEvent(
                    event_id=rec.get("event_id", f"ev{i:03d}"), kind=kind,
                    leader=str(rec["leader"]), follower=str(rec["follower"]),
                    trigger_s=float(rec["trigger_s"]),
                    dwell_s=float(rec.get("dwell_s", 120.0)),
                    clearance_s=float(rec.get("clearance_s", 10.0)),
                    stop_edge=rec.get("stop_edge"), node=rec.get("node")))
            else:
                requests.append(EventRequest(
                    kind=kind, trigger_s=float(rec["trigger_s"]),
                    dwell_s=float(rec.get("dwell_s", 120.0)),
                    clearance_s=float(rec.get("clearance_s", 10.0)),
                    leader_class=str(rec.get("leader_class", "PV")),
                    follower_class=str(rec.get("follower_class", "PV")),
                    stop_edge=rec.get("stop_edge"), node=rec.get("node")))
        return explicit, requests
