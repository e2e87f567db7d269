"""Plot-data exports: every figure is written as a CSV series plus a PNG.

Covers edge-time heat maps for congestion and emissions (collision vignette
against the event-free control), per-edge emission totals, containment
histograms of event localization by vehicle pair, and training loss curves.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError
from .features import read_feature_csv
from .neural.model import load_checkpoint
from .pipeline import (LOC_DIMS, _load_trained, load_run, predict_events,
                       read_collisions_csv)
from .util import fmt_float

HEATMAP_CHANNELS = {"tti": 0, "ce": 1}


def _write_series_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def export_heatmaps(run_dir: Path, plots_dir: Path) -> list[Path]:
    written = []
    for variant in ("collision", "control"):
        tensor, _ = read_feature_csv(run_dir / "features" / f"{variant}.csv")
        for name, ch in HEATMAP_CHANNELS.items():
            stem = plots_dir / f"{name}_heatmap_{variant}"
            _write_series_csv(stem.with_suffix(".csv"), ["edge_id", "t_bin", "value"],
                              ((eid, b, float(tensor.values[i, b, ch]))
                               for i, eid in enumerate(tensor.edge_ids)
                               for b in range(tensor.n_bins)))
            fig, ax = plt.subplots(figsize=(8, 4))
            im = ax.imshow(tensor.values[:, :, ch], aspect="auto",
                           origin="lower", cmap="inferno")
            ax.set_xlabel("time bin")
            ax.set_ylabel("edge index")
            ax.set_title(f"{name.upper()} per edge-bin ({variant})")
            fig.colorbar(im, ax=ax)
            fig.savefig(stem.with_suffix(".png"), dpi=110)
            plt.close(fig)
            written += [stem.with_suffix(".csv"), stem.with_suffix(".png")]
    return written


def export_edge_totals(run_dir: Path, plots_dir: Path) -> list[Path]:
    """Total emissions per edge, collision run against the event-free control."""
    col, _ = read_feature_csv(run_dir / "features" / "collision.csv")
    ctl, _ = read_feature_csv(run_dir / "features" / "control.csv")
    totals_c = col.values[:, :, 1].sum(axis=1)
    totals_n = ctl.values[:, :, 1].sum(axis=1)
    stem = plots_dir / "ce_edge_totals"
    _write_series_csv(stem.with_suffix(".csv"),
                      ["edge_id", "collision_ce", "control_ce"],
                      ((eid, float(totals_c[i]), float(totals_n[i]))
                       for i, eid in enumerate(col.edge_ids)))
    fig, ax = plt.subplots(figsize=(9, 4))
    x = np.arange(len(col.edge_ids))
    ax.bar(x - 0.2, totals_c, width=0.4, label="collision")
    ax.bar(x + 0.2, totals_n, width=0.4, label="control")
    ax.set_xlabel("edge index")
    ax.set_ylabel("total CE")
    ax.set_title("Per-edge emission totals")
    ax.legend()
    fig.savefig(stem.with_suffix(".png"), dpi=110)
    plt.close(fig)
    return [stem.with_suffix(".csv"), stem.with_suffix(".png")]


def export_containment(run_dir: Path, plots_dir: Path) -> list[Path]:
    """Containment counts of true (x, y, t) in predicted ranges, one file per
    event kind present, split by vehicle pair."""
    collisions = read_collisions_csv(run_dir / "collisions.csv")
    if not collisions:
        return []
    cfg, graph, manifest, ckpt, tensor = _load_trained(run_dir)
    if ckpt.localizer is None:
        return []
    scenario = (run_dir / "scenario.json")
    from .util import read_json
    spec_classes = {s["id"]: s["class"] for s in read_json(scenario)["specs"]}
    rows = predict_events(ckpt, tensor, collisions)
    written = []
    for kind in sorted({rec.kind for rec, _ in rows}):
        counts: dict[tuple[str, str], dict[str, int]] = {}
        for rec, iv in rows:
            if rec.kind != kind:
                continue
            pair = f"{spec_classes.get(rec.follower, '?')}-{spec_classes.get(rec.leader, '?')}"
            for d, dim in enumerate(LOC_DIMS):
                truth = (rec.x, rec.y, rec.t)[d]
                lo, hi = getattr(iv, dim)
                cell = counts.setdefault((pair, dim), {"contained": 0, "missed": 0})
                cell["contained" if lo <= truth <= hi else "missed"] += 1
        stem = plots_dir / f"containment_hist_{kind}"
        _write_series_csv(stem.with_suffix(".csv"),
                          ["pair", "dimension", "contained", "missed"],
                          ((pair, dim, cell["contained"], cell["missed"])
                           for (pair, dim), cell in sorted(counts.items())))
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), sharey=True)
        for ax, dim in zip(axes, LOC_DIMS):
            pairs = sorted({p for (p, d) in counts if d == dim})
            contained = [counts[(p, dim)]["contained"] for p in pairs]
            missed = [counts[(p, dim)]["missed"] for p in pairs]
            x = np.arange(len(pairs))
            ax.bar(x, contained, label="contained")
            ax.bar(x, missed, bottom=contained, label="missed")
            ax.set_xticks(x, pairs, rotation=30, fontsize=7)
            ax.set_title(dim)
        axes[0].set_ylabel("events")
        axes[-1].legend(fontsize=7)
        fig.suptitle(f"Containment of true (x, y, t) in predicted ranges: {kind}")
        fig.tight_layout()
        fig.savefig(stem.with_suffix(".png"), dpi=110)
        plt.close(fig)
        written += [stem.with_suffix(".csv"), stem.with_suffix(".png")]
    return written


def export_loss_curves(run_dir: Path, plots_dir: Path) -> list[Path]:
    ckpt_path = run_dir / "model" / "checkpoint.json"
    if not ckpt_path.exists():
        return []
    ckpt = load_checkpoint(ckpt_path)
    curves = {"forecaster": ckpt.extras.get("loss_curve", []),
              "localizer": ckpt.extras.get("loc_curve", [])}
    stem = plots_dir / "loss_curves"
    _write_series_csv(stem.with_suffix(".csv"), ["model", "epoch", "loss"],
                      ((name, i, float(v)) for name, curve in sorted(curves.items())
                       for i, v in enumerate(curve)))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, curve in sorted(curves.items()):
        if curve:
            ax.plot(range(len(curve)), curve, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(stem.with_suffix(".png"), dpi=110)
    plt.close(fig)
    return [stem.with_suffix(".csv"), stem.with_suffix(".png")]


def export_plots(run_dir: Path) -> list[Path]:
    """All plot exports for a run; localization plots need a trained checkpoint."""
    run_dir = Path(run_dir)
    load_run(run_dir)            # validates the run directory
    plots_dir = run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    if not (run_dir / "features" / "collision.csv").exists():
        raise DataError("run has no feature files; run featurize first")
    written = export_heatmaps(run_dir, plots_dir)
    written += export_edge_totals(run_dir, plots_dir)
    if (run_dir / "model" / "checkpoint.json").exists():
        written += export_containment(run_dir, plots_dir)
        written += export_loss_curves(run_dir, plots_dir)
    return written
