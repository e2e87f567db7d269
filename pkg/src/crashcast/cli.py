"""Command-line entry point.

Verbs: gen-grid, simulate, featurize, train, evaluate, localize, forecast,
export-plots. Exit codes: 2 config errors, 3 data errors, 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError, DataError, NumericalError
from .network import grid_network, save_network

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--out", type=Path, help="output directory override")
    p.add_argument("--seed", type=int, help="seed override (u64)")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crashcast",
        description="Scripted traffic-collision scenarios with interval forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grid", help="generate a grid-corridor network file")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--block-m", type=float, default=150.0)
    p.add_argument("--vmax", type=float, default=13.9, help="edge speed limit (m/s)")
    p.add_argument("--lanes", type=int, default=1)
    _common_flags(p)

    p = sub.add_parser("simulate", help="run collision, control, and free-flow variants")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes for the scenario variants")
    _common_flags(p)

    for name, extra in (("featurize", ()), ("train", ()), ("evaluate", ()),
                        ("export-plots", ()),
                        ("forecast", ("origin",)), ("localize", ("origin",))):
        p = sub.add_parser(name)
        p.add_argument("--run", type=Path, required=True, help="run directory")
        if "origin" in extra:
            p.add_argument("--origin", type=int, default=None,
                           help="forecast origin bin (default: latest)")
        _common_flags(p)
    return parser


def _say(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out is not None:
        cfg.out_dir = str(args.out)
    return cfg


def _dispatch(args) -> int:
    from . import pipeline
    from .plots import export_plots

    if args.command == "gen-grid":
        graph = grid_network(rows=args.rows, cols=args.cols, block_m=args.block_m,
                             vmax_mps=args.vmax, lanes=args.lanes)
        out = args.out or Path("network.json")
        if out.is_dir():
            out = out / "network.json"
        save_network(graph, out)
        _say(args, f"wrote {out} ({len(graph.nodes)} nodes, {len(graph.edges)} edges)")
        return 0

    if args.command == "simulate":
        cfg = _load_config(args)
        run_dir = Path(cfg.out_dir)
        results = pipeline.simulate(cfg, run_dir, workers=args.workers,
                                    base_dir=args.config.parent)
        n_coll = len(results["collision"].collisions)
        _say(args, f"simulated 3 variants into {run_dir} "
                   f"({results['collision'].summary.departed} vehicles, "
                   f"{n_coll} collisions)")
        return 0

    if args.command == "featurize":
        tensors = pipeline.featurize(args.run)
        shape = next(iter(tensors.values())).values.shape
        _say(args, f"wrote feature tensors {shape} for {sorted(tensors)} "
                   f"under {args.run}/features")
        return 0

    if args.command == "train":
        ckpt = pipeline.train(args.run)
        curve = ckpt.extras.get("loss_curve", [])
        tail = f"loss {curve[0]:.4f} -> {curve[-1]:.4f}" if curve else "no curve"
        _say(args, f"checkpoint written under {args.run}/model ({tail})")
        return 0

    if args.command == "evaluate":
        report = pipeline.evaluate(args.run)
        _say(args, f"metrics written under {args.run}/eval")
        if not getattr(args, "quiet", False):
            for target, horizons in report.forecast.items():
                for h, cell in horizons.items():
                    print(f"  {target} h={h}: picp={cell['picp']:.3f} "
                          f"width={cell['width']:.3f} rmse={cell['rmse']:.3f}")
        return 0

    if args.command == "forecast":
        path = pipeline.forecast_to_csv(args.run, args.origin, args.out)
        _say(args, f"wrote {path}")
        return 0

    if args.command == "localize":
        path = pipeline.localize_to_csv(args.run, args.origin, args.out)
        _say(args, f"wrote {path}")
        return 0

    if args.command == "export-plots":
        written = export_plots(args.run)
        _say(args, f"wrote {len(written)} plot files under {args.run}/plots")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
