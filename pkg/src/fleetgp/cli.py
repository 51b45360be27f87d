"""Command-line interface: simulate, predict, verify, gen-demand, report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import POLICIES, RunConfig, load_config, override
from .errors import FleetGPError, ParseError, ValidationError

USAGE_EXIT = 2
RUNTIME_EXIT = 1


def _parse_grid(text):
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got '{text}'") from None


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="flat-key JSON config file")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--policy", choices=POLICIES, help="fusion policy")
    p.add_argument("--grid", type=_parse_grid, metavar="RxC", help="grid dimensions")
    p.add_argument("--vehicles", type=int, help="fleet size")
    p.add_argument("--users", type=int, help="user population")
    p.add_argument("--steps", type=int, help="simulation steps")
    p.add_argument("--horizon", type=int, help="walk length per step")
    p.add_argument("--support-size", type=int, help="support set size")


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    grid = getattr(args, "grid", None)
    return override(
        config,
        seed=getattr(args, "seed", None),
        policy=getattr(args, "policy", None),
        rows=grid[0] if grid else None,
        cols=grid[1] if grid else None,
        vehicles=getattr(args, "vehicles", None),
        users=getattr(args, "users", None),
        steps=getattr(args, "steps", None),
        horizon=getattr(args, "horizon", None),
        support_size=getattr(args, "support_size", None),
        timing=True if getattr(args, "timing", False) else None,
    )


def _cmd_simulate(args) -> int:
    from .fileio import MetricsWriter, load_field, write_manifest
    from .sim import HotspotConfig, Simulation, generate_field

    config = _resolve_config(args)
    if args.field:
        field = load_field(args.field, args.supply)
        config = override(config, rows=field.rows, cols=field.cols)
    else:
        hyp = config.hyperparameters(0.0)
        field = generate_field(
            config.seed, config.rows, config.cols, hyp, HotspotConfig.from_config(config)
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulation(field, config)
    writer = MetricsWriter(out_dir / "metrics.csv")
    sim.run(writer)
    write_manifest(out_dir / "manifest.json", config, sim.summary())
    for event in sim.events:
        print(event, file=sys.stderr)
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'manifest.json'}")
    if args.plots:
        from .report import render_metrics_figures

        figures = render_metrics_figures(
            [(config.policy, out_dir / "metrics.csv")], out_dir / "figures"
        )
        print(f"wrote {len(figures)} figures to {out_dir / 'figures'}")
    return 0


def _cmd_gen_demand(args) -> int:
    from .config import RunConfig
    from .fileio import write_field
    from .sim import HotspotConfig, generate_field

    rows, cols = args.grid if args.grid else (RunConfig.rows, RunConfig.cols)
    base = RunConfig()
    hyp = base.hyperparameters(0.0)
    hotspots = HotspotConfig(
        count=args.hotspots if args.hotspots is not None else base.hotspot_count,
        amplitude=args.amplitude if args.amplitude is not None else base.hotspot_amplitude,
        radius=args.radius if args.radius is not None else base.hotspot_radius,
        base_log_mean=args.base_mean if args.base_mean is not None else base.base_log_mean,
    )
    field = generate_field(args.seed, rows, cols, hyp, hotspots)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    demand_path = out_dir / "demand.csv"
    supply_path = out_dir / "supply.csv"
    write_field(field, demand_path, supply_path)
    print(f"wrote {demand_path} and {supply_path}")
    if args.plot:
        from .report import render_field_figure

        path = render_field_figure(demand_path, out_dir / "demand.png")
        print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_verification

    report = run_verification(instances=args.instances, seed=args.seed)
    print(report.table())
    return 0 if report.passed else RUNTIME_EXIT


def _cmd_predict(args) -> int:
    from .bench import run_predict_benchmark

    rows, cols = args.grid if args.grid else (100, 100)
    result = run_predict_benchmark(
        seed=args.seed,
        rows=rows,
        cols=cols,
        data_size=args.data_size,
        support_size=args.support_size,
        vehicles=args.vehicles,
        query_size=args.query_size,
        reps=args.reps,
        scaling=not args.no_scaling,
    )
    print(result.table())
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["algorithm,data_size,rmse,per_vehicle_ms"]
        for r in result.rows:
            lines.append(f"{r.algorithm},{r.data_size},{r.rmse!r},{r.per_vehicle_ms!r}")
        (out_dir / "benchmark.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {out_dir / 'benchmark.csv'}")
        if args.plots:
            from .report import render_bench_figure

            path = render_bench_figure(result, out_dir / "benchmark.png")
            print(f"wrote {path}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_metrics_figures

    paths = [Path(p) for p in args.metrics]
    labels = args.labels or [p.stem for p in paths]
    if len(labels) != len(paths):
        raise ValidationError("--labels must match the number of --metrics files")
    figures = render_metrics_figures(list(zip(labels, paths)), args.out)
    print(f"wrote {len(figures)} figures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetgp",
        description="Decentralized GP demand fusion, active sensing, and fleet simulation",
    )
    parser.add_argument("--version", action="version", version=f"fleetgp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the closed-loop fleet simulation")
    _add_config_flags(p)
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--field", type=Path, help="demand CSV (otherwise synthesized)")
    p.add_argument("--supply", type=Path, help="supply CSV accompanying --field")
    p.add_argument("--timing", action="store_true",
                   help="record wall times (makes the CSV non-reproducible)")
    p.add_argument("--plots", action="store_true", help="render metric figures")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-demand", help="synthesize a demand/supply field")
    p.add_argument("--out", default="field", help="output directory")
    p.add_argument("--grid", type=_parse_grid, metavar="RxC")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hotspots", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--base-mean", type=float)
    p.add_argument("--plot", action="store_true", help="render a demand heatmap")
    p.set_defaults(func=_cmd_gen_demand)

    p = sub.add_parser("verify", help="run the oracle-equivalence fuzz corpus")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=20240801)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("predict", help="one-shot prediction benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=_parse_grid, metavar="RxC")
    p.add_argument("--data-size", type=int, default=2000)
    p.add_argument("--support-size", type=int, default=64)
    p.add_argument("--vehicles", type=int, default=20)
    p.add_argument("--query-size", type=int, default=256)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--no-scaling", action="store_true", help="skip the doubled-|D| runs")
    p.add_argument("--out", help="write benchmark.csv (and figures) here")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("report", help="render figures from metrics CSVs")
    p.add_argument("--metrics", action="append", required=True, help="metrics CSV (repeatable)")
    p.add_argument("--labels", nargs="*", help="labels matching --metrics files")
    p.add_argument("--out", default="figures", help="output directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ParseError) as exc:
        print(f"fleetgp: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FleetGPError as exc:
        print(f"fleetgp: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
