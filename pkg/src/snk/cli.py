"""Command line entry point: ``snk {build,analyze,bench,verify,compare}``.

Exit codes: 0 success, 1 usage or invalid hyper-parameters, 2 a
verification or benchmark-invariant failure, 3 I/O or corrupt model file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from snk import plotting, serialize
from snk.analysis import count_flops, unit_pointwise_stack, connectivity_mask
from snk.arch import NetworkSpec, build_comparison, build_shufflenet
from snk.bench import (
    DEFAULT_ITERS,
    DEFAULT_RESOLUTIONS,
    DEFAULT_WARMUP,
    BenchReport,
    check_invariants,
    machine_descriptor,
    parse_resolution,
    run_benchmark,
    speedup,
)
from snk.errors import CorruptModelError, SnkError, ThreadingError
from snk.units import COMPARISON_KINDS, ShuffleUnitSpec
from snk.verify import FAULTS, SUITES, run_suites

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3
FORMATS = ("table", "json", "csv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _resolution(text):
    try:
        return parse_resolution(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _resolution_list(text):
    return [_resolution(t) for t in text.split(",") if t]


def _float_list(text):
    return [_positive_float(t) for t in text.split(",") if t]


def _model_flags(p, scale_default=True):
    p.add_argument("--groups", "-g", type=int, default=3, help="groups in pointwise layers (default 3)")
    if scale_default:
        p.add_argument("--scale", "-s", type=_positive_float, default=1.0, help="width multiplier (default 1.0)")
    p.add_argument("--shallow", action="store_true", help="halve the stride-1 units per stage")
    p.add_argument("--seed", type=int, default=42, help="weight initialisation seed (default 42)")


def _output_flags(p, formats=FORMATS):
    p.add_argument("--format", choices=formats, default="table")
    p.add_argument("--out", "-o", type=Path, help="write the report here instead of stdout")
    p.add_argument("--figure", type=Path, help="figure path (default: next to --out, .png)")
    p.add_argument("--no-figure", action="store_true", help="do not render a figure")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="snk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build a ShuffleNet and write an SNF1 model file")
    _model_flags(p)
    p.add_argument("--out", "-o", type=Path, help="model file to write")
    p.add_argument("--format", choices=("table", "json"), default="table")

    p = sub.add_parser("analyze", help="static cost report for a model")
    p.add_argument("model", nargs="?", type=Path, help="SNF1 file (omit to build from flags)")
    _model_flags(p)
    p.add_argument("--resolution", "-r", type=_resolution, default=(224, 224), help="HxW (default 224x224)")
    p.add_argument("--connectivity", action="store_true", help="report pointwise-pair channel connectivity")
    _output_flags(p)

    p = sub.add_parser("bench", help="single-thread latency benchmark")
    p.add_argument("models", nargs="*", type=Path, help="SNF1 files (omit to build --scales at --groups)")
    _model_flags(p, scale_default=False)
    p.add_argument("--scales", type=_float_list, default=[0.5, 1.0, 2.0], help="comma list (default 0.5,1,2)")
    p.add_argument("--resolutions", type=_resolution_list, default=list(DEFAULT_RESOLUTIONS),
                   help="comma list of HxW (default 224x224,480x640,720x1280)")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    p.add_argument("--check", action="store_true", help="exit 2 if a monotonicity invariant is violated")
    _output_flags(p, ("table", "json"))

    p = sub.add_parser("verify", help="run oracle/property suites")
    p.add_argument("--suite", action="append", choices=list(SUITES), help="restrict to these suites (repeatable)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--cases", type=int, help="random cases per randomized suite")
    p.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)

    p = sub.add_parser("compare", help="complexity-matched comparison structures")
    _model_flags(p)
    p.add_argument("--kinds", default=",".join(COMPARISON_KINDS))
    p.add_argument("--resolution", "-r", type=_resolution, default=(224, 224))
    p.add_argument("--tolerance", type=_positive_float, default=0.02)
    _output_flags(p, ("table", "json", "csv"))
    return parser


def _build(args, scale=None) -> NetworkSpec:
    try:
        return build_shufflenet(args.groups, args.scale if scale is None else scale, args.shallow, args.seed)
    except (ValueError, SnkError) as exc:
        raise UsageError(str(exc)) from exc


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        print(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text if text.endswith("\n") else text + "\n")
    print(f"wrote {out}", file=sys.stderr)


def _figure_path(args) -> Path | None:
    if args.no_figure:
        return None
    if args.figure is not None:
        return args.figure
    if args.out is not None:
        return args.out.with_suffix(".png")
    return None


def _model_name(net: NetworkSpec) -> str:
    if net.name:
        return net.name
    kinds = {type(u).__name__ for u in net.units()}
    tag = "shufflenet" if kinds == {"ShuffleUnitSpec"} else "network"
    return f"{tag}_{net.scale:g}x_g{net.groups}{'_shallow' if net.shallow else ''}"


def layer_summary(net: NetworkSpec) -> list[dict]:
    rows = []
    for name, layer in net.named_layers():
        cfg = layer.config
        row = {"layer": name, "kind": layer.kind}
        for attr in ("in_channels", "out_channels", "stride", "groups", "bottleneck_channels",
                     "first_pw_grouped", "in_features", "out_features"):
            if hasattr(cfg, attr):
                row[attr] = getattr(cfg, attr)
        rows.append(row)
    return rows


def cmd_build(args) -> int:
    net = _build(args)
    report = count_flops(net)
    summary = {
        "model": _model_name(net),
        "groups": net.groups,
        "scale": net.scale,
        "shallow": net.shallow,
        "seed": net.seed,
        "weighted_layers": net.weighted_layer_count(),
        "stage_widths": list(net.stage_widths()),
        "mult_adds_224": report.total_mult_adds,
        "layers": layer_summary(net),
    }
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        for row in summary["layers"]:
            io = f"{row.get('in_channels', row.get('in_features', ''))}->{row.get('out_channels', row.get('out_features', ''))}"
            extra = f"s={row['stride']} g={row.get('groups', 1)} m={row.get('bottleneck_channels', '-')}" if "stride" in row else ""
            print(f"{row['layer']:<16}{row['kind']:<14}{io:>12}  {extra}")
        print(f"{summary['model']}: {summary['weighted_layers']} weighted layers, stages {summary['stage_widths']}, "
              f"{report.total_mult_adds / 1e6:.1f} MFLOPs @224x224")
    if args.out is not None:
        try:
            serialize.save(net, args.out)
        except OSError as exc:
            print(f"snk: cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def _load_or_build(args) -> NetworkSpec:
    if args.model is None:
        return _build(args)
    net = serialize.load(args.model)
    return NetworkSpec(net.layers, net.groups, net.scale, net.shallow, net.seed, name=args.model.stem)


def connectivity_rows(net: NetworkSpec) -> list[dict]:
    rows = []
    for name, layer in net.named_layers():
        unit = layer.config
        if not isinstance(unit, ShuffleUnitSpec):
            continue
        with_shuffle = connectivity_mask(unit_pointwise_stack(unit, True))
        without = connectivity_mask(unit_pointwise_stack(unit, False))
        rows.append({
            "unit": name,
            "groups": unit.groups,
            "pw1_groups": unit.pw1_groups,
            "mask_shape": list(with_shuffle.shape),
            "with_shuffle": with_shuffle.describe(),
            "without_shuffle": without.describe(),
        })
    return rows


def cmd_analyze(args) -> int:
    net = _load_or_build(args)
    report = count_flops(net, args.resolution)
    report.model = _model_name(net)
    conn = connectivity_rows(net) if args.connectivity else None
    if args.format == "json":
        payload = report.to_dict()
        if conn is not None:
            payload["connectivity"] = conn
        text = json.dumps(payload, indent=2)
    elif args.format == "csv":
        text = report.to_csv()
    else:
        text = report.to_table()
        if conn is not None:
            text += "\n\npointwise-pair connectivity (with / without shuffle)\n"
            text += "\n".join(f"{r['unit']:<16} {r['with_shuffle']:<22} {r['without_shuffle']}" for r in conn)
    _emit(text, args.out)
    if conn is not None and args.format == "csv":
        # keep the CSV rectangular; connectivity goes to a sibling file
        side = json.dumps(conn, indent=2)
        if args.out is None:
            print(side)
        else:
            _emit(side, args.out.with_suffix(".connectivity.json"))
    fig = _figure_path(args)
    if fig is not None:
        plotting.plot_cost_report(report, fig)
        print(f"wrote {fig}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 10 or args.warmup < 3:
        raise UsageError("bench needs --iters >= 10 and --warmup >= 3")
    if args.models:
        nets = []
        for path in args.models:
            net = serialize.load(path)
            nets.append(NetworkSpec(net.layers, net.groups, net.scale, net.shallow, net.seed, name=path.stem))
    else:
        nets = [_build(args, s) for s in args.scales]
    report = BenchReport(machine_descriptor())
    for net in nets:
        logging.getLogger(__name__).info("benchmarking %s", _model_name(net))
        report.extend(run_benchmark(net, args.resolutions, args.warmup, args.iters, seed=args.seed,
                                    model=_model_name(net)))
    order = [_model_name(n) for n in sorted(nets, key=lambda n: count_flops(n).total_mult_adds)]
    problems = check_invariants(report, order)
    speed = None
    if len(nets) >= 2:
        res = args.resolutions[0]
        speed = speedup(report, order[0], order[-1], res)
        if not 1.0 <= speed.measured <= speed.published_theoretical:
            problems.append(f"measured speedup {speed.measured:.2f}x outside [1, {speed.published_theoretical:.2f}]")
    if args.format == "json":
        payload = report.to_dict()
        if speed is not None:
            payload["speedup"] = {
                "small": order[0], "large": order[-1], "resolution": f"{speed.resolution[0]}x{speed.resolution[1]}",
                "measured": round(speed.measured, 4), "theoretical_counted": round(speed.theoretical, 4),
                "theoretical_published_524_over_38": round(speed.published_theoretical, 4),
            }
        payload["violations"] = problems
        text = json.dumps(payload, indent=2)
    else:
        text = report.to_table()
        if speed is not None:
            text += (f"\n{order[-1]} vs {order[0]} at {speed.resolution[0]}x{speed.resolution[1]}: measured "
                     f"{speed.measured:.2f}x, counted FLOPs ratio {speed.theoretical:.2f}x, "
                     f"published theoretical 524/38 = {speed.published_theoretical:.2f}x")
        for p in problems:
            text += f"\nVIOLATION: {p}"
    _emit(text, args.out)
    fig = _figure_path(args)
    if fig is not None:
        plotting.plot_bench(report, fig)
        print(f"wrote {fig}", file=sys.stderr)
    if args.check and problems:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suites(args.suite, seed=args.seed, fault=args.inject_fault, cases=args.cases)
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.passed} passed, {r.failed} failed")
        if r.first_failure:
            print(f"  first failure (seed {args.seed}): {r.first_failure}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def cmd_compare(args) -> int:
    ref = _build(args)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in COMPARISON_KINDS]
    if bad:
        raise UsageError(f"unknown kinds {bad}")
    target = count_flops(ref, args.resolution).total_mult_adds
    rows = []
    for kind in kinds:
        net = build_comparison(kind, ref.structure(), args.tolerance, args.resolution)
        macs = count_flops(net, args.resolution).total_mult_adds
        rows.append({"kind": kind, "stage_widths": list(net.stage_widths()), "mflops": macs / 1e6,
                     "delta": (macs - target) / target})
    rows.append({"kind": "shufflenet", "stage_widths": list(ref.stage_widths()), "mflops": target / 1e6, "delta": 0.0})
    if args.format == "json":
        text = json.dumps({"reference": _model_name(ref), "rows": rows}, indent=2)
    elif args.format == "csv":
        text = "kind,stage2,stage3,stage4,mflops,delta\n" + "\n".join(
            f"{r['kind']},{','.join(map(str, r['stage_widths']))},{r['mflops']:.4f},{r['delta']:.4f}" for r in rows)
    else:
        text = f"reference {_model_name(ref)}: {target / 1e6:.1f} MFLOPs\n"
        text += "\n".join(f"{r['kind']:<14}{str(tuple(r['stage_widths'])):>18}{r['mflops']:>10.1f} MFLOPs{r['delta']:>+8.2%}"
                          for r in rows)
    _emit(text, args.out)
    fig = _figure_path(args)
    if fig is not None:
        plotting.plot_comparison(rows, fig)
        print(f"wrote {fig}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"snk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ThreadingError as exc:
        print(f"snk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptModelError as exc:
        print(f"snk: corrupt model file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"snk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
