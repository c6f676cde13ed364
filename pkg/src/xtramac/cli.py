"""``xtramac`` command-line front end.

Exit codes: 0 success, 1 mismatch or failed check, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, gemv, vectors
from .formats import DATATYPES, ConfigurationError, parse_datatype
from .packing import DEFAULT_MAX_LANES, plan
from .pipeline import MacConfig
from .verify import sweep

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2
CONFIG_ENV = "XTRAMAC_CONFIG"
CONFIG_FILE = "xtramac.json"


class UsageError(Exception):
    pass


def discover_config(flag: str | None) -> MacConfig:
    """``--config`` flag, then ``$XTRAMAC_CONFIG``, then ``./xtramac.json``, else every datatype."""
    path = flag or os.environ.get(CONFIG_ENV)
    if path is None and Path(CONFIG_FILE).is_file():
        path = CONFIG_FILE
    if path is None:
        return MacConfig(tuple(DATATYPES))
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from None
    if "datatypes" not in data:
        raise ConfigurationError(f"config file {path} has no 'datatypes' list")
    return MacConfig.from_dict(data)


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "json", False):
        payload.setdefault("schema_version", 1)
        print(json.dumps(payload, indent=2, default=_jsonable))
    else:
        print(text)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x).__name__}")


# -- mac -----------------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.count is None and not args.exhaustive:
        raise UsageError("give --count N or --exhaustive")
    recs = vectors.generate(args.dtype, count=args.count, exhaustive=args.exhaustive,
                            c_count=args.c_count, seed=args.seed, exact=args.exact)
    comment = f"dtype={parse_datatype(args.dtype).name} seed={args.seed}"
    if args.output in (None, "-"):
        vectors.write_vectors(recs, sys.stdout, comment)
    else:
        n = vectors.write_vectors(recs, args.output, comment)
        print(f"wrote {n} vectors to {args.output}", file=sys.stderr)
    return EXIT_OK


def _report_check(args, result: vectors.CheckResult, extra: dict | None = None) -> int:
    payload = result.to_dict(limit=args.max_diffs)
    payload.update(extra or {})
    lines = [f"{result.total} vectors, {result.total - result.failed} passed, {result.failed} failed"]
    for d in payload["diffs"]:
        lines.append(f"  line {d['line']}: {d['datatype']} a={d['a']} b={d['b']} c={d['c']} "
                     f"expected {d['expected']} got {d['actual']}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK if result.ok else EXIT_MISMATCH


def cmd_check(args) -> int:
    recs = vectors.read_vectors(args.vectors)
    cfg = discover_config(args.config) if args.mode == "pipeline" and _has_config(args) else None
    return _report_check(args, vectors.check(recs, args.mode, cfg))


def _has_config(args) -> bool:
    return bool(args.config or os.environ.get(CONFIG_ENV) or Path(CONFIG_FILE).is_file())


def cmd_run(args) -> int:
    recs = vectors.read_vectors(args.vectors)
    cfg = discover_config(args.config) if _has_config(args) else None
    sink = None
    if args.trace:
        sink = open(args.trace, "w")
        sink.write("cycle,occupancy,dtype,flags,emitted\n")
    try:
        result, info = vectors.run(recs, cfg, trace=(lambda line: sink.write(line + "\n")) if sink else None)
    finally:
        if sink:
            sink.close()
    return _report_check(args, result, info)


def cmd_sweep(args) -> int:
    cfg = discover_config(args.config)
    names = args.dtype or [d.name for d in cfg.datatypes]
    results = [sweep(n, cfg if parse_datatype(n) in cfg.datatypes else None, n_c=args.c_count,
                     n_random=args.random, seed=args.seed) for n in names]
    lines = [f"{r.datatype:16s} {r.mode:10s} {r.cases:>12,d} cases  {r.mismatches} mismatches  {r.seconds:.1f}s"
             for r in results]
    _emit(args, {"results": [r.to_dict() for r in results]}, "\n".join(lines))
    return EXIT_OK if all(r.ok for r in results) else EXIT_MISMATCH


# -- pack / util -------------------------------------------------------------------

def cmd_plan(args) -> int:
    p = plan(parse_datatype(args.dtype), args.guard, args.max_lanes)
    _emit(args, p.to_dict(), p.diagram())
    return EXIT_OK if p.certified else EXIT_MISMATCH


def cmd_util(args) -> int:
    rep = analysis.report(args.arch, args.dtype, companions=args.with_dtype or ())
    payload = rep.to_dict()
    text = (f"{rep.arch:9s} {rep.datatype:14s} w_a={rep.width_a} w_b={rep.width_b} lanes={rep.lanes} "
            f"dsps={rep.dsp_count:g}  U_DSP={rep.percent:.1f}%")
    if analysis.canonical_arch(args.arch) == analysis.SPATIAL:
        reps = analysis.spatial_reports([args.dtype, *(args.with_dtype or ())])
        avg = 100 * sum(r.utilization for r in reps) / len(reps)
        payload["set"] = [r.to_dict() for r in reps]
        payload["average_percent"] = round(avg, 2)
        text += "\n" + "\n".join(f"  {r.datatype:14s} {r.percent:.1f}%" for r in reps) + f"\n  average {avg:.1f}%"
    _emit(args, payload, text)
    return EXIT_OK


def cmd_density(args) -> int:
    keys = [args.profile] if args.profile else list(analysis.DENSITY_TABLE)
    rows = []
    for key in keys:
        if key not in analysis.DENSITY_TABLE:
            raise ConfigurationError(f"unknown profile {key!r}; known: {', '.join(analysis.DENSITY_TABLE)}")
        rows.append(analysis.density_row(key))
    lines = [f"{'config':14s} {'LUT':>5s} {'FF':>5s} {'DSP':>5s}"]
    for r in rows:
        d = r["rounded"]
        lines.append(f"{r['config']:14s} {d['lut']:4.1f}x {d['ff']:4.1f}x {d['dsp']:4.1f}x")
    _emit(args, {"rows": rows}, "\n".join(lines))
    return EXIT_OK


def cmd_cost(args) -> int:
    widths = args.width
    costs = {w: analysis.adder_cost(args.kind, w, args.alpha, args.beta) for w in widths}
    lines = [f"{args.kind} w={w}: {c:g}" for w, c in costs.items()]
    _emit(args, {"kind": args.kind, "alpha": args.alpha, "beta": args.beta,
                 "costs": [{"width": w, "cost": c} for w, c in costs.items()]}, "\n".join(lines))
    return EXIT_OK


# -- gemv / llm ----------------------------------------------------------------------

def _gemv_config(args) -> gemv.GemvConfig:
    overrides = {}
    if getattr(args, "dtype", None):
        overrides["datatype"] = args.dtype[0] if isinstance(args.dtype, list) else args.dtype
        overrides["lanes_per_mac"] = None
    if getattr(args, "efficiency", None) is not None:
        overrides["bw_efficiency"] = args.efficiency
    if getattr(args, "bandwidth", None) is not None:
        overrides["bw_bytes_per_s"] = args.bandwidth * 1e9
    return gemv.load_gemv_config(args.config, **overrides)


def _perf_text(r: gemv.PerfReport) -> str:
    extra = "" if r.energy_j is None else f"  energy {r.energy_j:.5f} J"
    return (f"{r.label}: {r.time_ms:.4f} ms ({r.bound}-bound)  cycles {r.cycles}  "
            f"memory {r.memory_time_s * 1e3:.4f} ms  compute {r.compute_time_s * 1e3:.4f} ms{extra}")


def cmd_gemv_roofline(args) -> int:
    cfg = _gemv_config(args)
    r = gemv.roofline_gemv(cfg, args.m, args.k, args.batch)
    _emit(args, r.to_dict(), _perf_text(r))
    return EXIT_OK


def _random_operands(fmt, shape, rng):
    bits = rng.integers(0, 1 << fmt.width, size=shape)
    if not fmt.is_int:
        # keep values finite and moderate: exponent field within a few binades of the bias
        exp = rng.integers(fmt.bias - 3, fmt.bias + 3, size=shape) & fmt.exp_field_max
        bits = (bits & ~(fmt.exp_field_max << fmt.mant_bits)) | (exp << fmt.mant_bits)
    return bits


def cmd_gemv_sim(args) -> int:
    cfg = _gemv_config(args)
    tiles = args.dtype or [cfg.datatype]
    dts = [parse_datatype(d) for d in tiles]
    rng = np.random.default_rng(args.seed)
    w = np.zeros((args.m, args.k), dtype=np.int64)
    rows_per_tile = args.tile_rows or max(1, -(-args.m // cfg.active_channels))
    for r in range(args.m):
        w[r] = _random_operands(dts[(r // rows_per_tile) % len(dts)].type_a, args.k, rng)
    x = _random_operands(dts[0].type_b, args.k, rng)
    res = gemv.simulate_gemv(cfg, args.m, args.k, w, x, tile_dtypes=tiles, tile_rows=rows_per_tile, mode=args.mode)
    ref = gemv.oracle_gemv(w, x, [parse_datatype(d) for d in res.row_datatypes])
    mism = int(np.sum(res.output != ref))
    payload = res.report.to_dict()
    payload.update({"mismatches": mism, "rows": args.m, "mode": args.mode,
                    "output": [format(int(v), "x") for v in res.output[: args.show]]})
    _emit(args, payload, _perf_text(res.report) + f"\noracle mismatches: {mism}/{args.m}")
    return EXIT_OK if mism == 0 else EXIT_MISMATCH


def cmd_llm_decode(args) -> int:
    model = gemv.load_model(args.model)
    platform = gemv.load_platform(args.platform)
    rep = gemv.decode_latency(model, args.batch, args.context, platform, args.arch)
    payload = rep.to_dict(per_layer=args.per_layer)
    text = (f"{model.name} on {platform.name}, batch {args.batch}, context {args.context}, {args.arch}: "
            f"{rep.time_ms:.3f} ms ({rep.bound}-bound, {rep.mac_units:.0f} MAC lanes)")
    if args.compare:
        s = gemv.decode_speedup(model, args.batch, args.context, platform)
        payload["speedup_vs_baseline"] = s
        text += f"\nspeedup over baseline: {s:.3f}x"
    _emit(args, payload, text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _datatype_arg(s: str) -> str:
    try:
        return parse_datatype(s).name
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xtramac", description="Mixed-precision MAC simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--config", help=f"MAC configuration JSON (else ${CONFIG_ENV}, else ./{CONFIG_FILE})")
    sub = ap.add_subparsers(dest="group", required=True)

    mac = sub.add_parser("mac", help="vectors and conformance").add_subparsers(dest="cmd", required=True)
    p = mac.add_parser("gen", parents=[common], help="write oracle-labelled vectors")
    p.add_argument("--dtype", required=True, type=_datatype_arg)
    p.add_argument("--count", type=int)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--c-count", type=int, default=1, help="accumulator values per operand pair (exhaustive)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact", action="store_true", help="label with the exact rational oracle")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)
    for name, func, helptext in (("check", cmd_check, "compare vectors with the pipeline or oracle"),
                                 ("run", cmd_run, "stream vectors through a cycle-stepped pipeline")):
        p = mac.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--vectors", required=True)
        p.add_argument("--max-diffs", type=int, default=20)
        if name == "check":
            p.add_argument("--mode", choices=("pipeline", "oracle"), default="pipeline")
        else:
            p.add_argument("--trace", help="write a per-cycle trace CSV")
        p.set_defaults(func=func)
    p = mac.add_parser("sweep", parents=[common], help="pipeline-versus-oracle sweep")
    p.add_argument("--dtype", action="append", type=_datatype_arg)
    p.add_argument("--c-count", type=int, default=10**4)
    p.add_argument("--random", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    pack = sub.add_parser("pack", help="operand packing").add_subparsers(dest="cmd", required=True)
    p = pack.add_parser("plan", parents=[common], help="show the certified packing plan")
    p.add_argument("--dtype", required=True, type=_datatype_arg)
    p.add_argument("--guard", type=int, default=1)
    p.add_argument("--max-lanes", type=int, default=DEFAULT_MAX_LANES)
    p.set_defaults(func=cmd_plan)

    util = sub.add_parser("util", help="analytic models").add_subparsers(dest="cmd", required=True)
    p = util.add_parser("report", parents=[common], help="DSP bit-utilization")
    p.add_argument("--arch", required=True)
    p.add_argument("--dtype", required=True, type=_datatype_arg)
    p.add_argument("--with", dest="with_dtype", action="append", type=_datatype_arg,
                   help="other datatypes replicated alongside (spatial)")
    p.set_defaults(func=cmd_util)
    p = util.add_parser("density", parents=[common], help="compute-density table")
    p.add_argument("--profile")
    p.set_defaults(func=cmd_density)
    p = util.add_parser("cost", parents=[common], help="adder cost model")
    p.add_argument("--kind", required=True, choices=(analysis.INT_ADDER, analysis.FP_SHIFTER))
    p.add_argument("--width", required=True, type=int, nargs="+")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_cost)

    g = sub.add_parser("gemv", help="GEMV engine").add_subparsers(dest="cmd", required=True)
    for name, func in (("sim", cmd_gemv_sim), ("roofline", cmd_gemv_roofline)):
        p = g.add_parser(name, help=f"GEMV {name}")
        p.add_argument("--json", action="store_true")
        p.add_argument("--config", default="u55c", help="platform name or GEMV config JSON")
        p.add_argument("--m", type=int, required=True, help="weight rows (output length)")
        p.add_argument("--k", type=int, required=True, help="reduction length")
        p.add_argument("--efficiency", type=float)
        p.add_argument("--bandwidth", type=float, help="GB/s")
        if name == "sim":
            p.add_argument("--dtype", action="append", type=_datatype_arg, help="per-tile datatypes, in order")
            p.add_argument("--tile-rows", type=int)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--mode", choices=("batch", "cycle"), default="batch")
            p.add_argument("--show", type=int, default=8, help="output entries echoed in JSON")
        else:
            p.add_argument("--dtype", type=_datatype_arg)
            p.add_argument("--batch", type=int, default=1)
        p.set_defaults(func=func)

    llm = sub.add_parser("llm", help="LLM decode model").add_subparsers(dest="cmd", required=True)
    p = llm.add_parser("decode", help="decode-step latency")
    p.add_argument("--json", action="store_true")
    p.add_argument("--model", required=True, help=f"bundled name ({', '.join(gemv.bundled_models())}) or JSON")
    p.add_argument("--platform", default="v80")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--context", type=int, default=512)
    p.add_argument("--arch", choices=(gemv.XTRAMAC, gemv.BASELINE), default=gemv.XTRAMAC)
    p.add_argument("--compare", action="store_true", help="also report speedup over the baseline")
    p.add_argument("--per-layer", action="store_true")
    p.set_defaults(func=cmd_llm_decode)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigurationError, vectors.VectorParseError, FileNotFoundError, ZeroDivisionError) as exc:
        print(f"xtramac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
