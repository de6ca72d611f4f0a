"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 runtime guard tripped, 4 tolerance
failure under ``--check``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import asm, seccheck
from .cluster import ClusterConfig, CycleLimitError, DeadlockError, run_program
from .isa import SimulationError

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_TOLERANCE = 0, 2, 3, 4
CONFIG_ENV = "SHAHEEN_CONFIG_DIR"


class InputError(Exception):
    pass


def resolve_config(name: str | None) -> Path | None:
    """A path, or a bare name looked up in $SHAHEEN_CONFIG_DIR then the
    packaged configs."""
    if name is None:
        return None
    p = Path(name)
    if p.is_file():
        return p
    stems = [name] if name.endswith(".json") else [name + ".json", name]
    env = os.environ.get(CONFIG_ENV)
    dirs = [Path(env)] if env else []
    for d in dirs:
        for s in stems:
            if (d / s).is_file():
                return d / s
    pkg = resources.files("shaheen_sim.data").joinpath("configs")
    for s in stems:
        cand = pkg.joinpath(s)
        if cand.is_file():
            return Path(str(cand))
    raise InputError(f"config {name!r} not found")


def soc_config(name: str | None):
    from .soc import SocConfig, load_config
    path = resolve_config(name)
    if path is None:
        env = os.environ.get(CONFIG_ENV)
        if env and (Path(env) / "default.json").is_file():
            path = Path(env) / "default.json"
        else:
            return SocConfig()
    try:
        return load_config(path)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_csv(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in cols})


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def _report_checks(checks, stream=None) -> bool:
    stream = stream or sys.stdout
    ok = True
    for label, passed, detail in checks:
        tail = f": {detail}" if detail else ""
        print(f"{'PASS' if passed else 'FAIL'} {label}{tail}", file=stream)
        ok &= passed
    return ok


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        src = asm.SourceProgram.from_file(args.file)
    except OSError as exc:
        raise InputError(str(exc)) from None
    try:
        prog = asm.assemble(src)
    except asm.AssemblyError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_INPUT
    for w in prog.warnings:
        print(w, file=sys.stderr)
    cfg = soc_config(args.config).cluster
    d = cfg.to_dict()
    if args.cores:
        d["n_cores"] = args.cores
    if args.isa:
        d["isa"] = args.isa
    try:
        cfg = ClusterConfig.from_dict(d)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    trace = [] if args.trace else None
    try:
        cl, stats = run_program(prog, cfg, warm=args.warm, max_cycles=args.max_cycles,
                                trace=trace)
    except (DeadlockError, CycleLimitError, SimulationError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = stats.to_json() + "\n"
    if args.stats:
        Path(args.stats).write_text(text)
    else:
        sys.stdout.write(text)
    if trace is not None:
        Path(args.trace).write_text("cycle,core,event,detail\n" + "\n".join(trace) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    from . import bench
    out = _outdir(args)
    cfg = soc_config(args.config)
    ccfg = cfg.cluster
    checks = []
    if args.suite == "table3":
        try:
            tcfg = bench.load_table3_config(args.table_config)
        except (OSError, ValueError) as exc:
            raise InputError(f"table config: {exc}") from None
        rows = bench.table3(tcfg, ccfg)
        checks += bench.table3_check(rows)
        for r in rows:
            if r["a_width"] == 4 and r["b_width"] == 2:
                checks.append(("flexv/xpulpnn 4,2 >= 5.0", r["speedup_vs_xpulpnn"] >= 5.0,
                               f"{r['speedup_vs_xpulpnn']:.2f}x"))
            if r["a_width"] == 8 and r["b_width"] == 2:
                checks.append(("flexv/xpulpnn 8,2 >= 3.5", r["speedup_vs_xpulpnn"] >= 3.5,
                               f"{r['speedup_vs_xpulpnn']:.2f}x"))
            if r["a_width"] == r["b_width"]:
                dev = r["speedup_vs_xpulpnn"] - 1
                checks.append((f"uniform {r['a_width']},{r['b_width']} parity",
                               abs(dev) <= 0.03, f"{dev:+.2%}"))
            checks.append((f"correct {r['a_width']},{r['b_width']}",
                           all(r.get(m + "_correct", True) for m in bench.MODES), ""))
    elif args.suite == "fp":
        rows = bench.fp_suite(ccfg)
        s = rows[-1]
        f32 = next(r for r in rows if r["format"] == "fp32" and r["cores"] == 8)
        checks += [("fp32 8-core >= 4.0 GFLOp/s", f32["gflops"] >= 4.0,
                    f"{f32['gflops']:.2f}"),
                   ("fp16/fp32 >= 1.6", s["fp16_over_fp32"] >= 1.6,
                    f"{s['fp16_over_fp32']:.2f}"),
                   ("fp32 8 vs 1 core in [5.9, 7.9]",
                    5.9 <= s["fp32_speedup_8_vs_1"] <= 7.9, f"{s['fp32_speedup_8_vs_1']:.2f}"),
                   ("fp outputs correct", all(r.get("correct", True) for r in rows), "")]
    elif args.suite == "offload":
        rows = bench.offload_suite(args.invocations, soc_cfg=cfg)
        big = rows[-1]
        checks += [("copy amortized <= 0.1%", big["amortized_copy_fraction"] <= 0.001,
                    f"{big['amortized_copy_fraction']:.5%}"),
                   ("binary copied once", all(r["copies"] == 1 for r in rows), "")]
    else:
        rows = bench.tiling_suite(ccfg)
        cb = rows[0]
        checks += [("compute-bound overlap >= 90%", cb["overlap"] >= 0.9,
                    f"{cb['overlap']:.2%}"),
                   ("memory-bound below compute-bound", rows[1]["overlap"] < cb["overlap"],
                    f"{rows[1]['overlap']:.2%}")]
    _write_json(out / f"{args.suite}.json", rows)
    _write_csv(out / f"{args.suite}.csv", rows)
    ok = _report_checks(checks)
    return EXIT_TOLERANCE if args.check and not ok else EXIT_OK


# ---------------------------------------------------------------------------
# covert
# ---------------------------------------------------------------------------

def cmd_covert(args) -> int:
    out = _outdir(args)
    if args.fence_only:
        fences = (True,)
    elif args.no_fence_only:
        fences = (False,)
    else:
        fences = (False, True)
    try:
        res = seccheck.covert_experiment(args.n, args.trials, args.noise, args.seed, fences)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    summary = {}
    checks = []
    for key, r in res.items():
        seccheck.render_heatmap(r["matrix"], out / f"heatmap_{key}.pgm", "pgm")
        seccheck.render_heatmap(r["matrix"], out / f"matrix_{key}.csv", "csv")
        seccheck.samples_csv(r["samples"], out / f"samples_{key}.csv")
        summary[key] = {"mi_bits": r["mi_bits"], "overhead": r["overhead"]}
        print(f"{key}: MI = {r['mi_bits']:.4f} bits")
    if "nofence" in res:
        checks.append(("MI without fence >= 7 bits", res["nofence"]["mi_bits"] >= 7, ""))
    if "fence" in res:
        fc = res["fence"]["overhead"]["fence"]
        checks += [("MI with fence <= 0.1 bits", res["fence"]["mi_bits"] <= 0.1, ""),
                   ("fence cost <= 320", fc <= 320, f"{fc} cycles")]
    summary["config"] = {"n": args.n, "trials": args.trials, "noise": args.noise,
                         "seed": args.seed}
    _write_json(out / "covert.json", summary)
    ok = _report_checks(checks) if args.check else True
    return EXIT_TOLERANCE if not ok else EXIT_OK


# ---------------------------------------------------------------------------
# tlbtest / hypertest
# ---------------------------------------------------------------------------

def cmd_tlbtest(args) -> int:
    from .soc import Soc
    from .soc.checks import faulted_read_beats, iotlb_sweep
    res = iotlb_sweep(args.seed, args.tables, args.window)
    res["faulted_read_beats_ok"] = faulted_read_beats(Soc(soc_config(args.config)),
                                                      0x4000_0000, 4)
    res["mismatches"] = [list(m) for m in res["mismatches"]]
    print(json.dumps(res, sort_keys=True))
    ok = res["ok"] and res["faulted_read_beats_ok"]
    return EXIT_TOLERANCE if args.check and not ok else EXIT_OK


def cmd_hypertest(args) -> int:
    from .soc.checks import hyper_checks
    cfg = soc_config(args.config)
    res = hyper_checks(cfg, args.rows)
    res["config"] = cfg.name
    print(json.dumps(res, sort_keys=True))
    checks = [("bijective", res["bijective"], f"N={args.rows}"),
              ("bandwidth within 10%", abs(res["bandwidth_ratio"] - 1) <= 0.10,
               f"{res['bandwidth_ratio']:.3f}")]
    if cfg.name == "paper":
        checks.append(("per-bus 1.6 Gbps", abs(res["per_bus_gbps"] - 1.6) < 1e-9,
                       f"{res['per_bus_gbps']:.2f}"))
    ok = _report_checks(checks, sys.stderr) if args.check else True
    return EXIT_TOLERANCE if not ok else EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    rc = EXIT_OK
    for suite in ("table3", "fp", "offload", "tiling"):
        ns = argparse.Namespace(suite=suite, out=args.out, check=args.check,
                                config=args.config, table_config=None,
                                invocations=args.invocations)
        print(f"== bench {suite}")
        rc = max(rc, cmd_bench(ns))
    ns = argparse.Namespace(out=args.out, n=256, trials=1, noise=0, seed=args.seed,
                            fence_only=False, no_fence_only=False, check=args.check)
    print("== covert")
    rc = max(rc, cmd_covert(ns))
    return rc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shaheen-sim", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="SoC config file or name (default: $%s/default.json "
                                    "or the packaged default)" % CONFIG_ENV)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="assemble and run a program on the cluster")
    r.add_argument("file")
    r.add_argument("--cores", type=int)
    r.add_argument("--isa", choices=("xpulpv2", "xpulpnn", "flexv"))
    r.add_argument("--warm", action="store_true", help="pre-fill the instruction cache")
    r.add_argument("--max-cycles", type=int, default=50_000_000)
    r.add_argument("--stats", help="write the stats JSON here instead of stdout")
    r.add_argument("--trace", help="write a per-cycle event CSV")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=("table3", "fp", "offload", "tiling"))
    b.add_argument("--out", default="out")
    b.add_argument("--check", action="store_true")
    b.add_argument("--table-config", help="frozen matmul layout file")
    b.add_argument("--invocations", type=int, default=1000)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("covert", help="prime-and-probe channel with and without fence.t")
    c.add_argument("--n", type=int, default=256)
    c.add_argument("--trials", type=int, default=1)
    c.add_argument("--noise", type=int, default=0)
    c.add_argument("--seed", type=int, default=0)
    g = c.add_mutually_exclusive_group()
    g.add_argument("--fence", dest="fence_only", action="store_true",
                   help="only the fenced run")
    g.add_argument("--no-fence", dest="no_fence_only", action="store_true",
                   help="only the unfenced run")
    c.add_argument("--out", default="out")
    c.add_argument("--check", action="store_true")
    c.set_defaults(func=cmd_covert)

    t = sub.add_parser("tlbtest", help="IOTLB sweep against a per-address model")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--tables", type=int, default=4)
    t.add_argument("--window", type=int, default=4096)
    t.add_argument("--check", action="store_true")
    t.set_defaults(func=cmd_tlbtest)

    h = sub.add_parser("hypertest", help="HyperRAM mapping and bandwidth checks")
    h.add_argument("--rows", type=int, default=64, help="rows per die for the sweep")
    h.add_argument("--check", action="store_true")
    h.set_defaults(func=cmd_hypertest)

    rp = sub.add_parser("report", help="every suite plus the covert channel")
    rp.add_argument("--out", default="out")
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--invocations", type=int, default=1000)
    rp.add_argument("--check", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
