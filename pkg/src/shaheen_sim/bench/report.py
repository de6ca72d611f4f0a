"""Experiment drivers: the MAC/cycle table, mode comparison, FP throughput,
offload breakdown and tiling overlap."""
from __future__ import annotations

import json
from importlib import resources

from ..cluster import ClusterConfig
from .common import TABLE3_PAIRS, BenchReport, KernelSpec, run_kernel
from .fp import fp_spec, gen_fp_matmul
from .matmul import gen_matmul
from .tiling import tiled_layer_demo

OFFLOAD_SIZES = ({"M": 16, "N": 16, "K": 16}, {"M": 32, "N": 32, "K": 32},
                 {"M": 64, "N": 64, "K": 128})


def load_table3_config(path=None) -> dict:
    if path is None:
        text = resources.files("shaheen_sim.data").joinpath("table3.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def pair_key(a: int, b: int) -> str:
    return f"{a},{b}"


def run_matmul(a: int, b: int, mode: str, table_cfg: dict | None = None,
               cfg: ClusterConfig | None = None) -> BenchReport:
    t = table_cfg or load_table3_config()
    dims = t["pairs"][pair_key(a, b)]
    spec = KernelSpec("matmul-int", dict(dims), a, b, mode=mode, cores=t.get("cores", 8),
                      seed=t.get("seed", 0))
    rep, _, _ = run_kernel(gen_matmul(spec), cfg)
    return rep


def table3(table_cfg: dict | None = None, cfg: ClusterConfig | None = None) -> list[dict]:
    """One row per precision pair in table order, all three modes."""
    t = table_cfg or load_table3_config()
    ref = t.get("reference", {})
    rows = []
    for a, b in TABLE3_PAIRS:
        key = pair_key(a, b)
        row = {"a_width": a, "b_width": b}
        for mode in ("flexv", "xpulpnn", "xpulpv2"):
            if mode == "xpulpv2" and a < 8:
                row[mode] = None
                continue
            rep = run_matmul(a, b, mode, t, cfg)
            row[mode] = rep.mac_per_cycle
            row[mode + "_correct"] = rep.correct
            row[mode + "_ref"] = ref.get(mode, {}).get(key)
        row["gops_flexv"] = 2 * row["flexv"] * (cfg or ClusterConfig()).clock_hz / 1e9
        row["speedup_vs_xpulpnn"] = row["flexv"] / row["xpulpnn"]
        row["speedup_vs_xpulpv2"] = row["flexv"] / row["xpulpv2"] if row["xpulpv2"] else None
        rows.append(row)
    return rows


def compare_modes(a: int, b: int, table_cfg: dict | None = None,
                  cfg: ClusterConfig | None = None) -> dict:
    out = {"a_width": a, "b_width": b}
    for mode in ("flexv", "xpulpnn", "xpulpv2"):
        if mode == "xpulpv2" and a < 8:
            out[mode] = None
            continue
        out[mode] = run_matmul(a, b, mode, table_cfg, cfg).mac_per_cycle
    out["flexv/xpulpnn"] = out["flexv"] / out["xpulpnn"]
    out["flexv/xpulpv2"] = out["flexv"] / out["xpulpv2"] if out["xpulpv2"] else None
    return out


def fp_suite(cfg: ClusterConfig | None = None) -> list[dict]:
    rows = []
    for kind, cores in (("fp32", 1), ("fp32", 8), ("fp16", 1), ("fp16", 8),
                        ("bfloat16", 8)):
        rep, _, _ = run_kernel(gen_fp_matmul(fp_spec(kind, cores)), cfg)
        rows.append({"format": kind, "cores": cores, "gflops": rep.gflops,
                     "flop_per_cycle": rep.flops / rep.region_cycles,
                     "region_cycles": rep.region_cycles, "correct": rep.correct})
    by = {(r["format"], r["cores"]): r["gflops"] for r in rows}
    summary = {"format": "summary", "fp16_over_fp32": by["fp16", 8] / by["fp32", 8],
               "fp32_speedup_8_vs_1": by["fp32", 8] / by["fp32", 1],
               "fp16_speedup_8_vs_1": by["fp16", 8] / by["fp16", 1]}
    return rows + [summary]


def offload_suite(invocations: int = 1000, sizes=OFFLOAD_SIZES, soc_cfg=None) -> list[dict]:
    """First-run and amortised offload cost of an fp32 matmul per size."""
    from ..soc import HostAgent, Soc, amortized
    rows = []
    for dims in sizes:
        kernel = gen_fp_matmul(fp_spec("fp32", 8, dims=dims))
        agent = HostAgent(Soc(soc_cfg))
        recs = [agent.offload(kernel.spec.name, kernel.program) for _ in range(invocations)]
        first = recs[0]
        am = amortized(recs)
        rows.append({"dims": dims, "binary_bytes": first.bytes,
                     "first_run": dict(first.breakdown), "first_run_overhead": first.overhead,
                     "first_run_overhead_fraction": first.overhead / first.total,
                     "invocations": invocations, "copies": agent.copies[kernel.spec.name],
                     "amortized_copy_fraction": am["copy_fraction"],
                     "amortized_overhead_fraction": am["overhead_fraction"],
                     "total_cycles": am["total_cycles"],
                     "correct": kernel.check(agent.last_cluster)})
    return rows


def tiling_suite(cfg: ClusterConfig | None = None) -> list[dict]:
    cases = (("compute-bound", {}, {"tile": 2048}),
             ("memory-bound", {"intensity": 1}, {"tile": 256}),
             ("whole-layer", {}, {"tile": 65536}))
    rows = []
    for label, layer, tile in cases:
        rep = tiled_layer_demo(layer, tile, cfg=cfg)
        rows.append({"case": label, "overlap": rep.meta["overlap"], "tile": rep.meta["tile"],
                     "tiles": rep.meta["tiles"], "intensity": rep.meta["intensity"],
                     "region_cycles": rep.region_cycles, "correct": rep.correct})
    return rows


def table3_check(rows: list[dict], tol: float = 0.15) -> list[tuple[str, bool, str]]:
    """Tolerance checks on table rows: (label, ok, detail)."""
    out = []
    for r in rows:
        ref = r["flexv_ref"]
        dev = r["flexv"] / ref - 1
        out.append((f"flexv {r['a_width']},{r['b_width']}", abs(dev) <= tol,
                    f"{r['flexv']:.2f} vs {ref} ({dev:+.1%})"))
    return out
