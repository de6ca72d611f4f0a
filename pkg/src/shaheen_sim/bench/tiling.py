"""Double-buffered L2 -> L1 tiling demo.

A layer of ``bytes`` int8 inputs sits in L2.  Core 0 streams it into two L1
buffers one tile at a time while all cores reduce the tile that already
landed: each word is loaded once and fed to ``intensity`` sdotp
instructions.  The overlap figure is the fraction of DMA-active cycles in
which no core sat in ``dma.wait``.
"""
from __future__ import annotations

import numpy as np

from .. import asm
from ..cluster import Cluster, ClusterConfig, L2_BASE
from .common import BenchReport, Emitter, L1Allocator

LAYER_DEFAULT = {"bytes": 65536, "intensity": 8}
TILE_DEFAULT = {"tile": 2048}
SRC_OFFSET = 0x40000  # layer data lives 256 KiB into L2, clear of the code


def gen_tiled_layer(layer: dict | None = None, tile: dict | None = None, cores: int = 8,
                    seed: int = 0):
    layer = {**LAYER_DEFAULT, **(layer or {})}
    tile = {**TILE_DEFAULT, **(tile or {})}
    total, reps, tb = layer["bytes"], layer["intensity"], tile["tile"]
    if tb <= 0 or total % tb or tb % (4 * cores):
        raise ValueError("tile must divide the layer and split into whole words per core")
    if reps < 1:
        raise ValueError("intensity must be >= 1")
    ntiles = total // tb
    rng = np.random.default_rng(seed)
    data = rng.integers(-128, 128, size=total).astype(np.int8)
    words = data.reshape(ntiles, cores, tb // cores // 4, 4).astype(np.int64)
    expected = (reps * words.sum(axis=(0, 2, 3))).astype(np.int32)

    alloc = L1Allocator()
    buf0 = alloc.alloc(tb, 64)
    buf1 = alloc.alloc(tb, 64) if ntiles > 1 else buf0
    out = alloc.alloc(4 * cores)
    src = L2_BASE + SRC_OFFSET
    slice_b = tb // cores

    e = Emitter()
    e.label("_start")
    e.data(src, data.tobytes(), "layer")
    e("csrr x5, mhartid")
    e(f"li x20, 0x{src:08x}")
    e(f"li x21, 0x{buf0:08x}")
    e(f"li x22, 0x{buf1:08x}")
    e(f"li x23, {ntiles}")
    e(f"li x26, {tb}")
    e("li x27, 1")
    e(f"li x28, {slice_b}")
    e("mul x29, x5, x28")  # byte offset of this core's slice
    e("li x30, 0x01010101")
    e("mv x10, x0")
    e("barrier")
    e("csrwi perfmark, 1")
    e("bnez x5, tile_loop")
    e("dma.cfg x20, x21")
    e("dma.start x24, x26, x27")
    e.label("tile_loop")
    e("bnez x5, wait_done")
    e("dma.wait x24")
    e.label("wait_done")
    e("barrier")
    e("bnez x5, compute")
    e("li x6, 1")
    e("beq x23, x6, compute")
    e("add x20, x20, x26")
    e("dma.cfg x20, x22")
    e("dma.start x24, x26, x27")
    e.label("compute")
    e("add x2, x21, x29")
    e(f"li x9, {slice_b // 4}")
    e("lp.setup 0, x9, word_end")
    e("p.lw x12, 4(x2!)")
    for _ in range(reps):
        e("pv.sdotsp.b x10, x12, x30")
    e.label("word_end")
    e("barrier")
    e("mv x6, x21")
    e("mv x21, x22")
    e("mv x22, x6")
    e("addi x23, x23, -1")
    e("bnez x23, tile_loop")
    e("csrwi perfmark, 0")
    e("slli x6, x5, 2")
    e(f"li x7, 0x{out:08x}")
    e("add x7, x7, x6")
    e("sw x10, 0(x7)")
    e("ecall")
    src_text = e.text()
    prog = asm.assemble(asm.SourceProgram(src_text, "tiled_layer.s"))
    meta = {"bytes": total, "tile": tb, "tiles": ntiles, "intensity": reps}
    return prog, expected, out, meta


def tiled_layer_demo(layer: dict | None = None, tile: dict | None = None, cores: int = 8,
                     cfg: ClusterConfig | None = None, port=None, seed: int = 0) -> BenchReport:
    prog, expected, out, meta = gen_tiled_layer(layer, tile, cores, seed)
    d = (cfg or ClusterConfig()).to_dict()
    d.update(n_cores=cores, isa="flexv")
    ccfg = ClusterConfig.from_dict(d)
    cl = Cluster(ccfg, port)
    cl.load_program(prog)
    stats = cl.run_to_completion()
    region = stats.region()
    got = np.frombuffer(cl.read_bytes(out, 4 * cores), dtype="<i4")
    stalls: dict = {}
    for per_core in stats.stalls:
        for k, v in per_core.items():
            stalls[k] = stalls.get(k, 0) + v
    cycles = region["cycles"]
    mpc = region["macs"] / cycles if cycles else 0.0
    meta.update(overlap=stats.dma_overlap, dma_active_cycles=stats.dma_active_cycles,
                dma_exposed_cycles=stats.dma_exposed_cycles, dma_bytes=stats.dma_bytes)
    return BenchReport(
        name=f"tiled-layer-t{meta['tile']}-c{cores}", mac_per_cycle=mpc,
        total_cycles=stats.total_cycles, region_cycles=cycles, macs=region["macs"], flops=0,
        gops=2 * mpc * ccfg.clock_hz / 1e9, gflops=0.0,
        correct=bool(np.array_equal(got, expected)), stalls=stalls,
        clock_hz=ccfg.clock_hz, meta=meta)
