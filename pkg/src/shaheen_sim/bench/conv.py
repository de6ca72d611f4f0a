"""1-D convolution y[i] = sum_t x[i + t] * h[t] on int8 data, int32 output.

Outputs are computed two at a time: each tap loads one coefficient and two
neighbouring samples, then issues two ``p.mac``.
"""
from __future__ import annotations

import numpy as np

from .. import asm
from .common import Emitter, Kernel, KernelSpec, L1Allocator, emit_dispatch, work_table

DEFAULT_DIMS = {"length": 512, "taps": 16}


def gen_conv1d(spec: KernelSpec) -> Kernel:
    if spec.kind != "conv1d":
        raise ValueError("gen_conv1d needs a conv1d spec")
    dims = {**DEFAULT_DIMS, **spec.dims}
    n, taps = dims["length"], dims["taps"]
    if n % 2 or n < 2 or taps < 1:
        raise ValueError("length must be a positive even number and taps >= 1")
    rng = np.random.default_rng(spec.seed)
    x = rng.integers(-128, 128, size=n + taps)
    h = rng.integers(-128, 128, size=taps)
    y = np.array([int(x[i:i + taps] @ h) for i in range(n)], dtype=np.int32)

    e = Emitter()
    e.label("_start")
    alloc = L1Allocator()
    x_addr = alloc.alloc(n + taps)
    h_addr = alloc.alloc(taps)
    y_addr = alloc.alloc(4 * n)
    e.data(x_addr, x.astype(np.int8).tobytes(), "signal")
    e.data(h_addr, h.astype(np.int8).tobytes(), "taps")
    items = [(x_addr + i, y_addr + 4 * i) for i in range(0, n, 2)]
    header = work_table(e, alloc, [items[c::spec.cores] for c in range(spec.cores)])

    emit_dispatch(e, header)
    e("barrier")
    e("csrwi perfmark, 1")
    e.label("next_pair")
    e("lw x2, 0(x1)")
    e("lw x4, 4(x1)")
    e("addi x1, x1, 8")
    e("beqz x2, done")
    e(f"li x3, 0x{h_addr:08x}")
    e("mv x10, x0")
    e("mv x11, x0")
    e(f"lp.setupi 0, {taps}, tap_end")
    e("p.lb x12, 1(x3!)")
    e("p.lb x13, 1(x2!)")
    e("lb x14, 0(x2)")
    e("p.mac x10, x13, x12")
    e("p.mac x11, x14, x12")
    e.label("tap_end")
    e("sw x10, 0(x4)")
    e("sw x11, 4(x4)")
    e("j next_pair")
    e.label("done")
    e("csrwi perfmark, 0")
    e("barrier")
    e("ecall")
    src = e.text()
    prog = asm.assemble(asm.SourceProgram(src, spec.name + ".s"))
    return Kernel(spec, src, prog, y, y_addr, "int32", macs=n * taps,
                  meta={"length": n, "taps": taps})


def conv_spec(cores: int = 8, dims: dict | None = None, seed: int = 0) -> KernelSpec:
    return KernelSpec("conv1d", dict(dims or {}), cores=cores, seed=seed)
