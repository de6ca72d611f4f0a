"""Floating-point matmul Y = A @ B.T on the cluster FPUs.

A is M x K and B is N x K, both K-contiguous.  Each work item is a BM x BN
output block (4x2 by default); per K step a core issues BM + BN loads and
BM * BN fused multiply-adds.  With 2-lane 16-bit formats the loads fetch two K elements per word and
``vfmac`` accumulates lane-wise; the two lanes are summed after the loop.

Test data are small integers so every partial sum is exact and the result
can be checked bit for bit against a numpy reference.
"""
from __future__ import annotations

import numpy as np

from .. import asm, fpu
from ..isa import FpFormat
from .common import Emitter, Kernel, KernelSpec, L1Allocator, emit_dispatch, work_table

DEFAULT_DIMS = {"M": 32, "N": 32, "K": 64, "block": [4, 2]}
_ACC = [f"x{10 + i}" for i in range(16)]
_AREG = ["x26", "x27", "x28", "x29"]
_BREG = ["x30", "x31", "x5", "x6"]
_SUFFIX = {"fp32": "s", "fp16": "h", "bfloat16": "ah"}
_OUT_DTYPE = {"fp32": "float32", "fp16": "float16", "bfloat16": "uint16"}


def _data(spec: KernelSpec):
    dims = {**DEFAULT_DIMS, **spec.dims}
    m, n, k = dims["M"], dims["N"], dims["K"]
    kind = spec.fp.kind
    lim = 1 if kind == "bfloat16" else 3
    if kind != "fp32" and k > 64:
        raise ValueError("16-bit formats need K <= 64 for exact reference sums")
    rng = np.random.default_rng(spec.seed)
    a = rng.integers(-lim, lim + 1, size=(m, k))
    b = rng.integers(-lim, lim + 1, size=(n, k))
    y = a @ b.T
    return dims, a, b, y


def _encode(values: np.ndarray, ff: fpu.FloatFormat) -> np.ndarray:
    flat = [fpu.from_float(float(v), ff) for v in values.ravel()]
    dt = "<u4" if ff.width == 32 else "<u2"
    return np.array(flat, dtype=dt).reshape(values.shape)


def gen_fp_matmul(spec: KernelSpec) -> Kernel:
    if spec.kind != "matmul-fp" or spec.fp is None:
        raise ValueError("gen_fp_matmul needs a matmul-fp spec with an FpFormat")
    ff = spec.fp.float_format
    simd = spec.fp.lanes == 2
    sfx = _SUFFIX[spec.fp.kind]
    dims, a, b, y = _data(spec)
    m, n, k = dims["M"], dims["N"], dims["K"]
    bm, bn = dims["block"]
    if not (1 <= bm <= 4 and 1 <= bn <= 4):
        raise ValueError("block dimensions must be in 1..4")
    if m % bm or n % bn:
        raise ValueError(f"M and N must be multiples of the {bm}x{bn} block")
    eb = ff.width // 8
    step = 4 if simd else eb  # bytes consumed per pointer per iteration
    if (k * eb) % step:
        raise ValueError("K must fill whole words in 2-lane mode")
    iters = k * eb // step
    pad = dims.get("row_pad", 4)
    stride = k * eb + pad
    if 3 * stride > 2047:
        raise ValueError("rows too long for immediate offsets")

    e = Emitter()
    e.label("_start")
    alloc = L1Allocator()
    a_addr = alloc.alloc(m * stride)
    b_addr = alloc.alloc(n * stride)
    y_addr = alloc.alloc(m * n * eb)
    e.data(a_addr, _rows(_encode(a, ff), stride), "mat_a")
    e.data(b_addr, _rows(_encode(b, ff), stride), "mat_b")
    blocks = [(a_addr + i * stride, b_addr + j * stride, y_addr + eb * (i * n + j))
              for i in range(0, m, bm) for j in range(0, n, bn)]
    per_core = [blocks[c::spec.cores] for c in range(spec.cores)]
    header = work_table(e, alloc, per_core)

    ld = {4: "lw", 2: "lh"}[step]
    emit_dispatch(e, header)
    e("barrier")
    e("csrwi perfmark, 1")
    e.label("next_block")
    e("lw x2, 0(x1)")
    e("lw x3, 4(x1)")
    e("lw x4, 8(x1)")
    e("addi x1, x1, 12")
    e("beqz x2, done")
    accs = [_ACC[i * 4 + j] for i in range(bm) for j in range(bn)]
    for acc in accs:
        e(f"mv {acc}, x0")
    end = e.fresh("blk_end")
    e(f"lp.setupi 0, {iters}, {end}")
    for ptr, regs, rows in (("x2", _AREG, bm), ("x3", _BREG, bn)):
        e(f"p.{ld} {regs[0]}, {step}({ptr}!)")
        for r in range(1, rows):
            e(f"{ld} {regs[r]}, {r * stride - step}({ptr})")
    for i in range(bm):
        for j in range(bn):
            acc = _ACC[i * 4 + j]
            if simd:
                e(f"vfmac.{sfx} {acc}, {_AREG[i]}, {_BREG[j]}")
            else:
                e(f"fmadd.{sfx} {acc}, {_AREG[i]}, {_BREG[j]}, {acc}")
    e.label(end)
    st = "sw" if eb == 4 else "sh"
    for i in range(bm):
        for j in range(bn):
            acc = _ACC[i * 4 + j]
            if simd:
                e(f"srli x7, {acc}, 16")
                e(f"fadd.{sfx} {acc}, {acc}, x7")
            e(f"{st} {acc}, {eb * (i * n + j)}(x4)")
    e("j next_block")
    e.label("done")
    e("csrwi perfmark, 0")
    e("barrier")
    e("ecall")
    src = e.text()
    prog = asm.assemble(asm.SourceProgram(src, spec.name + ".s"))
    expected = _encode(y, ff)
    dt = np.dtype(_OUT_DTYPE[spec.fp.kind])
    expected = expected.view(dt) if dt.kind != "u" else expected.astype(dt)
    meta = {"M": m, "N": n, "K": k, "block": [bm, bn], "lanes": spec.fp.lanes,
            "iterations": iters}
    return Kernel(spec, src, prog, expected, y_addr, _OUT_DTYPE[spec.fp.kind],
                  macs=m * n * k, flops=2 * m * n * k, meta=meta)


def _rows(words: np.ndarray, stride: int) -> bytes:
    rows, cols = words.shape
    out = np.zeros((rows, stride), dtype=np.uint8)
    raw = words.astype(words.dtype.newbyteorder("<")).view(np.uint8).reshape(rows, -1)
    out[:, :raw.shape[1]] = raw
    return out.tobytes()


def fp_spec(kind: str = "fp32", cores: int = 8, lanes: int | None = None,
            dims: dict | None = None, seed: int = 0) -> KernelSpec:
    if lanes is None:
        lanes = 1 if kind == "fp32" else 2
    return KernelSpec("matmul-fp", dict(dims or {}), fp=FpFormat(kind, lanes),
                      cores=cores, seed=seed)
