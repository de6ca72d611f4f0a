"""Integer matmul generators for the three ISA levels.

The kernel computes ``Y[p, c] = sum_k X[p, k] * W[c, k]`` with unsigned
activations ``X`` (``a_width`` bits) and signed weights ``W`` (``b_width``
bits), raw 32-bit accumulators, no requantisation.  Output-stationary blocks
of ``C`` channels by ``P`` pixels are spread round-robin over the cores.

Flex-V and uniform XpulpNN kernels stream operands through the NN-RF with
Mac&Load; XpulpV2 uniform kernels use explicit post-increment loads; mixed
precision without Flex-V unpacks the weights in software.
"""
from __future__ import annotations

import numpy as np

from .. import asm
from ..isa import SimdFormat
from .common import (Emitter, Kernel, KernelSpec, L1Allocator, emit_dispatch, pack_rows,
                     rows_to_bytes, work_table)

# default problem: 32 output channels, 8 pixels, K chosen per pair in the
# committed bench config
DEFAULT_DIMS = {"channels": 32, "pixels": 8, "k": 256}
BODY = 8  # sdotp slots per hardware-loop iteration

_ACC = [f"x{10 + i}" for i in range(8)]


def block_shape(a_width: int, b_width: int) -> tuple[int, int]:
    """(channels, pixels) per register block for the Mac&Load kernel."""
    r = a_width // b_width
    return {1: (4, 2), 2: (4, 1), 4: (2, 1)}[r]


def schedule_loads(uses: dict[str, list[int]], n_slots: int = BODY) -> dict[str, tuple[int, bool]]:
    """Pick a load slot for every NN register of a Mac&Load loop body.

    A register may be reloaded at or after its last use in the body (the
    value then feeds the next iteration, so a prologue load is needed) or
    before its first use (it feeds the current iteration).  Returns
    ``{reg: (slot, feeds_next_iteration)}``; slots are distinct.
    """
    allowed = {}
    for reg, idx in uses.items():
        first, last = min(idx), max(idx)
        nxt = [s for s in range(last, n_slots)]
        cur = [s for s in range(0, first)]
        allowed[reg] = [(s, True) for s in nxt] + [(s, False) for s in cur]
    taken: dict[int, str] = {}

    def assign(reg, seen):
        for s, _ in allowed[reg]:
            if s in seen:
                continue
            seen.add(s)
            if s not in taken or assign(taken[s], seen):
                taken[s] = reg
                return True
        return False

    for reg in sorted(uses, key=lambda r: len(allowed[r])):
        if not assign(reg, set()):
            raise ValueError(f"no load slot for {reg}")
    out = {}
    for s, reg in taken.items():
        out[reg] = (s, dict(allowed[reg])[s])
    return out


def _data(spec: KernelSpec):
    dims = {**DEFAULT_DIMS, **spec.dims}
    nc, npix, k = dims["channels"], dims["pixels"], dims["k"]
    rng = np.random.default_rng(spec.seed)
    a, b = spec.a_width, spec.b_width
    x = rng.integers(0, 1 << a, size=(npix, k), dtype=np.int64)
    w = rng.integers(-(1 << (b - 1)), 1 << (b - 1), size=(nc, k), dtype=np.int64)
    if dims.get("zero_activations"):
        x[:] = 0
    y = (x @ w.T).astype(np.int64)
    y = ((y + (1 << 31)) % (1 << 32) - (1 << 31)).astype(np.int32)
    return dims, x, w, y


def _layout(spec, dims, x, w, e: Emitter):
    a, b = spec.a_width, spec.b_width
    nc, npix, k = dims["channels"], dims["pixels"], dims["k"]
    per_w = 32 // b
    if k % per_w or k % (32 // a):
        raise ValueError(f"K={k} must be a multiple of {max(per_w, 32 // a)} elements")
    pad = dims.get("row_pad", 4)
    sw = k * b // 8 + dims.get("w_pad", pad)
    sx = k * a // 8 + dims.get("x_pad", pad)
    alloc = L1Allocator()
    w_addr = alloc.alloc(nc * sw + 64)  # Mac&Load over-fetches one word per stream
    x_addr = alloc.alloc(npix * sx + 64)
    y_addr = alloc.alloc(4 * nc * npix)
    e.data(w_addr, rows_to_bytes(pack_rows(w, b), sw), "weights")
    e.data(x_addr, rows_to_bytes(pack_rows(x, a), sx), "activations")
    return alloc, w_addr, x_addr, y_addr, sw, sx


def gen_matmul(spec: KernelSpec) -> Kernel:
    """Assemble the matmul kernel for ``spec`` plus its expected output."""
    if spec.kind != "matmul-int":
        raise ValueError("gen_matmul needs a matmul-int spec")
    dims, x, w, y = _data(spec)
    a, b = spec.a_width, spec.b_width
    mixed = a != b
    if spec.mode == "flexv" or (spec.mode == "xpulpnn" and not mixed):
        style = "macload"
        cb, pb = block_shape(a, b)
    elif mixed:
        style = "unpack"
        cb, pb = 4, 2
    else:
        style = "explicit"
        cb, pb = 4, 2
    nc, npix, k = dims["channels"], dims["pixels"], dims["k"]
    if nc % cb or npix % pb:
        raise ValueError(f"{nc}x{npix} output is not a multiple of the {cb}x{pb} block")

    e = Emitter()
    e.label("_start")
    alloc, w_addr, x_addr, y_addr, sw, sx = _layout(spec, dims, x, w, e)
    blocks = [(w_addr + c * sw, x_addr + p * sx, y_addr + 4 * (p * nc + c))
              for p in range(0, npix, pb) for c in range(0, nc, cb)]
    per_core = [blocks[i::spec.cores] for i in range(spec.cores)]
    if dims.get("stagger", True):
        # rotate each core's list so cores do not walk the same activation
        # rows in lockstep (they would collide on the same TCDM banks)
        per_core = [lst[(i * len(lst)) // spec.cores:] + lst[:(i * len(lst)) // spec.cores]
                    for i, lst in enumerate(per_core)]
    header = work_table(e, alloc, per_core)

    fmt = SimdFormat(a, b) if style == "macload" else SimdFormat(a, a)
    emit_dispatch(e, header)
    e(f"csrwi simd_fmt, {fmt.to_csr()}")
    e("barrier")
    e("csrwi perfmark, 1")
    e.label("next_block")
    e("lw x2, 0(x1)")
    e("lw x3, 4(x1)")
    e("lw x4, 8(x1)")
    e("addi x1, x1, 12")
    e("beqz x2, done")
    iters = k * b // 32
    meta = {"style": style, "block": [cb, pb], "iterations": iters, "k": k,
            "channels": nc, "pixels": npix}
    if style == "macload":
        meta["schedule"] = _macload_block(e, a, b, cb, pb, sw, sx, nc, iters)
    elif style == "explicit":
        _explicit_block(e, cb, pb, sw, sx, nc, iters)
    else:
        _unpack_block(e, a, b, cb, pb, sw, sx, nc, iters)
    e("j next_block")
    e.label("done")
    e("csrwi perfmark, 0")
    e("barrier")
    e("ecall")
    src = e.text()
    prog = asm.assemble(asm.SourceProgram(src, spec.name + ".s"))
    return Kernel(spec, src, prog, y, y_addr, "int32", macs=nc * npix * k, meta=meta)


def _macload_block(e: Emitter, a, b, cb, pb, sw, sx, nc, iters) -> dict:
    r = a // b
    order = [(c, p, j) for c in range(cb) for p in range(pb) for j in range(r)]
    assert len(order) == BODY
    wreg = {c: f"n{c}" for c in range(cb)}
    xreg = {(p, j): f"n{cb + p * r + j}" for p in range(pb) for j in range(r)}
    uses: dict[str, list[int]] = {}
    for i, (c, p, j) in enumerate(order):
        uses.setdefault(wreg[c], []).append(i)
        uses.setdefault(xreg[(p, j)], []).append(i)
    slots = schedule_loads(uses)
    # one post-incremented pointer per NN register
    ptr, init, stride = {}, {}, {}
    for n, c in enumerate(range(cb)):
        reg = wreg[c]
        ptr[reg], init[reg], stride[reg] = f"x{18 + n}", ("x2", c * sw), 4
    for (p, j), reg in xreg.items():
        n = len(ptr)
        ptr[reg], init[reg], stride[reg] = f"x{18 + n}", ("x3", p * sx + 4 * j), 4 * r
    for reg in sorted(ptr):
        base, off = init[reg]
        e(f"addi {ptr[reg]}, {base}, {off}")
    for i in range(cb * pb):
        e(f"mv {_ACC[i]}, x0")
    for reg in sorted(ptr):
        if slots[reg][1]:
            e(f"pv.mlsdotusp x0, n0, n0, {reg}, {stride[reg]}({ptr[reg]}!)")
    end = e.fresh("blk_end")
    e(f"lp.setupi 0, {iters}, {end}")
    by_slot = {s: reg for reg, (s, _) in slots.items()}
    for i, (c, p, j) in enumerate(order):
        acc = _ACC[c * pb + p]
        if i in by_slot:
            reg = by_slot[i]
            e(f"pv.mlsdotusp {acc}, {xreg[(p, j)]}, {wreg[c]}, {reg}, {stride[reg]}({ptr[reg]}!)")
        else:
            e(f"pv.sdotusp {acc}, {xreg[(p, j)]}, {wreg[c]}")
    e.label(end)
    _stores(e, cb, pb, nc)
    return {reg: list(v) for reg, v in slots.items()}


def _stores(e: Emitter, cb, pb, nc):
    for c in range(cb):
        for p in range(pb):
            e(f"sw {_ACC[c * pb + p]}, {4 * (p * nc + c)}(x4)")


def _explicit_block(e: Emitter, cb, pb, sw, sx, nc, iters):
    """XpulpV2 uniform: explicit post-increment loads, GP-RF operands."""
    wp = [f"x{18 + c}" for c in range(cb)]
    xp = [f"x{22 + p}" for p in range(pb)]
    wv = [f"x{24 + c}" for c in range(cb)]
    xv = [f"x{28 + p}" for p in range(pb)]
    for c in range(cb):
        e(f"addi {wp[c]}, x2, {c * sw}")
    for p in range(pb):
        e(f"addi {xp[p]}, x3, {p * sx}")
    for i in range(cb * pb):
        e(f"mv {_ACC[i]}, x0")
    end = e.fresh("blk_end")
    e(f"lp.setupi 0, {iters}, {end}")
    for p in range(pb):
        e(f"p.lw {xv[p]}, 4({xp[p]}!)")
    for c in range(cb):
        e(f"p.lw {wv[c]}, 4({wp[c]}!)")
    for c in range(cb):
        for p in range(pb):
            e(f"pv.sdotusp {_ACC[c * pb + p]}, {xv[p]}, {wv[c]}")
    e.label(end)
    _stores(e, cb, pb, nc)


def _unpack_block(e: Emitter, a, b, cb, pb, sw, sx, nc, iters):
    """Mixed precision without Flex-V: widen each weight word to ``a`` bits
    with extract/insert pairs, then run uniform sdotp at ``a`` bits."""
    r = a // b
    lanes = 32 // a
    wv = [f"x{18 + c}" for c in range(cb)]
    xv = {(p, j): f"x{22 + p * r + j}" for p in range(pb) for j in range(r)}
    uv = [f"x{5 + j}" for j in range(r)]
    tmp = "x9"
    for i in range(cb * pb):
        e(f"mv {_ACC[i]}, x0")
    end = e.fresh("blk_end")
    e(f"lp.setupi 0, {iters}, {end}")
    for c in range(cb):
        e(f"lw {wv[c]}, {c * sw}(x2)")
    for p in range(pb):
        for j in range(r):
            e(f"lw {xv[(p, j)]}, {p * sx + 4 * j}(x3)")
    e("addi x2, x2, 4")
    e(f"addi x3, x3, {4 * r}")
    for c in range(cb):
        for j in range(r):
            for lane in range(lanes):
                e(f"p.extract {tmp}, {wv[c]}, {b - 1}, {(j * lanes + lane) * b}")
                e(f"p.insert {uv[j]}, {tmp}, {a - 1}, {lane * a}")
        for p in range(pb):
            for j in range(r):
                e(f"pv.sdotusp {_ACC[c * pb + p]}, {xv[(p, j)]}, {uv[j]}")
    e.label(end)
    _stores(e, cb, pb, nc)
