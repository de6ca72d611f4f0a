"""Shared pieces of the kernel generators: kernel records, the per-core work
table, packing helpers and the run/report driver."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .. import asm
from ..cluster import Cluster, ClusterConfig, CycleStats, L1_BASE
from ..isa import SimdFormat, FpFormat

MODES = ("flexv", "xpulpnn", "xpulpv2")
TABLE3_PAIRS = ((2, 2), (4, 2), (4, 4), (8, 2), (8, 4), (8, 8))


@dataclass
class KernelSpec:
    kind: str  # matmul-int | matmul-fp | conv1d
    dims: dict
    a_width: int = 8
    b_width: int = 8
    fp: FpFormat | None = None
    mode: str = "flexv"
    cores: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("matmul-int", "matmul-fp", "conv1d"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kind == "matmul-int":
            SimdFormat(self.a_width, self.b_width)  # validates the pair
            if (self.a_width, self.b_width) not in TABLE3_PAIRS:
                raise ValueError(f"precision pair {(self.a_width, self.b_width)} "
                                 "is not a MatMul table pair")
            if self.mode == "xpulpv2" and self.a_width < 8:
                raise ValueError("XpulpV2 has no SIMD narrower than 8 bits")

    @property
    def name(self) -> str:
        if self.kind == "matmul-int":
            return f"matmul-int-{self.mode}-a{self.a_width}w{self.b_width}-c{self.cores}"
        if self.kind == "matmul-fp":
            return f"matmul-fp-{self.fp.kind}-c{self.cores}"
        return f"conv1d-c{self.cores}"


@dataclass
class Kernel:
    spec: KernelSpec
    source: str
    program: asm.AssembledProgram
    expected: np.ndarray
    out_addr: int
    out_dtype: str
    macs: int
    flops: int = 0
    meta: dict = field(default_factory=dict)

    def output(self, cluster: Cluster) -> np.ndarray:
        dt = np.dtype(self.out_dtype)
        raw = cluster.read_bytes(self.out_addr, self.expected.size * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(self.expected.shape)

    def check(self, cluster: Cluster) -> bool:
        got = self.output(cluster)
        if self.out_dtype.startswith("int"):
            return bool(np.array_equal(got, self.expected))
        return bool(np.array_equal(got.view(np.uint16 if got.itemsize == 2 else np.uint32),
                                   self.expected.view(np.uint16 if got.itemsize == 2
                                                      else np.uint32)))


@dataclass
class BenchReport:
    name: str
    mac_per_cycle: float
    total_cycles: int
    region_cycles: int
    macs: int
    flops: int
    gops: float
    gflops: float
    correct: bool
    stalls: dict
    clock_hz: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def isa_for_mode(mode: str) -> str:
    return mode


def run_kernel(kernel: Kernel, cfg: ClusterConfig | None = None, port=None,
               warm: bool = False, trace=None) -> tuple[BenchReport, CycleStats, Cluster]:
    spec = kernel.spec
    base = cfg or ClusterConfig()
    d = base.to_dict()
    d.update(n_cores=spec.cores, isa=isa_for_mode(spec.mode))
    cfg = ClusterConfig.from_dict(d)
    cl = Cluster(cfg, port, trace)
    cl.load_program(kernel.program)
    if warm:
        cl.warm_icache()
    stats = cl.run_to_completion()
    region = stats.region()
    cycles = region["cycles"]
    mpc = kernel.macs / cycles if cycles else 0.0
    fpc = kernel.flops / cycles if cycles else 0.0
    stalls: dict = {}
    for per_core in stats.stalls:
        for k, v in per_core.items():
            stalls[k] = stalls.get(k, 0) + v
    rep = BenchReport(
        name=spec.name, mac_per_cycle=mpc, total_cycles=stats.total_cycles,
        region_cycles=cycles, macs=kernel.macs, flops=kernel.flops,
        gops=2 * mpc * cfg.clock_hz / 1e9, gflops=fpc * cfg.clock_hz / 1e9,
        correct=kernel.check(cl), stalls=stalls, clock_hz=cfg.clock_hz,
        meta=dict(kernel.meta, counted_macs=region["macs"], counted_flops=region["flops"]))
    return rep, stats, cl


# ---------------------------------------------------------------------------
# Packing and layout helpers
# ---------------------------------------------------------------------------

def pack_rows(values: np.ndarray, width: int) -> np.ndarray:
    """Pack each row of small integers into little-endian 32-bit words."""
    per_word = 32 // width
    rows, k = values.shape
    if k % per_word:
        raise ValueError("row length must fill whole words")
    v = (values.astype(np.int64) & ((1 << width) - 1)).reshape(rows, k // per_word, per_word)
    shifts = np.arange(per_word, dtype=np.int64) * width
    return (v << shifts).sum(axis=2).astype(np.uint32)


def rows_to_bytes(words: np.ndarray, stride: int) -> bytes:
    """Serialise packed rows with a byte stride (>= row size, multiple of 4)."""
    rows, wpr = words.shape
    out = np.zeros((rows, stride // 4), dtype="<u4")
    out[:, :wpr] = words
    return out.tobytes()


class L1Allocator:
    def __init__(self, base: int = L1_BASE, size: int = 256 * 1024):
        self.base = base
        self.ptr = base
        self.end = base + size

    def alloc(self, n: int, align: int = 4) -> int:
        self.ptr = (self.ptr + align - 1) // align * align
        addr = self.ptr
        self.ptr += n
        if self.ptr > self.end:
            raise ValueError("kernel data does not fit in L1")
        return addr


class Emitter:
    """Accumulates assembly text."""

    def __init__(self):
        self.lines: list[str] = []
        self._labels = 0

    def __call__(self, line: str) -> None:
        self.lines.append("    " + line)

    def label(self, name: str) -> None:
        self.lines.append(f"{name}:")

    def fresh(self, stem: str) -> str:
        self._labels += 1
        return f"{stem}_{self._labels}"

    def data(self, addr: int, blob: bytes, label: str | None = None) -> None:
        self.lines.append(f"    .data 0x{addr:08x}")
        if label:
            self.lines.append(f"{label}:")
        for i in range(0, len(blob), 16):
            chunk = blob[i:i + 16]
            self.lines.append("    .byte " + ", ".join(str(b) for b in chunk))
        self.lines.append("    .text")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def work_table(e: Emitter, alloc: L1Allocator, per_core: list[list[tuple[int, ...]]]) -> int:
    """Emit per-core lists of work-item tuples terminated by a zero word.

    Returns the address of the header table (one pointer per core).
    """
    n = len(per_core)
    header = alloc.alloc(4 * n)
    lists = []
    for items in per_core:
        words = [w for item in items for w in item] + [0]
        addr = alloc.alloc(4 * len(words))
        lists.append(addr)
        e.data(addr, np.array(words, dtype="<u4").tobytes())
    e.data(header, np.array(lists, dtype="<u4").tobytes())
    return header


def emit_dispatch(e: Emitter, header: int, tbl_reg: str = "x1") -> None:
    """Load this core's work-list pointer into ``tbl_reg``."""
    e("csrr x5, mhartid")
    e("slli x5, x5, 2")
    e(f"li x6, 0x{header:08x}")
    e("add x6, x6, x5")
    e(f"lw {tbl_reg}, 0(x6)")


def dump_reports(reports: list[BenchReport], path_json=None, path_csv=None) -> None:
    if path_json:
        with open(path_json, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=1, sort_keys=True)
            fh.write("\n")
    if path_csv:
        cols = ["name", "mac_per_cycle", "gops", "gflops", "region_cycles", "total_cycles",
                "macs", "flops", "correct"]
        with open(path_csv, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in reports:
                d = r.to_dict()
                fh.write(",".join(_fmt(d[c]) for c in cols) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


CheckFn = Callable[[Cluster], bool]
