"""Cycle-stepped model of the 8-core Flex-V cluster.

Each cycle every core that is not stalled tries to issue one instruction.
Memory operations on the L1 scratchpad first compete for their bank; the
losers retry next cycle.  The DMA engine joins the same arbitration with its
L1-side ports.  Functional behaviour comes from :mod:`shaheen_sim.isa`; this
module only decides *when* each instruction executes.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, asdict

from . import isa
from .isa import CoreState, SimulationError, M32

L1_BASE = 0x10000000
L2_BASE = 0x1C000000
L2_SIZE = 0x100000
PERIPH_BASE = 0x1A100000
PERIPH_SIZE = 0x1000

STALL_CAUSES = ("fill", "bank-conflict", "load-use", "icache", "fpu", "dma-wait", "barrier",
                "branch", "external", "other")


class DeadlockError(SimulationError):
    """No core and no DMA made progress for ``deadlock_cycles`` cycles."""


class CycleLimitError(SimulationError):
    pass


@dataclass
class ClusterConfig:
    n_cores: int = 8
    n_banks: int = 16
    bank_size: int = 16 * 1024
    l1_base: int = L1_BASE
    l2_base: int = L2_BASE
    l2_size: int = L2_SIZE
    periph_base: int = PERIPH_BASE
    periph_size: int = PERIPH_SIZE
    clock_hz: float = 500e6
    isa: str = "flexv"
    # instruction cache
    icache_line: int = 16
    icache_private: int = 512
    icache_shared: int = 4096
    icache_shared_ways: int = 4
    icache_shared_latency: int = 2
    icache_refill_latency: int = 12
    # pipeline
    pipeline_fill: int = 3
    load_latency: int = 2
    branch_penalty: int = 1
    fp_latency: int = 2
    divsqrt_latency: int = 11
    int_div_latency: int = 8
    ext_latency: int = 12
    # DMA: bytes per cycle on the interconnect side and the L1 side
    dma_ext_bytes: int = 8
    dma_l1_bytes: int = 16
    dma_setup: int = 4
    deadlock_cycles: int = 20000

    def __post_init__(self):
        if self.n_banks <= 0 or self.n_banks & (self.n_banks - 1):
            raise ValueError("bank count must be a power of two")
        if self.n_cores < 1:
            raise ValueError("need at least one core")
        wins = sorted([(self.l1_base, self.l1_size), (self.l2_base, self.l2_size),
                       (self.periph_base, self.periph_size)])
        for (a, la), (b, _) in zip(wins, wins[1:]):
            if a + la > b:
                raise ValueError("cluster address windows overlap")

    @property
    def l1_size(self) -> int:
        return self.n_banks * self.bank_size

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown cluster config keys: {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def tcdm_map(addr: int, cfg: ClusterConfig | None = None) -> tuple[int, int]:
    """(bank, byte offset within bank) of an L1 address; word interleaved."""
    cfg = cfg or ClusterConfig()
    rel = addr - cfg.l1_base
    if not 0 <= rel < cfg.l1_size:
        raise ValueError(f"0x{addr:08x} is outside the L1 window")
    word = rel >> 2
    return word & (cfg.n_banks - 1), (word // cfg.n_banks) * 4 + (rel & 3)


# ---------------------------------------------------------------------------
# External memory port
# ---------------------------------------------------------------------------

class SimpleExternalPort:
    """Flat L2 plus a sparse backing store, fixed latency, no translation.

    The SoC module supplies a richer port (IOTLB, HyperRAM); this one keeps
    the cluster usable on its own.
    """

    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.l2 = bytearray(cfg.l2_size)
        self.other: dict[int, int] = {}
        self.latency = cfg.ext_latency

    def _in_l2(self, addr, n):
        return 0 <= addr - self.cfg.l2_base and addr - self.cfg.l2_base + n <= self.cfg.l2_size

    def read_block(self, addr: int, n: int):
        if self._in_l2(addr, n):
            off = addr - self.cfg.l2_base
            return bytes(self.l2[off:off + n]), self.latency, False
        return bytes(self.other.get(addr + k, 0) for k in range(n)), self.latency, False

    def write_block(self, addr: int, data: bytes):
        if self._in_l2(addr, len(data)):
            off = addr - self.cfg.l2_base
            self.l2[off:off + len(data)] = data
        else:
            for k, b in enumerate(data):
                self.other[addr + k] = b
        return self.latency, False

    def fetch_latency(self, addr: int) -> int:
        return self.cfg.icache_refill_latency


# ---------------------------------------------------------------------------
# Instruction cache
# ---------------------------------------------------------------------------

class ICache:
    """Private direct-mapped caches in front of one shared set-associative
    cache; true tag arrays, LRU in the shared level."""

    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.priv_lines = cfg.icache_private // cfg.icache_line
        self.priv = [[-1] * self.priv_lines for _ in range(cfg.n_cores)]
        self.sets = cfg.icache_shared // (cfg.icache_line * cfg.icache_shared_ways)
        self.shared = [[] for _ in range(self.sets)]  # MRU last
        self.shift = cfg.icache_line.bit_length() - 1
        self.hits = [0, 0, 0]  # private, shared, miss

    def fetch(self, core: int, pc: int, port) -> int:
        """Extra cycles needed before the instruction at ``pc`` can issue."""
        line = pc >> self.shift
        slot = line % self.priv_lines
        if self.priv[core][slot] == line:
            self.hits[0] += 1
            return 0
        self.priv[core][slot] = line
        ways = self.shared[line % self.sets]
        if line in ways:
            ways.remove(line)
            ways.append(line)
            self.hits[1] += 1
            return self.cfg.icache_shared_latency
        ways.append(line)
        if len(ways) > self.cfg.icache_shared_ways:
            ways.pop(0)
        self.hits[2] += 1
        return port.fetch_latency(pc) + self.cfg.icache_shared_latency

    def warm(self, pcs) -> None:
        for pc in pcs:
            for core in range(self.cfg.n_cores):
                self.fetch(core, pc, _ZeroPort)
        self.hits = [0, 0, 0]


class _ZeroPort:
    @staticmethod
    def fetch_latency(addr):
        return 0


# ---------------------------------------------------------------------------
# DMA
# ---------------------------------------------------------------------------

@dataclass
class DmaTransfer:
    src: int
    dst: int
    length: int
    count: int = 1
    src_stride: int = 0
    dst_stride: int = 0
    event: int = 0

    def __post_init__(self):
        if self.length <= 0 or self.count <= 0:
            raise ValueError("DMA length and count must be positive")
        if self.length % 4 or self.src % 4 or self.dst % 4 or self.src_stride % 4 \
                or self.dst_stride % 4:
            raise ValueError("DMA transfers must be word aligned")

    @property
    def total_bytes(self) -> int:
        return self.length * self.count

    def word_addrs(self, i: int) -> tuple[int, int]:
        per_row = self.length // 4
        row, col = divmod(i, per_row)
        return (self.src + row * self.src_stride + 4 * col,
                self.dst + row * self.dst_stride + 4 * col)


class _ActiveDma:
    def __init__(self, t: DmaTransfer, start: int, data: bytes, fault: bool,
                 src_l1: bool, dst_l1: bool, words_per_cycle: int):
        self.t = t
        self.ready = start
        self.data = bytearray(data)
        self.fault = fault
        self.src_l1 = src_l1
        self.dst_l1 = dst_l1
        self.words_per_cycle = words_per_cycle
        self.next = 0
        self.total = t.total_bytes // 4


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass
class CycleStats:
    total_cycles: int = 0
    issued: list = field(default_factory=list)
    stalls: list = field(default_factory=list)
    macs: list = field(default_factory=list)
    flops: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    dma_active_cycles: int = 0
    dma_exposed_cycles: int = 0
    dma_bytes: int = 0
    icache: list = field(default_factory=list)

    @property
    def mac_count(self) -> int:
        return sum(self.macs)

    def region(self) -> dict:
        """MACs, FLOPs and cycles between the PERFMARK start/stop marks."""
        starts = [m for marks in self.marks for m in marks if m[1] == 1]
        stops = [m for marks in self.marks for m in marks if m[1] == 0]
        if not starts or not stops:
            return {"cycles": self.total_cycles, "macs": self.mac_count,
                    "flops": sum(self.flops)}
        macs = flops = 0
        for marks in self.marks:
            s = [m for m in marks if m[1] == 1]
            e = [m for m in marks if m[1] == 0]
            if s and e:
                macs += e[-1][2] - s[0][2]
                flops += e[-1][3] - s[0][3]
        cycles = max(m[0] for m in stops) - min(m[0] for m in starts)
        return {"cycles": cycles, "macs": macs, "flops": flops}

    def mac_per_cycle(self) -> float:
        r = self.region()
        return r["macs"] / r["cycles"] if r["cycles"] else 0.0

    def flop_per_cycle(self) -> float:
        r = self.region()
        return r["flops"] / r["cycles"] if r["cycles"] else 0.0

    @property
    def dma_overlap(self) -> float:
        if not self.dma_active_cycles:
            return 0.0
        return 1.0 - self.dma_exposed_cycles / self.dma_active_cycles

    def to_dict(self) -> dict:
        d = asdict(self)
        d["region"] = self.region()
        d["dma_overlap"] = self.dma_overlap
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# Per-instruction timing metadata
# ---------------------------------------------------------------------------

_DIV_OPS = {"div", "divu", "rem", "remu"}


class _Decoded:
    __slots__ = ("ins", "fn", "srcs", "dests", "lat", "mem", "cls", "divsqrt", "ctl")

    def __init__(self, ins: isa.Instr, cfg: ClusterConfig):
        self.ins = ins
        self.fn = isa.semantic(ins)
        self.cls = ins.opclass
        self.srcs = tuple(r for r in ins.sources() if r)
        dests = [r for r in ins.dests() if r]
        cls = self.cls
        self.divsqrt = cls == "fp-fma" and ins.spec.latency == "divsqrt"
        self.mem = cls in ("load", "store", "mlsdotp")
        self.ctl = cls in ("branch", "jump")
        lat = {}
        for r in dests:
            if cls == "load":
                lat[r] = cfg.load_latency if r == ins.rd else 1
            elif cls in ("fp-fma", "fp-simd-fma"):
                lat[r] = cfg.divsqrt_latency if self.divsqrt else cfg.fp_latency
            elif cls == "mul" and ins.op in _DIV_OPS:
                lat[r] = cfg.int_div_latency
            else:
                lat[r] = 1
        self.lat = tuple(lat.items())
        self.dests = tuple(lat)


# ---------------------------------------------------------------------------
# The cluster
# ---------------------------------------------------------------------------

class _CoreTiming:
    __slots__ = ("stall_until", "stall_cause", "ready", "ready_kind", "waiting", "wait_event",
                 "issued", "stalls", "last_line", "halt_cycle")

    def __init__(self, fill: int):
        self.stall_until = fill
        self.stall_cause = "fill"
        self.ready = [0] * (isa.N_GP + isa.N_NN)
        self.ready_kind = ["other"] * (isa.N_GP + isa.N_NN)
        self.waiting = None
        self.wait_event = 0
        self.issued = 0
        self.stalls = dict.fromkeys(STALL_CAUSES, 0)
        self.last_line = -1
        self.halt_cycle = None


class Cluster:
    """One cluster instance: cores, L1, I-cache, DMA and event unit."""

    def __init__(self, cfg: ClusterConfig | None = None, port=None, trace=None):
        self.cfg = cfg or ClusterConfig()
        self.port = port if port is not None else SimpleExternalPort(self.cfg)
        self.l1 = bytearray(self.cfg.l1_size)
        self.periph = bytearray(self.cfg.periph_size)
        self.icache = ICache(self.cfg)
        self.trace = trace
        self.cycle = 0
        self.decoded: dict[int, _Decoded] = {}
        self.cores: list[CoreState] = []
        self.timing: list[_CoreTiming] = []
        self.rr = [0] * self.cfg.n_banks
        self.barrier_arrived: set[int] = set()
        self.divsqrt_busy_until = 0
        self.dma_queue: deque[DmaTransfer] = deque()
        self.dma_active: _ActiveDma | None = None
        self.dma_events = 0
        self.dma_done: dict[int, bool] = {}
        self.dma_regs: dict[int, dict] = {}
        self.dma_faults: list[dict] = []
        self.stats = CycleStats()
        self.last_active = 0
        self._ext_penalty = 0
        self._cur = 0
        self.reset_cores(0)

    # -- setup ---------------------------------------------------------------
    def reset_cores(self, entry: int) -> None:
        n = self.cfg.n_cores
        self.cores = [CoreState(core_id=i, n_cores=n, isa=self.cfg.isa, pc=entry)
                      for i in range(n)]
        self.timing = [_CoreTiming(self.cycle + self.cfg.pipeline_fill) for _ in range(n)]
        self.barrier_arrived = set()

    def load_program(self, prog, entry: int | None = None, load_data: bool = True) -> None:
        self.decoded = {ins.pc: _Decoded(ins, self.cfg) for ins in prog.instructions}
        self.program = prog
        if load_data:
            for seg in prog.data:
                self.write_bytes(seg.address, seg.data)
        self.reset_cores(prog.entry if entry is None else entry)

    def warm_icache(self) -> None:
        self.icache.warm(sorted(self.decoded))

    def _in_l1(self, addr: int, n: int = 1) -> bool:
        rel = addr - self.cfg.l1_base
        return 0 <= rel and rel + n <= self.cfg.l1_size

    def _in_periph(self, addr: int, n: int = 1) -> bool:
        rel = addr - self.cfg.periph_base
        return 0 <= rel and rel + n <= self.cfg.periph_size

    def write_bytes(self, addr: int, data: bytes) -> None:
        if self._in_l1(addr, len(data)):
            off = addr - self.cfg.l1_base
            self.l1[off:off + len(data)] = data
        elif self._in_periph(addr, len(data)):
            off = addr - self.cfg.periph_base
            self.periph[off:off + len(data)] = data
        else:
            self.port.write_block(addr, bytes(data))

    def read_bytes(self, addr: int, n: int) -> bytes:
        if self._in_l1(addr, n):
            off = addr - self.cfg.l1_base
            return bytes(self.l1[off:off + n])
        if self._in_periph(addr, n):
            off = addr - self.cfg.periph_base
            return bytes(self.periph[off:off + n])
        return self.port.read_block(addr, n)[0]

    # -- environment hooks used by isa semantics -----------------------------
    def load(self, addr: int, size: int) -> int:
        rel = addr - self.cfg.l1_base
        if 0 <= rel <= self.cfg.l1_size - size:
            return int.from_bytes(self.l1[rel:rel + size], "little")
        if self._in_periph(addr, size):
            off = addr - self.cfg.periph_base
            return int.from_bytes(self.periph[off:off + size], "little")
        data, lat, _ = self.port.read_block(addr, size)
        self._ext_penalty = max(self._ext_penalty, lat)
        return int.from_bytes(data, "little")

    def store(self, addr: int, size: int, value: int) -> None:
        rel = addr - self.cfg.l1_base
        if 0 <= rel <= self.cfg.l1_size - size:
            self.l1[rel:rel + size] = value.to_bytes(size, "little")
            return
        if self._in_periph(addr, size):
            off = addr - self.cfg.periph_base
            self.periph[off:off + size] = value.to_bytes(size, "little")
            return
        lat, _ = self.port.write_block(addr, value.to_bytes(size, "little"))
        self._ext_penalty = max(self._ext_penalty, lat)

    def barrier(self, core: CoreState) -> None:
        self.timing[core.core_id].waiting = "barrier"
        self.barrier_arrived.add(core.core_id)

    def dma_cfg(self, core, src, dst):
        self.dma_regs[core.core_id] = {"src": src, "dst": dst, "src_stride": 0, "dst_stride": 0}

    def dma_stride(self, core, src_stride, dst_stride):
        d = self.dma_regs.setdefault(core.core_id, {"src": 0, "dst": 0})
        d.update(src_stride=src_stride, dst_stride=dst_stride)

    def dma_start(self, core, length, count):
        d = self.dma_regs.get(core.core_id)
        if d is None:
            raise SimulationError("dma.start without dma.cfg", core.core_id, core.pc)
        try:
            t = DmaTransfer(d["src"], d["dst"], length, max(count, 1),
                            d["src_stride"], d["dst_stride"])
        except ValueError as exc:
            raise SimulationError(str(exc), core.core_id, core.pc) from None
        return self.dma_submit(t)

    def dma_wait(self, core, event):
        if event not in self.dma_done:
            t = self.timing[core.core_id]
            t.waiting = "dma"
            t.wait_event = event

    # -- DMA -----------------------------------------------------------------
    def dma_submit(self, t: DmaTransfer) -> int:
        self.dma_events += 1
        t.event = self.dma_events
        self.dma_queue.append(t)
        self._log(-1, "dma-submit", f"ev={t.event} src=0x{t.src:08x} dst=0x{t.dst:08x} "
                                    f"len={t.length} count={t.count}")
        return t.event

    def _dma_begin(self, t: DmaTransfer) -> _ActiveDma:
        src_l1 = self._in_l1(t.src)
        dst_l1 = self._in_l1(t.dst)
        data = bytearray()
        fault = False
        lat = 0
        for row in range(t.count):
            a = t.src + row * t.src_stride
            if src_l1:
                data += self.l1[a - self.cfg.l1_base:a - self.cfg.l1_base + t.length]
            else:
                blob, l, f = self.port.read_block(a, t.length)
                data += blob
                fault |= f
                lat = max(lat, l)
        ext = not (src_l1 and dst_l1)
        wpc = (self.cfg.dma_ext_bytes if ext else self.cfg.dma_l1_bytes) // 4
        start = self.cycle + self.cfg.dma_setup + (lat if not src_l1 else 0)
        return _ActiveDma(t, start, bytes(data), fault, src_l1, dst_l1, max(wpc, 1))

    def _dma_requests(self) -> list[tuple[int, int]]:
        a = self.dma_active
        if a is None and self.dma_queue:
            a = self.dma_active = self._dma_begin(self.dma_queue.popleft())
        if a is None or self.cycle < a.ready:
            return []
        out = []
        for k in range(a.next, min(a.next + a.words_per_cycle, a.total)):
            s, d = a.t.word_addrs(k)
            l1_addr = d if a.dst_l1 else (s if a.src_l1 else None)
            bank = ((l1_addr - self.cfg.l1_base) >> 2) & (self.cfg.n_banks - 1) \
                if l1_addr is not None else -1
            out.append((bank, k))
        return out

    def _dma_commit(self, words: list[int]) -> bool:
        a = self.dma_active
        if not words:
            return False
        t = a.t
        for k in words:
            _, d = t.word_addrs(k)
            if a.dst_l1:
                off = d - self.cfg.l1_base
                self.l1[off:off + 4] = a.data[4 * k:4 * k + 4]
        a.next = words[-1] + 1
        self.stats.dma_bytes += 4 * len(words)
        if a.next >= a.total:
            if not a.dst_l1:
                for row in range(t.count):
                    blob = bytes(a.data[row * t.length:(row + 1) * t.length])
                    _, f = self.port.write_block(t.dst + row * t.dst_stride, blob)
                    a.fault |= f
            self.dma_done[t.event] = a.fault
            if a.fault:
                self.dma_faults.append({"event": t.event, "src": t.src, "dst": t.dst})
            self._log(-1, "dma-done", f"ev={t.event} fault={int(a.fault)}")
            self.dma_active = None
        return True

    # -- main loop -------------------------------------------------------------
    def _log(self, core: int, event: str, detail: str = "") -> None:
        if self.trace is not None:
            self.trace.append(f"{self.cycle},{core},{event},{detail}")

    def step_cycle(self) -> bool:
        """Advance one cycle; returns True if anything made progress."""
        c = self.cycle
        cfg = self.cfg
        nb_mask = cfg.n_banks - 1
        l1_base, l1_size = cfg.l1_base, cfg.l1_size
        requests: dict[int, list[int]] = {}
        ready_to_issue = []
        for cid, core in enumerate(self.cores):
            if core.halted:
                continue
            t = self.timing[cid]
            if t.waiting is not None:
                if t.waiting == "dma" and t.wait_event in self.dma_done:
                    t.waiting = None
                else:
                    t.stalls["barrier" if t.waiting == "barrier" else "dma-wait"] += 1
                    continue
            if t.stall_until > c:
                t.stalls[t.stall_cause] += 1
                continue
            dec = self.decoded.get(core.pc)
            if dec is None:
                core.halted = True
                t.halt_cycle = c
                self._log(cid, "halt", f"pc=0x{core.pc:08x}")
                continue
            line = core.pc >> self.icache.shift
            if line != t.last_line:
                t.last_line = line
                extra = self.icache.fetch(cid, core.pc, self.port)
                if extra:
                    t.stall_until = c + extra
                    t.stall_cause = "icache"
                    t.stalls["icache"] += 1
                    continue
            ready = t.ready
            blocked = None
            for r in dec.srcs:
                if ready[r] > c:
                    blocked = r
                    break
            if blocked is not None:
                t.stalls[t.ready_kind[blocked]] += 1
                continue
            if dec.divsqrt and self.divsqrt_busy_until > c:
                t.stalls["fpu"] += 1
                continue
            if dec.mem:
                ins = dec.ins
                base = core.regs[ins.rs1]
                addr = base if ins.post_increment else (base + ins.imm) & M32
                rel = addr - l1_base
                if 0 <= rel < l1_size:
                    requests.setdefault((rel >> 2) & nb_mask, []).append(cid)
            ready_to_issue.append(cid)

        # DMA joins the arbitration with requester ids >= n_cores
        dma_reqs = self._dma_requests() if (self.dma_active or self.dma_queue) else []
        dma_ids = {}
        for k, (bank, word) in enumerate(dma_reqs):
            if bank >= 0:
                rid = cfg.n_cores + k
                requests.setdefault(bank, []).append(rid)
                dma_ids[rid] = word
        losers = set()
        for bank, reqs in requests.items():
            if len(reqs) == 1:
                self.rr[bank] = reqs[0]
                continue
            n_req = cfg.n_cores + 4
            last = self.rr[bank]
            winner = min(reqs, key=lambda r: (r - last - 1) % n_req)
            self.rr[bank] = winner
            losers.update(r for r in reqs if r != winner)

        progress = False
        if dma_reqs:
            granted = []
            for k, (bank, word) in enumerate(dma_reqs):
                if bank >= 0 and cfg.n_cores + k in losers:
                    break
                granted.append(word)
            if self._dma_commit(granted):
                progress = True
                self.last_active = c + 1
        if self.dma_active is not None or dma_reqs:
            self.stats.dma_active_cycles += 1
            if any(t.waiting == "dma" for t in self.timing):
                self.stats.dma_exposed_cycles += 1

        for cid in ready_to_issue:
            if cid in losers:
                self.timing[cid].stalls["bank-conflict"] += 1
                continue
            self._issue(cid, c)
            progress = True
            self.last_active = c + 1

        self._release_barrier(c)
        self.cycle = c + 1
        return progress

    def _issue(self, cid: int, c: int) -> None:
        core = self.cores[cid]
        t = self.timing[cid]
        dec = self.decoded[core.pc]
        ins = dec.ins
        pc = core.pc
        core.cycle = c
        self._ext_penalty = 0
        try:
            dec.fn(core, ins, self)
        except SimulationError as exc:
            if exc.core is None:
                exc.core, exc.pc = cid, pc
            raise
        t.issued += 1
        for r, lat in dec.lat:
            t.ready[r] = c + lat
            t.ready_kind[r] = "load-use" if dec.cls == "load" else (
                "fpu" if dec.cls.startswith("fp") else "other")
        if dec.divsqrt:
            self.divsqrt_busy_until = c + self.cfg.divsqrt_latency
        nxt = (pc + 4) & M32
        if core.pc == nxt:
            isa.hwloop_redirect(core, nxt)
        elif dec.ctl:
            t.stall_until = c + 1 + self.cfg.branch_penalty
            t.stall_cause = "branch"
        if self._ext_penalty:
            t.stall_until = max(t.stall_until, c + self._ext_penalty)
            t.stall_cause = "external"
            for r, _ in dec.lat:
                t.ready[r] = max(t.ready[r], c + self._ext_penalty)
        if self.trace is not None:
            self._log(cid, "issue", f"0x{pc:08x} {ins.op}")
        if core.halted:
            t.halt_cycle = c + 1
            self._log(cid, "halt", "ecall")

    def _release_barrier(self, c: int) -> None:
        if not self.barrier_arrived:
            return
        live = {i for i, core in enumerate(self.cores) if not core.halted}
        if live <= self.barrier_arrived:
            for i in self.barrier_arrived:
                self.timing[i].waiting = None
            self._log(-1, "barrier-release", ",".join(map(str, sorted(self.barrier_arrived))))
            self.barrier_arrived = set()

    def done(self) -> bool:
        return all(core.halted for core in self.cores) and self.dma_active is None \
            and not self.dma_queue

    def run_to_completion(self, max_cycles: int = 50_000_000) -> CycleStats:
        idle = 0
        while not self.done():
            if self.cycle >= max_cycles:
                raise CycleLimitError(f"cycle limit {max_cycles} reached")
            if self.step_cycle():
                idle = 0
            else:
                # stalls that are counting down are progress too
                if any(not core.halted and t.waiting is None
                       for core, t in zip(self.cores, self.timing)) or \
                        (self.dma_active is not None and self.cycle <= self.dma_active.ready):
                    idle = 0
                else:
                    idle += 1
                if idle >= self.cfg.deadlock_cycles:
                    raise DeadlockError(
                        f"no progress for {idle} cycles at cycle {self.cycle}")
        return self.collect_stats()

    def collect_stats(self) -> CycleStats:
        s = self.stats
        s.total_cycles = self.last_active
        s.issued = [t.issued for t in self.timing]
        s.stalls = [dict(t.stalls) for t in self.timing]
        s.macs = [core.macs for core in self.cores]
        s.flops = [core.flops for core in self.cores]
        s.marks = [list(core.marks) for core in self.cores]
        s.icache = list(self.icache.hits)
        return s


def run_program(prog, cfg: ClusterConfig | None = None, port=None, warm: bool = False,
                max_cycles: int = 50_000_000, trace=None) -> tuple[Cluster, CycleStats]:
    """Assemble-free convenience: load ``prog``, run all cores, return stats."""
    cl = Cluster(cfg, port, trace)
    cl.load_program(prog)
    if warm:
        cl.warm_icache()
    stats = cl.run_to_completion(max_cycles)
    return cl, stats
