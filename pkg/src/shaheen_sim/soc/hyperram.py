"""Dual-bus HyperRAM: address interleave, burst timing, device storage and the
single-outstanding front end.

Two buses with two chip selects each.  Dies hold ``rows_per_die`` 16-bit
words (2N bytes).  The CS0 pair covers the first 4N bytes with 16-bit words
alternating between buses; the CS1 pair repeats the pattern above it.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, asdict

PAGE = 4096


@dataclass(frozen=True)
class HyperRamTiming:
    command_cycles: int = 3
    access_latency_cycles: int = 6
    bytes_per_edge: int = 1
    bus_clock_hz: float = 100e6

    def __post_init__(self):
        if self.command_cycles < 0 or self.access_latency_cycles < 0:
            raise ValueError("timing cycles must be non-negative")
        if self.bytes_per_edge < 1 or self.bus_clock_hz <= 0:
            raise ValueError("bytes_per_edge and bus_clock_hz must be positive")

    @property
    def overhead(self) -> int:
        return self.command_cycles + self.access_latency_cycles


@dataclass(frozen=True)
class HyperRamTopology:
    rows_per_die: int = 4 * 1024 * 1024
    buses: int = 2
    chip_selects_per_bus: int = 2
    timing: HyperRamTiming = field(default_factory=HyperRamTiming)

    def __post_init__(self):
        if self.buses != 2 or self.chip_selects_per_bus != 2:
            raise ValueError("the controller drives exactly 2 buses x 2 chip selects")
        if self.rows_per_die < 1:
            raise ValueError("rows_per_die must be positive")

    @property
    def die_bytes(self) -> int:
        return 2 * self.rows_per_die

    @property
    def capacity(self) -> int:
        return 4 * self.die_bytes

    @classmethod
    def from_dict(cls, d: dict) -> "HyperRamTopology":
        d = dict(d)
        t = HyperRamTiming(**d.pop("timing", {}))
        return cls(timing=t, **d)

    def to_dict(self) -> dict:
        return asdict(self)


def hyper_map(addr: int, topo: HyperRamTopology) -> tuple[int, int, int]:
    """Window offset -> (bus, chip select, byte offset in the die)."""
    if not 0 <= addr < topo.capacity:
        raise ValueError(f"HyperRAM offset 0x{addr:x} beyond capacity 0x{topo.capacity:x}")
    cs, a = divmod(addr, 2 * topo.die_bytes)
    return (a >> 1) & 1, cs, 2 * (a >> 2) + (a & 1)


def hyper_unmap(bus: int, cs: int, offset: int, topo: HyperRamTopology) -> int:
    if bus not in (0, 1) or cs not in (0, 1) or not 0 <= offset < topo.die_bytes:
        raise ValueError("no such HyperRAM location")
    return cs * 2 * topo.die_bytes + 4 * (offset >> 1) + 2 * bus + (offset & 1)


def bus_bytes(addr: int, length: int) -> tuple[int, int]:
    """Bytes landing on bus 0 and bus 1 for a burst at window offset ``addr``."""
    counts = [0, 0]
    # whole 4-byte groups split evenly; only the ragged ends need counting
    head = min(length, (-addr) % 4)
    for k in range(head):
        counts[((addr + k) >> 1) & 1] += 1
    rest = length - head
    groups, tail = divmod(rest, 4)
    counts[0] += 2 * groups
    counts[1] += 2 * groups
    base = addr + head + 4 * groups
    for k in range(tail):
        counts[((base + k) >> 1) & 1] += 1
    return counts[0], counts[1]


def hyper_transfer(length: int, topo: HyperRamTopology, addr: int = 0,
                   parallel: bool = True) -> int:
    """Bus-clock cycles for one burst.

    Each bus pays command + latency and then moves 2 * bytes_per_edge bytes
    per cycle; with ``parallel`` the two buses run side by side on their
    interleaved halves, otherwise one bus carries the whole burst.
    """
    if length < 0:
        raise ValueError("negative length")
    t = topo.timing
    per_cycle = 2 * t.bytes_per_edge
    if not parallel:
        return t.overhead + math.ceil(length / per_cycle)
    b0, b1 = bus_bytes(addr, length)
    return t.overhead + math.ceil(max(b0, b1) / per_cycle)


def peak_bandwidth_bps(topo: HyperRamTopology, buses: int = 1) -> float:
    """Asymptotic bandwidth in bit/s for ``buses`` buses in parallel."""
    t = topo.timing
    return 8 * 2 * t.bytes_per_edge * t.bus_clock_hz * buses


class HyperRamDevice:
    """Sparse storage for the four dies."""

    def __init__(self, topo: HyperRamTopology):
        self.topo = topo
        self.pages: dict[tuple[int, int, int], bytearray] = {}

    def _page(self, bus, cs, off, create):
        key = (bus, cs, off // PAGE)
        p = self.pages.get(key)
        if p is None and create:
            p = self.pages[key] = bytearray(PAGE)
        return p

    def read(self, addr: int, n: int) -> bytes:
        out = bytearray(n)
        for k in range(n):
            bus, cs, off = hyper_map(addr + k, self.topo)
            p = self._page(bus, cs, off, False)
            if p is not None:
                out[k] = p[off % PAGE]
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        for k, b in enumerate(data):
            bus, cs, off = hyper_map(addr + k, self.topo)
            self._page(bus, cs, off, True)[off % PAGE] = b

    def die_bytes(self, bus: int, cs: int, off: int, n: int) -> bytes:
        out = bytearray(n)
        for k in range(n):
            p = self._page(bus, cs, off + k, False)
            if p is not None:
                out[k] = p[(off + k) % PAGE]
        return bytes(out)


@dataclass
class HyperRequest:
    kind: str  # read | write
    addr: int
    length: int
    source: str = "axi"  # axi | udma
    data: bytes = b""
    tag: str = ""

    def __post_init__(self):
        if self.kind not in ("read", "write") or self.source not in ("axi", "udma"):
            raise ValueError("bad HyperRAM request")
        if self.length < 0:
            raise ValueError("negative length")


@dataclass
class HyperCompletion:
    tag: str
    source: str
    kind: str
    start: int
    end: int
    data: bytes = b""


def frontend_arbitrate(axi: deque, udma: deque, last: str | None):
    """Pick the next back-end request; round-robin when both sides wait."""
    if axi and udma:
        src = "udma" if last == "axi" else "axi"
    elif axi:
        src = "axi"
    elif udma:
        src = "udma"
    else:
        return None
    q = axi if src == "axi" else udma
    return src, q.popleft()


class HyperRamController:
    """Front end that lets exactly one read or write through at a time.

    Requests longer than ``max_burst`` are split; every burst pays the
    command and latency overhead again.
    """

    def __init__(self, topo: HyperRamTopology | None = None, max_burst: int = 1024,
                 device: HyperRamDevice | None = None):
        self.topo = topo or HyperRamTopology()
        self.max_burst = max_burst
        self.device = device or HyperRamDevice(self.topo)
        self.cycle = 0
        self.last: str | None = None

    def burst_cycles(self, addr: int, length: int) -> int:
        total = 0
        done = 0
        while True:
            n = min(self.max_burst, length - done)
            total += hyper_transfer(n, self.topo, addr + done)
            done += n
            if done >= length:
                return total

    def service(self, req: HyperRequest) -> HyperCompletion:
        start = self.cycle
        self.cycle += self.burst_cycles(req.addr, req.length)
        data = b""
        if req.kind == "write":
            self.device.write(req.addr, req.data[:req.length])
        else:
            data = self.device.read(req.addr, req.length)
        return HyperCompletion(req.tag, req.source, req.kind, start, self.cycle, data)

    def run(self, axi=(), udma=()) -> list[HyperCompletion]:
        qa, qu = deque(axi), deque(udma)
        out = []
        while True:
            pick = frontend_arbitrate(qa, qu, self.last)
            if pick is None:
                return out
            self.last, req = pick
            out.append(self.service(req))

    def measure_bandwidth(self, length: int, addr: int = 0) -> float:
        """Aggregate bit/s of one long read serviced from idle."""
        start = self.cycle
        self.service(HyperRequest("read", addr, length))
        cycles = self.cycle - start
        return 8 * length * self.topo.timing.bus_clock_hz / cycles
