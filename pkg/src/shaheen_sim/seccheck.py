"""Timing-channel harness for the host data cache and TLB.

A spy primes ``n`` cache lines, a Trojan touches ``s`` lines that collide
with them, and the spy times a probe of its buffer.  Without ``fence.t``
each Trojan line costs the spy exactly one miss; with it the spy always
probes a cold machine and learns nothing.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CacheConfig:
    sets: int = 256
    ways: int = 8
    line_size: int = 16
    hit_latency: int = 1
    miss_latency: int = 40

    @property
    def capacity(self) -> int:
        return self.sets * self.ways * self.line_size

    @property
    def lines(self) -> int:
        return self.sets * self.ways


class CacheModel:
    """Set-associative, LRU, write-through (stores never leave dirty lines)."""

    def __init__(self, cfg: CacheConfig | None = None):
        self.cfg = cfg or CacheConfig()
        # per set: tags ordered LRU -> MRU
        self.sets: list[list[int]] = [[] for _ in range(self.cfg.sets)]

    def locate(self, addr: int) -> tuple[int, int]:
        line = addr // self.cfg.line_size
        return line % self.cfg.sets, line // self.cfg.sets

    def access(self, addr: int) -> tuple[bool, int]:
        idx, tag = self.locate(addr)
        s = self.sets[idx]
        if tag in s:
            s.remove(tag)
            s.append(tag)
            return True, self.cfg.hit_latency
        if len(s) == self.cfg.ways:
            s.pop(0)
        s.append(tag)
        return False, self.cfg.miss_latency

    def flush(self) -> None:
        for s in self.sets:
            s.clear()

    def state(self) -> tuple:
        return tuple(tuple(s) for s in self.sets)


@dataclass(frozen=True)
class TlbConfig:
    entries: int = 16
    page_size: int = 4096
    hit_latency: int = 0
    miss_latency: int = 20


class TlbModel:
    """Fully associative LRU TLB; the walk cost is a fixed miss latency."""

    def __init__(self, cfg: TlbConfig | None = None):
        self.cfg = cfg or TlbConfig()
        self.pages: list[int] = []

    def access(self, addr: int) -> tuple[bool, int]:
        page = addr // self.cfg.page_size
        if page in self.pages:
            self.pages.remove(page)
            self.pages.append(page)
            return True, self.cfg.hit_latency
        if len(self.pages) == self.cfg.entries:
            self.pages.pop(0)
        self.pages.append(page)
        return False, self.cfg.miss_latency

    def flush(self) -> None:
        self.pages.clear()

    def state(self) -> tuple:
        return tuple(self.pages)


@dataclass(frozen=True)
class FenceConfig:
    cycles_per_set: int = 1  # one invalidation per set, no writebacks
    tlb_flush: int = 16
    fsm_reset: int = 8

    def cost(self, cache: CacheConfig) -> int:
        return cache.sets * self.cycles_per_set + self.tlb_flush + self.fsm_reset


class HostUarch:
    """Timing-relevant host state: data cache, TLB and a controller FSM."""

    def __init__(self, cache: CacheConfig | None = None, tlb: TlbConfig | None = None,
                 fence: FenceConfig | None = None):
        self.cache = CacheModel(cache)
        self.tlb = TlbModel(tlb)
        self.fence_cfg = fence or FenceConfig()
        self.fsm = "idle"

    def access(self, addr: int) -> int:
        _, lt = self.tlb.access(addr)
        _, lc = self.cache.access(addr)
        self.fsm = "busy"
        return lt + lc

    def state(self) -> tuple:
        return self.cache.state(), self.tlb.state(), self.fsm


def fence_t(uarch: HostUarch) -> tuple[HostUarch, int]:
    """Flush caches and TLB and reset the FSM; returns (state, cost cycles)."""
    uarch.cache.flush()
    uarch.tlb.flush()
    uarch.fsm = "idle"
    return uarch, uarch.fence_cfg.cost(uarch.cache.cfg)


@dataclass
class ExperimentConfig:
    n: int = 256
    trials: int = 1
    fence: bool = False
    noise: int = 0  # uniform jitter amplitude in cycles, 0 = noise-free
    seed: int = 0
    switch_cost: int = 150
    cache: CacheConfig = field(default_factory=CacheConfig)
    tlb: TlbConfig = field(default_factory=TlbConfig)
    fence_cfg: FenceConfig = field(default_factory=FenceConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.n <= self.cache.lines:
            raise ValueError(f"n must be in 0..{self.cache.lines} (cache lines)")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")


SPY_BASE = 0x0010_0000
TROJAN_BASE = 0x0040_0000


def buffer_addr(base: int, i: int, cache: CacheConfig) -> int:
    """Line ``i`` of a buffer laid out so that consecutive groups of ``ways``
    lines fill one set each."""
    way, set_idx = i % cache.ways, i // cache.ways
    return base + way * cache.sets * cache.line_size + set_idx * cache.line_size


def context_switch(uarch: HostUarch, cfg: ExperimentConfig) -> int:
    cost = cfg.switch_cost
    if cfg.fence:
        _, fc = fence_t(uarch)
        cost += fc
    return cost


def _one_run(cfg: ExperimentConfig, s: int) -> tuple[int, int]:
    """Spy probe time and context-switch cycles for secret ``s``."""
    u = HostUarch(cfg.cache, cfg.tlb, cfg.fence_cfg)
    spy = [buffer_addr(SPY_BASE, i, cfg.cache) for i in range(cfg.n)]
    for a in spy:
        u.access(a)
    switch = context_switch(u, cfg)
    for i in range(s):
        u.access(buffer_addr(TROJAN_BASE, i, cfg.cache))
    switch += context_switch(u, cfg)
    # probe newest-first so a refill never evicts a line still to be probed
    t = sum(u.access(a) for a in reversed(spy))
    return t, switch


def run_prime_probe(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    """Samples (secret, probe time) for every s in 0..n and every trial."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    base = {s: _one_run(cfg, s)[0] for s in range(cfg.n + 1)}
    for s in range(cfg.n + 1):
        for _ in range(cfg.trials):
            jitter = int(rng.integers(0, cfg.noise + 1)) if cfg.noise else 0
            out.append((s, base[s] + jitter))
    return out


def switch_overhead(cfg: ExperimentConfig) -> dict:
    """Context-switch cycles with and without the fence for this config."""
    plain = cfg.switch_cost
    fence = cfg.fence_cfg.cost(cfg.cache)
    return {"switch": plain, "fence": fence, "switch_with_fence": plain + fence}


@dataclass
class ChannelMatrix:
    secrets: np.ndarray
    times: np.ndarray  # bin lower edges (or exact values when unbinned)
    probs: np.ndarray  # probs[i, j] = p(t in bin j | s = secrets[i])

    def __post_init__(self):
        if self.probs.shape != (len(self.secrets), len(self.times)):
            raise ValueError("matrix shape does not match its axes")


def build_channel_matrix(samples, bins: int | None = None) -> ChannelMatrix:
    """Conditional probabilities p(t | s).  With ``bins`` the time axis is cut
    into that many equal-width bins, otherwise each distinct t is a column."""
    arr = np.asarray(samples, dtype=np.int64).reshape(-1, 2)
    if not len(arr):
        raise ValueError("no samples")
    secrets = np.unique(arr[:, 0])
    if bins is None:
        times = np.unique(arr[:, 1])
        col = np.searchsorted(times, arr[:, 1])
    else:
        lo, hi = arr[:, 1].min(), arr[:, 1].max()
        width = max(1, math.ceil((hi - lo + 1) / bins))
        times = lo + width * np.arange(bins)
        col = np.minimum((arr[:, 1] - lo) // width, bins - 1)
    row = np.searchsorted(secrets, arr[:, 0])
    counts = np.zeros((len(secrets), len(times)))
    np.add.at(counts, (row, col), 1)
    probs = counts / counts.sum(axis=1, keepdims=True)
    return ChannelMatrix(secrets, times, probs)


def mutual_information(m: ChannelMatrix) -> float:
    """I(S;T) in bits under a uniform prior on the secrets."""
    p = m.probs
    ps = 1.0 / p.shape[0]
    pt = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p / pt), 0.0)
    return max(0.0, float(ps * terms.sum()))


def heatmap_pixels(m: ChannelMatrix) -> np.ndarray:
    """8-bit image: secrets left to right, time increasing upwards."""
    p = m.probs.T[::-1]
    peak = p.max()
    scaled = np.zeros_like(p) if peak == 0 else p / peak
    return np.rint(255 * scaled).astype(np.uint8)


def render_heatmap(m: ChannelMatrix, path=None, fmt: str = "pgm"):
    """Write (or return) the matrix as binary PGM (P5) or CSV."""
    if fmt == "pgm":
        img = heatmap_pixels(m)
        h, w = img.shape
        blob = f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
    elif fmt == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["secret"] + [str(int(t)) for t in m.times])
        for s, row in zip(m.secrets, m.probs):
            wr.writerow([int(s)] + [repr(float(x)) for x in row])
        blob = buf.getvalue().encode()
    else:
        raise ValueError(f"unknown heatmap format {fmt!r}")
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def read_matrix_csv(text: str) -> ChannelMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    times = np.array([int(t) for t in rows[0][1:]])
    secrets = np.array([int(r[0]) for r in rows[1:]])
    probs = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return ChannelMatrix(secrets, times, probs)


def samples_csv(samples, path=None) -> bytes:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["secret", "time"])
    wr.writerows((int(s), int(t)) for s, t in samples)
    blob = buf.getvalue().encode()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def covert_experiment(n: int = 256, trials: int = 1, noise: int = 0, seed: int = 0,
                      fences=(False, True)) -> dict:
    """Run the experiment for each fence setting; MI plus matrices."""
    out = {}
    for fence in fences:
        cfg = ExperimentConfig(n=n, trials=trials, fence=fence, noise=noise, seed=seed)
        samples = run_prime_probe(cfg)
        m = build_channel_matrix(samples)
        out["fence" if fence else "nofence"] = {
            "samples": samples, "matrix": m, "mi_bits": mutual_information(m),
            "overhead": switch_overhead(cfg)}
    return out
