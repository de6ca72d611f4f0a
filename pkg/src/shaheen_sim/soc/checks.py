"""Property sweeps behind ``tlbtest`` and ``hypertest``."""
from __future__ import annotations

import numpy as np

from .host import Soc, SocConfig
from .hyperram import (HyperRamController, HyperRamTopology, hyper_map, hyper_unmap,
                       peak_bandwidth_bps)
from .iotlb import IotlbEntry

WINDOW_BASE = 0x4000_0000


def random_table(rng: np.random.Generator, soc: Soc, n: int = 32, window: int = 4096,
                 base: int = WINDOW_BASE) -> list[IotlbEntry]:
    """``n`` entries with random extents around the window, random rights and
    some disabled; enabled ones never overlap."""
    cuts = np.sort(rng.choice(np.arange(1, 2 * window), size=2 * n, replace=False))
    entries = []
    lo0 = base - window // 2
    for k in range(n):
        v0, v1 = lo0 + int(cuts[2 * k]), lo0 + int(cuts[2 * k + 1])
        if rng.random() < 0.1:  # point into a hole so the route faults
            phys = 0x3000_0000 + int(rng.integers(0, 1 << 16))
        else:
            phys = soc.cfg.l2_base + 0x80000 + int(rng.integers(0, 0x40000))
        entries.append(IotlbEntry(v0, v1, phys, enabled=bool(rng.random() < 0.85),
                                  readable=bool(rng.random() < 0.8),
                                  writable=bool(rng.random() < 0.7)))
    order = rng.permutation(n)
    return [entries[i] for i in order]


def _oracle(entries, addr, is_write, soc):
    hit = [e for e in entries if e.enabled and e.virt_start <= addr < e.virt_end]
    if len(hit) != 1:
        return None
    e = hit[0]
    if not (e.writable if is_write else e.readable):
        return None
    phys = addr - e.virt_start + e.phys_base
    return phys if soc.target(phys) in ("l2", "hyperram") else None


def iotlb_sweep(seed: int = 0, tables: int = 4, window: int = 4096,
                base: int = WINDOW_BASE) -> dict:
    """Byte-wise read and write sweep of a virtual window over random tables,
    each access checked against a brute-force per-address model."""
    rng = np.random.default_rng(seed)
    mismatches = []
    checked = faulted = 0
    for t in range(tables):
        soc = Soc(SocConfig())
        soc.l2[:] = rng.integers(0, 256, size=len(soc.l2), dtype=np.uint8).tobytes()
        entries = random_table(rng, soc, soc.cfg.iotlb_entries, window, base)
        soc.iotlb.program(entries)
        port = soc.port()
        for addr in range(base, base + window):
            want = _oracle(entries, addr, False, soc)
            got, _, fault = port.read_block(addr, 1)
            exp = soc.host_read(want, 1) if want is not None else \
                bytes([soc.iotlb.fault_byte(addr)])
            if got != exp or fault != (want is None):
                mismatches.append(("read", t, addr))
            checked += 1
        before = bytes(soc.l2)
        expected = bytearray(before)
        for addr in range(base, base + window):
            val = bytes([addr * 7 & 0xFF])
            want = _oracle(entries, addr, True, soc)
            _, fault = port.write_block(addr, val)
            if want is None:
                faulted += 1
            elif soc.target(want) == "l2":
                expected[want - soc.cfg.l2_base] = val[0]
            if fault != (want is None):
                mismatches.append(("write", t, addr))
            checked += 1
        if bytes(soc.l2) != bytes(expected):
            mismatches.append(("memory", t, None))
    return {"tables": tables, "window": window, "checked": checked,
            "faulted_writes": faulted, "mismatches": mismatches[:20],
            "n_mismatches": len(mismatches), "ok": not mismatches}


def faulted_read_beats(soc: Soc, addr: int, beats: int) -> bool:
    """True if a faulted multi-beat read returns the constant on every beat."""
    data, _, fault = soc.port().read_block(addr, 8 * beats)
    const = soc.iotlb.fault_value.to_bytes(8, "little")
    return fault and all(data[8 * k:8 * k + 8] == const for k in range(beats))


def hyper_checks(cfg: SocConfig | None = None, small_rows: int = 64,
                 burst: int = 1 << 20) -> dict:
    cfg = cfg or SocConfig()
    small = HyperRamTopology(rows_per_die=small_rows, timing=cfg.hyper.timing)
    images = set()
    bijective = True
    for a in range(small.capacity):
        m = hyper_map(a, small)
        images.add(m)
        bijective &= hyper_unmap(*m, small) == a
    bijective &= len(images) == small.capacity
    ctl = HyperRamController(cfg.hyper, cfg.max_burst)
    measured = ctl.measure_bandwidth(burst)
    model = peak_bandwidth_bps(cfg.hyper, 2)
    return {"small_capacity": small.capacity, "bijective": bool(bijective),
            "measured_gbps": measured / 1e9, "model_gbps": model / 1e9,
            "bandwidth_ratio": measured / model,
            "per_bus_gbps": peak_bandwidth_bps(cfg.hyper, 1) / 1e9,
            "aggregate_gbps": model / 1e9}
