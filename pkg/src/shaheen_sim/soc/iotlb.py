"""Range-based IOTLB guarding cluster-initiated traffic to the host.

Each entry maps ``[virt_start, virt_end)`` onto ``phys_base`` by plain
offset arithmetic.  A miss or a permission failure raises the interrupt
flag; the access itself is absorbed: reads see the fault constant on every
beat and writes are acknowledged but dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

FAULT_VALUE = 0x0BAD0BAD0BAD0BAD
N_ENTRIES = 32


@dataclass(frozen=True)
class IotlbEntry:
    virt_start: int
    virt_end: int
    phys_base: int
    enabled: bool = True
    readable: bool = True
    writable: bool = True

    def __post_init__(self):
        if self.enabled and not self.virt_start < self.virt_end:
            raise ValueError("enabled entry needs virt_start < virt_end")

    def contains(self, addr: int) -> bool:
        return self.virt_start <= addr < self.virt_end

    @classmethod
    def from_dict(cls, d: dict) -> "IotlbEntry":
        return cls(**{k: int(v, 0) if isinstance(v, str) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"virt_start": hex(self.virt_start), "virt_end": hex(self.virt_end),
                "phys_base": hex(self.phys_base), "enabled": self.enabled,
                "readable": self.readable, "writable": self.writable}


@dataclass(frozen=True)
class Translated:
    phys: int
    entry: int


@dataclass(frozen=True)
class Fault:
    reason: str  # no-match | permission | disabled | unrouted
    addr: int
    is_write: bool


class Iotlb:
    def __init__(self, n_entries: int = N_ENTRIES, fault_value: int = FAULT_VALUE):
        self.n_entries = n_entries
        self.fault_value = fault_value & (1 << 64) - 1
        self.entries: list[IotlbEntry] = []
        self.irq_pending = False
        self.faults: list[Fault] = []

    def program(self, entries) -> None:
        entries = [e if isinstance(e, IotlbEntry) else IotlbEntry.from_dict(e) for e in entries]
        if len(entries) > self.n_entries:
            raise ValueError(f"IOTLB holds {self.n_entries} entries, got {len(entries)}")
        live = sorted((e for e in entries if e.enabled), key=lambda e: e.virt_start)
        for a, b in zip(live, live[1:]):
            if b.virt_start < a.virt_end:
                raise ValueError(f"IOTLB entries overlap at 0x{b.virt_start:x}")
        self.entries = entries

    def clear_irq(self) -> list[Fault]:
        out, self.faults, self.irq_pending = self.faults, [], False
        return out

    def lookup(self, addr: int, is_write: bool = False, record: bool = True):
        covered_disabled = False
        for i, e in enumerate(self.entries):
            if not e.contains(addr):
                continue
            if not e.enabled:
                covered_disabled = True
                continue
            if (e.writable if is_write else e.readable):
                return Translated(addr - e.virt_start + e.phys_base, i)
            return self._fault(Fault("permission", addr, is_write), record)
        reason = "disabled" if covered_disabled else "no-match"
        return self._fault(Fault(reason, addr, is_write), record)

    def _fault(self, f: Fault, record: bool) -> Fault:
        if record:
            self.irq_pending = True
            self.faults.append(f)
        return f

    def fault_unrouted(self, addr: int, is_write: bool) -> Fault:
        """Translation succeeded but the physical address maps to nothing."""
        return self._fault(Fault("unrouted", addr, is_write), True)

    def fault_byte(self, addr: int) -> int:
        """Byte of the fault constant seen at ``addr`` within its 64-bit beat."""
        return (self.fault_value >> (8 * (addr & 7))) & 0xFF

    def fault_bytes(self, addr: int, n: int) -> bytes:
        return bytes(self.fault_byte(addr + k) for k in range(n))

    def translate_block(self, addr: int, n: int, is_write: bool):
        """Per-beat translation of ``[addr, addr + n)``.

        Returns a list of (virt, phys or None, length) runs.  A beat with any
        faulting byte is faulted as a whole.
        """
        runs = []
        a, end = addr, addr + n
        while a < end:
            beat_end = min((a | 7) + 1, end)
            first = self.lookup(a, is_write, record=False)
            if isinstance(first, Translated) and self.entries[first.entry].contains(beat_end - 1):
                res = [Translated(first.phys + k, first.entry) for k in range(beat_end - a)]
            else:
                res = [self.lookup(x, is_write, record=False) for x in range(a, beat_end)]
            bad = [r for r in res if isinstance(r, Fault)]
            if bad:
                self._fault(bad[0], True)
                runs.append((a, None, beat_end - a))
            else:
                for x, r in zip(range(a, beat_end), res):
                    if runs and runs[-1][1] is not None and runs[-1][0] + runs[-1][2] == x \
                            and runs[-1][1] + runs[-1][2] == r.phys:
                        v, p, ln = runs[-1]
                        runs[-1] = (v, p, ln + 1)
                    else:
                        runs.append((x, r.phys, 1))
            a = beat_end
        return runs
