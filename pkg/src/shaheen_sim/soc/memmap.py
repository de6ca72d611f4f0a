"""Host-domain memory map, transaction record and L2 banking."""
from __future__ import annotations

from dataclasses import dataclass

from ..cluster import L1_BASE, L2_BASE, L2_SIZE, PERIPH_BASE, PERIPH_SIZE

HYPER_BASE = 0x8000_0000
L1_WINDOW = 256 * 1024
L2_BANKS = 4
BEAT = 8  # 64-bit interconnect

ORIGINATORS = ("host", "cluster", "dma", "hyper-udma")


@dataclass
class MemTransaction:
    kind: str
    address: int
    beats: int = 1
    data: bytes = b""
    originator: str = "host"

    def __post_init__(self):
        if self.kind not in ("read", "write"):
            raise ValueError(f"transaction kind must be read or write, not {self.kind!r}")
        if self.beats < 1:
            raise ValueError("a transaction carries at least one beat")
        if self.originator not in ORIGINATORS:
            raise ValueError(f"unknown originator {self.originator!r}")
        if not 0 <= self.address < 1 << 64:
            raise ValueError("address must fit in 64 bits")
        if self.kind == "write" and len(self.data) != BEAT * self.beats:
            raise ValueError("write payload must be 8 bytes per beat")

    @property
    def nbytes(self) -> int:
        return BEAT * self.beats


def route(addr: int, n: int = 1, hyper_capacity: int = 0, l2_base: int = L2_BASE,
          l2_size: int = L2_SIZE, hyper_base: int = HYPER_BASE) -> str:
    """Target of an access: 'l2', 'hyperram', 'cluster' or 'fault'."""
    end = addr + n
    if l2_base <= addr and end <= l2_base + l2_size:
        return "l2"
    if hyper_base <= addr and end <= hyper_base + hyper_capacity:
        return "hyperram"
    if L1_BASE <= addr and end <= L1_BASE + L1_WINDOW:
        return "cluster"
    if PERIPH_BASE <= addr and end <= PERIPH_BASE + PERIPH_SIZE:
        return "cluster"
    return "fault"


def route_txn(txn: MemTransaction, hyper_capacity: int = 0) -> str:
    return route(txn.address, txn.nbytes, hyper_capacity)


def l2_map(addr: int, l2_base: int = L2_BASE, l2_size: int = L2_SIZE,
           banks: int = L2_BANKS) -> tuple[int, int]:
    """(bank, byte offset in bank); banks interleave on 64-bit words."""
    rel = addr - l2_base
    if not 0 <= rel < l2_size:
        raise ValueError(f"0x{addr:08x} is outside L2")
    word = rel // BEAT
    return word % banks, (word // banks) * BEAT + rel % BEAT
