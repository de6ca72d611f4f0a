from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from shaheen_sim import asm
from shaheen_sim.cluster import Cluster, L1_BASE, L2_BASE
from shaheen_sim.soc import (FAULT_VALUE, HYPER_BASE, HostAgent, HyperRamController,
                             HyperRamTiming, HyperRamTopology, HyperRequest, Iotlb, IotlbEntry,
                             MemTransaction, Soc, SocConfig, amortized, binary_size, bus_bytes,
                             frontend_arbitrate, hyper_map, hyper_transfer, hyper_unmap, l2_map,
                             load_config, peak_bandwidth_bps, route)
from shaheen_sim.soc.checks import faulted_read_beats, hyper_checks, iotlb_sweep

VBASE = 0x4000_0000
PHYS = L2_BASE + 0x8_0000


# -- memory map -----------------------------------------------------------------

@pytest.mark.parametrize("addr,n,target", [
    (L2_BASE, 8, "l2"), (L2_BASE + 0xFFFF8, 8, "l2"), (L2_BASE + 0xFFFFC, 8, "fault"),
    (HYPER_BASE, 4, "hyperram"), (L1_BASE, 4, "cluster"), (0x3000_0000, 1, "fault")])
def test_route(addr, n, target):
    assert route(addr, n, hyper_capacity=32 << 20) == target


def test_route_without_hyperram():
    assert route(HYPER_BASE, 4, hyper_capacity=0) == "fault"


def test_l2_map_interleaves_words():
    assert [l2_map(L2_BASE + 8 * k)[0] for k in range(6)] == [0, 1, 2, 3, 0, 1]
    assert l2_map(L2_BASE + 0x23) == (0, 0x8 + 3)


def test_transaction_validation():
    with pytest.raises(ValueError):
        MemTransaction("write", 0, beats=2, data=b"\0" * 8)
    with pytest.raises(ValueError):
        MemTransaction("peek", 0)
    assert MemTransaction("read", L2_BASE, beats=4).nbytes == 32


# -- IOTLB ----------------------------------------------------------------------

def oracle_byte(entries, addr, is_write):
    live = [e for e in entries if e.enabled and e.virt_start <= addr < e.virt_end]
    assert len(live) <= 1
    if not live:
        return None
    e = live[0]
    if not (e.writable if is_write else e.readable):
        return None
    return addr - e.virt_start + e.phys_base


def oracle_read(soc, entries, addr, n):
    """Beat-granular oracle: a beat with any bad byte reads as the constant."""
    out = bytearray()
    const = FAULT_VALUE.to_bytes(8, "little")
    a = addr
    while a < addr + n:
        end = min((a | 7) + 1, addr + n)
        phys = [oracle_byte(entries, x, False) for x in range(a, end)]
        if any(p is None or soc.target(p) not in ("l2", "hyperram") for p in phys):
            out += bytes(const[x & 7] for x in range(a, end))
        else:
            out += bytes(soc.host_read(p, 1)[0] for p in phys)
        a = end
    return bytes(out)


@st.composite
def tables(draw):
    cuts = sorted(draw(st.sets(st.integers(0, 512), min_size=2, max_size=12)))
    entries = []
    for lo, hi in zip(cuts[::2], cuts[1::2]):
        entries.append(IotlbEntry(VBASE + lo, VBASE + hi, PHYS + draw(st.integers(0, 4096)),
                                  readable=draw(st.booleans()), writable=draw(st.booleans())))
    if draw(st.booleans()):
        # a disabled entry may sit under enabled ones without counting as overlap
        entries.append(IotlbEntry(VBASE + 100, VBASE + 300, PHYS, enabled=False))
    return draw(st.permutations(entries))


@settings(max_examples=150, deadline=None)
@given(tables(), st.integers(0, 520), st.integers(1, 40))
def test_iotlb_block_read_matches_oracle(entries, off, n):
    soc = Soc()
    soc.l2[0x8_0000:0x8_2000] = bytes((k * 13 + 5) & 0xFF for k in range(0x2000))
    soc.iotlb.program(entries)
    data, _, fault = soc.port().read_block(VBASE + off, n)
    want = oracle_read(soc, entries, VBASE + off, n)
    assert data == want
    assert fault == soc.iotlb.irq_pending


@settings(max_examples=100, deadline=None)
@given(tables(), st.integers(0, 520), st.integers(1, 24))
def test_iotlb_faulted_write_leaves_memory(entries, off, n):
    soc = Soc()
    soc.iotlb.program(entries)
    before = bytes(soc.l2)
    addr = VBASE + off
    soc.port().write_block(addr, bytes([0xA5]) * n)
    expected = bytearray(before)
    a = addr
    while a < addr + n:
        end = min((a | 7) + 1, addr + n)
        phys = [oracle_byte(entries, x, True) for x in range(a, end)]
        if all(p is not None for p in phys):
            for p in phys:
                expected[p - L2_BASE] = 0xA5
        a = end
    assert bytes(soc.l2) == bytes(expected)


def test_iotlb_lookup_reasons():
    t = Iotlb()
    t.program([IotlbEntry(0x100, 0x200, PHYS, readable=True, writable=False),
               IotlbEntry(0x300, 0x400, PHYS, enabled=False)])
    assert t.lookup(0x180).phys == PHYS + 0x80
    assert t.lookup(0x180, is_write=True).reason == "permission"
    assert t.lookup(0x380).reason == "disabled"
    assert t.lookup(0x500).reason == "no-match"
    assert t.irq_pending and len(t.clear_irq()) == 3 and not t.irq_pending


def test_iotlb_rejects_overlap_and_overflow():
    t = Iotlb()
    with pytest.raises(ValueError):
        t.program([IotlbEntry(0, 0x100, 0), IotlbEntry(0x80, 0x180, 0)])
    with pytest.raises(ValueError):
        t.program([IotlbEntry(16 * k, 16 * k + 8, 0) for k in range(33)])


def test_faulted_read_every_beat():
    soc = Soc()
    assert faulted_read_beats(soc, VBASE, 16)
    assert soc.iotlb.faults and soc.iotlb.faults[0].reason == "no-match"


def test_unrouted_translation_faults():
    soc = Soc()
    soc.iotlb.program([IotlbEntry(VBASE, VBASE + 64, 0x3000_0000)])
    data, _, fault = soc.port().read_block(VBASE, 8)
    assert fault and data == FAULT_VALUE.to_bytes(8, "little")
    assert soc.iotlb.faults[-1].reason == "unrouted"


def test_iotlb_sweep_small():
    r = iotlb_sweep(seed=1, tables=1, window=512)
    assert r["ok"] and r["checked"] == 1024


def test_mlsdotp_fault_writes_constant():
    soc = Soc()
    src = f"""
    csrwi simd_fmt, 5
    li x6, {VBASE}
    pv.mlsdotsp x0, n0, n0, n2, 4(x6!)
    ecall
"""
    cl = Cluster(soc.cfg.cluster.__class__(n_cores=1), soc.port())
    cl.load_program(asm.assemble(src))
    cl.run_to_completion()
    assert cl.cores[0].nn_rf[2] == FAULT_VALUE & 0xFFFFFFFF
    assert soc.iotlb.irq_pending


def test_translated_load_reaches_l2():
    soc = Soc()
    soc.host_write(PHYS + 8, (0x1234ABCD).to_bytes(4, "little"))
    soc.iotlb.program([IotlbEntry(VBASE, VBASE + 4096, PHYS)])
    cl = Cluster(soc.cfg.cluster.__class__(n_cores=1), soc.port())
    cl.load_program(asm.assemble(f"li x6, {VBASE + 8}\nlw x5, 0(x6)\necall"))
    cl.run_to_completion()
    assert cl.cores[0].regs[5] == 0x1234ABCD and not soc.iotlb.irq_pending


# -- HyperRAM ---------------------------------------------------------------------

SMALL = HyperRamTopology(rows_per_die=64)


def oracle_map(a, n_words):
    """16-bit words alternate between buses; CS1 covers the upper half."""
    half = 4 * n_words  # bytes behind one chip select across both buses
    cs, a = divmod(a, half)
    word, byte = divmod(a, 2)
    return word % 2, cs, 2 * (word // 2) + byte


def test_hyper_map_matches_oracle_exhaustively():
    images = set()
    for a in range(SMALL.capacity):
        m = hyper_map(a, SMALL)
        assert m == oracle_map(a, 64)
        assert hyper_unmap(*m, SMALL) == a
        images.add(m)
    assert len(images) == SMALL.capacity == 8 * 64


def test_hyper_map_bounds():
    with pytest.raises(ValueError):
        hyper_map(SMALL.capacity, SMALL)


@given(st.integers(0, 1 << 20), st.integers(0, 5000))
def test_bus_bytes_oracle(addr, n):
    b0 = sum(1 for k in range(n) if not (addr + k) >> 1 & 1)
    assert bus_bytes(addr, n) == (b0, n - b0)


def test_transfer_cost():
    topo = HyperRamTopology()
    # 64 bytes split 32/32, each bus moves 2 bytes per cycle after 3 + 6
    assert hyper_transfer(64, topo) == 9 + 16
    assert hyper_transfer(64, topo, parallel=False) == 9 + 32
    assert hyper_transfer(0, topo) == 9


def test_bandwidth_model_and_measurement():
    topo = HyperRamTopology()
    assert peak_bandwidth_bps(topo, 1) == pytest.approx(1.6e9)
    r = hyper_checks(SocConfig())
    assert r["bijective"]
    assert abs(r["bandwidth_ratio"] - 1) <= 0.10


def test_device_roundtrip_and_split_bursts():
    ctl = HyperRamController(SMALL, max_burst=16)
    blob = bytes(range(100))
    ctl.service(HyperRequest("write", 10, 100, data=blob))
    assert ctl.service(HyperRequest("read", 10, 100)).data == blob
    # 100 bytes in bursts of 16 => 7 bursts, each paying the overhead
    assert ctl.burst_cycles(0, 100) == sum(hyper_transfer(min(16, 100 - o), SMALL, o)
                                           for o in range(0, 100, 16))


def test_frontend_round_robin_single_outstanding():
    ctl = HyperRamController(SMALL)
    axi = [HyperRequest("read", 0, 32, "axi", tag=f"a{i}") for i in range(3)]
    udma = [HyperRequest("read", 64, 32, "udma", tag=f"u{i}") for i in range(2)]
    done = ctl.run(axi, udma)
    assert [c.tag for c in done] == ["a0", "u0", "a1", "u1", "a2"]
    for x, y in zip(done, done[1:]):
        assert y.start >= x.end


def test_arbitrate_empty():
    assert frontend_arbitrate(deque(), deque(), None) is None


def test_timing_validation():
    with pytest.raises(ValueError):
        HyperRamTiming(bytes_per_edge=0)
    with pytest.raises(ValueError):
        HyperRamTopology(buses=3)


def test_paper_config_per_bus():
    from importlib import resources
    path = resources.files("shaheen_sim.data").joinpath("configs/paper.json")
    cfg = load_config(path)
    assert peak_bandwidth_bps(cfg.hyper, 1) / 1e9 == pytest.approx(1.6)


def test_hyperram_access_from_cluster():
    soc = Soc()
    soc.host_write(HYPER_BASE + 0x40, (77).to_bytes(4, "little"))
    soc.iotlb.program([IotlbEntry(VBASE, VBASE + 4096, HYPER_BASE)])
    data, lat, fault = soc.port().read_block(VBASE + 0x40, 4)
    assert int.from_bytes(data, "little") == 77 and not fault
    assert lat > soc.cfg.cluster.ext_latency


# -- offload --------------------------------------------------------------------------

def program_of(n_instr):
    return asm.assemble("\n".join(["nop"] * (n_instr - 1) + ["ecall"]))


def test_offload_breakdown_4k_binary():
    prog = program_of(1024)
    assert binary_size(prog) == 4096
    agent = HostAgent()
    first = agent.offload("k", prog)
    c = agent.soc.cfg.offload
    assert first.load_state == "not-loaded"
    assert first.breakdown["code_copy"] == round(c.copy_fixed + c.copy_per_byte * 4096)
    assert first.overhead == first.breakdown["code_copy"] + c.descriptor + c.trigger + c.completion
    assert 1000 <= first.overhead <= 10000
    second = agent.offload("k", prog)
    assert second.load_state == "resident" and second.breakdown["code_copy"] == 0
    assert agent.copies["k"] == 1


def test_offload_descriptor_scales_with_entries():
    agent = HostAgent()
    prog = program_of(4)
    ents = [IotlbEntry(VBASE + 64 * k, VBASE + 64 * k + 32, PHYS) for k in range(3)]
    rec = agent.offload("k", prog, iotlb=ents)
    c = agent.soc.cfg.offload
    assert rec.breakdown["descriptor"] == c.descriptor + 3 * c.descriptor_per_entry


def test_offload_memo_matches_fresh_run():
    prog = program_of(64)
    memo = HostAgent()
    fresh = HostAgent(memoize=False)
    a = [memo.offload("k", prog).breakdown["compute"] for _ in range(3)]
    b = [fresh.offload("k", prog).breakdown["compute"] for _ in range(3)]
    assert a[1:] == b[1:]


def test_offload_evict_recopies():
    agent = HostAgent()
    prog = program_of(8)
    agent.offload("k", prog)
    agent.evict("k")
    assert agent.offload("k", prog).load_state == "not-loaded"
    assert agent.copies["k"] == 2


def test_amortized_copy_fraction():
    agent = HostAgent()
    prog = program_of(8)
    recs = [agent.offload("k", prog) for _ in range(10)]
    am = amortized(recs)
    assert am["parts"]["code_copy"] == recs[0].breakdown["code_copy"]
    assert am["copy_fraction"] == pytest.approx(am["parts"]["code_copy"] / am["total_cycles"])


def test_config_roundtrip():
    cfg = SocConfig()
    assert SocConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        SocConfig.from_dict({"bogus": 1})
