import pytest
from hypothesis import given, settings, strategies as st

from shaheen_sim import asm, isa
from shaheen_sim.cluster import (L1_BASE, L2_BASE, Cluster, ClusterConfig, CycleLimitError,
                                 DeadlockError, DmaTransfer, run_program, tcdm_map)
from conftest import run_timed


def traced(src, cores):
    log = []
    cl, s = run_program(asm.assemble(src), ClusterConfig(n_cores=cores), warm=True, trace=log)
    rows = [line.split(",", 3) for line in log]
    return cl, s, [(int(c), int(k), ev, d) for c, k, ev, d in rows]


def issue_cycles(rows, mnemonic):
    return {core: cyc for cyc, core, ev, d in rows if ev == "issue" and d.endswith(" " + mnemonic)}


# -- address map ---------------------------------------------------------------

@pytest.mark.parametrize("off,bank,row", [(0x0, 0, 0), (0x4, 1, 0), (0x40, 0, 4), (0x3C, 15, 0)])
def test_tcdm_map(off, bank, row):
    assert tcdm_map(L1_BASE + off) == (bank, row)


@given(st.integers(0, 256 * 1024 // 4 - 1))
def test_tcdm_map_is_bijective_on_words(word):
    bank, off = tcdm_map(L1_BASE + 4 * word)
    assert bank + 16 * (off // 4) == word


def test_tcdm_outside_window():
    with pytest.raises(ValueError):
        tcdm_map(L2_BASE)


def test_config_rejects_odd_banks():
    with pytest.raises(ValueError):
        ClusterConfig(n_banks=12)


# -- pipeline timing --------------------------------------------------------------

def test_straight_line_hundred_ops():
    _, s = run_timed("\n".join(["addi x1, x1, 1"] * 100) + "\necall")
    # 100 ops plus the halting ecall, after the pipeline fill
    assert s.total_cycles == 100 + 1 + ClusterConfig().pipeline_fill
    assert s.issued == [101]


def _region(src):
    return run_timed("csrwi perfmark, 1\n" + src + "\ncsrwi perfmark, 0\necall")[1].region()["cycles"]


def test_hwloop_has_free_back_edge():
    looped = _region("lp.setupi 0, 4, e\naddi x1, x1, 1\naddi x2, x2, 1\naddi x3, x3, 1\ne:")
    straight = _region("\n".join(["addi x1, x1, 1"] * 12))
    assert looped == straight + 1  # only the setup instruction


def test_postinc_store_loop_one_op_per_element():
    n = 32
    src = f"li x6, 0x10000000\nlp.setupi 0, {n}, e\np.sw x7, 4(x6!)\ne:"
    assert _region(src) - _region("li x6, 0x10000000") == n + 1


def test_load_use_stall():
    use = _region("li x6, 0x10000000\nlw x5, 0(x6)\naddi x7, x5, 1")
    no_use = _region("li x6, 0x10000000\nlw x5, 0(x6)\naddi x7, x6, 1")
    assert use == no_use + 1


def test_mlsdotp_back_to_back_no_stall():
    base = "csrwi simd_fmt, 5\nli x6, 0x10000000\n"
    two = _region(base + "pv.mlsdotsp x9, n0, n1, n0, 4(x6!)\npv.mlsdotsp x9, n0, n1, n1, 4(x6!)")
    none = _region(base.rstrip())
    assert two - none == 2
    _, s = run_timed(base + "pv.mlsdotsp x9, n0, n1, n0, 4(x6!)\npv.mlsdotsp x9, n0, n1, n1, 4(x6!)\necall")
    assert s.mac_count == 8


def test_empty_program():
    _, s = run_timed("")
    assert s.issued == [0]


# -- interconnect ------------------------------------------------------------------

CONFLICT = """
    li x6, 0x1000000c
    li x7, 1
    barrier
    sw x7, 0(x6)
    ecall
"""


def test_same_bank_stores_serialise():
    _, s, rows = traced(CONFLICT, 2)
    t = issue_cycles(rows, "sw")
    assert sorted(t.values())[1] - sorted(t.values())[0] == 1
    assert sum(st_["bank-conflict"] for st_ in s.stalls) == 1


def test_disjoint_banks_no_conflicts():
    src = """
    csrr x5, mhartid
    slli x5, x5, 2
    li x6, 0x10000000
    add x6, x6, x5
    barrier
    lp.setupi 0, 64, e
    p.sw x5, 32(x6!)
e:
    ecall
"""
    _, s, _ = traced(src, 8)
    assert sum(st_["bank-conflict"] for st_ in s.stalls) == 0


def test_round_robin_fairness():
    # all 8 cores hammer one bank; nobody waits more than n-1 cycles per access
    src = "li x6, 0x10000000\nbarrier\nlp.setupi 0, 16, e\nlw x5, 0(x6)\ne:\necall"
    _, s, rows = traced(src, 8)
    per_core = {}
    for cyc, core, ev, d in rows:
        if ev == "issue" and d.endswith(" lw"):
            per_core.setdefault(core, []).append(cyc)
    for cycles in per_core.values():
        assert max(b - a for a, b in zip(cycles, cycles[1:])) <= 8


def test_functional_result_matches_sequential_reference():
    # each core sums its own slice of a shared array; no races
    data = ", ".join(str(i) for i in range(64))
    src = f"""
    .data 0x10000000
arr:
    .word {data}
    .text
    csrr x5, mhartid
    slli x8, x5, 5
    li x6, 0x10000000
    add x6, x6, x8
    mv x9, x0
    lp.setupi 0, 8, e
    p.lw x7, 4(x6!)
    add x9, x9, x7
e:
    slli x8, x5, 2
    li x10, 0x10001000
    add x10, x10, x8
    sw x9, 0(x10)
    ecall
"""
    prog = asm.assemble(src)
    cl, _ = run_program(prog, ClusterConfig(n_cores=8))
    for k in range(8):
        env = isa.FlatMemory()
        for seg in prog.data:
            env.write_bytes(seg.address, seg.data)
        core = isa.CoreState(core_id=k, n_cores=8)
        isa.run_functional(prog, env, core)
        got = int.from_bytes(cl.read_bytes(0x10001000 + 4 * k, 4), "little")
        assert got == core.regs[9] == sum(range(8 * k, 8 * k + 8))


# -- barriers ----------------------------------------------------------------------

def test_barrier_releases_after_last_arrival():
    src = """
    csrr x5, mhartid
    beqz x5, late
    j sync
late:
    addi x1, x1, 1
    addi x1, x1, 1
    addi x1, x1, 1
sync:
    barrier
    addi x2, x2, 1
    ecall
"""
    _, _, rows = traced(src, 4)
    last = max(issue_cycles(rows, "barrier").values())
    after = [cyc for cyc, core, ev, d in rows if ev == "issue" and d.endswith(" addi")
             and cyc > last]
    assert min(after) == last + 1


def test_single_core_barrier_one_cycle():
    with_b = _region("barrier")
    assert with_b == _region("nop")


# -- DMA ---------------------------------------------------------------------------

def test_dma_transfer_validation():
    t = DmaTransfer(src=L2_BASE, dst=L1_BASE, length=16, count=4, src_stride=64)
    assert t.total_bytes == 64
    with pytest.raises(ValueError):
        DmaTransfer(src=L2_BASE, dst=L1_BASE, length=0)


DMA_2D = """
    li x1, 0x1C010000
    li x2, 0x10000000
    li x3, 64
    li x4, 16
    dma.cfg x1, x2
    dma.stride x3, x4
    li x5, 16
    li x6, 4
    dma.start x7, x5, x6
    dma.wait x7
    csrwi perfmark, 1
    dma.wait x7
    csrwi perfmark, 0
    ecall
"""


def test_dma_2d_and_completed_wait():
    prog = asm.assemble(DMA_2D)
    cl = Cluster(ClusterConfig(n_cores=1))
    cl.load_program(prog)
    cl.warm_icache()
    src = bytes(range(256))
    cl.port.l2[0x10000:0x10000 + 256] = src
    s = cl.run_to_completion()
    got = cl.read_bytes(L1_BASE, 64)
    assert got == b"".join(src[64 * r:64 * r + 16] for r in range(4))
    assert s.dma_bytes == 64
    assert s.region()["cycles"] == 2  # the wait on a completed event is one cycle


def _compute_loop(iters):
    return f"li x9, {iters}\nlp.setup 0, x9, ce\naddi x10, x10, 1\naddi x11, x11, 1\nce:"


def test_dma_overlaps_with_compute():
    compute = _compute_loop(5000)
    alone = run_timed(compute + "\necall")[1].total_cycles
    overlapped = run_timed(f"""
    li x1, 0x1C010000
    li x2, 0x10004000
    dma.cfg x1, x2
    li x5, 4096
    li x6, 1
    dma.start x7, x5, x6
{compute}
    dma.wait x7
    ecall""")[1].total_cycles
    assert alone >= 10_000
    assert overlapped / alone - 1 < 0.05


# -- guards and determinism -----------------------------------------------------------

def test_cycle_limit():
    with pytest.raises(CycleLimitError):
        run_program(asm.assemble("loop:\nj loop"), ClusterConfig(n_cores=1), max_cycles=1000)


def test_deadlock_detected():
    with pytest.raises(DeadlockError):
        run_program(asm.assemble("li x7, 5\ndma.wait x7\necall"),
                    ClusterConfig(n_cores=1, deadlock_cycles=200))


def test_determinism():
    src = CONFLICT + "\n" + _compute_loop(50)
    a = run_timed(src, cores=8)[1].to_json()
    b = run_timed(src, cores=8)[1].to_json()
    assert a == b


def test_cycles_cover_work():
    _, s = run_timed(CONFLICT, cores=4)
    for issued, stalls in zip(s.issued, s.stalls):
        assert s.total_cycles >= issued + sum(stalls.values()) - stalls.get("fill", 0)
