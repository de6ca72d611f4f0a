import pytest

from shaheen_sim import asm, isa
from shaheen_sim.cluster import ClusterConfig, run_program


def run_flat(src, *, isa_name="flexv", mem=None, regs=None):
    """Assemble and run on one core against a flat memory; returns (core, mem)."""
    prog = asm.assemble(src)
    env = mem or isa.FlatMemory()
    for seg in prog.data:
        env.write_bytes(seg.address, seg.data)
    core = isa.CoreState(isa=isa_name)
    for idx, value in (regs or {}).items():
        core.regs[idx] = value & 0xFFFFFFFF
    isa.run_functional(prog, env, core)
    return core, env


def run_timed(src, cores=1, warm=True, **cfg_kw):
    prog = asm.assemble(src)
    cfg = ClusterConfig(n_cores=cores, **cfg_kw)
    return run_program(prog, cfg, warm=warm)


@pytest.fixture
def flat():
    return run_flat


@pytest.fixture
def timed():
    return run_timed


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
