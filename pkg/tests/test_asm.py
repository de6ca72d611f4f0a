import pytest
from hypothesis import given, settings, strategies as st

from shaheen_sim import asm
from shaheen_sim.asm import AssemblyError, assemble, diagnose, format_program


def errors(src):
    return [d for d in diagnose(src) if d.severity == "error"]


def test_addi_record():
    p = assemble("addi x1, x0, 5")
    (ins,) = p.instructions
    assert (ins.op, ins.rd, ins.rs1, ins.imm) == ("addi", 1, 0, 5)


def test_loop_body_length():
    p = assemble("li x4, 3\nlp.setup 0, x4, endl\nnop\nnop\nnop\nendl:\necall")
    lp = next(i for i in p.instructions if i.op == "lp.setup")
    assert lp.body_len == 3
    assert lp.target_pc == p.symbols["endl"]


def test_unsuffixed_sdotp_warns_without_csr_write():
    p = assemble("pv.sdotsp.h x3, x4, x5\npv.sdotsp x3, x4, x5")
    assert len(p.instructions) == 2
    msgs = [w for w in p.warnings if "SIMD_FMT" in w.message]
    assert len(msgs) == 1 and msgs[0].line == 2


def test_unknown_mnemonic_position():
    (d,) = errors("nop\n  addq x1, x2, x3")
    assert (d.line, d.col) == (2, 3) and "addq" in d.message


def test_nesting_depth():
    src = """
    lp.setupi 0, 2, a
    lp.setupi 1, 2, b
    lp.setupi 0, 2, c
    nop
c:
    nop
b:
    nop
a:
    ecall
"""
    assert any("hardware loop nesting exceeds 2" in d.message for d in errors(src))


def test_overlapping_loops_rejected():
    src = "lp.setupi 0, 2, a\nlp.setupi 1, 2, b\nnop\na:\nnop\nb:\necall"
    assert errors(src)


def test_immediate_range():
    (d,) = errors("addi x1, x0, 4096")
    assert "range" in d.message
    assert not errors("addi x1, x0, 2047")


@pytest.mark.parametrize("src", ["add x1, x2", "add x1, x2, y3", "beq x1, x2, nowhere",
                                 "lw x1, 3(", "pv.mlsdotsp x1, x2, n0, n1, 4(x5!)"])
def test_bad_inputs_diagnosed(src):
    assert errors(src)
    with pytest.raises(AssemblyError):
        assemble(src)


def test_diagnostic_format():
    d = errors(asm.SourceProgram("bogus", "k.s"))[0]
    assert str(d).startswith("k.s:1:1: error:")


ROUNDTRIP = """
    .data 0x10000000
tbl:
    .word 1, 2, 0xdeadbeef
    .byte 7, 8, 9
    .space 5
    .text
start:
    li x5, 0x10000000
    lp.setupi 0, 4, end
    p.lw x6, 4(x5!)
    pv.sdotusp x7, x6, x6
end:
    bne x6, x0, start
    ecall
"""


def test_format_roundtrip():
    p = assemble(ROUNDTRIP)
    q = assemble(format_program(p))
    assert q.instructions == p.instructions
    assert q.data == p.data
    assert q.symbols == p.symbols


def test_format_is_fixpoint():
    once = format_program(assemble("addi x1, x0, 1\nadd x2, x1, x1\necall")).text
    assert format_program(assemble(once)).text == once


def test_pcs_are_sequential():
    p = assemble(ROUNDTRIP, base_pc=0x1C008000)
    assert [i.pc for i in p.instructions] == [0x1C008000 + 4 * k for k in range(len(p.instructions))]


def test_overlapping_data_rejected():
    assert errors(".data 0x10000000\n.word 1, 2\n.data 0x10000004\n.word 3")


TOKENS = ["addi", "x1", "x0", ",", "lp.setup", "0", "(x5!)", "p.lw", ":", "lbl", ".word",
          "0x10", "n0", "pv.mlsdotsp", "#", "\n", " ", "-", "4096", "ecall", "(", ")", "!"]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(TOKENS), max_size=30) | st.text(max_size=80).map(lambda t: [t]))
def test_fuzz_never_crashes(parts):
    src = " ".join(parts)
    diags = diagnose(src)
    if not any(d.severity == "error" for d in diags):
        assemble(src)
