"""Two-pass assembler and formatter for the extended RV32 dialect.

Syntax summary::

    label:  op operands          # comments start with '#', ';' or '//'
            .text [ADDR]         # code section (ADDR overrides base_pc)
            .data ADDR           # data section at an absolute address
            .word/.half/.byte v, ...
            .space N[, FILL]
            .align P             # align the data cursor to 2**P bytes
            .equ NAME, VALUE

Memory operands are ``imm(rs1)``, or ``imm(rs1!)`` for post-increment forms.
NN-RF registers are ``n0``..``n5``.  Immediates accept decimal, hex, binary,
symbols, ``sym+const`` and ``%hi()``/``%lo()``.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field

from . import isa
from .isa import Instr, OPS, NN_BASE

DEFAULT_BASE_PC = 0x1C008000

_ABI = ("zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 "
        "s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6").split()
REG_NAMES = {f"x{i}": i for i in range(32)}
REG_NAMES.update({name: i for i, name in enumerate(_ABI)})
REG_NAMES["fp"] = 8
REG_NAMES.update({f"n{i}": NN_BASE + i for i in range(isa.N_NN)})


def reg_name(idx: int) -> str:
    return f"n{idx - NN_BASE}" if idx >= NN_BASE else f"x{idx}"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str
    severity: str = "error"
    filename: str = "<input>"

    def __str__(self) -> str:
        return f"{self.filename}:{self.line}:{self.col}: {self.severity}: {self.message}"


class AssemblyError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass
class SourceProgram:
    text: str
    filename: str = "<input>"

    @property
    def lines(self) -> list[str]:
        return self.text.splitlines()

    @classmethod
    def from_file(cls, path) -> "SourceProgram":
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read(), str(path))


@dataclass
class DataSegment:
    address: int
    data: bytes


@dataclass
class AssembledProgram:
    instructions: list[Instr]
    symbols: dict[str, int]
    data: list[DataSegment]
    entry: int
    base_pc: int = DEFAULT_BASE_PC
    constants: dict[str, int] = field(default_factory=dict)
    warnings: list[Diagnostic] = field(default_factory=list, compare=False)

    @property
    def code_size(self) -> int:
        return 4 * len(self.instructions)

    def by_pc(self) -> dict[int, Instr]:
        return {ins.pc: ins for ins in self.instructions}


class _LineError(Exception):
    def __init__(self, col: int, message: str):
        super().__init__(message)
        self.col = col
        self.message = message


_LABEL_RE = re.compile(r"\s*([A-Za-z_.$][\w.$]*)\s*:")
_SYMBOL_RE = re.compile(r"[A-Za-z_.$][\w.$]*$")


def _strip_comment(line: str) -> str:
    cut = len(line)
    for marker in ("#", ";", "//"):
        pos = line.find(marker)
        if pos != -1:
            cut = min(cut, pos)
    return line[:cut]


def _split_operands(text: str, start_col: int) -> list[tuple[str, int]]:
    """Split at top-level commas; returns (token, 1-based column) pairs."""
    out, depth, cur, cur_col = [], 0, "", None
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append((cur.strip(), cur_col if cur_col is not None else start_col + i))
            cur, cur_col = "", None
            continue
        if cur_col is None and not ch.isspace():
            cur_col = start_col + i
        cur += ch
    if cur.strip() or out:
        out.append((cur.strip(), cur_col if cur_col is not None else start_col + len(text)))
    return out


class _Unresolved(Exception):
    pass


def _eval(expr: str, symbols: dict[str, int], col: int) -> int:
    expr = expr.strip()
    if not expr:
        raise _LineError(col, "missing value")
    m = re.fullmatch(r"%(hi|lo)\((.*)\)", expr)
    if m:
        v = _eval(m.group(2), symbols, col) & isa.M32
        if m.group(1) == "hi":
            return ((v + 0x800) >> 12) & 0xFFFFF
        return isa.sext(v & 0xFFF, 12)
    terms = re.findall(r"[+-]?[^+-]+", expr.replace(" ", ""))
    if not terms or "".join(terms) != expr.replace(" ", ""):
        raise _LineError(col, f"malformed expression {expr!r}")
    total = 0
    for term in terms:
        sign = -1 if term[0] == "-" else 1
        body = term.lstrip("+-")
        if not body:
            raise _LineError(col, f"malformed expression {expr!r}")
        if body[0].isdigit():
            try:
                value = int(body, 0)
            except ValueError:
                raise _LineError(col, f"bad number {body!r}") from None
        elif _SYMBOL_RE.match(body):
            if body not in symbols:
                raise _Unresolved(body)
            value = symbols[body]
        else:
            raise _LineError(col, f"malformed expression {expr!r}")
        total += sign * value
    return total


def _parse_reg(tok: str, col: int, kinds: str = "gp") -> int:
    idx = REG_NAMES.get(tok.strip().lower())
    if idx is None:
        raise _LineError(col, f"bad register name {tok!r}")
    if kinds == "gp" and idx >= NN_BASE:
        raise _LineError(col, f"expected a general-purpose register, got {tok!r}")
    if kinds == "nn" and idx < NN_BASE:
        raise _LineError(col, f"expected an NN-RF register (n0-n5), got {tok!r}")
    return idx


_MEM_RE = re.compile(r"^(.*)\(\s*([^()!\s]+)\s*(!?)\s*\)$")


def _check_range(value: int, kind: str, col: int) -> int:
    lo, hi = isa.IMM_RANGES[kind]
    if not lo <= value <= hi:
        raise _LineError(col, f"immediate {value} out of range [{lo}, {hi}]")
    return value


_PSEUDO_BRANCH = {
    "beqz": ("beq", False), "bnez": ("bne", False), "bltz": ("blt", False),
    "bgez": ("bge", False), "blez": ("bge", True), "bgtz": ("blt", True),
}
_SWAP_BRANCH = {"bgt": "blt", "ble": "bge", "bgtu": "bltu", "bleu": "bgeu"}


@dataclass
class _Item:
    mnemonic: str
    operands: list[tuple[str, int]]
    line: int
    col: int
    pc: int
    size: int


class Assembler:
    """Reentrant two-pass assembler; one instance per source file."""

    def __init__(self, src: SourceProgram | str, base_pc: int = DEFAULT_BASE_PC):
        self.src = src if isinstance(src, SourceProgram) else SourceProgram(src)
        self.base_pc = base_pc
        self.diags: list[Diagnostic] = []
        self.symbols: dict[str, int] = {}
        self.constants: dict[str, int] = {}
        self.items: list[_Item] = []
        self.data: dict[int, int] = {}
        self.data_spans: list[tuple[int, int, int]] = []  # (start, end, line)
        self.label_lines: dict[str, int] = {}

    def _err(self, line: int, col: int, msg: str, severity: str = "error") -> None:
        self.diags.append(Diagnostic(line, col, msg, severity, self.src.filename))

    def _define(self, name: str, value: int, line: int, col: int) -> None:
        if name in self.symbols or name in self.constants:
            self._err(line, col, f"duplicate symbol {name!r}")
            return
        self.symbols[name] = value
        self.label_lines[name] = line

    # -- pass 1 ------------------------------------------------------------
    def pass1(self) -> None:
        section = "text"
        pc = None
        dptr = None
        for lineno, raw in enumerate(self.src.lines, 1):
            try:
                text = _strip_comment(raw)
                pos = 0
                while True:
                    m = _LABEL_RE.match(text, pos)
                    if not m:
                        break
                    name = m.group(1)
                    if section == "text":
                        if pc is None:
                            pc = self.base_pc
                        self._define(name, pc, lineno, m.start(1) + 1)
                    else:
                        self._define(name, dptr, lineno, m.start(1) + 1)
                    pos = m.end()
                rest = text[pos:]
                stripped = rest.strip()
                if not stripped:
                    continue
                col = pos + len(rest) - len(rest.lstrip()) + 1
                parts = stripped.split(None, 1)
                mnem = parts[0].lower()
                op_text = parts[1] if len(parts) > 1 else ""
                op_col = col + len(parts[0]) + (len(stripped) - len(parts[0]) - len(op_text))
                operands = _split_operands(op_text, op_col) if op_text else []
                if mnem.startswith("."):
                    section, pc, dptr = self._directive(mnem, operands, lineno, col,
                                                        section, pc, dptr)
                    continue
                if section != "text":
                    raise _LineError(col, "instruction outside .text section")
                if pc is None:
                    pc = self.base_pc
                size = self._size(mnem, operands, col)
                self.items.append(_Item(mnem, operands, lineno, col, pc, size))
                pc += 4 * size
            except _LineError as exc:
                self._err(lineno, exc.col, exc.message)
            except (ValueError, KeyError, IndexError, OverflowError) as exc:
                self._err(lineno, 1, f"cannot parse line: {exc}")
        self.code_end = pc if pc is not None else self.base_pc

    def _directive(self, mnem, operands, lineno, col, section, pc, dptr):
        consts = dict(self.constants)
        if mnem == ".text":
            if operands:
                if self.items:
                    raise _LineError(operands[0][1], ".text address after code was emitted")
                self.base_pc = self._const(operands[0], consts)
                pc = self.base_pc
            return "text", pc, dptr
        if mnem == ".data":
            if len(operands) != 1:
                raise _LineError(col, ".data requires an absolute address")
            return "data", pc, self._const(operands[0], consts)
        if mnem in (".equ", ".set"):
            if len(operands) != 2 or not _SYMBOL_RE.match(operands[0][0]):
                raise _LineError(col, f"{mnem} expects NAME, VALUE")
            name = operands[0][0]
            if name in self.symbols or name in self.constants:
                raise _LineError(operands[0][1], f"duplicate symbol {name!r}")
            self.constants[name] = self._const(operands[1], consts)
            return section, pc, dptr
        if mnem in (".globl", ".global"):
            return section, pc, dptr
        if section != "data":
            raise _LineError(col, f"{mnem} outside a .data section")
        if mnem == ".align":
            p = self._const(operands[0], consts) if operands else 2
            if not 0 <= p <= 16:
                raise _LineError(col, f"alignment 2**{p} out of range")
            step = 1 << p
            return section, pc, (dptr + step - 1) // step * step
        if mnem == ".space":
            if not operands or len(operands) > 2:
                raise _LineError(col, ".space expects N[, FILL]")
            n = self._const(operands[0], consts)
            fill = self._const(operands[1], consts) & 0xFF if len(operands) > 1 else 0
            if n < 0 or n > 1 << 24:
                raise _LineError(operands[0][1], f"bad .space size {n}")
            self._emit_data(dptr, bytes([fill]) * n, lineno, col)
            return section, pc, dptr + n
        sizes = {".word": 4, ".half": 2, ".byte": 1}
        if mnem not in sizes:
            raise _LineError(col, f"unknown directive {mnem!r}")
        if not operands:
            raise _LineError(col, f"{mnem} needs at least one value")
        size = sizes[mnem]
        blob = bytearray()
        for tok in operands:
            try:
                v = _eval(tok[0], {**self.constants, **self.symbols}, tok[1])
            except _Unresolved as exc:
                raise _LineError(tok[1], f"unresolved symbol {exc.args[0]!r} in data") from None
            if not -(1 << (8 * size - 1)) <= v < (1 << (8 * size)):
                raise _LineError(tok[1], f"value {v} does not fit in {size} byte(s)")
            blob += (v & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
        self._emit_data(dptr, bytes(blob), lineno, col)
        return section, pc, dptr + len(blob)

    def _emit_data(self, addr: int, blob: bytes, lineno: int, col: int) -> None:
        if addr is None:
            raise _LineError(col, "data emitted before .data address")
        if not blob:
            return
        for k, b in enumerate(blob):
            if addr + k in self.data:
                raise _LineError(col, f"data overlaps earlier data at 0x{addr + k:08x}")
            self.data[addr + k] = b
        self.data_spans.append((addr, addr + len(blob), lineno))

    def _const(self, tok, consts) -> int:
        try:
            return _eval(tok[0], consts, tok[1])
        except _Unresolved as exc:
            raise _LineError(tok[1], f"{exc.args[0]!r} must be a constant defined earlier") from None

    def _size(self, mnem: str, operands, col: int) -> int:
        if mnem == "la":
            return 2
        if mnem == "li":
            if len(operands) != 2:
                raise _LineError(col, "li expects rd, value")
            try:
                v = _eval(operands[1][0], self.constants, operands[1][1])
            except _Unresolved:
                return 2
            if not -(1 << 31) <= v < (1 << 32):
                raise _LineError(operands[1][1], f"immediate {v} out of 32-bit range")
            return 1 if -2048 <= isa.s32(v) <= 2047 else (1 if v & 0xFFF == 0 else 2)
        return 1

    # -- pass 2 ------------------------------------------------------------
    def pass2(self) -> list[Instr]:
        out: list[Instr] = []
        syms = {**self.constants, **self.symbols}
        for item in self.items:
            try:
                instrs = self._encode(item, syms)
            except _LineError as exc:
                self._err(item.line, exc.col, exc.message)
                instrs = [Instr("addi", pc=item.pc + 4 * k, line=item.line, col=item.col)
                          for k in range(item.size)]
            except _Unresolved as exc:
                self._err(item.line, item.col, f"unresolved label {exc.args[0]!r}")
                instrs = [Instr("addi", pc=item.pc + 4 * k, line=item.line, col=item.col)
                          for k in range(item.size)]
            except (ValueError, KeyError, IndexError, OverflowError) as exc:
                self._err(item.line, item.col, str(exc))
                instrs = [Instr("addi", pc=item.pc + 4 * k, line=item.line, col=item.col)
                          for k in range(item.size)]
            if len(instrs) != item.size:
                instrs = (instrs + [Instr("addi", line=item.line)] * item.size)[:item.size]
            for k, ins in enumerate(instrs):
                ins.pc = item.pc + 4 * k
                ins.line, ins.col = item.line, item.col
            out.extend(instrs)
        return out

    def _need(self, operands, n, item):
        if len(operands) != n:
            raise _LineError(item.col, f"{item.mnemonic} expects {n} operand(s), got {len(operands)}")

    def _encode(self, item: _Item, syms) -> list[Instr]:
        m, ops = item.mnemonic, item.operands
        reg = _parse_reg
        ev = lambda tok: _eval(tok[0], syms, tok[1])  # noqa: E731
        if m == "nop":
            self._need(ops, 0, item)
            return [Instr("addi")]
        if m in ("li", "la"):
            self._need(ops, 2, item)
            rd = reg(*ops[0])
            v = ev(ops[1])
            if not -(1 << 31) <= v < (1 << 32):
                raise _LineError(ops[1][1], f"immediate {v} out of 32-bit range")
            v &= isa.M32
            if item.size == 1:
                if -2048 <= isa.s32(v) <= 2047:
                    return [Instr("addi", rd=rd, imm=isa.s32(v))]
                return [Instr("lui", rd=rd, imm=v >> 12)]
            hi = ((v + 0x800) >> 12) & 0xFFFFF
            lo = isa.sext(v & 0xFFF, 12)
            return [Instr("lui", rd=rd, imm=hi), Instr("addi", rd=rd, rs1=rd, imm=lo)]
        if m == "mv":
            self._need(ops, 2, item)
            return [Instr("addi", rd=reg(*ops[0]), rs1=reg(*ops[1]))]
        if m == "not":
            self._need(ops, 2, item)
            return [Instr("xori", rd=reg(*ops[0]), rs1=reg(*ops[1]), imm=-1)]
        if m == "neg":
            self._need(ops, 2, item)
            return [Instr("sub", rd=reg(*ops[0]), rs2=reg(*ops[1]))]
        if m in ("j", "jal") and len(ops) == 1:
            return [self._jal(1 if m == "jal" else 0, ops[0], syms, item)]
        if m == "call":
            self._need(ops, 1, item)
            return [self._jal(1, ops[0], syms, item)]
        if m == "jr":
            self._need(ops, 1, item)
            return [Instr("jalr", rs1=reg(*ops[0]))]
        if m == "ret":
            self._need(ops, 0, item)
            return [Instr("jalr", rs1=1)]
        if m in _PSEUDO_BRANCH:
            self._need(ops, 2, item)
            real, swap = _PSEUDO_BRANCH[m]
            r = reg(*ops[0])
            a, b = (0, r) if swap else (r, 0)
            return [self._branch(real, a, b, ops[1], syms, item)]
        if m in _SWAP_BRANCH:
            self._need(ops, 3, item)
            return [self._branch(_SWAP_BRANCH[m], reg(*ops[1]), reg(*ops[0]), ops[2], syms, item)]
        if m == "csrr":
            self._need(ops, 2, item)
            return [Instr("csrrs", rd=reg(*ops[0]), imm=self._csr(ops[1], syms))]
        if m in ("csrw", "csrs", "csrc"):
            self._need(ops, 2, item)
            real = {"csrw": "csrrw", "csrs": "csrrs", "csrc": "csrrc"}[m]
            return [Instr(real, imm=self._csr(ops[0], syms), rs1=reg(*ops[1]))]
        if m in ("csrwi", "csrsi", "csrci"):
            self._need(ops, 2, item)
            real = {"csrwi": "csrrwi", "csrsi": "csrrsi", "csrci": "csrrci"}[m]
            return [Instr(real, imm=self._csr(ops[0], syms),
                          imm2=_check_range(ev(ops[1]), "uimm5", ops[1][1]))]
        spec = OPS.get(m)
        if spec is None:
            raise _LineError(item.col, f"unknown mnemonic {m!r}")
        return [self._generic(m, spec, ops, syms, item)]

    def _csr(self, tok, syms) -> int:
        name = tok[0].strip().lower()
        if name in isa.CSR_NAMES:
            return isa.CSR_NAMES[name]
        try:
            v = _eval(tok[0], syms, tok[1])
        except _Unresolved:
            raise _LineError(tok[1], f"unknown CSR {tok[0]!r}") from None
        if not 0 <= v < 4096:
            raise _LineError(tok[1], f"CSR number {v} out of range")
        return v

    def _target(self, tok, syms, item) -> tuple[str | None, int]:
        name = tok[0].strip()
        if _SYMBOL_RE.match(name):
            if name not in self.symbols:
                raise _LineError(tok[1], f"unresolved label {name!r}")
            return name, self.symbols[name]
        return None, _eval(name, syms, tok[1]) & isa.M32

    def _branch(self, op, rs1, rs2, tok, syms, item) -> Instr:
        name, tpc = self._target(tok, syms, item)
        off = tpc - item.pc
        if not -4096 <= off < 4096 or off % 4:
            raise _LineError(tok[1], f"branch target out of range (offset {off})")
        return Instr(op, rs1=rs1, rs2=rs2, target=name, target_pc=tpc, imm=off)

    def _jal(self, rd, tok, syms, item) -> Instr:
        name, tpc = self._target(tok, syms, item)
        off = tpc - item.pc
        if not -(1 << 20) <= off < (1 << 20) or off % 4:
            raise _LineError(tok[1], f"jump target out of range (offset {off})")
        return Instr("jal", rd=rd, target=name, target_pc=tpc, imm=off)

    def _generic(self, m, spec, ops, syms, item) -> Instr:
        parts = spec.syntax.split(",") if spec.syntax else []
        if len(parts) != len(ops):
            # mem operands count as one token each
            raise _LineError(item.col, f"{m} expects {len(parts)} operand(s), got {len(ops)}")
        f: dict = {}
        for part, tok in zip(parts, ops):
            text, col = tok
            if part in ("rd", "rs1", "rs2", "rs3"):
                f[part] = _parse_reg(text, col)
            elif part in ("va", "vb"):
                f["rs1" if part == "va" else "rs2"] = _parse_reg(text, col, "any")
            elif part in ("na", "nb", "nd"):
                f[{"na": "rs2", "nb": "rs3", "nd": "rd2"}[part]] = _parse_reg(text, col, "nn")
            elif part in ("mem", "mem!"):
                mm = _MEM_RE.match(text)
                if not mm:
                    raise _LineError(col, f"expected memory operand imm(reg{'!' if part == 'mem!' else ''})")
                if bool(mm.group(3)) != (part == "mem!"):
                    raise _LineError(col, "post-increment '!' required" if part == "mem!"
                                     else "post-increment form not allowed here")
                f["rs1"] = _parse_reg(mm.group(2), col)
                off = mm.group(1).strip()
                f["imm"] = _check_range(_eval(off, syms, col) if off else 0, part, col)
            elif part == "label":
                name, tpc = self._target(tok, syms, item)
                f["target"], f["target_pc"] = name, tpc
                f["imm"] = f.get("imm", 0)
                if m in ("beq", "bne", "blt", "bge", "bltu", "bgeu"):
                    off = tpc - item.pc
                    if not -4096 <= off < 4096 or off % 4:
                        raise _LineError(col, f"branch target out of range (offset {off})")
                    f["imm"] = off
                elif m == "jal":
                    f["imm"] = tpc - item.pc
            elif part == "csr":
                f["imm"] = self._csr(tok, syms)
            elif part in ("uimm5", "uimm12", "pos"):
                f["imm2"] = _check_range(_eval(text, syms, col), part, col)
            elif part in ("imm12", "shamt", "imm20", "simm6", "bits", "loop"):
                f["imm"] = _check_range(_eval(text, syms, col), part, col)
            else:
                raise _LineError(col, f"internal: unhandled operand kind {part}")
        if spec.opclass == "lp-setup":
            body = (f["target_pc"] - (item.pc + 4)) // 4
            if f["target_pc"] % 4 or f["target_pc"] <= item.pc + 4:
                raise _LineError(ops[-1][1], "hardware loop body is empty or ends before it starts")
            f["body_len"] = body
        try:
            return Instr(m, **f)
        except ValueError as exc:
            raise _LineError(item.col, str(exc)) from None

    # -- checks ------------------------------------------------------------
    def check_loops(self, instrs: list[Instr]) -> None:
        loops = [(ins.pc + 4, ins.target_pc, ins) for ins in instrs if ins.opclass == "lp-setup"
                 and ins.target_pc > ins.pc + 4]
        for i, (s1, e1, a) in enumerate(loops):
            depth = 1
            for j, (s2, e2, b) in enumerate(loops):
                if i == j:
                    continue
                overlap = s1 < e2 and s2 < e1
                if not overlap:
                    continue
                inner = s2 <= s1 and e1 <= e2
                outer = s1 <= s2 and e2 <= e1
                if not (inner or outer):
                    self._err(a.line, a.col, "malformed hardware loop nesting (bodies overlap)")
                elif inner:
                    depth += 1
                    if a.imm == b.imm:
                        self._err(a.line, a.col,
                                  f"nested hardware loops both use loop index {a.imm}")
            if depth > 2:
                self._err(a.line, a.col, "hardware loop nesting exceeds 2")

    def check_simd_fmt(self, instrs: list[Instr]) -> None:
        seen_fmt = False
        for ins in instrs:
            if ins.opclass == "csr" and ins.imm == isa.CSR_SIMD_FMT and ins.op in (
                    "csrrw", "csrrwi", "csrrs", "csrrsi", "csrrc", "csrrci"):
                seen_fmt = True
            elif ins.opclass in ("sdotp", "mlsdotp") and not seen_fmt \
                    and ins.op.count(".") == 1:
                self._err(ins.line, ins.col,
                          f"{ins.op} before any SIMD_FMT write: operand widths come from "
                          "the runtime SIMD_FMT CSR", "warning")
                return

    def data_segments(self) -> list[DataSegment]:
        segs: list[DataSegment] = []
        for addr in sorted(self.data):
            if segs and segs[-1].address + len(segs[-1].data) == addr:
                segs[-1].data += bytes([self.data[addr]])
            else:
                segs.append(DataSegment(addr, bytes([self.data[addr]])))
        return segs

    def run(self) -> AssembledProgram:
        self.pass1()
        instrs = self.pass2()
        self.check_loops(instrs)
        self.check_simd_fmt(instrs)
        code_lo, code_hi = self.base_pc, self.base_pc + 4 * len(instrs)
        for start, end, line in self.data_spans:
            if start < code_hi and code_lo < end:
                self._err(line, 1, "data segment overlaps code")
        segs = self.data_segments()
        for seg in segs:
            seg.data = bytes(seg.data)
        entry = self.symbols.get("_start", self.base_pc)
        self.prog = AssembledProgram(instrs, dict(self.symbols), segs, entry, self.base_pc,
                                     dict(self.constants),
                                     [d for d in self.diags if d.severity == "warning"])
        return self.prog


def assemble(src: SourceProgram | str, base_pc: int = DEFAULT_BASE_PC) -> AssembledProgram:
    """Assemble source text; raises :class:`AssemblyError` on any error."""
    asm = Assembler(src, base_pc)
    prog = asm.run()
    errors = [d for d in asm.diags if d.severity == "error"]
    if errors:
        raise AssemblyError(errors)
    return prog


def diagnose(src: SourceProgram | str, base_pc: int = DEFAULT_BASE_PC) -> list[Diagnostic]:
    """All diagnostics (errors and warnings) for ``src``; never raises."""
    asm = Assembler(src, base_pc)
    try:
        asm.run()
    except RecursionError:
        asm._err(1, 1, "expression nesting too deep")
    return sorted(asm.diags, key=lambda d: (d.line, d.col))


def report(diags, stream=None) -> None:
    stream = stream or sys.stderr
    for d in diags:
        print(d, file=stream)


# ---------------------------------------------------------------------------
# Formatter
# ---------------------------------------------------------------------------

def _fmt_operands(ins: Instr) -> str:
    spec = OPS[ins.op]
    out = []
    for part in spec.syntax.split(",") if spec.syntax else []:
        if part in ("rd", "rs1", "rs2", "rs3"):
            out.append(reg_name(getattr(ins, part)))
        elif part == "va":
            out.append(reg_name(ins.rs1))
        elif part == "vb":
            out.append(reg_name(ins.rs2))
        elif part == "na":
            out.append(reg_name(ins.rs2))
        elif part == "nb":
            out.append(reg_name(ins.rs3))
        elif part == "nd":
            out.append(reg_name(ins.rd2))
        elif part == "mem":
            out.append(f"{ins.imm}({reg_name(ins.rs1)})")
        elif part == "mem!":
            out.append(f"{ins.imm}({reg_name(ins.rs1)}!)")
        elif part == "label":
            out.append(ins.target if ins.target else f"0x{ins.target_pc:08x}")
        elif part == "csr":
            out.append(isa.CSR_BY_NUMBER.get(ins.imm, f"0x{ins.imm:03x}"))
        elif part in ("uimm5", "uimm12", "pos"):
            out.append(str(ins.imm2))
        else:
            out.append(str(ins.imm))
    return ", ".join(out)


def format_program(prog: AssembledProgram) -> SourceProgram:
    """Canonical source text for ``prog``; assembling it gives ``prog`` back."""
    lines = [f"    .text 0x{prog.base_pc:08x}"]
    for name, value in prog.constants.items():
        lines.append(f"    .equ {name}, {value}")
    labels_at: dict[int, list[str]] = {}
    for name, addr in prog.symbols.items():
        labels_at.setdefault(addr, []).append(name)
    code_end = prog.base_pc + prog.code_size
    placed: set[str] = set()
    for ins in prog.instructions:
        for name in labels_at.get(ins.pc, []):
            lines.append(f"{name}:")
            placed.add(name)
        ops = _fmt_operands(ins)
        lines.append(f"    {ins.op} {ops}".rstrip())
    for name in labels_at.get(code_end, []):
        if name not in placed:
            lines.append(f"{name}:")
            placed.add(name)
    for seg in prog.data:
        lines.append(f"    .data 0x{seg.address:08x}")
        chunk: list[str] = []
        for k, b in enumerate(seg.data):
            names = [n for n in labels_at.get(seg.address + k, []) if n not in placed]
            if names:
                if chunk:
                    lines.append("    .byte " + ", ".join(chunk))
                    chunk = []
                for n in names:
                    lines.append(f"{n}:")
                    placed.add(n)
            chunk.append(str(b))
            if len(chunk) == 16:
                lines.append("    .byte " + ", ".join(chunk))
                chunk = []
        if chunk:
            lines.append("    .byte " + ", ".join(chunk))
        for n in labels_at.get(seg.address + len(seg.data), []):
            if n not in placed:
                lines.append(f"{n}:")
                placed.add(n)
    for name, addr in prog.symbols.items():
        if name not in placed:
            lines.append(f"    .data 0x{addr:08x}")
            lines.append(f"{name}:")
            placed.add(name)
    return SourceProgram("\n".join(lines) + "\n")


format = format_program  # noqa: A001 - spec-facing name
