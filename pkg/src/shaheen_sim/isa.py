"""Semantics of the extended RV32 dialect executed by the Flex-V cluster cores.

Covers the RV32IM subset needed to host kernels, XpulpV2 (hardware loops,
post-increment memory ops, bit-field ops, 16/8-bit SIMD), XpulpNN (4/2-bit
SIMD, the NN register file and fused Mac&Load) and the Flex-V mixed-precision
"virtual SIMD" dot products whose operand widths come from the SIMD_FMT CSR.

Instructions are decoded records (:class:`Instr`); there is no binary
encoding.  Every instruction occupies 4 bytes of PC space.

The ``exec_*`` functions mutate the given :class:`CoreState` in place and
return it.  Memory, DMA and barrier side effects go through an environment
object (see :class:`FlatMemory` for the minimal one used in unit tests).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from . import fpu

M32 = 0xFFFFFFFF
N_GP = 32
N_NN = 6
NN_BASE = 32  # NN-RF register n<i> lives at unified index 32 + i

ISA_LEVELS = ("xpulpv2", "xpulpnn", "flexv")


class SimulationError(RuntimeError):
    """Simulator invariant violation; the simulation halts with this diagnostic."""

    def __init__(self, message: str, core: int | None = None, pc: int | None = None,
                 line: int | None = None):
        where = []
        if core is not None:
            where.append(f"core {core}")
        if pc is not None:
            where.append(f"pc 0x{pc:08x}")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.core, self.pc, self.line = core, pc, line


def s32(x: int) -> int:
    x &= M32
    return x - (1 << 32) if x & 0x80000000 else x


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


# ---------------------------------------------------------------------------
# SIMD formats
# ---------------------------------------------------------------------------

WIDTHS = (16, 8, 4, 2)
_WIDTH_CODE = {16: 0, 8: 1, 4: 2, 2: 3}
_CODE_WIDTH = {v: k for k, v in _WIDTH_CODE.items()}
SUFFIX_WIDTH = {"h": 16, "b": 8, "n": 4, "c": 2}
WIDTH_SUFFIX = {v: k for k, v in SUFFIX_WIDTH.items()}

# (activation width, weight width) pairs of the MatMul table plus 16-bit
SUPPORTED_PAIRS = frozenset({(16, 16), (8, 8), (8, 4), (8, 2), (4, 4), (4, 2), (2, 2)})


@dataclass(frozen=True)
class SimdFormat:
    a_width: int = 16
    b_width: int = 16
    a_signed: bool = True
    b_signed: bool = True

    def __post_init__(self):
        if (self.a_width, self.b_width) not in SUPPORTED_PAIRS:
            raise ValueError(f"unsupported SIMD format ({self.a_width}, {self.b_width})")

    @property
    def ratio(self) -> int:
        return self.a_width // self.b_width

    @property
    def lanes(self) -> int:
        return 32 // self.a_width

    @property
    def mixed(self) -> bool:
        return self.a_width != self.b_width

    def to_csr(self) -> int:
        return _WIDTH_CODE[self.a_width] | _WIDTH_CODE[self.b_width] << 2

    @classmethod
    def from_csr(cls, value: int) -> "SimdFormat":
        return cls(_CODE_WIDTH[value & 3], _CODE_WIDTH[(value >> 2) & 3])

    def with_signs(self, a_signed: bool, b_signed: bool) -> "SimdFormat":
        return replace(self, a_signed=a_signed, b_signed=b_signed)


def simd_lanes(fmt: SimdFormat) -> int:
    return 32 // fmt.a_width


_LANE_SHIFTS = {w: tuple(range(0, 32, w)) for w in WIDTHS}


def unpack_lanes(word: int, width: int, signed: bool) -> list[int]:
    """Little-endian lanes of a 32-bit word."""
    mask = (1 << width) - 1
    if signed:
        sign = 1 << (width - 1)
        return [((word >> s) & mask ^ sign) - sign for s in _LANE_SHIFTS[width]]
    return [(word >> s) & mask for s in _LANE_SHIFTS[width]]


def pack_lanes(values, width: int) -> int:
    mask = (1 << width) - 1
    out = 0
    for s, v in zip(_LANE_SHIFTS[width], values):
        out |= (v & mask) << s
    return out


def slice_and_route(b_reg: int, fmt: SimdFormat, mpc_cnt: int) -> list[int]:
    """Select the ``mpc_cnt``-th slice of a narrow operand register.

    The register is cut into ``a_width // b_width`` equal bit slices; the
    selected slice is split into ``b_width`` elements, extended per
    ``fmt.b_signed`` and returned as ``32 // a_width`` lanes.
    """
    ratio = fmt.a_width // fmt.b_width
    if not 0 <= mpc_cnt < ratio:
        raise SimulationError(f"mpc_cnt {mpc_cnt} out of range for format "
                              f"({fmt.a_width}, {fmt.b_width})")
    span = 32 // ratio
    chunk = (b_reg >> (mpc_cnt * span)) & ((1 << span) - 1)
    mask = (1 << fmt.b_width) - 1
    shifts = range(0, span, fmt.b_width)
    if fmt.b_signed:
        sign = 1 << (fmt.b_width - 1)
        return [((chunk >> s) & mask ^ sign) - sign for s in shifts]
    return [(chunk >> s) & mask for s in shifts]


def dotp(a_elems, b_elems, acc: int) -> int:
    if len(a_elems) != len(b_elems):
        raise ValueError("dotp operands differ in lane count")
    total = acc
    for x, y in zip(a_elems, b_elems):
        total += x * y
    return s32(total)


# ---------------------------------------------------------------------------
# Floating point formats
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FpFormat:
    kind: str = "fp32"
    lanes: int = 1

    def __post_init__(self):
        if self.kind not in fpu.FORMATS:
            raise ValueError(f"unknown fp kind {self.kind!r}")
        if self.lanes not in (1, 2) or (self.kind == "fp32" and self.lanes != 1):
            raise ValueError(f"{self.kind} does not support {self.lanes} lanes")

    @property
    def float_format(self) -> fpu.FloatFormat:
        return fpu.FORMATS[self.kind]


_FP_SUFFIX = {"s": fpu.FP32, "h": fpu.FP16, "ah": fpu.BF16}


# ---------------------------------------------------------------------------
# Core state
# ---------------------------------------------------------------------------

@dataclass
class HwLoop:
    start_pc: int = 0
    end_pc: int = 0
    remaining_count: int = 0


CSR_SIMD_FMT = 0x7C8
CSR_MPC_CNT = 0x7C9
CSR_PERFMARK = 0x7CA
CSR_MCYCLE = 0xB00
CSR_MHARTID = 0xF14
CSR_NCORES = 0xFC0

CSR_NAMES = {
    "simd_fmt": CSR_SIMD_FMT,
    "mpc_cnt": CSR_MPC_CNT,
    "perfmark": CSR_PERFMARK,
    "mcycle": CSR_MCYCLE,
    "mhartid": CSR_MHARTID,
    "ncores": CSR_NCORES,
}
CSR_BY_NUMBER = {v: k for k, v in CSR_NAMES.items()}
_READ_ONLY_CSRS = {CSR_MPC_CNT, CSR_MHARTID, CSR_NCORES, CSR_MCYCLE}


@dataclass
class CoreState:
    """Architectural state of one Flex-V core.

    ``regs`` is a unified file: indices 0-31 are the GP-RF, 32-37 the NN-RF.
    """

    core_id: int = 0
    n_cores: int = 1
    isa: str = "flexv"
    pc: int = 0
    regs: list = field(default_factory=lambda: [0] * (N_GP + N_NN))
    hw_loops: list = field(default_factory=lambda: [HwLoop(), HwLoop()])
    simd_fmt: SimdFormat = field(default_factory=SimdFormat)
    mpc_cnt: int = 0
    csrs: dict = field(default_factory=dict)
    halted: bool = False
    cycle: int = 0
    macs: int = 0
    flops: int = 0
    marks: list = field(default_factory=list)

    @property
    def gp_rf(self) -> list[int]:
        return self.regs[:N_GP]

    @property
    def nn_rf(self) -> list[int]:
        return self.regs[NN_BASE:]

    def read(self, idx: int) -> int:
        return self.regs[idx]

    def write(self, idx: int, value: int) -> None:
        if idx:
            self.regs[idx] = value & M32

    def set_simd_fmt(self, fmt: SimdFormat) -> None:
        if self.isa == "xpulpv2" and fmt.a_width < 8:
            raise SimulationError(f"XpulpV2 core has no {fmt.a_width}-bit SIMD",
                                  self.core_id, self.pc)
        if fmt.mixed and self.isa != "flexv":
            raise SimulationError(f"{self.isa} core cannot execute mixed-precision "
                                  f"format ({fmt.a_width}, {fmt.b_width})", self.core_id, self.pc)
        self.simd_fmt = fmt
        self.mpc_cnt = 0

    def read_csr(self, num: int) -> int:
        if num == CSR_SIMD_FMT:
            return self.simd_fmt.to_csr()
        if num == CSR_MPC_CNT:
            return self.mpc_cnt
        if num == CSR_MHARTID:
            return self.core_id
        if num == CSR_NCORES:
            return self.n_cores
        if num == CSR_MCYCLE:
            return self.cycle & M32
        return self.csrs.get(num, 0)

    def write_csr(self, num: int, value: int) -> None:
        value &= M32
        if num in _READ_ONLY_CSRS:
            raise SimulationError(f"write to read-only CSR 0x{num:03x}", self.core_id, self.pc)
        if num == CSR_SIMD_FMT:
            try:
                fmt = SimdFormat.from_csr(value)
            except ValueError as exc:
                raise SimulationError(str(exc), self.core_id, self.pc) from None
            self.set_simd_fmt(fmt)
        elif num == CSR_PERFMARK:
            self.marks.append((self.cycle, value, self.macs, self.flops))
        else:
            self.csrs[num] = value

    def copy(self) -> "CoreState":
        return replace(self, regs=list(self.regs),
                       hw_loops=[replace(h) for h in self.hw_loops],
                       csrs=dict(self.csrs), marks=list(self.marks))


# ---------------------------------------------------------------------------
# Decoded instructions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpSpec:
    opclass: str
    syntax: str
    latency: str = "alu"


def _specs() -> dict[str, OpSpec]:
    t: dict[str, OpSpec] = {}
    for op in ("add", "sub", "and", "or", "xor", "sll", "srl", "sra", "slt", "sltu"):
        t[op] = OpSpec("base-alu", "rd,rs1,rs2")
    for op in ("addi", "andi", "ori", "xori", "slti", "sltiu"):
        t[op] = OpSpec("base-alu", "rd,rs1,imm12")
    for op in ("slli", "srli", "srai"):
        t[op] = OpSpec("base-alu", "rd,rs1,shamt")
    for op in ("lui", "auipc"):
        t[op] = OpSpec("base-alu", "rd,imm20")
    for op in ("mul", "mulh", "mulhsu", "mulhu", "div", "divu", "rem", "remu", "p.mac"):
        t[op] = OpSpec("mul", "rd,rs1,rs2")
    for op in ("lb", "lh", "lw", "lbu", "lhu"):
        t[op] = OpSpec("load", "rd,mem", "load")
        t["p." + op] = OpSpec("load", "rd,mem!", "load")
    for op in ("sb", "sh", "sw"):
        t[op] = OpSpec("store", "rs2,mem")
        t["p." + op] = OpSpec("store", "rs2,mem!")
    for op in ("beq", "bne", "blt", "bge", "bltu", "bgeu"):
        t[op] = OpSpec("branch", "rs1,rs2,label")
    t["jal"] = OpSpec("jump", "rd,label")
    t["jalr"] = OpSpec("jump", "rd,mem")
    for op in ("csrrw", "csrrs", "csrrc"):
        t[op] = OpSpec("csr", "rd,csr,rs1")
    for op in ("csrrwi", "csrrsi", "csrrci"):
        t[op] = OpSpec("csr", "rd,csr,uimm5")
    t["lp.setup"] = OpSpec("lp-setup", "loop,rs1,label")
    t["lp.setupi"] = OpSpec("lp-setup", "loop,uimm12,label")
    for op in ("p.extract", "p.extractu", "p.insert"):
        t[op] = OpSpec("base-alu", "rd,rs1,bits,pos")
    for w in "hbnc":
        for op in ("add", "sub", "and", "or", "xor", "sll", "srl", "sra", "max", "min",
                   "maxu", "minu"):
            t[f"pv.{op}.{w}"] = OpSpec("simd-alu", "rd,rs1,rs2")
        for op in ("add", "sub", "sll", "srl", "sra"):
            t[f"pv.{op}.sci.{w}"] = OpSpec("simd-alu", "rd,rs1,simm6")
    for variant in ("sp", "up", "usp"):
        for w in ("",) + tuple("." + s for s in "hbnc"):
            t[f"pv.sdot{variant}{w}"] = OpSpec("sdotp", "rd,va,vb")
            t[f"pv.mlsdot{variant}{w}"] = OpSpec("mlsdotp", "rd,na,nb,nd,mem!")
    for sfx in ("s", "h", "ah"):
        for op in ("fadd", "fsub", "fmul", "fmin", "fmax"):
            t[f"{op}.{sfx}"] = OpSpec("fp-fma", "rd,rs1,rs2", "fp")
        for op in ("fmadd", "fmsub", "fnmadd", "fnmsub"):
            t[f"{op}.{sfx}"] = OpSpec("fp-fma", "rd,rs1,rs2,rs3", "fp")
        t[f"fdiv.{sfx}"] = OpSpec("fp-fma", "rd,rs1,rs2", "divsqrt")
        t[f"fsqrt.{sfx}"] = OpSpec("fp-fma", "rd,rs1", "divsqrt")
        t[f"fcvt.{sfx}.w"] = OpSpec("fp-fma", "rd,rs1", "fp")
        t[f"fcvt.w.{sfx}"] = OpSpec("fp-fma", "rd,rs1", "fp")
    for sfx in ("h", "ah"):
        for op in ("vfadd", "vfsub", "vfmul", "vfmac"):
            t[f"{op}.{sfx}"] = OpSpec("fp-simd-fma", "rd,rs1,rs2", "fp")
    t["fcvt.s.h"] = OpSpec("fp-fma", "rd,rs1", "fp")
    t["fcvt.h.s"] = OpSpec("fp-fma", "rd,rs1", "fp")
    t["fence.t"] = OpSpec("fence-t", "")
    t["barrier"] = OpSpec("barrier", "")
    t["ecall"] = OpSpec("base-alu", "")
    t["dma.cfg"] = OpSpec("dma-ctl", "rs1,rs2")
    t["dma.stride"] = OpSpec("dma-ctl", "rs1,rs2")
    t["dma.start"] = OpSpec("dma-ctl", "rd,rs1,rs2")
    t["dma.wait"] = OpSpec("dma-ctl", "rs1")
    return t


OPS: dict[str, OpSpec] = _specs()

IMM_RANGES = {
    "imm12": (-2048, 2047),
    "mem": (-2048, 2047),
    "mem!": (-2048, 2047),
    "shamt": (0, 31),
    "imm20": (0, 0xFFFFF),
    "uimm5": (0, 31),
    "uimm12": (0, 4095),
    "simm6": (-32, 31),
    "bits": (0, 31),
    "pos": (0, 31),
    "loop": (0, 1),
}


@dataclass(eq=True)
class Instr:
    """One decoded instruction.

    Register fields hold unified register indices (GP 0-31, NN 32-37).
    ``rd2`` is the NN-RF load destination of a Mac&Load.  For ``lp.setup*``
    ``imm`` is the loop index and ``body_len`` the body length in
    instructions; ``target``/``target_pc`` name the first instruction after
    the body.
    """

    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    rs3: int = 0
    rd2: int = 0
    imm: int = 0
    imm2: int = 0
    target: str | None = None
    target_pc: int = 0
    body_len: int = 0
    pc: int = 0
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    def __post_init__(self):
        spec = OPS.get(self.op)
        if spec is None:
            raise ValueError(f"unknown mnemonic {self.op!r}")
        self._check_operands(spec)

    def _check_operands(self, spec: OpSpec) -> None:
        for part in spec.syntax.split(","):
            if part in IMM_RANGES:
                value = self.imm2 if part in ("uimm12", "pos", "uimm5") else self.imm
                lo, hi = IMM_RANGES[part]
                if not lo <= value <= hi:
                    raise ValueError(f"immediate {value} out of range [{lo}, {hi}] for {self.op}")
        gp_fields = {"rd": self.rd, "rs1": self.rs1, "rs2": self.rs2, "rs3": self.rs3}
        if spec.opclass == "mlsdotp":
            for name, idx in (("na", self.rs2), ("nb", self.rs3), ("nd", self.rd2)):
                if not NN_BASE <= idx < NN_BASE + N_NN:
                    raise ValueError(f"{self.op}: {name} must be an NN-RF register")
            gp_fields = {"rd": self.rd, "rs1": self.rs1}
        elif spec.opclass == "sdotp":
            gp_fields = {"rd": self.rd}
            for idx in (self.rs1, self.rs2):
                if not 0 <= idx < NN_BASE + N_NN:
                    raise ValueError(f"{self.op}: bad source register {idx}")
        for name, idx in gp_fields.items():
            if not 0 <= idx < N_GP:
                raise ValueError(f"{self.op}: {name} must be a GP register")

    @property
    def spec(self) -> OpSpec:
        return OPS[self.op]

    @property
    def opclass(self) -> str:
        return OPS[self.op].opclass

    @property
    def post_increment(self) -> bool:
        return OPS[self.op].syntax.endswith("mem!")

    @property
    def variant(self) -> str | None:
        """Signedness variant of dot-product ops: 'sp', 'up' or 'usp'."""
        if self.opclass not in ("sdotp", "mlsdotp"):
            return None
        base = self.op.split(".")[1]
        return base[len("mlsdot"):] if base.startswith("mlsdot") else base[len("sdot"):]

    def sources(self) -> tuple[int, ...]:
        return _SOURCES[OPS[self.op].syntax](self)

    def dests(self) -> tuple[int, ...]:
        syn = OPS[self.op].syntax
        if syn.startswith("rd"):
            out = (self.rd,) if self.rd else ()
        else:
            out = ()
        if syn.endswith("mem!"):
            out += (self.rs1,)
        if self.opclass == "mlsdotp":
            out += (self.rd2,)
        return out


def _src_rd_rs1_rs2(i):
    return (i.rs1, i.rs2)


_SOURCES: dict[str, Callable[[Instr], tuple]] = {
    "rd,rs1,rs2": _src_rd_rs1_rs2,
    "rd,rs1,imm12": lambda i: (i.rs1,),
    "rd,rs1,shamt": lambda i: (i.rs1,),
    "rd,imm20": lambda i: (),
    "rd,mem": lambda i: (i.rs1,),
    "rd,mem!": lambda i: (i.rs1,),
    "rs2,mem": lambda i: (i.rs1, i.rs2),
    "rs2,mem!": lambda i: (i.rs1, i.rs2),
    "rs1,rs2,label": lambda i: (i.rs1, i.rs2),
    "rd,label": lambda i: (),
    "rd,csr,rs1": lambda i: (i.rs1,),
    "rd,csr,uimm5": lambda i: (),
    "loop,rs1,label": lambda i: (i.rs1,),
    "loop,uimm12,label": lambda i: (),
    "rd,rs1,bits,pos": lambda i: (i.rs1, i.rd) if i.op == "p.insert" else (i.rs1,),
    "rd,rs1,simm6": lambda i: (i.rs1,),
    "rd,va,vb": lambda i: (i.rd, i.rs1, i.rs2),
    "rd,na,nb,nd,mem!": lambda i: (i.rd, i.rs2, i.rs3, i.rs1),
    "rd,rs1,rs2,rs3": lambda i: (i.rs1, i.rs2, i.rs3),
    "rd,rs1": lambda i: (i.rs1,),
    "": lambda i: (),
    "rs1,rs2": lambda i: (i.rs1, i.rs2),
    "rd,rs1,rs2": _src_rd_rs1_rs2,
    "rs1": lambda i: (i.rs1,),
}


def _sources_rd_rs1_rs2(i: Instr) -> tuple:
    if i.op in ("p.mac",) or i.op.startswith("vfmac"):
        return (i.rs1, i.rs2, i.rd)
    return (i.rs1, i.rs2)


_SOURCES["rd,rs1,rs2"] = _sources_rd_rs1_rs2


# ---------------------------------------------------------------------------
# Minimal environment for functional execution
# ---------------------------------------------------------------------------

class FlatMemory:
    """Sparse little-endian byte memory with the environment hooks used by
    the semantic functions.  DMA is performed instantly; barriers are no-ops.
    """

    def __init__(self):
        self.data: dict[int, int] = {}
        self._dma = {}
        self._events = 0

    def load(self, addr: int, size: int) -> int:
        get = self.data.get
        return sum(get(addr + k, 0) << (8 * k) for k in range(size))

    def store(self, addr: int, size: int, value: int) -> None:
        for k in range(size):
            self.data[addr + k] = (value >> (8 * k)) & 0xFF

    def write_bytes(self, addr: int, blob: bytes) -> None:
        for k, b in enumerate(blob):
            self.data[addr + k] = b

    def read_bytes(self, addr: int, n: int) -> bytes:
        return bytes(self.data.get(addr + k, 0) for k in range(n))

    def barrier(self, core: CoreState) -> None:
        pass

    def dma_cfg(self, core, src, dst):
        self._dma[core.core_id] = {"src": src, "dst": dst, "src_stride": 0, "dst_stride": 0}

    def dma_stride(self, core, src_stride, dst_stride):
        self._dma[core.core_id].update(src_stride=src_stride, dst_stride=dst_stride)

    def dma_start(self, core, length, count):
        d = self._dma[core.core_id]
        for row in range(max(count, 1)):
            blob = self.read_bytes(d["src"] + row * d["src_stride"], length)
            self.write_bytes(d["dst"] + row * d["dst_stride"], blob)
        self._events += 1
        return self._events

    def dma_wait(self, core, event):
        return True


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------

def _next(core: CoreState) -> None:
    core.pc = (core.pc + 4) & M32


def _check_align(core, ins, addr, size):
    if addr % size:
        raise SimulationError(f"misaligned {size}-byte access at 0x{addr:08x}",
                              core.core_id, ins.pc, ins.line)


def _alu(op: str, a: int, b: int) -> int:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "sll":
        return a << (b & 31)
    if op == "srl":
        return (a & M32) >> (b & 31)
    if op == "sra":
        return s32(a) >> (b & 31)
    if op == "slt":
        return int(s32(a) < s32(b))
    if op == "sltu":
        return int((a & M32) < (b & M32))
    raise KeyError(op)


def _mul(op: str, a: int, b: int, acc: int) -> int:
    sa, sb = s32(a), s32(b)
    if op == "mul":
        return sa * sb
    if op == "p.mac":
        return acc + sa * sb
    if op == "mulh":
        return (sa * sb) >> 32
    if op == "mulhsu":
        return (sa * (b & M32)) >> 32
    if op == "mulhu":
        return ((a & M32) * (b & M32)) >> 32
    if op in ("div", "rem"):
        if sb == 0:
            return -1 if op == "div" else sa
        if sa == -(1 << 31) and sb == -1:
            return sa if op == "div" else 0
        q = abs(sa) // abs(sb)
        q = q if (sa < 0) == (sb < 0) else -q
        return q if op == "div" else sa - q * sb
    ua, ub = a & M32, b & M32
    if op == "divu":
        return ua // ub if ub else M32
    if op == "remu":
        return ua % ub if ub else ua
    raise KeyError(op)


def exec_base(core: CoreState, ins: Instr, env=None) -> CoreState:
    """Integer ALU, multiply, branch, jump, CSR and bit-field operations."""
    op = ins.op
    r = core.regs
    cls = OPS[op].opclass
    if cls == "branch":
        a, b = r[ins.rs1], r[ins.rs2]
        if op == "beq":
            taken = a == b
        elif op == "bne":
            taken = a != b
        elif op == "blt":
            taken = s32(a) < s32(b)
        elif op == "bge":
            taken = s32(a) >= s32(b)
        elif op == "bltu":
            taken = a < b
        else:
            taken = a >= b
        core.pc = ins.target_pc if taken else (core.pc + 4) & M32
        return core
    if op == "jal":
        core.write(ins.rd, core.pc + 4)
        core.pc = ins.target_pc
        return core
    if op == "jalr":
        dest = (r[ins.rs1] + ins.imm) & ~1 & M32
        core.write(ins.rd, core.pc + 4)
        core.pc = dest
        return core
    if cls == "csr":
        old = core.read_csr(ins.imm)
        src = ins.imm2 if op.endswith("i") else r[ins.rs1]
        kind = op[:5]
        writes = kind == "csrrw" or src != 0
        if kind == "csrrw":
            new = src
        elif kind == "csrrs":
            new = old | src
        else:
            new = old & ~src
        if writes:
            core.write_csr(ins.imm, new)
        core.write(ins.rd, old)
        _next(core)
        return core
    if op == "ecall":
        core.halted = True
        _next(core)
        return core
    if cls == "mul":
        value = _mul(op, r[ins.rs1], r[ins.rs2], r[ins.rd])
        if op == "p.mac" and ins.rd:
            core.macs += 1
    elif op == "lui":
        value = ins.imm << 12
    elif op == "auipc":
        value = core.pc + (ins.imm << 12)
    elif op in ("slli", "srli", "srai"):
        value = _alu(op[:3], r[ins.rs1], ins.imm)
    elif op == "sltiu":
        value = int(r[ins.rs1] < (ins.imm & M32))
    elif op.endswith("i") and op[:-1] in ("add", "and", "or", "xor", "slt"):
        value = _alu(op[:-1], r[ins.rs1], ins.imm & M32)
    elif op in ("p.extract", "p.extractu", "p.insert"):
        width, pos = ins.imm + 1, ins.imm2
        mask = ((1 << width) - 1) if width < 32 else M32
        if op == "p.insert":
            value = (r[ins.rd] & ~(mask << pos)) | ((r[ins.rs1] & mask) << pos)
        else:
            field_ = (r[ins.rs1] >> pos) & mask
            value = sext(field_, width) if op == "p.extract" else field_
    else:
        value = _alu(op, r[ins.rs1], r[ins.rs2])
    core.write(ins.rd, value)
    _next(core)
    return core


_LOAD_SIZE = {"lb": 1, "lbu": 1, "lh": 2, "lhu": 2, "lw": 4}
_STORE_SIZE = {"sb": 1, "sh": 2, "sw": 4}


def mem_address(core: CoreState, ins: Instr) -> int:
    """Effective address of a load/store/Mac&Load, computed before execution."""
    base = core.regs[ins.rs1]
    if OPS[ins.op].syntax.endswith("mem!"):
        return base
    return (base + ins.imm) & M32


def access_size(ins: Instr) -> int:
    op = ins.op[2:] if ins.op.startswith("p.") else ins.op
    if op in _LOAD_SIZE:
        return _LOAD_SIZE[op]
    return _STORE_SIZE.get(op, 4)


def exec_postinc_mem(core: CoreState, ins: Instr, env) -> CoreState:
    """Loads and stores, plain (``imm(rs1)``) or post-increment (``imm(rs1!)``)."""
    post = OPS[ins.op].syntax.endswith("mem!")
    base = core.regs[ins.rs1]
    addr = base if post else (base + ins.imm) & M32
    op = ins.op[2:] if ins.op.startswith("p.") else ins.op
    if op in _LOAD_SIZE:
        size = _LOAD_SIZE[op]
        _check_align(core, ins, addr, size)
        value = env.load(addr, size)
        if op in ("lb", "lh"):
            value = sext(value, 8 * size)
        if post:
            core.write(ins.rs1, base + ins.imm)
        core.write(ins.rd, value)
    else:
        size = _STORE_SIZE[op]
        _check_align(core, ins, addr, size)
        env.store(addr, size, core.regs[ins.rs2] & ((1 << (8 * size)) - 1))
        if post:
            core.write(ins.rs1, base + ins.imm)
    _next(core)
    return core


_SIGNS = {"sp": (True, True), "up": (False, False), "usp": (False, True)}


def _require(core, ins, level):
    if ISA_LEVELS.index(core.isa) < ISA_LEVELS.index(level):
        raise SimulationError(f"{ins.op} requires {level} (core is {core.isa})",
                              core.core_id, ins.pc, ins.line)


def _static_width(core: CoreState, ins: Instr) -> int | None:
    """Width of a suffixed dot product (``pv.sdotsp.b``); None means SIMD_FMT."""
    parts = ins.op.split(".")
    if len(parts) < 3:
        return None
    width = SUFFIX_WIDTH[parts[2]]
    if width < 8:
        _require(core, ins, "xpulpnn")
    return width


def _sdotp_core(core: CoreState, acc_idx: int, a_word: int, b_word: int, variant: str,
                width: int | None = None) -> None:
    fmt = core.simd_fmt if width is None else SimdFormat(width, width)
    a_signed, b_signed = _SIGNS[variant]
    a = unpack_lanes(a_word, fmt.a_width, a_signed)
    if fmt.a_width == fmt.b_width:
        b = unpack_lanes(b_word, fmt.b_width, b_signed)
    else:
        b = slice_and_route(b_word, fmt.with_signs(a_signed, b_signed), core.mpc_cnt)
        core.mpc_cnt = (core.mpc_cnt + 1) % fmt.ratio
    total = core.regs[acc_idx]
    total = s32(total) + sum(x * y for x, y in zip(a, b))
    core.write(acc_idx, total)
    if acc_idx:
        core.macs += len(a)


def exec_sdotp(core: CoreState, ins: Instr, env=None) -> CoreState:
    """Sum-of-dot-product.  Unsuffixed forms take their widths from SIMD_FMT
    (virtual SIMD); suffixed forms are uniform at the suffix width."""
    if (ins.rs1 >= NN_BASE or ins.rs2 >= NN_BASE):
        _require(core, ins, "xpulpnn")
    r = core.regs
    _sdotp_core(core, ins.rd, r[ins.rs1], r[ins.rs2], ins.variant, _static_width(core, ins))
    _next(core)
    return core


def exec_mlsdotp(core: CoreState, ins: Instr, env) -> CoreState:
    """Fused Mac&Load: dot product on NN-RF operands plus a 32-bit load into
    ``rd2`` from ``[rs1]`` with ``rs1 += imm`` afterwards.

    With ``rd = x0`` the dot-product half is idle: a pure NN-RF load that
    neither counts MACs nor advances ``mpc_cnt`` (used for loop prologues).
    """
    _require(core, ins, "xpulpnn")
    r = core.regs
    a_word, b_word = r[ins.rs2], r[ins.rs3]
    addr = r[ins.rs1]
    _check_align(core, ins, addr, 4)
    width = _static_width(core, ins)
    loaded = env.load(addr, 4)
    if ins.rd:
        _sdotp_core(core, ins.rd, a_word, b_word, ins.variant, width)
    core.write(ins.rs1, addr + ins.imm)
    r[ins.rd2] = loaded & M32
    _next(core)
    return core


def _simd_alu(op: str, a: list[int], b: list[int], width: int) -> list[int]:
    if op == "add":
        return [x + y for x, y in zip(a, b)]
    if op == "sub":
        return [x - y for x, y in zip(a, b)]
    if op == "and":
        return [x & y for x, y in zip(a, b)]
    if op == "or":
        return [x | y for x, y in zip(a, b)]
    if op == "xor":
        return [x ^ y for x, y in zip(a, b)]
    if op in ("max", "maxu"):
        return [max(x, y) for x, y in zip(a, b)]
    if op in ("min", "minu"):
        return [min(x, y) for x, y in zip(a, b)]
    mask = (1 << width) - 1
    if op == "sll":
        return [(x << (y % width)) & mask for x, y in zip(a, b)]
    if op in ("srl", "sra"):
        return [x >> (y % width) for x, y in zip(a, b)]
    raise KeyError(op)


def exec_simd_alu(core: CoreState, ins: Instr, env=None) -> CoreState:
    parts = ins.op.split(".")
    op, width = parts[1], SUFFIX_WIDTH[parts[-1]]
    if width < 8:
        _require(core, ins, "xpulpnn")
    signed = op in ("sra", "max", "min")
    a = unpack_lanes(core.regs[ins.rs1], width, signed)
    if len(parts) == 4:  # .sci form: immediate replicated across lanes
        b = [ins.imm] * len(a)
    else:
        b = unpack_lanes(core.regs[ins.rs2], width, signed)
    if op == "srl":
        a = unpack_lanes(core.regs[ins.rs1], width, False)
    core.write(ins.rd, pack_lanes(_simd_alu(op, a, b, width), width))
    _next(core)
    return core


def _fp_parts(op: str):
    name, sfx = op.split(".", 1)
    return name, sfx


def exec_fp(core: CoreState, ins: Instr, env=None, fmt: FpFormat | None = None) -> CoreState:
    """Scalar and 2-lane SIMD floating point on GP registers, RNE rounding."""
    name, sfx = _fp_parts(ins.op)
    r = core.regs
    if name.startswith("fcvt"):
        _exec_fcvt(core, ins)
        _next(core)
        return core
    simd = name.startswith("vf")
    ff = _FP_SUFFIX[sfx]
    width = ff.width
    lanes = 2 if simd else 1
    mask = ff.mask
    a_word, b_word, c_word = r[ins.rs1], r[ins.rs2], r[ins.rs3]
    acc_word = r[ins.rd]
    out = 0
    for lane in range(lanes):
        sh = lane * width
        a = (a_word >> sh) & mask
        b = (b_word >> sh) & mask
        if name in ("fadd", "vfadd"):
            v = fpu.fadd(a, b, ff)
        elif name in ("fsub", "vfsub"):
            v = fpu.fsub(a, b, ff)
        elif name in ("fmul", "vfmul"):
            v = fpu.fmul(a, b, ff)
        elif name == "vfmac":
            v = fpu.fma(a, b, (acc_word >> sh) & mask, ff)
        elif name == "fmadd":
            v = fpu.fma(a, b, c_word & mask, ff)
        elif name == "fmsub":
            v = fpu.fma(a, b, (c_word & mask) ^ (1 << (width - 1)), ff)
        elif name == "fnmadd":
            v = fpu.fma(a ^ (1 << (width - 1)), b, (c_word & mask) ^ (1 << (width - 1)), ff)
        elif name == "fnmsub":
            v = fpu.fma(a ^ (1 << (width - 1)), b, c_word & mask, ff)
        elif name == "fdiv":
            v = fpu.fdiv(a, b, ff)
        elif name == "fsqrt":
            v = fpu.fsqrt(a, ff)
        elif name in ("fmin", "fmax"):
            fa, fb = fpu.to_float(a, ff), fpu.to_float(b, ff)
            if fpu.is_nan(a, ff):
                v = b
            elif fpu.is_nan(b, ff):
                v = a
            else:
                v = a if (fa < fb) == (name == "fmin") else b
        else:
            raise SimulationError(f"unhandled fp op {ins.op}", core.core_id, ins.pc, ins.line)
        out |= v << sh
    if name in ("fmadd", "fmsub", "fnmadd", "fnmsub", "vfmac", "fadd", "fsub", "fmul",
                "vfadd", "vfsub", "vfmul"):
        core.flops += 2 * lanes if name in ("fmadd", "fmsub", "fnmadd", "fnmsub",
                                            "vfmac") else lanes
    core.write(ins.rd, out)
    _next(core)
    return core


def _exec_fcvt(core: CoreState, ins: Instr) -> None:
    _, dst, src = ins.op.split(".")
    value = core.regs[ins.rs1]
    if src == "w":
        ff = _FP_SUFFIX[dst]
        v = s32(value)
        out = fpu.round_pack(1 if v < 0 else 0, abs(v), 0, ff)
    elif dst == "w":
        ff = _FP_SUFFIX[src]
        x = fpu.to_float(value & ff.mask, ff)
        if x != x:
            out = 0x7FFFFFFF
        else:
            out = max(-(1 << 31), min((1 << 31) - 1, int(round(x))))
    else:
        out = fpu.convert(value & _FP_SUFFIX[src].mask, _FP_SUFFIX[src], _FP_SUFFIX[dst])
    core.write(ins.rd, out)


def exec_hwloop(core: CoreState, ins: Instr, env=None) -> CoreState:
    """``lp.setup``/``lp.setupi``: arm hardware loop ``ins.imm``."""
    count = ins.imm2 if ins.op == "lp.setupi" else core.regs[ins.rs1]
    if count < 1:
        raise SimulationError(f"hardware loop count {count} < 1", core.core_id, ins.pc, ins.line)
    loop = core.hw_loops[ins.imm]
    loop.start_pc = (core.pc + 4) & M32
    loop.end_pc = ins.target_pc
    loop.remaining_count = count
    _next(core)
    return core


def hwloop_redirect(core: CoreState, fallthrough_pc: int) -> bool:
    """End-of-body check done after an instruction that did not branch.

    Loop 0 has priority.  Returns True when the PC was redirected to a loop
    start; the back-edge costs no cycles.
    """
    for loop in core.hw_loops:
        if loop.remaining_count and fallthrough_pc == loop.end_pc:
            if loop.remaining_count > 1:
                loop.remaining_count -= 1
                core.pc = loop.start_pc
                return True
            loop.remaining_count = 0
    return False


def exec_sync(core: CoreState, ins: Instr, env) -> CoreState:
    """Cluster-level operations: barrier, fence.t and DMA control."""
    op = ins.op
    r = core.regs
    if op == "barrier":
        env.barrier(core)
    elif op == "fence.t":
        flush = getattr(env, "fence_t", None)
        if flush is not None:
            flush(core)
        core.mpc_cnt = 0
    elif op == "dma.cfg":
        env.dma_cfg(core, r[ins.rs1], r[ins.rs2])
    elif op == "dma.stride":
        env.dma_stride(core, r[ins.rs1], r[ins.rs2])
    elif op == "dma.start":
        core.write(ins.rd, env.dma_start(core, r[ins.rs1], r[ins.rs2]))
    elif op == "dma.wait":
        env.dma_wait(core, r[ins.rs1])
    _next(core)
    return core


_EXEC_BY_CLASS = {
    "base-alu": exec_base,
    "mul": exec_base,
    "branch": exec_base,
    "jump": exec_base,
    "csr": exec_base,
    "load": exec_postinc_mem,
    "store": exec_postinc_mem,
    "lp-setup": exec_hwloop,
    "simd-alu": exec_simd_alu,
    "sdotp": exec_sdotp,
    "mlsdotp": exec_mlsdotp,
    "fp-fma": exec_fp,
    "fp-simd-fma": exec_fp,
    "fence-t": exec_sync,
    "barrier": exec_sync,
    "dma-ctl": exec_sync,
}


def semantic(ins: Instr):
    try:
        return _EXEC_BY_CLASS[OPS[ins.op].opclass]
    except KeyError:
        raise SimulationError(f"unknown opclass for {ins.op}") from None


def step(core: CoreState, ins: Instr, env) -> CoreState:
    """Execute one instruction including the hardware-loop end check."""
    pc = core.pc
    semantic(ins)(core, ins, env)
    if core.pc == (pc + 4) & M32:
        hwloop_redirect(core, core.pc)
    return core


def run_functional(program, env, core: CoreState | None = None, max_steps: int = 10_000_000):
    """Sequential, untimed execution of an assembled program on one core.

    Used as the reference against which the timed cluster engine is checked.
    """
    by_pc = {ins.pc: ins for ins in program.instructions}
    if core is None:
        core = CoreState()
    core.pc = program.entry
    for _ in range(max_steps):
        if core.halted:
            return core
        ins = by_pc.get(core.pc)
        if ins is None:
            core.halted = True
            return core
        step(core, ins, env)
    raise SimulationError(f"no halt within {max_steps} steps", core.core_id, core.pc)
