"""Bit-exact binary floating point for the cluster FPU.

Values travel as raw bit patterns (ints).  Arithmetic is carried out on exact
integer significands and rounded once, round-to-nearest-even, into the target
format, so a fused multiply-add really is fused.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass


@dataclass(frozen=True)
class FloatFormat:
    name: str
    exp_bits: int
    mant_bits: int

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def bias(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1

    @property
    def qnan(self) -> int:
        return ((1 << self.exp_bits) - 1) << self.mant_bits | 1 << (self.mant_bits - 1)

    @property
    def inf(self) -> int:
        return ((1 << self.exp_bits) - 1) << self.mant_bits


FP32 = FloatFormat("fp32", 8, 23)
FP16 = FloatFormat("fp16", 5, 10)
BF16 = FloatFormat("bfloat16", 8, 7)

FORMATS = {f.name: f for f in (FP32, FP16, BF16)}

_NAN, _INF, _ZERO, _NUM = range(4)


def unpack(bits: int, fmt: FloatFormat):
    """Split ``bits`` into (kind, sign, significand, exponent).

    For finite numbers the value is ``(-1)**sign * significand * 2**exponent``.
    """
    bits &= fmt.mask
    sign = bits >> (fmt.width - 1)
    exp = (bits >> fmt.mant_bits) & ((1 << fmt.exp_bits) - 1)
    frac = bits & ((1 << fmt.mant_bits) - 1)
    if exp == (1 << fmt.exp_bits) - 1:
        return (_NAN if frac else _INF), sign, 0, 0
    if exp == 0:
        if frac == 0:
            return _ZERO, sign, 0, 0
        return _NUM, sign, frac, 1 - fmt.bias - fmt.mant_bits
    return _NUM, sign, frac | (1 << fmt.mant_bits), exp - fmt.bias - fmt.mant_bits


def round_pack(sign: int, sig: int, exp: int, fmt: FloatFormat) -> int:
    """Round ``(-1)**sign * sig * 2**exp`` to ``fmt`` (nearest-even)."""
    if sig == 0:
        return sign << (fmt.width - 1)
    mb = fmt.mant_bits
    emin = 1 - fmt.bias
    top = exp + sig.bit_length() - 1
    quantum = max(top, emin) - mb
    if exp < quantum:
        shift = quantum - exp
        rem = sig & ((1 << shift) - 1)
        sig >>= shift
        half = 1 << (shift - 1)
        if rem > half or (rem == half and sig & 1):
            sig += 1
    else:
        sig <<= exp - quantum
    exp = quantum
    if sig >> (mb + 1):
        sig >>= 1
        exp += 1
    if sig >> mb:
        field = exp + mb + fmt.bias
        if field >= (1 << fmt.exp_bits) - 1:
            return sign << (fmt.width - 1) | fmt.inf
        return sign << (fmt.width - 1) | field << mb | (sig - (1 << mb))
    return sign << (fmt.width - 1) | sig


def fma(a: int, b: int, c: int, fmt: FloatFormat) -> int:
    """a * b + c with a single rounding."""
    ka, sa, ma, ea = unpack(a, fmt)
    kb, sb, mb, eb = unpack(b, fmt)
    kc, sc, mc, ec = unpack(c, fmt)
    if _NAN in (ka, kb, kc):
        return fmt.qnan
    sp = sa ^ sb
    if ka == _INF or kb == _INF:
        if ka == _ZERO or kb == _ZERO:
            return fmt.qnan
        if kc == _INF and sc != sp:
            return fmt.qnan
        return sp << (fmt.width - 1) | fmt.inf
    if kc == _INF:
        return c & fmt.mask
    if ka == _ZERO or kb == _ZERO:
        if kc == _ZERO:
            return (sp & sc) << (fmt.width - 1)
        return c & fmt.mask
    mp, ep = ma * mb, ea + eb
    if kc == _ZERO:
        return round_pack(sp, mp, ep, fmt)
    e = min(ep, ec)
    total = (-mp if sp else mp) << (ep - e)
    total += (-mc if sc else mc) << (ec - e)
    if total == 0:
        return 0
    return round_pack(1 if total < 0 else 0, abs(total), e, fmt)


def fadd(a: int, b: int, fmt: FloatFormat) -> int:
    return fma(a, one(fmt), b, fmt)


def fsub(a: int, b: int, fmt: FloatFormat) -> int:
    return fma(a, one(fmt), b ^ (1 << (fmt.width - 1)), fmt)


def fmul(a: int, b: int, fmt: FloatFormat) -> int:
    # adding -0 leaves every product (including +0) unchanged
    return fma(a, b, 1 << (fmt.width - 1), fmt)


def fdiv(a: int, b: int, fmt: FloatFormat) -> int:
    ka, sa, ma, ea = unpack(a, fmt)
    kb, sb, mb, eb = unpack(b, fmt)
    s = sa ^ sb
    if _NAN in (ka, kb) or (ka == kb and ka in (_INF, _ZERO)):
        return fmt.qnan
    if ka == _INF or kb == _ZERO:
        return s << (fmt.width - 1) | fmt.inf
    if ka == _ZERO or kb == _INF:
        return s << (fmt.width - 1)
    extra = 2 * fmt.width + 8
    q, r = divmod(ma << extra, mb)
    return round_pack(s, (q << 1) | (1 if r else 0), ea - eb - extra - 1, fmt)


def fsqrt(a: int, fmt: FloatFormat) -> int:
    ka, sa, ma, ea = unpack(a, fmt)
    if ka == _NAN or (sa and ka != _ZERO):
        return fmt.qnan
    if ka in (_ZERO, _INF):
        return a & fmt.mask
    extra = 2 * fmt.width + 8
    if (ea - extra) & 1:
        extra += 1
    n = ma << extra
    root = math.isqrt(n)
    sticky = 1 if root * root != n else 0
    return round_pack(0, (root << 1) | sticky, (ea - extra) // 2 - 1, fmt)


def one(fmt: FloatFormat) -> int:
    return fmt.bias << fmt.mant_bits


def convert(bits: int, src: FloatFormat, dst: FloatFormat) -> int:
    kind, sign, sig, exp = unpack(bits, src)
    if kind == _NAN:
        return dst.qnan
    if kind == _INF:
        return sign << (dst.width - 1) | dst.inf
    if kind == _ZERO:
        return sign << (dst.width - 1)
    return round_pack(sign, sig, exp, dst)


def from_float(x: float, fmt: FloatFormat) -> int:
    """Round a Python float into ``fmt`` bits."""
    if math.isnan(x):
        return fmt.qnan
    if math.isinf(x):
        return (1 << (fmt.width - 1) if x < 0 else 0) | fmt.inf
    if x == 0.0:
        return (1 << (fmt.width - 1)) if math.copysign(1.0, x) < 0 else 0
    m, e = math.frexp(abs(x))
    sig = int(m * (1 << 53))
    return round_pack(1 if x < 0 else 0, sig, e - 53, fmt)


def to_float(bits: int, fmt: FloatFormat) -> float:
    if fmt is FP32:
        return struct.unpack("<f", struct.pack("<I", bits & 0xFFFFFFFF))[0]
    if fmt is FP16:
        return struct.unpack("<e", struct.pack("<H", bits & 0xFFFF))[0]
    return struct.unpack("<f", struct.pack("<I", (bits & 0xFFFF) << 16))[0]


def is_nan(bits: int, fmt: FloatFormat) -> bool:
    return unpack(bits, fmt)[0] == _NAN
