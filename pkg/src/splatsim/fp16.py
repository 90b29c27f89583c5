"""Bit-exact IEEE binary16 arithmetic and the hardware leaky-ReLU trick.

A half value is carried as its 16-bit pattern (a plain int in 0..0xFFFF).
Layout: 1 sign bit, 5 exponent bits (bias 15), 10 mantissa bits.

Single adds and multiplies of two binary16 values are exact in float64
(the sum spans at most 40 significand bits, the product at most 22), so
compute-in-double followed by one round-to-nearest-even is the correctly
rounded binary16 result.  exp() is modeled the same way: exact real exp,
then one rounding.

Array code elsewhere uses numpy.float16, whose per-ufunc rounding has the
same semantics; the scalar routines here are the reference, and the test
suite checks the two against each other exhaustively.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

SIGN_MASK = 0x8000
EXP_MASK = 0x7C00
MANT_MASK = 0x03FF
EXP_SHIFT = 10
EXP_BIAS = 15

POS_INF = 0x7C00
NEG_INF = 0xFC00
NAN = 0x7E00

LEAKY_SLOPE = 0.125  # 1/8, one exponent decrement by 3 in hardware

ARITH_MODES = ("exact", "fp16")


def require_mode(mode: str) -> str:
    if mode not in ARITH_MODES:
        raise ValueError(f"unknown arithmetic mode {mode!r}, expected one of {ARITH_MODES}")
    return mode


def dtype_for(mode: str):
    return np.float64 if require_mode(mode) == "exact" else np.float16


def fp16_to_float(bits: int) -> float:
    """Exact value of a bit pattern as a Python float (binary16 is a subset of binary64)."""
    sign = -1.0 if bits & SIGN_MASK else 1.0
    e = (bits >> EXP_SHIFT) & 0x1F
    m = bits & MANT_MASK
    if e == 0x1F:
        if m:
            return math.nan
        return sign * math.inf
    if e == 0:
        return sign * m * 2.0 ** -24
    return sign * (1024 + m) * 2.0 ** (e - 25)


def _round_shift_rne(v: int, s: int) -> int:
    # v >> s with round-to-nearest, ties-to-even on the dropped bits.
    q = v >> s
    low = v & ((1 << s) - 1)
    half = 1 << (s - 1)
    if low > half or (low == half and (q & 1)):
        q += 1
    return q


def float_to_fp16(x: float) -> int:
    """Round a real (binary64) value to the nearest binary16 pattern, ties to even."""
    d = struct.unpack("<Q", struct.pack("<d", float(x)))[0]
    sign = (d >> 63) << 15
    e = (d >> 52) & 0x7FF
    m = d & ((1 << 52) - 1)
    if e == 0x7FF:
        return NAN if m else sign | POS_INF
    if e == 0:
        # double subnormal, far below half the smallest half subnormal
        return sign
    unbiased = e - 1023
    full = (1 << 52) | m
    if unbiased >= -14:
        q = _round_shift_rne(full, 42)  # keep 10 fraction bits + implicit bit
        he = unbiased + EXP_BIAS
        if q == (1 << 11):  # rounded up to the next binade
            q >>= 1
            he += 1
        if he >= 31:
            return sign | POS_INF
        return sign | (he << EXP_SHIFT) | (q - (1 << 10))
    # subnormal target: count units of 2^-24
    shift = 28 - unbiased
    if shift >= 64:
        return sign
    k = _round_shift_rne(full, shift)
    return sign | k  # k == 1024 lands exactly on the smallest normal


def classify(bits: int) -> str:
    """Total classification of all 65536 patterns: zero/subnormal/normal/inf/nan."""
    e = (bits >> EXP_SHIFT) & 0x1F
    m = bits & MANT_MASK
    if e == 0:
        return "zero" if m == 0 else "subnormal"
    if e == 0x1F:
        return "inf" if m == 0 else "nan"
    return "normal"


def fp16_add(a: int, b: int) -> int:
    return float_to_fp16(fp16_to_float(a) + fp16_to_float(b))


def fp16_mul(a: int, b: int) -> int:
    return float_to_fp16(fp16_to_float(a) * fp16_to_float(b))


def fp16_exp(bits: int) -> int:
    x = fp16_to_float(bits)
    if x == -math.inf:
        return 0x0000
    try:
        y = math.exp(x)
    except OverflowError:
        y = math.inf
    return float_to_fp16(y)


def leaky_relu_exact(x: float, slope: float = LEAKY_SLOPE) -> float:
    return x if x >= 0.0 else x * slope


def leaky_relu_hw(bits: int) -> int:
    """Hardware leaky ReLU on a bit pattern: negatives are divided by 8 by
    subtracting 3 from the exponent field.

    Non-negative patterns (including +inf and NaNs with clear sign) and
    negative zeros/subnormals/inf/NaN pass through untouched.  Negative
    normals with exponent field >= 4 get the exact exponent decrement.
    Exponent fields 1..3 would underflow the normal range, so the result
    saturates to the correctly rounded exact quotient x/8 instead; the
    scan report below enumerates exactly those patterns.
    """
    if not bits & SIGN_MASK:
        return bits
    e = (bits >> EXP_SHIFT) & 0x1F
    if e == 0 or e == 0x1F:
        return bits
    if e >= 4:
        return bits - (3 << EXP_SHIFT)
    return float_to_fp16(fp16_to_float(bits) / 8.0)


@dataclass
class LeakyReluScan:
    """Exhaustive census of leaky_relu_hw over all 65536 bit patterns."""

    negative_normals: int
    exponent_trick_exact: int  # exponent-decrement domain, equals exact x/8 rounding
    underflow_fallbacks: int  # exponent fields 1..3, saturated to the exact quotient
    trick_only_mismatches: int  # where a bare 16-bit exponent decrement differs from exact
    unchanged: int  # zero/positive/subnormal/inf/nan inputs passed through
    mismatch_bits: tuple

    def to_dict(self) -> dict:
        return {
            "negative_normals": self.negative_normals,
            "exponent_trick_exact": self.exponent_trick_exact,
            "underflow_fallbacks": self.underflow_fallbacks,
            "trick_only_mismatches": self.trick_only_mismatches,
            "unchanged": self.unchanged,
        }


def scan_leaky_relu() -> LeakyReluScan:
    neg_normals = 0
    trick_exact = 0
    fallbacks = 0
    mismatches = []
    unchanged = 0
    for bits in range(0x10000):
        out = leaky_relu_hw(bits)
        e = (bits >> EXP_SHIFT) & 0x1F
        if not (bits & SIGN_MASK) or e == 0 or e == 0x1F:
            assert out == bits
            unchanged += 1
            continue
        neg_normals += 1
        exact = float_to_fp16(fp16_to_float(bits) / 8.0)
        assert out == exact
        bare = (bits - (3 << EXP_SHIFT)) & 0xFFFF
        if e >= 4:
            assert out == bare
            trick_exact += 1
        else:
            fallbacks += 1
            if bare != exact:
                mismatches.append(bits)
    return LeakyReluScan(
        negative_normals=neg_normals,
        exponent_trick_exact=trick_exact,
        underflow_fallbacks=fallbacks,
        trick_only_mismatches=len(mismatches),
        unchanged=unchanged,
        mismatch_bits=tuple(mismatches),
    )


def leaky_relu_hw_np(x: np.ndarray) -> np.ndarray:
    """Vectorized leaky_relu_hw over a float16 array, same bit semantics."""
    x = np.ascontiguousarray(x, dtype=np.float16)
    bits = x.view(np.uint16)
    out = bits.copy()
    e = (bits >> EXP_SHIFT) & np.uint16(0x1F)
    negnorm = (bits & SIGN_MASK != 0) & (e >= 1) & (e <= 30)
    big = negnorm & (e >= 4)
    out[big] = bits[big] - np.uint16(3 << EXP_SHIFT)
    small = negnorm & (e < 4)
    if small.any():
        exact = (x[small].astype(np.float64) / 8.0).astype(np.float16)
        out[small] = exact.view(np.uint16)
    return out.view(np.float16).reshape(x.shape)


def exp_array(x: np.ndarray, mode: str) -> np.ndarray:
    """exp under an arithmetic mode: fp16 keeps the exact-exp-then-round model."""
    if require_mode(mode) == "exact":
        return np.exp(x)
    return np.exp(x.astype(np.float64)).astype(np.float16)
