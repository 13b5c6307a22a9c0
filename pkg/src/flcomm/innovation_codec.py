"""Gradient-innovation codec: low-bit uniform quantization with a range header.

A client encodes the change of its gradient against a synchronized reference
into integer indices on a uniform grid over [-R, +R], where R is the
per-message max-magnitude, carried as an IEEE-754 binary32 header. Index i
reconstructs to i * 2tR - R with step t = 2^-b, so indices span [0, 2^b]
and cost b+1 bits each on the wire. Encode and decode are pure and
deterministic; the reference advances by the *dequantized* innovation on
both ends, which keeps client and server bitwise synchronized.
"""

import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantizedInnovation:
    indices: np.ndarray  # int64, each in [0, 2^b]
    range_r: float       # exactly representable in binary32 (wire header)
    bits_b: int

    @property
    def step_t(self) -> float:
        return 2.0 ** -self.bits_b

    @property
    def dim(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class RawInnovation:
    """Identity codec: the innovation at full precision, accounted at 32
    bits per component. Used when quantization is disabled so the pipeline
    reduces exactly to the uncompressed loop."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.size


def compute_innovation(current: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Elementwise difference between the fresh gradient and the reference."""
    current = np.asarray(current, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if current.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {current.shape} vs {ref.shape}")
    return current - ref


def quantize(delta: np.ndarray, bits_b: int) -> QuantizedInnovation:
    """Encode a vector into indices on the uniform grid over [-R, +R].

    R is the max absolute entry, rounded through binary32 so the value on
    the wire is exactly the value used for reconstruction. An all-zero
    vector uses R = 1 by convention; its indices land on the midpoint
    2^(b-1), which dequantizes to exactly zero.
    """
    if not 1 <= bits_b <= 16:
        raise ValueError(f"bits_b must be in [1, 16], got {bits_b}")
    delta = np.asarray(delta, dtype=np.float64)
    if not np.isfinite(delta).all():
        raise ValueError("cannot quantize non-finite values")
    raw_r = float(np.abs(delta).max()) if delta.size else 0.0
    if raw_r == 0.0:
        r = 1.0
    else:
        r32 = np.float32(raw_r)
        if np.isinf(r32):
            raise ValueError("innovation magnitude overflows the binary32 range header")
        # subnormal underflow: fall back to the smallest normal so the grid
        # stays well-defined (the error bound only loosens)
        r = float(r32) if r32 > 0.0 else float(np.finfo(np.float32).smallest_normal)
    t = 2.0 ** -bits_b
    idx = np.floor((delta + r) / (2.0 * t * r) + 0.5)
    idx = np.clip(idx, 0, 2 ** bits_b).astype(np.int64)
    return QuantizedInnovation(indices=idx, range_r=r, bits_b=bits_b)


def dequantize(qi) -> np.ndarray:
    """Reconstruct: index * 2tR - R, one multiply and one subtract per entry.
    The identity codec reconstructs to its stored values."""
    if isinstance(qi, RawInnovation):
        return qi.values
    scale = 2.0 * qi.step_t * qi.range_r
    return qi.indices * scale - qi.range_r


def quantization_error(delta: np.ndarray, qi: QuantizedInnovation) -> np.ndarray:
    """Residual delta - reconstruction; bounded per component by R / 2^b."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size != qi.dim:
        raise ValueError(f"dimension mismatch: {delta.size} vs {qi.dim}")
    return delta - dequantize(qi)


def encoded_bits(qi) -> int:
    """Exact accounted payload: d*(b+1) index bits + 32-bit range + 8-bit
    depth; the identity codec costs a bare 32 bits per component."""
    if isinstance(qi, RawInnovation):
        return qi.dim * 32
    return qi.dim * (qi.bits_b + 1) + 32 + 8


def advance_reference(ref: np.ndarray, qi) -> np.ndarray:
    """Reference after a delivered message: ref + reconstruction.

    Applied identically by sender and receiver; on a skipped round neither
    side touches the reference.
    """
    ref = np.asarray(ref, dtype=np.float64)
    if ref.size != qi.dim:
        raise ValueError(f"dimension mismatch: {ref.size} vs {qi.dim}")
    return ref + dequantize(qi)


def pack_message(qi: QuantizedInnovation) -> bytes:
    """Wire layout: [b: u8][R: f32 little-endian][d fields of b+1 bits,
    MSB-first, zero-padded to a byte boundary]."""
    width = qi.bits_b + 1
    header = struct.pack("<Bf", qi.bits_b, qi.range_r)
    if qi.dim == 0:
        return header
    shifts = np.arange(width - 1, -1, -1)
    bits = ((qi.indices[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return header + np.packbits(bits).tobytes()


def unpack_message(data: bytes, dim: int) -> QuantizedInnovation:
    """Inverse of pack_message; the receiver supplies the vector length."""
    if len(data) < 5:
        raise ValueError(f"message truncated: {len(data)} bytes")
    bits_b, range_r = struct.unpack_from("<Bf", data)
    if not 1 <= bits_b <= 16:
        raise ValueError(f"invalid bit depth {bits_b}")
    width = bits_b + 1
    expected = 5 + (dim * width + 7) // 8
    if len(data) != expected:
        raise ValueError(f"message length {len(data)} != expected {expected} for d={dim}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=5)
    bits = np.unpackbits(payload)
    used = dim * width
    if bits[used:].any():
        raise ValueError("nonzero padding bits")
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    idx = bits[:used].reshape(dim, width).astype(np.int64) @ weights
    if (idx > 2 ** bits_b).any():
        raise ValueError("index out of range for declared bit depth")
    return QuantizedInnovation(indices=idx, range_r=float(range_r), bits_b=int(bits_b))
