"""Symmetric per-row absmax weight quantization (FP16 / INT8 / INT4).

INT4 codes are packed two per byte, low nibble first; each row is padded to an
even number of codes so rows start on a byte boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QMAX = {"INT8": 127, "INT4": 7}
FORMATS = ("FP32", "FP16", "INT8", "INT4")


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizedWeights:
    format: str
    codes: np.ndarray  # int8 (INT8), uint8 packed (INT4), float16 (FP16)
    scales: np.ndarray  # float64, one per row; empty for FP16
    shape: tuple[int, int]

    def nbytes(self) -> int:
        return int(self.codes.nbytes + (self.scales.size * 4))


def _pack_int4(codes: np.ndarray) -> np.ndarray:
    rows, cols = codes.shape
    if cols % 2:
        codes = np.concatenate([codes, np.zeros((rows, 1), dtype=codes.dtype)], axis=1)
    nib = (codes.astype(np.int16) & 0x0F).astype(np.uint8)
    return (nib[:, 0::2] | (nib[:, 1::2] << 4)).astype(np.uint8)


def _unpack_int4(packed: np.ndarray, cols: int) -> np.ndarray:
    lo = (packed & 0x0F).astype(np.int8)
    hi = (packed >> 4).astype(np.int8)
    lo = np.where(lo > 7, lo - 16, lo)
    hi = np.where(hi > 7, hi - 16, hi)
    out = np.empty((packed.shape[0], packed.shape[1] * 2), dtype=np.int8)
    out[:, 0::2] = lo
    out[:, 1::2] = hi
    return out[:, :cols]


def quantize(weights, fmt: str) -> QuantizedWeights:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise QuantizationError("expected a 2-D weight matrix")
    if w.size == 0:
        raise QuantizationError("empty matrix")
    if not np.all(np.isfinite(w)):
        raise QuantizationError("weights must be finite")
    fmt = fmt.upper()
    if fmt == "FP16":
        return QuantizedWeights("FP16", w.astype(np.float16), np.empty(0), w.shape)
    if fmt not in QMAX:
        raise QuantizationError(f"unsupported format: {fmt}")
    q = QMAX[fmt]
    scales = np.abs(w).max(axis=1) / q
    safe = np.where(scales > 0, scales, 1.0)
    codes = np.rint(w / safe[:, None])
    codes = np.clip(codes, -q, q).astype(np.int8)
    if fmt == "INT4":
        codes = _pack_int4(codes)
    return QuantizedWeights(fmt, codes, scales, w.shape)


def dequantize(q: QuantizedWeights) -> np.ndarray:
    rows, cols = q.shape
    if q.format == "FP16":
        return q.codes.astype(np.float64)
    if q.format == "INT8":
        codes = q.codes
    elif q.format == "INT4":
        if q.codes.shape != (rows, (cols + 1) // 2):
            raise QuantizationError("corrupted INT4 packing")
        codes = _unpack_int4(q.codes, cols)
    else:
        raise QuantizationError(f"unsupported format: {q.format}")
    return codes.astype(np.float64) * q.scales[:, None]


def unpacked_codes(q: QuantizedWeights) -> np.ndarray:
    if q.format == "INT4":
        return _unpack_int4(q.codes, q.shape[1])
    return np.asarray(q.codes)


def unpack_int4_bytes(payload: bytes, rows: int, cols: int) -> np.ndarray:
    """Decode a raw INT4 payload (row-padded); an odd byte count per row is corrupt."""
    per_row = (cols + 1) // 2
    if len(payload) != rows * per_row:
        raise QuantizationError("corrupted INT4 packing: payload length mismatch")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(rows, per_row)
    return _unpack_int4(packed, cols)


def fake_quantize(weights, fmt: str) -> np.ndarray:
    """Round-trip through ``fmt``; FP32 is the identity."""
    if fmt.upper() == "FP32":
        return np.asarray(weights, dtype=np.float64).copy()
    return dequantize(quantize(weights, fmt))
