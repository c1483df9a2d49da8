"""Deterministic numeric kernels shared by every stage of the editor.

Spatial maps are plain ``numpy`` arrays laid out ``(height, width, channels)``
(row-major); single-channel maps may also be passed as ``(height, width)``.
Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0


def as_grid(data, *, name: str = "map") -> np.ndarray:
    """Validate ``data`` as a finite (h, w) or (h, w, c) float64 grid."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def softmax(values, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile with ``q`` given in percent.

    Position ``(n - 1) * q / 100`` in the sorted values, interpolated between
    the two neighbouring order statistics.
    """
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"quantile percent must lie in [0, 100], got {q}")
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of an empty vector")
    # multiply first: (n - 1) * q is exact for integer q, so integer positions stay integral
    pos = (v.size - 1) * q / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    if frac == 0.0:
        return float(v[lo])
    return float(v[lo] + (v[hi] - v[lo]) * frac)


def _sample_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # corner-aligned; a single output sample sits at the source centre
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.int64)
    lo = np.clip(lo, 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(grid, target_h: int, target_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize applied independently per channel.

    Resizing to the source dimensions returns an exact copy.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {(target_h, target_w)}")
    arr = as_grid(grid, name="resize input")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    if (h, w) == (target_h, target_w):
        out = arr.copy()
    else:
        r0, r1, fr = _sample_coords(h, target_h)
        c0, c1, fc = _sample_coords(w, target_w)
        fr = fr[:, None, None]
        fc = fc[None, :, None]
        top = arr[r0][:, c0] * (1.0 - fc) + arr[r0][:, c1] * fc
        bot = arr[r1][:, c0] * (1.0 - fc) + arr[r1][:, c1] * fc
        out = top * (1.0 - fr) + bot * fr
    return out[:, :, 0] if squeeze else out


def minmax_normalize(grid) -> np.ndarray:
    """Rescale to [0, 1]; a constant map becomes all zeros."""
    arr = np.asarray(grid, dtype=np.float64)
    lo = float(np.min(arr))
    hi = float(np.max(arr))
    if hi - lo <= 0.0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for signals in [0, 1]; identical inputs report 99 dB."""
    err = mse(a, b)
    if err <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / err)))


def masked_mse(a, b, keep) -> float:
    """MSE restricted to positions where ``keep`` (h, w) is nonzero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    sel = np.asarray(keep) > 0
    if not sel.any():
        return 0.0
    return float(np.mean((a[sel] - b[sel]) ** 2))


def psnr_from_mse(err: float) -> float:
    if err <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / err)))


_MASK64 = (1 << 64) - 1


def _mix(*parts: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update((p & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngState:
    """Counter-based random stream: a Philox generator keyed by (seed, counter).

    ``split`` derives an independent child stream, so per-scale draws never
    depend on how many numbers another stage consumed.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.counter & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def split(self, stream: int) -> "RngState":
        return RngState(self.seed, _mix(self.counter, stream))
