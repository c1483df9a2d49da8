"""Multi-scale residual vector quantizer and the analytic pixel codec.

The quantizer follows the VAR recipe: at every scale the running residual is
resized to that scale's grid, each position picks its nearest codebook
vector, and the looked-up vectors are resized back to the latent grid and
subtracted.  What is left after the last scale is ``f_rest``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from .numerics import as_grid, bilinear_resize


class TokenCorruptionError(ValueError):
    """A token map references an index outside the codebook."""


@dataclass(frozen=True, eq=False)
class Codebook:
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2:
            raise ValueError(f"codebook must be (V, d), got {vec.shape}")
        if vec.shape[0] < 2 or vec.shape[1] < 1:
            raise ValueError(f"codebook needs V >= 2 and d >= 1, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("codebook contains non-finite values")
        if np.unique(vec, axis=0).shape[0] != vec.shape[0]:
            raise ValueError("codebook contains duplicate vectors")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def uniform(cls, size: int, dim: int, seed: int = 0, scale: float = 0.5,
                centered: bool = True) -> "Codebook":
        """Seeded uniform draws on [-scale, scale]^d; index 0 is the zero vector.

        With ``centered`` the random rows are shifted so the whole codebook
        has zero mean (soft projections of a zero residual then vanish).
        The default half-width keeps the soft projection at temperature 0.2
        contractive; at 1.0 it overshoots.
        """
        rng = np.random.Generator(np.random.Philox(key=seed))
        rows = rng.uniform(-scale, scale, size=(size - 1, dim))
        if centered:
            rows -= rows.sum(axis=0) / size
        return cls(np.vstack([np.zeros((1, dim)), rows]))

    @classmethod
    def kmeans(cls, samples: np.ndarray, size: int, seed: int = 0, iters: int = 20) -> "Codebook":
        """Lloyd iterations on ``samples`` (N, d); row 0 stays the zero vector."""
        x = np.asarray(samples, dtype=np.float64).reshape(-1, samples.shape[-1])
        rng = np.random.Generator(np.random.Philox(key=seed))
        if x.shape[0] < size - 1:
            raise ValueError("not enough samples for k-means initialisation")
        centers = x[rng.choice(x.shape[0], size - 1, replace=False)].copy()
        for _ in range(iters):
            full = np.vstack([np.zeros((1, x.shape[1])), centers])
            assign = nearest_indices(x, full)
            for j in range(1, size):
                members = x[assign == j]
                if len(members):
                    centers[j - 1] = members.mean(axis=0)
        # jitter exact duplicates (empty clusters can coincide)
        full = np.vstack([np.zeros((1, x.shape[1])), centers])
        _, first = np.unique(full, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(size), first)
        full[dup] += rng.normal(scale=1e-3, size=(len(dup), x.shape[1]))
        return cls(full)

    def save(self, path) -> None:
        container.write(path, {"codebook": self.vectors})

    @classmethod
    def load(cls, path) -> "Codebook":
        sections = container.read(path)
        if "codebook" not in sections:
            raise container.ContainerError("file has no codebook section")
        return cls(sections["codebook"])


@dataclass(frozen=True)
class ScaleSchedule:
    scales: tuple[tuple[int, int], ...]

    def __post_init__(self):
        scales = tuple((int(h), int(w)) for h, w in self.scales)
        if not scales:
            raise ValueError("empty scale schedule")
        if scales[0] != (1, 1):
            raise ValueError(f"first scale must be (1, 1), got {scales[0]}")
        for (h0, w0), (h1, w1) in zip(scales, scales[1:]):
            if h1 < h0 or w1 < w0 or (h1, w1) == (h0, w0):
                raise ValueError(f"scales must grow at every step: {(h0, w0)} -> {(h1, w1)}")
        object.__setattr__(self, "scales", scales)

    @classmethod
    def square(cls, sizes: Sequence[int]) -> "ScaleSchedule":
        return cls(tuple((s, s) for s in sizes))

    @property
    def K(self) -> int:
        return len(self.scales)

    @property
    def latent(self) -> tuple[int, int]:
        return self.scales[-1]

    def dims(self, k: int) -> tuple[int, int]:
        """Grid of scale ``k`` (1-based)."""
        if not 1 <= k <= self.K:
            raise ValueError(f"scale {k} outside 1..{self.K}")
        return self.scales[k - 1]


@dataclass(frozen=True, eq=False)
class TokenPyramid:
    """Token maps r_1..r_K, stored as int64 arrays of shape (h_k, w_k)."""

    maps: tuple[np.ndarray, ...]

    def __post_init__(self):
        maps = []
        for m in self.maps:
            arr = np.array(m, dtype=np.int64)
            if arr.ndim != 2:
                raise ValueError(f"token map must be 2-D, got {arr.shape}")
            arr.setflags(write=False)
            maps.append(arr)
        object.__setattr__(self, "maps", tuple(maps))

    def __len__(self) -> int:
        return len(self.maps)

    def __getitem__(self, k: int) -> np.ndarray:
        """Token map of scale ``k`` (1-based)."""
        return self.maps[k - 1]

    def truncate(self, k: int) -> "TokenPyramid":
        return TokenPyramid(self.maps[:k])

    def equals(self, other: "TokenPyramid") -> bool:
        return len(self) == len(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.maps, other.maps)
        )

    def check(self, schedule: ScaleSchedule, vocab: int | None = None) -> None:
        if len(self) > schedule.K:
            raise ValueError(f"pyramid has {len(self)} maps, schedule only {schedule.K}")
        for k, m in enumerate(self.maps, start=1):
            if m.shape != schedule.dims(k):
                raise ValueError(f"scale {k}: map {m.shape} != schedule {schedule.dims(k)}")
            if vocab is not None and (m.min() < 0 or m.max() >= vocab):
                raise TokenCorruptionError(f"scale {k}: token index outside [0, {vocab})")

    def save(self, path) -> None:
        container.write(path, {f"scale{k:02d}": m for k, m in enumerate(self.maps, start=1)})

    @classmethod
    def load(cls, path) -> "TokenPyramid":
        sections = container.read(path)
        keys = sorted(t for t in sections if t.startswith("scale"))
        if not keys:
            raise container.ContainerError("file has no token sections")
        return cls(tuple(sections[t] for t in keys))


@dataclass(frozen=True, eq=False)
class ResidualState:
    f: np.ndarray
    f_rest: np.ndarray
    lookups: tuple[np.ndarray, ...]
    norms: tuple[float, ...] = field(default=())


def nearest_indices(x: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest row of ``vectors`` for every row of ``x``.

    Ties go to the lowest index.  Distances are formed from explicit
    differences (not the expanded dot-product form) so results match a
    brute-force scan.
    """
    out = np.empty(x.shape[0], dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, vectors.size))
    for start in range(0, x.shape[0], chunk):
        diff = x[start:start + chunk, None, :] - vectors[None, :, :]
        out[start:start + chunk] = np.argmin(np.sum(diff * diff, axis=-1), axis=1)
    return out


def lookup_up(tokens, codebook: Codebook, target: tuple[int, int]) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.min() < 0 or tokens.max() >= codebook.size:
        raise TokenCorruptionError(f"token index outside [0, {codebook.size})")
    native = codebook.vectors[tokens]
    return bilinear_resize(native, *target)


def aggregate(pyramid: TokenPyramid, codebook: Codebook, schedule: ScaleSchedule) -> np.ndarray:
    """Sum of every scale's looked-up vectors, upsampled to the latent grid."""
    if len(pyramid) != schedule.K:
        raise ValueError(f"pyramid has {len(pyramid)} maps, schedule expects {schedule.K}")
    pyramid.check(schedule, codebook.size)
    h, w = schedule.latent
    out = np.zeros((h, w, codebook.dim))
    for m in pyramid.maps:
        out += lookup_up(m, codebook, (h, w))
    return out


def aggregate_prefix(pyramid: TokenPyramid, codebook: Codebook, latent: tuple[int, int]) -> np.ndarray:
    """Like :func:`aggregate` but for a (possibly empty) leading slice of scales."""
    out = np.zeros((*latent, codebook.dim))
    for m in pyramid.maps:
        out += lookup_up(m, codebook, latent)
    return out


def quantize(f, codebook: Codebook, schedule: ScaleSchedule) -> tuple[TokenPyramid, ResidualState]:
    f = as_grid(f, name="features")
    if f.ndim != 3 or f.shape[2] != codebook.dim:
        raise ValueError(f"feature channels {f.shape} do not match codebook dim {codebook.dim}")
    if f.shape[:2] != schedule.latent:
        raise ValueError(f"features {f.shape[:2]} do not match latent grid {schedule.latent}")
    h, w, d = f.shape
    residual = f.copy()
    maps, lookups, norms = [], [], []
    for hk, wk in schedule.scales:
        down = bilinear_resize(residual, hk, wk)
        idx = nearest_indices(down.reshape(-1, d), codebook.vectors).reshape(hk, wk)
        native = codebook.vectors[idx]
        residual = residual - bilinear_resize(native, h, w)
        maps.append(idx)
        lookups.append(native)
        norms.append(float(np.linalg.norm(residual)))
    state = ResidualState(f=f, f_rest=residual, lookups=tuple(lookups), norms=tuple(norms))
    return TokenPyramid(tuple(maps)), state


@dataclass(frozen=True, eq=False)
class PixelCodec:
    """Analytic stand-in for a learned encoder/decoder pair.

    Encoding averages each ``patch x patch`` block to an RGB triple, centres it
    at 0.5 and maps it into ``dim`` channels with a seeded matrix whose columns
    are orthonormal.  Decoding applies the transpose, broadcasts over the
    patch and clamps to [0, 1].
    """

    patch: int
    dim: int
    seed: int = 0

    def __post_init__(self):
        if self.patch < 1:
            raise ValueError("patch size must be >= 1")
        if self.dim < 3:
            raise ValueError("feature dim must be >= 3 for an orthonormal RGB projection")

    @property
    def projection(self) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=self.seed + 0x5EED))
        q, r = np.linalg.qr(rng.normal(size=(self.dim, 3)))
        return q * np.sign(np.diag(r))[None, :]

    def patch_means(self, image) -> np.ndarray:
        img = as_grid(image, name="image")
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected an RGB image (H, W, 3), got {img.shape}")
        H, W, _ = img.shape
        p = self.patch
        if H % p or W % p:
            raise ValueError(f"image {H}x{W} not divisible by patch size {p}")
        return img.reshape(H // p, p, W // p, p, 3).mean(axis=(1, 3))

    def encode(self, image) -> np.ndarray:
        return (self.patch_means(image) - 0.5) @ self.projection.T

    def decode(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 3 or f.shape[2] != self.dim:
            raise ValueError(f"expected (h, w, {self.dim}) features, got {f.shape}")
        rgb = f @ self.projection + 0.5
        rgb = np.repeat(np.repeat(rgb, self.patch, axis=0), self.patch, axis=1)
        return np.clip(rgb, 0.0, 1.0)


def encode_image(image, latent: tuple[int, int], dim: int, seed: int = 0) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3:
        raise ValueError(f"expected an RGB image (H, W, 3), got {img.shape}")
    h, w = latent
    if img.shape[0] % h or img.shape[1] % w or img.shape[0] // h != img.shape[1] // w:
        raise ValueError(f"image {img.shape[:2]} does not tile into latent grid {latent}")
    return PixelCodec(img.shape[0] // h, dim, seed).encode(img)


def decode_features(features, patch: int, seed: int = 0) -> np.ndarray:
    f = np.asarray(features)
    return PixelCodec(patch, f.shape[-1], seed).decode(f)
