"""Quantization refinement: iterative soft projection of the residual onto the codebook.

Each iteration turns the current residual ``f - f_hat`` into a convex
combination of codebook vectors (softmax over inner products at temperature
``tau``), steps the internal reconstruction by it everywhere, and adds the
same step to the output only where the preservation mask is set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import softmax
from .tokenizer import Codebook


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 5
    tau: float = 0.2
    step: float = 1.0
    tol: float = 1e-4

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("refinement needs at least one iteration")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if not 0.0 < self.step <= 1.0:
            raise ValueError(f"step size must lie in (0, 1], got {self.step}")
        if self.tol < 0:
            raise ValueError("tolerance must be >= 0")


PRESETS = {
    "512": RefineConfig(iterations=5, tau=0.2),
    "1024": RefineConfig(iterations=3, tau=0.8),
}


@dataclass
class RefinementTrace:
    norms: list[float] = field(default_factory=list)
    stop_reason: str = "max-iters"

    def to_dict(self) -> dict:
        return {"norms": list(self.norms), "stop_reason": self.stop_reason}


def soft_assign(residuals, codebook: Codebook, tau: float) -> np.ndarray:
    """Row-stochastic (N, V) weights ``softmax(<z, c_i> / tau)``."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(residuals, dtype=np.float64)
    scores = z @ codebook.vectors.T
    return softmax(scores / tau, axis=1)


def project(residual, codebook: Codebook, tau: float) -> np.ndarray:
    """Map each position of an (h, w, d) residual into the codebook's convex hull."""
    r = np.asarray(residual, dtype=np.float64)
    if r.shape[-1] != codebook.dim:
        raise ValueError(f"residual channels {r.shape[-1]} != codebook dim {codebook.dim}")
    flat = r.reshape(-1, codebook.dim)
    return (soft_assign(flat, codebook, tau) @ codebook.vectors).reshape(r.shape)


def residual_norm(residual: np.ndarray) -> float:
    """Mean over positions of the per-position l2 norm."""
    return float(np.mean(np.linalg.norm(residual, axis=-1)))


def refine(f, f_hat0, codebook: Codebook, keep, config: RefineConfig = RefineConfig()):
    """Refine ``f_hat0`` toward ``f`` outside the edit region.

    ``keep`` is the (h, w) preservation mask (1 = refine, 0 = edited).
    Returns ``(f_out, trace)``.
    """
    f = np.asarray(f, dtype=np.float64)
    f_hat0 = np.asarray(f_hat0, dtype=np.float64)
    keep = np.asarray(keep, dtype=np.float64)
    if f.shape != f_hat0.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {f_hat0.shape}")
    if keep.shape != f.shape[:2]:
        raise ValueError(f"mask {keep.shape} does not match feature grid {f.shape[:2]}")
    if not np.all((keep == 0) | (keep == 1)):
        raise ValueError("preservation mask must be binary")

    f_hat = f_hat0.copy()
    f_out = f_hat0.copy()
    gate = keep[:, :, None] > 0
    trace = RefinementTrace()
    for _ in range(config.iterations):
        rest = f - f_hat
        r = residual_norm(rest)
        trace.norms.append(r)
        if r < config.tol:
            trace.stop_reason = "tolerance"
            break
        step = config.step * project(rest, codebook, config.tau)
        f_hat = f_hat + step
        # where() keeps edited positions bitwise equal to f_hat0
        f_out = np.where(gate, f_out + step, f_out)
    return f_out, trace


def refine_features(f_hat, f, codebook: Codebook, keep, config: RefineConfig | None, style: bool = False):
    """Pipeline wiring for refinement; style edits and ``config=None`` pass through."""
    if style or config is None:
        return np.asarray(f_hat, dtype=np.float64), None
    return refine(f, f_hat, codebook, keep, config)
