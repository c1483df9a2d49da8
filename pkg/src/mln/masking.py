"""Edit masks from cross-attention differences between two prompts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import bilinear_resize, minmax_normalize, quantile
from .predictor import Predictor, PromptEmbedding, RegenConfig, Sampler, regenerate
from .tokenizer import ScaleSchedule, TokenPyramid


@dataclass(frozen=True)
class MaskConfig:
    q: float = 80.0
    start: int = 7
    layers: tuple[int, int] = (2, 3)

    def check(self, K: int, n_layers: int) -> None:
        if not 0.0 < self.q < 100.0:
            raise ValueError(f"mask percentile must lie in (0, 100), got {self.q}")
        if not 1 <= self.start < K:
            raise ValueError(f"mask start scale must lie in [1, {K}), got {self.start}")
        lo, hi = self.layers
        if not 0 <= lo <= hi < n_layers:
            raise ValueError(f"layer range {self.layers} invalid for {n_layers} layers")


def middle_layers(n_layers: int) -> tuple[int, int]:
    """Middle third of the blocks (inclusive range)."""
    lo = n_layers // 3
    hi = max(lo, n_layers - n_layers // 3 - 1)
    return lo, hi


@dataclass(frozen=True, eq=False)
class MaskPyramid:
    base: np.ndarray
    masks: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.masks)

    def edit(self, k: int) -> np.ndarray:
        """Binary edit mask at scale ``k`` (1-based)."""
        return self.masks[k - 1]

    def keep(self, k: int) -> np.ndarray:
        """Complementary preservation mask at scale ``k``."""
        return 1.0 - self.masks[k - 1]

    @property
    def finest(self) -> np.ndarray:
        return self.masks[-1]

    def is_empty(self) -> bool:
        return all(not m.any() for m in self.masks)

    @classmethod
    def full(cls, schedule: ScaleSchedule, value: float) -> "MaskPyramid":
        base = np.full(schedule.latent, float(value))
        return cls(base, tuple(np.full(d, float(value)) for d in schedule.scales))


def attention_difference(att_s: np.ndarray, att_t: np.ndarray,
                         layers: tuple[int, int] | None = None) -> np.ndarray:
    """Mean absolute difference of per-map normalised attention, over heads then layers.

    Inputs are (layers, heads, h, w) stacks recorded at the same scale.
    ``layers`` is an inclusive index range; ``None`` uses every layer.
    """
    a = np.asarray(att_s, dtype=np.float64)
    b = np.asarray(att_t, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 4:
        raise ValueError(f"attention layout mismatch: {a.shape} vs {b.shape}")
    lo, hi = (0, a.shape[0] - 1) if layers is None else layers
    if not 0 <= lo <= hi < a.shape[0]:
        raise ValueError(f"layer range {layers} invalid for {a.shape[0]} layers")
    diffs = []
    for l in range(lo, hi + 1):
        per_head = [np.abs(minmax_normalize(a[l, t]) - minmax_normalize(b[l, t]))
                    for t in range(a.shape[1])]
        diffs.append(np.mean(per_head, axis=0))
    return np.mean(diffs, axis=0)


def build_mask(diff, q: float) -> np.ndarray:
    """1 where the difference strictly exceeds its ``q``-th percentile."""
    d = np.asarray(diff, dtype=np.float64)
    return (d > quantile(d, q)).astype(np.float64)


def mask_pyramid(base, schedule: ScaleSchedule) -> MaskPyramid:
    base = np.asarray(base, dtype=np.float64)
    if base.shape != schedule.latent:
        raise ValueError(f"base mask {base.shape} does not match latent grid {schedule.latent}")
    masks = tuple((bilinear_resize(base, *dims) >= 0.5).astype(np.float64) for dims in schedule.scales)
    return MaskPyramid(base, masks)


def extract_masks(source: TokenPyramid, prompt_s: PromptEmbedding, prompt_t: PromptEmbedding,
                  config: MaskConfig, predictor: Predictor,
                  regen: RegenConfig = RegenConfig()) -> MaskPyramid:
    """Two greedy regeneration passes from ``config.start``; diff the finest-scale attention."""
    schedule = predictor.schedule
    config.check(schedule.K, predictor.config.n_layers)
    greedy = regen.with_sampler(Sampler())
    _, att_s = regenerate(source, config.start, prompt_s, predictor, greedy)
    if prompt_s.same_as(prompt_t):
        att_t = att_s
    else:
        _, att_t = regenerate(source, config.start, prompt_t, predictor, greedy)
    K = schedule.K
    diff = attention_difference(att_s[K], att_t[K], config.layers)
    return mask_pyramid(build_mask(diff, config.q), schedule)
