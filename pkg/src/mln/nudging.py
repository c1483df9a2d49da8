"""Logit nudging toward source tokens, its masked variant, and nudging schedules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .masking import MaskPyramid
from .numerics import softmax
from .predictor import Predictor, PromptEmbedding, RegenConfig, regenerate
from .tokenizer import TokenPyramid

# reference profiles at K = 10, peak value 12
SMOOTH_PROFILE = (12.0, 11.5, 11.0, 10.0, 9.0, 8.0, 6.0, 3.0, 1.5, 0.5)
SHARP_PROFILE = (12.0, 12.0, 12.0, 12.0, 12.0, 12.0, 12.0, 4.0, 2.0, 0.0)
_PROFILES = {"smooth": SMOOTH_PROFILE, "sharp": SHARP_PROFILE}


@dataclass(frozen=True)
class NudgeSchedule:
    alphas: tuple[float, ...]
    cutoff: int
    beta: float
    name: str = "custom"

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValueError("empty nudging schedule")
        if any(a < 0 for a in alphas):
            raise ValueError("nudging strengths must be nonnegative")
        if not 1 <= self.cutoff <= len(alphas):
            raise ValueError(f"cutoff must lie in [1, {len(alphas)}], got {self.cutoff}")
        if self.beta < 0:
            raise ValueError("preservation weight must be nonnegative")
        object.__setattr__(self, "alphas", alphas)

    @property
    def K(self) -> int:
        return len(self.alphas)

    def alpha(self, k: int) -> float:
        return self.alphas[k - 1]


def _resample(profile: Sequence[float], K: int) -> np.ndarray:
    if K == len(profile):
        return np.asarray(profile, dtype=np.float64)
    src = np.linspace(0.0, 1.0, len(profile))
    dst = np.linspace(0.0, 1.0, K) if K > 1 else np.zeros(1)
    return np.interp(dst, src, profile)


def make_schedule(name: str, K: int, cutoff: int, alpha_max: float = 12.0,
                  beta: Optional[float] = None, alphas: Optional[Sequence[float]] = None) -> NudgeSchedule:
    """Build a named (``smooth``/``sharp``) or explicit (``custom``) schedule.

    Named profiles are defined at K = 10 and resampled piecewise-linearly over
    the normalised scale index for other K, then scaled by ``alpha_max / 12``.
    ``beta`` defaults to the largest strength in the schedule.
    """
    if not 1 <= cutoff <= K:
        raise ValueError(f"cutoff must lie in [1, {K}], got {cutoff}")
    if name == "custom":
        if alphas is None or len(alphas) != K:
            raise ValueError(f"custom schedule needs exactly {K} strengths")
        values = np.asarray(alphas, dtype=np.float64)
    elif name in _PROFILES:
        values = _resample(_PROFILES[name], K) * (alpha_max / 12.0)
    else:
        raise ValueError(f"unknown schedule {name!r}")
    if beta is None:
        beta = float(values.max())
    return NudgeSchedule(tuple(float(v) for v in values), cutoff, float(beta), name)


def _direction(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    r = np.asarray(tokens, dtype=np.int64)
    if z.ndim != 3 or r.shape != z.shape[:2]:
        raise ValueError(f"logits {z.shape} and tokens {r.shape} are inconsistent")
    if r.min() < 0 or r.max() >= z.shape[2]:
        raise ValueError("source token index outside the vocabulary")
    d = -softmax(z, axis=-1)
    np.put_along_axis(d, r[..., None], np.take_along_axis(d, r[..., None], axis=-1) + 1.0, axis=-1)
    return d


def nudge(logits, tokens, alpha: float) -> np.ndarray:
    """``z + alpha * (onehot(r) - softmax(z))`` per position."""
    z = np.asarray(logits, dtype=np.float64)
    d = _direction(z, tokens)
    if alpha == 0:
        return z.copy()
    return z + alpha * d


def masked_nudge(logits, tokens, alpha: float, beta: float, edit, keep) -> np.ndarray:
    """Strength ``alpha`` inside the edit mask and ``beta`` outside it."""
    z = np.asarray(logits, dtype=np.float64)
    edit = np.asarray(edit, dtype=np.float64)
    keep = np.asarray(keep, dtype=np.float64)
    if edit.shape != z.shape[:2] or keep.shape != z.shape[:2]:
        raise ValueError(f"masks {edit.shape}/{keep.shape} do not match logits {z.shape[:2]}")
    if not np.all(edit + keep == 1.0) or not np.all((edit == 0) | (edit == 1)):
        raise ValueError("edit and keep masks must be complementary binary maps")
    d = _direction(z, tokens)
    strength = beta * keep + alpha * edit
    return z + strength[..., None] * d


def nudged_regenerate(source: TokenPyramid, prompt: PromptEmbedding, schedule: NudgeSchedule,
                      masks: MaskPyramid, fix_up_to: int, predictor: Predictor,
                      config: RegenConfig = RegenConfig()):
    """Regenerate under ``prompt``, masked-nudging toward ``source`` from the cutoff scale on.

    Scales strictly between ``fix_up_to`` and the cutoff are sampled from
    the plain guided logits.
    """
    K = predictor.schedule.K
    if schedule.K != K:
        raise ValueError(f"schedule has {schedule.K} strengths, model has {K} scales")
    if len(masks) != K:
        raise ValueError(f"mask pyramid has {len(masks)} scales, model has {K}")
    if not 0 <= fix_up_to < K:
        raise ValueError(f"fix_up_to must lie in [0, {K}), got {fix_up_to}")

    def hook(k: int, logits: np.ndarray) -> np.ndarray:
        if k < schedule.cutoff:
            return logits
        return masked_nudge(logits, source[k], schedule.alpha(k), schedule.beta,
                            masks.edit(k), masks.keep(k))

    return regenerate(source, fix_up_to, prompt, predictor, config, hook=hook)
