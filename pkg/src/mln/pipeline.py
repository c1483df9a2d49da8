"""End-to-end flows: reconstruction, masked edit and style edit."""
from __future__ import annotations

import hashlib
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .config import EditConfig
from .fixtures import golden_images
from .masking import MaskConfig, MaskPyramid, extract_masks, middle_layers
from .numerics import mse, masked_mse, psnr_from_mse
from .nudging import NudgeSchedule, make_schedule, nudged_regenerate
from .predictor import Planted, Predictor, PredictorConfig, RegenConfig, Sampler, embed_prompt
from .refinement import RefineConfig, RefinementTrace, refine_features
from .tokenizer import Codebook, PixelCodec, ScaleSchedule, TokenPyramid, aggregate, quantize


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True, eq=False)
class Model:
    codec: PixelCodec
    codebook: Codebook
    schedule: ScaleSchedule
    predictor: Predictor


@lru_cache(maxsize=8)
def _build_model(image_size, patch, feature_dim, codebook_size, codebook_init, codebook_scale,
                 codebook_seed, scales, d_model, n_layers, n_heads, model_seed) -> Model:
    codec = PixelCodec(patch, feature_dim, seed=codebook_seed)
    schedule = ScaleSchedule.square(scales)
    if codebook_init == "kmeans":
        samples = np.concatenate([codec.encode(img).reshape(-1, feature_dim)
                                  for img in golden_images(image_size)])
        codebook = Codebook.kmeans(samples, codebook_size, seed=codebook_seed)
    else:
        codebook = Codebook.uniform(codebook_size, feature_dim, seed=codebook_seed, scale=codebook_scale)
    predictor = Predictor(codebook, schedule, PredictorConfig(d_model, n_layers, n_heads), seed=model_seed)
    return Model(codec, codebook, schedule, predictor)


def build_model(config: EditConfig) -> Model:
    c = config
    return _build_model(c.image_size, c.patch, c.feature_dim, c.codebook_size, c.codebook_init,
                        c.codebook_scale, c.codebook_seed, tuple(c.scales), c.d_model, c.n_layers,
                        c.n_heads, c.model_seed)


def nudge_schedule(config: EditConfig) -> NudgeSchedule:
    return make_schedule(config.schedule, config.K, config.k_cut, config.alpha_max,
                         beta=config.beta, alphas=config.alphas)


def mask_config(config: EditConfig) -> MaskConfig:
    layers = tuple(config.mask_layers) if config.mask_layers else middle_layers(config.n_layers)
    return MaskConfig(q=config.q, start=config.mask_start, layers=layers)


def regen_config(config: EditConfig) -> RegenConfig:
    return RegenConfig(Sampler.parse(config.sampler), config.cfg_weight,
                       tuple(config.cfg_band), config.seed)


def refine_config(config: EditConfig) -> Optional[RefineConfig]:
    if not config.refine:
        return None
    return RefineConfig(config.refine_iterations, config.refine_tau, config.refine_step, config.refine_tol)


@dataclass
class EditReport:
    mode: str
    image: np.ndarray
    masks: MaskPyramid
    source_tokens: TokenPyramid
    tokens: TokenPyramid
    token_changes: list[int]
    mse: float
    psnr: float
    mse_outside: float
    psnr_outside: float
    trace: Optional[RefinementTrace]
    timings_ms: dict[str, float] = field(default_factory=dict)

    def payload(self) -> dict:
        """Everything except wall-clock timings (deterministic for a fixed seed)."""
        img = np.round(np.clip(self.image, 0, 1) * 255).astype(np.uint8)
        return {
            "mode": self.mode,
            "image_sha256": hashlib.sha256(img.tobytes()).hexdigest(),
            "mask_coverage": [float(m.mean()) for m in self.masks.masks],
            "token_changes": list(self.token_changes),
            "mse": self.mse,
            "psnr": self.psnr,
            "mse_outside": self.mse_outside,
            "psnr_outside": self.psnr_outside,
            "refinement": None if self.trace is None else self.trace.to_dict(),
        }

    def record(self) -> dict:
        rec = self.payload()
        rec["timings_ms"] = dict(self.timings_ms)
        return rec


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter_ns()
        try:
            yield
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, str(exc)) from exc
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + (time.perf_counter_ns() - t0) / 1e6


def _finish(mode, image, config, model, timer, f, source, tokens, masks, keep, style,
            predictor=None) -> EditReport:
    with timer.stage("aggregate"):
        f_hat = aggregate(tokens, model.codebook, model.schedule)
    with timer.stage("refine"):
        f_out, trace = refine_features(f_hat, f, model.codebook, keep,
                                       refine_config(config), style=style)
    with timer.stage("decode"):
        out = model.codec.decode(f_out)
    changes = [int(np.count_nonzero(a != b)) for a, b in zip(source.maps, tokens.maps)]
    keep_px = np.repeat(np.repeat(keep, model.codec.patch, axis=0), model.codec.patch, axis=1)
    err = mse(out, image)
    err_out = masked_mse(out, image, keep_px)
    return EditReport(mode, out, masks, source, tokens, changes, err, psnr_from_mse(err),
                      err_out, psnr_from_mse(err_out), trace, timer.ms)


def _encode(image, model: Model, timer: _Timer):
    image = np.asarray(image, dtype=np.float64)
    with timer.stage("encode"):
        f = model.codec.encode(image)
    with timer.stage("quantize"):
        source, _ = quantize(f, model.codebook, model.schedule)
    return image, f, source


def reconstruct(image, prompt: str, config: EditConfig, planted: Optional[Planted] = None) -> EditReport:
    """Zero-edit pass: preservation-only nudging (empty edit mask) from scale ``s``."""
    config.validate()
    model = build_model(config)
    predictor = model.predictor.with_planted(planted) if planted else model.predictor
    timer = _Timer()
    image, f, source = _encode(image, model, timer)
    masks = MaskPyramid.full(model.schedule, 0.0)
    with timer.stage("nudge"):
        tokens, _ = nudged_regenerate(source, embed_prompt(prompt), nudge_schedule(config), masks,
                                      config.s, predictor, regen_config(config))
    keep = np.ones(model.schedule.latent)
    return _finish("reconstruct", image, config, model, timer, f, source, tokens, masks, keep, False)


def edit(image, prompt_s: str, prompt_t: str, config: EditConfig,
         planted: Optional[Planted] = None) -> EditReport:
    """Masked edit: attention-difference mask, masked nudging, gated refinement."""
    if config.style:
        return edit_style(image, prompt_s, prompt_t, config, planted)
    config.validate()
    if not prompt_s.strip() or not prompt_t.strip():
        raise ValueError("edit prompts must be nonempty")
    model = build_model(config)
    predictor = model.predictor.with_planted(planted) if planted else model.predictor
    timer = _Timer()
    image, f, source = _encode(image, model, timer)
    emb_s, emb_t = embed_prompt(prompt_s), embed_prompt(prompt_t)
    regen = regen_config(config)
    with timer.stage("mask"):
        masks = extract_masks(source, emb_s, emb_t, mask_config(config), predictor, regen)
    with timer.stage("nudge"):
        tokens, _ = nudged_regenerate(source, emb_t, nudge_schedule(config), masks,
                                      config.s, predictor, regen)
    keep = 1.0 - masks.finest
    return _finish("edit", image, config, model, timer, f, source, tokens, masks, keep, False)


def edit_style(image, prompt_s: str, prompt_t: str, config: EditConfig,
               planted: Optional[Planted] = None) -> EditReport:
    """Global edit: all-ones mask at every scale, refinement disabled."""
    if not config.style:
        config = config.replace(style=True)
    config.validate()
    if not prompt_s.strip() or not prompt_t.strip():
        raise ValueError("edit prompts must be nonempty")
    model = build_model(config)
    predictor = model.predictor.with_planted(planted) if planted else model.predictor
    timer = _Timer()
    image, f, source = _encode(image, model, timer)
    masks = MaskPyramid.full(model.schedule, 1.0)
    with timer.stage("nudge"):
        tokens, _ = nudged_regenerate(source, embed_prompt(prompt_t), nudge_schedule(config), masks,
                                      config.s, predictor, regen_config(config))
    keep = np.zeros(model.schedule.latent)
    return _finish("style", image, config, model, timer, f, source, tokens, masks, keep, True)


def time_mask_pass(image, prompt_s: str, prompt_t: str, config: EditConfig) -> float:
    """Wall-clock milliseconds for the two attention-capture passes alone."""
    model = build_model(config)
    f = model.codec.encode(np.asarray(image, dtype=np.float64))
    source, _ = quantize(f, model.codebook, model.schedule)
    emb_s, emb_t = embed_prompt(prompt_s), embed_prompt(prompt_t)
    t0 = time.perf_counter_ns()
    extract_masks(source, emb_s, emb_t, mask_config(config), model.predictor, regen_config(config))
    return (time.perf_counter_ns() - t0) / 1e6
