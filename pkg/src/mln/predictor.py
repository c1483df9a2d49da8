"""Miniature next-scale transformer, guidance, samplers and regeneration.

The predictor is a seeded, untrained stand-in for a text-to-image VAR
backbone.  At scale ``k`` it reads the accumulated features of scales
``1..k-1`` (resized to the ``k``-th grid), runs a few blocks of
self-attention, text cross-attention and MLP, and emits logits over the
codebook for every position.  Cross-attention probabilities are recorded per
layer and head, reduced over text tokens by taking the maximum.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import container
from .numerics import RngState, bilinear_resize, softmax
from .tokenizer import Codebook, ScaleSchedule, TokenPyramid, aggregate_prefix

TEXT_DIM = 16
TEXT_BUCKETS = 4096
_EMBEDDER_SEED = 0x7E47


# ---------------------------------------------------------------- prompts


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    text: str
    token_ids: tuple[int, ...]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.token_ids)

    def same_as(self, other: "PromptEmbedding") -> bool:
        return self.token_ids == other.token_ids and np.array_equal(self.vectors, other.vectors)


def _word_id(word: str) -> int:
    h = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(h, "little") % (TEXT_BUCKETS - 1)


def _text_table() -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=_EMBEDDER_SEED))
    return rng.normal(size=(TEXT_BUCKETS, TEXT_DIM))


_TABLE = _text_table()


def _slot_encoding(n: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    freq = 1.0 / (100.0 ** (np.arange(TEXT_DIM // 2) / (TEXT_DIM // 2)))
    ang = pos * freq[None, :]
    return 0.5 * np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def tokenize_prompt(text: str) -> tuple[int, ...]:
    words = text.lower().split()
    return tuple(_word_id(w) for w in words) or (0,)


def embed_prompt(text: str) -> PromptEmbedding:
    """Hash-bucketed bag-of-words embedding; the empty prompt is one null token."""
    ids = tokenize_prompt(text)
    vectors = _TABLE[list(ids)] + _slot_encoding(len(ids))
    vectors.setflags(write=False)
    return PromptEmbedding(text, ids, vectors)


# ---------------------------------------------------------------- weights


@dataclass(frozen=True)
class PredictorConfig:
    d_model: int = 32
    n_layers: int = 6
    n_heads: int = 4
    mlp_ratio: int = 2
    logit_scale: float = 3.0
    max_scales: int = 32

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("need at least one layer and one head")


@dataclass(frozen=True, eq=False)
class Planted:
    """Hand-set behaviour that gives edit fixtures a known answer.

    Cross-attention scores are replaced by zeros (uniform attention) plus
    ``attn_boost`` wherever a position inside ``region`` meets the
    ``keyword`` token.  Logits get ``gain`` on the ``source`` token, or on the
    ``edited`` token inside ``region`` when the prompt contains ``keyword``.
    """

    source: TokenPyramid
    edited: TokenPyramid
    region: np.ndarray
    keyword: str
    gain: float = 50.0
    attn_boost: float = 12.0

    @property
    def keyword_id(self) -> int:
        return _word_id(self.keyword.lower())

    def region_at(self, dims: tuple[int, int]) -> np.ndarray:
        return bilinear_resize(np.asarray(self.region, dtype=np.float64), *dims) >= 0.5


def _init_params(config: PredictorConfig, codebook: Codebook, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(key=seed))
    D, V, d = config.d_model, codebook.size, codebook.dim
    hidden = config.mlp_ratio * D

    def mat(n_in, n_out, gain=1.0):
        return rng.normal(scale=gain / np.sqrt(n_in), size=(n_in, n_out))

    p = {
        "in_proj": mat(d, D, 2.0),
        "pos_proj": mat(8, D),
        "scale_emb": rng.normal(scale=0.5, size=(config.max_scales, D)),
        "text_proj": mat(TEXT_DIM, D),
        "pool_proj": mat(D, D, 0.5),
        "out_proj": mat(D, V),
    }
    for l in range(config.n_layers):
        for name in ("sq", "sk", "sv", "so", "cq", "ck", "cv", "co"):
            p[f"l{l}.{name}"] = mat(D, D)
        p[f"l{l}.w1"] = mat(D, hidden)
        p[f"l{l}.w2"] = mat(hidden, D)
    return p


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _pos_features(h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    feats = [np.sin(np.pi * f * yy) for f in (1, 2)] + [np.cos(np.pi * f * yy) for f in (1, 2)]
    feats += [np.sin(np.pi * f * xx) for f in (1, 2)] + [np.cos(np.pi * f * xx) for f in (1, 2)]
    return np.stack(feats, axis=-1).reshape(h * w, 8)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, D = x.shape
    return x.reshape(n, heads, D // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    t, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, t * dh)


class Predictor:
    """Seeded next-scale transformer bound to one codebook and scale schedule."""

    def __init__(self, codebook: Codebook, schedule: ScaleSchedule,
                 config: PredictorConfig = PredictorConfig(), seed: int = 0,
                 planted: Optional[Planted] = None, params: Optional[dict] = None):
        if schedule.K > config.max_scales:
            raise ValueError(f"schedule has {schedule.K} scales, config allows {config.max_scales}")
        self.codebook = codebook
        self.schedule = schedule
        self.config = config
        self.seed = seed
        self.planted = planted
        self.params = params if params is not None else _init_params(config, codebook, seed)

    def with_planted(self, planted: Optional[Planted]) -> "Predictor":
        return Predictor(self.codebook, self.schedule, self.config, self.seed, planted, self.params)

    def save(self, path) -> None:
        header = np.array([self.config.d_model, self.config.n_layers, self.config.n_heads,
                           self.config.mlp_ratio, self.config.max_scales], dtype=np.int64)
        seed = np.array([self.seed], dtype=np.uint64).view(np.int32)
        sections = {"header": header, "seed": seed, "logit_scale": np.array([self.config.logit_scale])}
        sections.update({f"p.{k}": v for k, v in self.params.items()})
        container.write(path, sections)

    @classmethod
    def load(cls, path, codebook: Codebook, schedule: ScaleSchedule) -> "Predictor":
        s = container.read(path)
        d_model, n_layers, n_heads, mlp_ratio, max_scales = (int(v) for v in s["header"])
        seed = int(s["seed"].astype(np.int32).view(np.uint64)[0])
        config = PredictorConfig(d_model, n_layers, n_heads, mlp_ratio,
                                 float(s["logit_scale"][0]), max_scales)
        params = {k[2:]: v for k, v in s.items() if k.startswith("p.")}
        if params["out_proj"].shape[1] != codebook.size:
            raise ValueError("weights were built for a different codebook size")
        return cls(codebook, schedule, config, seed, params=params)

    def forward_scale(self, prefix: TokenPyramid, prompt: PromptEmbedding, k: int):
        """Logits (h_k, w_k, V) and attention (layers, heads, h_k, w_k) for scale ``k``."""
        if len(prefix) != k - 1:
            raise ValueError(f"scale {k} needs a prefix of {k - 1} maps, got {len(prefix)}")
        prefix.check(self.schedule, self.codebook.size)
        cfg, p = self.config, self.params
        hk, wk = self.schedule.dims(k)
        n, T = hk * wk, cfg.n_heads
        dh = cfg.d_model // T

        accumulated = aggregate_prefix(prefix, self.codebook, self.schedule.latent)
        feats = bilinear_resize(accumulated, hk, wk).reshape(n, -1)
        text = prompt.vectors @ p["text_proj"]
        x = (feats @ p["in_proj"] + _pos_features(hk, wk) @ p["pos_proj"]
             + p["scale_emb"][k - 1] + text.mean(axis=0) @ p["pool_proj"])

        planted = self.planted
        score_gain = 1.0
        bias = None
        if planted is not None:
            score_gain = 0.0
            region = planted.region_at((hk, wk)).reshape(n)
            hit = np.array(prompt.token_ids) == planted.keyword_id
            bias = planted.attn_boost * (region[:, None] & hit[None, :])

        residual_gain = 1.0 / np.sqrt(cfg.n_layers)
        attention = np.empty((cfg.n_layers, T, hk, wk))
        for l in range(cfg.n_layers):
            h = _layer_norm(x)
            q = _split_heads(h @ p[f"l{l}.sq"], T)
            kk = _split_heads(h @ p[f"l{l}.sk"], T)
            v = _split_heads(h @ p[f"l{l}.sv"], T)
            att = softmax(q @ kk.transpose(0, 2, 1) / np.sqrt(dh), axis=-1)
            x = x + residual_gain * (_merge_heads(att @ v) @ p[f"l{l}.so"])

            h = _layer_norm(x)
            q = _split_heads(h @ p[f"l{l}.cq"], T)
            kk = _split_heads(text @ p[f"l{l}.ck"], T)
            v = _split_heads(text @ p[f"l{l}.cv"], T)
            scores = score_gain * (q @ kk.transpose(0, 2, 1)) / np.sqrt(dh)
            if bias is not None:
                scores = scores + bias[None]
            cross = softmax(scores, axis=-1)
            attention[l] = cross.max(axis=-1).reshape(T, hk, wk)
            x = x + residual_gain * (_merge_heads(cross @ v) @ p[f"l{l}.co"])

            h = _layer_norm(x)
            x = x + residual_gain * (np.tanh(h @ p[f"l{l}.w1"]) @ p[f"l{l}.w2"])

        logits = cfg.logit_scale * (_layer_norm(x) @ p["out_proj"])
        logits = logits.reshape(hk, wk, -1)
        if planted is not None:
            logits = logits + self._planted_logits(prompt, k)
        return logits, attention

    def _planted_logits(self, prompt: PromptEmbedding, k: int) -> np.ndarray:
        planted = self.planted
        dims = self.schedule.dims(k)
        target = np.array(planted.source[k])
        if planted.keyword_id in prompt.token_ids:
            region = planted.region_at(dims)
            target = np.where(region, planted.edited[k], target)
        onehot = np.zeros((*dims, self.codebook.size))
        np.put_along_axis(onehot, target[..., None], planted.gain, axis=-1)
        return onehot


def forward_scale(prefix: TokenPyramid, prompt: PromptEmbedding, k: int, predictor: Predictor):
    return predictor.forward_scale(prefix, prompt, k)


# ---------------------------------------------------------------- guidance


def apply_cfg(cond: np.ndarray, uncond: np.ndarray, weight: float, k: int,
              band: tuple[int, int]) -> np.ndarray:
    """Classifier-free guidance in logit space, active only for ``band[0] <= k <= band[1]``."""
    cond = np.asarray(cond, dtype=np.float64)
    uncond = np.asarray(uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise ValueError(f"shape mismatch: {cond.shape} vs {uncond.shape}")
    lo, hi = band
    if not lo <= k <= hi:
        return cond
    if weight == 1.0:
        return cond.copy()
    if weight == 0.0:
        return uncond.copy()
    return uncond + weight * (cond - uncond)


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class Sampler:
    kind: str = "greedy"
    param: float = 0.0

    def __post_init__(self):
        if self.kind == "greedy":
            return
        if self.kind == "top-k":
            if int(self.param) != self.param or self.param < 1:
                raise ValueError(f"top-k needs an integer k >= 1, got {self.param}")
        elif self.kind == "nucleus":
            if not 0.0 < self.param <= 1.0:
                raise ValueError(f"nucleus needs p in (0, 1], got {self.param}")
        elif self.kind == "gumbel":
            if not self.param > 0.0:
                raise ValueError(f"gumbel needs a positive noise scale, got {self.param}")
        else:
            raise ValueError(f"unknown sampler {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Sampler":
        """``greedy``, ``top-k:8``, ``nucleus:0.9`` or ``gumbel:1.0``."""
        name, _, arg = text.strip().partition(":")
        if name == "greedy":
            if arg:
                raise ValueError("greedy takes no parameter")
            return cls()
        if not arg:
            raise ValueError(f"sampler {name!r} needs a parameter")
        return cls(name, float(arg))

    def __str__(self) -> str:
        if self.kind == "greedy":
            return "greedy"
        if self.kind == "top-k":
            return f"top-k:{int(self.param)}"
        return f"{self.kind}:{self.param!r}"


def _draw_sorted(probs_sorted: np.ndarray, order: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs_sorted, axis=-1)
    cdf /= cdf[:, -1:]
    pick = (cdf < u[:, None]).sum(axis=-1)
    pick = np.minimum(pick, probs_sorted.shape[1] - 1)
    return np.take_along_axis(order, pick[:, None], axis=1)[:, 0]


def sample(logits, sampler: Sampler, rng: RngState) -> np.ndarray:
    """Draw one token per position from (h, w, V) logits."""
    z = np.asarray(logits, dtype=np.float64)
    h, w, V = z.shape
    flat = z.reshape(-1, V)
    if sampler.kind == "greedy":
        return np.argmax(flat, axis=-1).reshape(h, w)
    gen = rng.generator()
    if sampler.kind == "gumbel":
        u = gen.random(flat.shape)
        g = -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))
        return np.argmax(flat + sampler.param * g, axis=-1).reshape(h, w)

    order = np.argsort(-flat, axis=-1, kind="stable")
    sorted_logits = np.take_along_axis(flat, order, axis=-1)
    if sampler.kind == "top-k":
        keep = min(int(sampler.param), V)
        probs = softmax(sorted_logits[:, :keep], axis=-1)
        order = order[:, :keep]
    else:
        probs = softmax(sorted_logits, axis=-1)
        before = np.cumsum(probs, axis=-1) - probs
        probs = np.where(before < sampler.param, probs, 0.0)
    u = gen.random(flat.shape[0])
    return _draw_sorted(probs, order, u).reshape(h, w)


# ---------------------------------------------------------------- regeneration


@dataclass(frozen=True)
class RegenConfig:
    sampler: Sampler = field(default_factory=Sampler)
    cfg_weight: float = 4.0
    cfg_band: tuple[int, int] = (2, 6)
    seed: int = 0

    def with_sampler(self, sampler: Sampler) -> "RegenConfig":
        return replace(self, sampler=sampler)


LogitHook = Callable[[int, np.ndarray], np.ndarray]
_UNCOND = embed_prompt("")


def regenerate(pyramid: TokenPyramid, fix_up_to: int, prompt: PromptEmbedding,
               predictor: Predictor, config: RegenConfig = RegenConfig(),
               hook: Optional[LogitHook] = None):
    """Keep scales ``1..fix_up_to`` of ``pyramid`` and resample the rest under ``prompt``.

    ``hook(k, logits)`` may rewrite the guided logits of scale ``k`` before
    sampling.  Returns the new pyramid and a ``{k: attention}`` dict for
    every generated scale.  ``fix_up_to == K`` returns the input unchanged.
    """
    K = predictor.schedule.K
    if not 0 <= fix_up_to <= K:
        raise ValueError(f"fix_up_to must lie in [0, {K}], got {fix_up_to}")
    if len(pyramid) < fix_up_to:
        raise ValueError(f"pyramid has {len(pyramid)} maps, cannot fix {fix_up_to}")
    if fix_up_to == K:
        return pyramid, {}
    maps = list(pyramid.maps[:fix_up_to])
    attention = {}
    root = RngState(config.seed)
    lo, hi = config.cfg_band
    for k in range(fix_up_to + 1, K + 1):
        prefix = TokenPyramid(tuple(maps))
        cond, att = predictor.forward_scale(prefix, prompt, k)
        attention[k] = att
        if lo <= k <= hi and config.cfg_weight != 1.0:
            uncond, _ = predictor.forward_scale(prefix, _UNCOND, k)
            logits = apply_cfg(cond, uncond, config.cfg_weight, k, config.cfg_band)
        else:
            logits = cond
        if hook is not None:
            logits = hook(k, logits)
        maps.append(sample(logits, config.sampler, root.split(k)))
    return TokenPyramid(tuple(maps)), attention
