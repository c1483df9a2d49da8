"""Edit configuration, named presets, and the sectioned key=value file format.

A config file looks like::

    # comments start with '#' or ';'
    [edit]
    s = 6
    k_cut = 7

    [mask]
    q = 80

Every key belongs to exactly one section; unknown keys and keys in the wrong
section are rejected by name.  JSON input is accepted either flat
(``{"s": 6}``) or nested by section (``{"edit": {"s": 6}}``).  Overrides
(``key=value`` strings) are applied after the file and always win.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .predictor import Sampler


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, or inconsistent settings."""


def _f(section: str, default, **kw):
    return field(default=default, metadata={"section": section}, **kw)


@dataclass(frozen=True)
class EditConfig:
    preset: str = _f("run", "desk")
    seed: int = _f("run", 0)

    image_size: int = _f("model", 64)
    patch: int = _f("model", 4)
    feature_dim: int = _f("model", 8)
    codebook_size: int = _f("model", 64)
    codebook_init: str = _f("model", "uniform")
    codebook_scale: float = _f("model", 0.5)
    codebook_seed: int = _f("model", 0)
    scales: tuple[int, ...] = _f("model", (1, 2, 3, 4, 6, 8, 12, 16))
    d_model: int = _f("model", 32)
    n_layers: int = _f("model", 6)
    n_heads: int = _f("model", 4)
    model_seed: int = _f("model", 0)

    s: int = _f("edit", 5)
    s_alt: Optional[int] = _f("edit", None)
    style: bool = _f("edit", False)
    sampler: str = _f("edit", "greedy")

    mask_start: int = _f("mask", 7)
    q: float = _f("mask", 80.0)
    mask_layers: Optional[tuple[int, ...]] = _f("mask", None)

    schedule: str = _f("nudge", "smooth")
    alpha_max: float = _f("nudge", 12.0)
    alphas: Optional[tuple[float, ...]] = _f("nudge", None)
    k_cut: int = _f("nudge", 6)
    beta: Optional[float] = _f("nudge", None)

    cfg_weight: float = _f("cfg", 4.0)
    cfg_band: tuple[int, ...] = _f("cfg", (2, 6))

    refine: bool = _f("refine", True)
    refine_iterations: int = _f("refine", 5)
    refine_tau: float = _f("refine", 0.2)
    refine_step: float = _f("refine", 1.0)
    refine_tol: float = _f("refine", 1e-4)

    @property
    def K(self) -> int:
        return len(self.scales)

    @property
    def latent(self) -> int:
        return self.scales[-1]

    def validate(self) -> "EditConfig":
        K = self.K
        try:
            Sampler.parse(self.sampler)
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from None
        checks = [
            (self.image_size == self.latent * self.patch,
             f"image_size {self.image_size} != latent {self.latent} x patch {self.patch}"),
            (0 <= self.s < K, f"s must lie in [0, {K}), got {self.s}"),
            (self.s_alt is None or 0 <= self.s_alt < K, f"s_alt must lie in [0, {K})"),
            (1 <= self.mask_start < K, f"mask_start must lie in [1, {K}), got {self.mask_start}"),
            (0.0 < self.q < 100.0, f"q must lie in (0, 100), got {self.q}"),
            (1 <= self.k_cut <= K, f"k_cut must lie in [1, {K}], got {self.k_cut}"),
            (self.schedule in ("smooth", "sharp", "custom"), f"unknown schedule {self.schedule!r}"),
            (self.schedule != "custom" or (self.alphas is not None and len(self.alphas) == K),
             f"custom schedule needs {K} alphas"),
            (self.beta is None or self.beta >= 0, "beta must be >= 0"),
            (self.alpha_max >= 0, "alpha_max must be >= 0"),
            (len(self.cfg_band) == 2 and self.cfg_band[0] <= self.cfg_band[1], "cfg_band must be lo,hi"),
            (self.mask_layers is None or (len(self.mask_layers) == 2
                                          and 0 <= self.mask_layers[0] <= self.mask_layers[1] < self.n_layers),
             f"mask_layers must be lo,hi within [0, {self.n_layers})"),
            (self.codebook_init in ("uniform", "kmeans"), f"unknown codebook_init {self.codebook_init!r}"),
            (self.codebook_size >= 2, "codebook_size must be >= 2"),
            (self.feature_dim >= 3, "feature_dim must be >= 3"),
            (self.refine_iterations >= 1, "refine_iterations must be >= 1"),
            (self.refine_tau > 0, "refine_tau must be > 0"),
            (0 < self.refine_step <= 1, "refine_step must lie in (0, 1]"),
            (self.refine_tol >= 0, "refine_tol must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.scales[0] != 1 or any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ConfigError(f"scales must start at 1 and increase strictly: {self.scales}")
        return self

    def replace(self, **changes) -> "EditConfig":
        return dataclasses.replace(self, **changes)

    def to_sections(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for f in fields(self):
            out.setdefault(f.metadata["section"], {})[f.name] = getattr(self, f.name)
        return out

    def dumps(self) -> str:
        """Serialise to the sectioned key=value format (round-trips through :func:`loads`)."""
        lines = []
        for section, items in self.to_sections().items():
            lines.append(f"[{section}]")
            for key, value in items.items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}


_FIELDS = {f.name: f for f in fields(EditConfig)}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_scalar(text: str, kind: str):
    t = text.strip()
    if kind == "bool":
        low = t.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "int":
        return int(t)
    if kind == "float":
        return float(t)
    return t


def _kind(name: str) -> tuple[str, bool, bool]:
    """(scalar kind, is_tuple, is_optional) for a config field."""
    ann = str(_FIELDS[name].type)
    optional = ann.startswith("Optional[")
    inner = ann[len("Optional["):-1] if optional else ann
    is_tuple = inner.startswith("tuple[")
    if is_tuple:
        inner = inner[len("tuple["):].split(",")[0].strip()
    return inner, is_tuple, optional


def coerce(name: str, value):
    """Convert a raw (string or JSON) value to the declared type of ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    kind, is_tuple, optional = _kind(name)
    try:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "auto")):
            if optional:
                return None
            raise ValueError("value required")
        if is_tuple:
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(_parse_scalar(str(v), kind) for v in items if str(v).strip())
        if isinstance(value, str):
            return _parse_scalar(value, kind)
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError("not a boolean")
            return value
        if kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise ValueError("not an integer")
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name!r}: {value!r} ({exc})") from None


def _apply(base: EditConfig, items: dict[str, Any]) -> EditConfig:
    changes = {}
    for key, raw in items.items():
        changes[key] = coerce(key, raw)
    if "preset" in changes and changes["preset"] != base.preset:
        base = preset(changes["preset"])
    return base.replace(**changes)


def _flatten(data: dict) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                if sub not in _FIELDS:
                    raise ConfigError(f"unknown config key {sub!r} in section [{key}]")
                if _FIELDS[sub].metadata["section"] != key:
                    raise ConfigError(f"key {sub!r} belongs to section [{_FIELDS[sub].metadata['section']}], not [{key}]")
                flat[sub] = v
        else:
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
    return flat


def loads(text: str, base: Optional[EditConfig] = None) -> EditConfig:
    """Parse the key=value format (or JSON, if the text starts with '{')."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        items = _flatten(data)
    else:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        nested = {sec: dict(parser.items(sec)) for sec in parser.sections()}
        items = _flatten(nested)
    # a preset named in the file is the base the other keys modify
    if "preset" in items:
        base = preset(str(items["preset"]).strip())
    base = base or EditConfig()
    return _apply(base, items).validate()


def load(path, base: Optional[EditConfig] = None) -> EditConfig:
    return loads(Path(path).read_text(encoding="utf-8"), base)


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value
    return out


def with_overrides(config: EditConfig, pairs) -> EditConfig:
    return _apply(config, parse_overrides(pairs)).validate()


PRESETS: dict[str, EditConfig] = {
    "desk": EditConfig(),
    "paper-512-analog": EditConfig(
        preset="paper-512-analog",
        scales=(1, 2, 3, 4, 5, 6, 8, 10, 13, 16),
        s=6, mask_start=9, q=80.0, k_cut=7, beta=12.0,
        cfg_band=(2, 8), refine_iterations=5, refine_tau=0.2,
    ),
    "paper-1024-analog": EditConfig(
        preset="paper-1024-analog",
        image_size=128,
        scales=(1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 18, 24, 32),
        s=8, s_alt=10, mask_start=13, q=63.0, k_cut=9,
        cfg_band=(2, 12), refine_iterations=3, refine_tau=0.8,
    ),
}


def preset(name: str) -> EditConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
