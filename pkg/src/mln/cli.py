"""Command-line front end.

Exit codes: 0 success, 2 file I/O problem, 3 configuration problem,
4 pipeline failure (the failing stage is named on stderr).  Machine-readable
output (JSON lines) goes to stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, EditConfig
from .container import ContainerError
from .fixtures import golden_image
from .imageio import ImageIOError, read_image, write_image, write_mask
from .numerics import _mix
from .pipeline import (PipelineError, build_model, edit, edit_style, reconstruct,
                       time_mask_pass)
from .tokenizer import TokenPyramid, aggregate, quantize

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_PIPELINE = 0, 2, 3, 4


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def _load_config(args) -> EditConfig:
    try:
        base = cfgmod.preset(args.preset) if args.preset else None
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise _Fail(EXIT_CONFIG, f"config file not found: {path}")
            conf = cfgmod.load(path, base)
        else:
            conf = (base or EditConfig()).validate()
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if getattr(args, "style", False):
            overrides.append("style=true")
        return cfgmod.with_overrides(conf, overrides)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, f"config error: {exc}") from None


def _read(path) -> np.ndarray:
    try:
        return read_image(path)
    except ImageIOError as exc:
        raise _Fail(EXIT_IO, str(exc)) from None


def _check_image(image: np.ndarray, conf: EditConfig, path) -> None:
    if image.shape[:2] != (conf.image_size, conf.image_size):
        raise _Fail(EXIT_CONFIG, f"{path}: image is {image.shape[1]}x{image.shape[0]}, "
                                 f"config expects {conf.image_size}x{conf.image_size}")


def _per_image(conf: EditConfig, index: int, count: int) -> EditConfig:
    if count == 1:
        return conf
    return conf.replace(seed=_mix(conf.seed, index) & 0x7FFF_FFFF)


def _outputs(inputs, out: str, suffix: str) -> list[Path]:
    if len(inputs) == 1:
        return [Path(out)]
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    return [outdir / f"{Path(p).stem}{suffix}" for p in inputs]


def _run_images(args, conf: EditConfig, job):
    images = [_read(p) for p in args.inputs]
    for img, p in zip(images, args.inputs):
        _check_image(img, conf, p)
    confs = [_per_image(conf, i, len(images)) for i in range(len(images))]
    try:
        if args.jobs > 1 and len(images) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                return list(pool.map(job, images, confs))
        return [job(img, c) for img, c in zip(images, confs)]
    except PipelineError as exc:
        raise _Fail(EXIT_PIPELINE, f"pipeline failed in stage {exc.stage!r}: {exc}") from None
    except ValueError as exc:
        raise _Fail(EXIT_PIPELINE, f"pipeline failed: {exc}") from None


def _write_reports(args, conf, reports, outs, masks_out=None) -> None:
    lines = []
    for i, (src, rep) in enumerate(zip(args.inputs, reports)):
        try:
            write_image(outs[i], rep.image)
            if masks_out is not None:
                write_mask(masks_out[i], rep.masks.finest)
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write output: {exc}") from None
        rec = rep.record() if not args.no_timings else rep.payload()
        rec.update({"input": str(src), "output": str(outs[i]), "preset": conf.preset})
        lines.append(json.dumps(rec, sort_keys=True))
        _emit(rec)
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write report: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_tokenize(args) -> int:
    conf = _load_config(args)
    image = _read(args.inputs[0])
    _check_image(image, conf, args.inputs[0])
    model = build_model(conf)
    f = model.codec.encode(image)
    tokens, state = quantize(f, model.codebook, model.schedule)
    try:
        tokens.save(args.output)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write tokens: {exc}") from None
    _emit({
        "input": str(args.inputs[0]),
        "output": str(args.output),
        "residual_norm": float(np.linalg.norm(state.f_rest)),
        "residual_mean_l2": float(np.mean(np.linalg.norm(state.f_rest, axis=-1))),
        "scale_dims": [list(d) for d in model.schedule.scales],
        "tokens_per_scale": [int(m.size) for m in tokens.maps],
        "distinct_per_scale": [int(np.unique(m).size) for m in tokens.maps],
    })
    return EXIT_OK


def cmd_detokenize(args) -> int:
    conf = _load_config(args)
    model = build_model(conf)
    try:
        tokens = TokenPyramid.load(args.inputs[0])
    except FileNotFoundError:
        raise _Fail(EXIT_IO, f"no such file: {args.inputs[0]}") from None
    except ContainerError as exc:
        raise _Fail(EXIT_IO, f"cannot read tokens {args.inputs[0]}: {exc}") from None
    try:
        image = model.codec.decode(aggregate(tokens, model.codebook, model.schedule))
    except ValueError as exc:
        raise _Fail(EXIT_PIPELINE, f"pipeline failed in stage 'aggregate': {exc}") from None
    try:
        write_image(args.output, image)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write output: {exc}") from None
    _emit({"input": str(args.inputs[0]), "output": str(args.output)})
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    conf = _load_config(args)
    reports = _run_images(args, conf, lambda img, c: reconstruct(img, args.prompt, c))
    _write_reports(args, conf, reports, _outputs(args.inputs, args.output, ".png"))
    return EXIT_OK


def cmd_edit(args) -> int:
    conf = _load_config(args)
    fn = edit_style if conf.style else edit
    reports = _run_images(args, conf, lambda img, c: fn(img, args.source_prompt, args.target_prompt, c))
    outs = _outputs(args.inputs, args.output, ".png")
    if args.mask_out:
        masks = _outputs(args.inputs, args.mask_out, "_mask.png")
    else:
        masks = [o.with_name(o.stem + "_mask.png") for o in outs]
    _write_reports(args, conf, reports, outs, masks)
    return EXIT_OK


def cmd_mask(args) -> int:
    conf = _load_config(args)
    reports = _run_images(args, conf, lambda img, c: edit(img, args.source_prompt, args.target_prompt,
                                                          c.replace(style=False)))
    outs = _outputs(args.inputs, args.output, "_mask.png")
    for src, rep, out in zip(args.inputs, reports, outs):
        try:
            write_mask(out, rep.masks.finest)
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write mask: {exc}") from None
        _emit({"input": str(src), "output": str(out),
               "coverage": [float(m.mean()) for m in rep.masks.masks]})
    return EXIT_OK


def cmd_config(args) -> int:
    conf = _load_config(args)
    text = conf.dumps()
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write config: {exc}") from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args) -> int:
    conf = _load_config(args)
    model = build_model(conf)
    outdir = Path(args.output)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        model.codebook.save(outdir / "codebook.mlnc")
        model.predictor.save(outdir / "weights.mlnc")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot export: {exc}") from None
    _emit({"codebook": str(outdir / "codebook.mlnc"), "weights": str(outdir / "weights.mlnc")})
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repetitions < 1:
        raise _Fail(EXIT_CONFIG, "repetitions must be >= 1")
    conf = _load_config(args)
    image = _read(args.inputs[0]) if args.inputs else golden_image(0, conf.image_size)
    _check_image(image, conf, args.inputs[0] if args.inputs else "<fixture>")
    try:
        stage_runs: dict[str, list[float]] = {}
        for _ in range(args.repetitions):
            rep = edit(image, args.source_prompt, args.target_prompt, conf)
            for stage, ms in rep.timings_ms.items():
                stage_runs.setdefault(stage, []).append(ms)
        for stage, runs in stage_runs.items():
            _emit({"kind": "stage", "stage": stage, "median_ms": statistics.median(runs),
                   "repetitions": len(runs)})
        if args.sweep:
            # warm-up so the first sweep point does not pay one-off costs
            time_mask_pass(image, args.source_prompt, args.target_prompt, conf)
            first = min(5, conf.K - 1) if args.sweep_from is None else args.sweep_from
            for s_m in range(first, conf.K):
                c = conf.replace(mask_start=s_m).validate()
                runs = [time_mask_pass(image, args.source_prompt, args.target_prompt, c)
                        for _ in range(args.repetitions)]
                _emit({"kind": "mask_sweep", "mask_start": s_m, "median_ms": statistics.median(runs),
                       "repetitions": len(runs)})
    except (PipelineError, ValueError) as exc:
        raise _Fail(EXIT_PIPELINE, f"pipeline failed: {exc}") from None
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value (sectioned) or JSON config file")
    p.add_argument("--preset", help="start from a named preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")


def _run_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=1, help="images processed in parallel")
    p.add_argument("--report", help="also write the JSON-lines report here")
    p.add_argument("--no-timings", action="store_true", help="omit wall-clock timings from records")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors count as configuration problems, not I/O
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mln", description="Masked logit nudging image editor")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="encode an image into a token pyramid file")
    p.add_argument("inputs", nargs=1, metavar="IMAGE")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="decode a token pyramid file to an image")
    p.add_argument("inputs", nargs=1, metavar="TOKENS")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("reconstruct", help="zero-edit reconstruction")
    p.add_argument("inputs", nargs="+", metavar="IMAGE")
    p.add_argument("-o", "--output", required=True, help="output image (directory for several inputs)")
    p.add_argument("--prompt", default="")
    _common(p)
    _run_opts(p)
    p.set_defaults(func=cmd_reconstruct)

    for name, helptext in (("edit", "prompt-guided edit"), ("mask", "write the edit mask only")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("inputs", nargs="+", metavar="IMAGE")
        p.add_argument("-o", "--output", required=True)
        p.add_argument("--source-prompt", required=True)
        p.add_argument("--target-prompt", required=True)
        _common(p)
        _run_opts(p)
        if name == "edit":
            p.add_argument("--mask-out", help="finest-scale mask PNG (default: <output>_mask.png)")
            p.add_argument("--style", action="store_true", help="global style edit (no mask, no refinement)")
            p.set_defaults(func=cmd_edit)
        else:
            p.set_defaults(func=cmd_mask)

    p = sub.add_parser("bench", help="per-stage latency and mask-pass sweep")
    p.add_argument("inputs", nargs="*", metavar="IMAGE")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--sweep", action="store_true", help="sweep the mask start scale")
    p.add_argument("--sweep-from", type=int, default=None, help="first mask start scale (default 5)")
    p.add_argument("--source-prompt", default="a photo of a cat")
    p.add_argument("--target-prompt", default="a photo of a dog")
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("-o", "--output")
    _common(p)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("export", help="write codebook and predictor weights containers")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"mln: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
