"""Command-line interface.

One subcommand per pipeline step (encode, adapt, compress, assemble),
plus the cost model, dataset tooling, the toy training loop, and the
self-verification suite. Exit codes: 0 on success, 1 when verification
fails, 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost, curriculum, ftv1
from .adapter import (
    adapt_video,
    init_adapter_params,
    load_checkpoint,
    save_checkpoint,
)
from .encoder import (
    DEFAULT_FEATURE_DIM,
    DEFAULT_PATCH_SIZE,
    ImagePlane,
    VideoTokenTensor,
    frozen_projection,
    load_features,
    patchify_encode,
    save_features,
    synthetic_video,
)
from .errors import FramepressError, ParameterError
from .pipeline import assemble_sequence, spec_from_dict, train_toy
from .sampler import load_sampled, sample_video, save_sampled
from .verify import format_report, verify_all


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        gh, gw = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise ParameterError(f"grid must look like 8x8, got {text!r}") from exc
    return gh, gw


def _cmd_encode(args) -> int:
    if args.images:
        proj = frozen_projection(args.patch, args.dim)
        frames = []
        for path in args.images:
            pixels = np.load(path)
            img = ImagePlane(pixels)
            frames.append(patchify_encode(img, args.patch, proj))
        video = VideoTokenTensor(tuple(frames))
    else:
        gh, gw = _parse_grid(args.grid)
        video = synthetic_video(args.frames, gh, gw, args.dim, args.seed)
    save_features(video, args.out)
    print(
        f"wrote {video.frame_count} frames x {video.token_count} tokens "
        f"x {video.feature_dim} dims -> {args.out}"
    )
    return 0


def _load_or_init_params(args, video: VideoTokenTensor):
    if args.checkpoint and Path(args.checkpoint, "adapter.json").is_file():
        return load_checkpoint(args.checkpoint)
    gh, gw = video.grid_shape
    params = init_adapter_params(
        queries=args.queries,
        width=args.width,
        feature_dim=video.feature_dim,
        grid_h=gh,
        grid_w=gw,
        frames=video.frame_count,
        seed=args.seed,
    )
    if args.checkpoint:
        save_checkpoint(params, args.checkpoint)
    return params


def _cmd_adapt(args) -> int:
    video = load_features(args.features)
    params = _load_or_init_params(args, video)
    out = adapt_video(video, params)
    ftv1.write_tensor(args.out, np.stack(out.tokens))
    if args.attention_out:
        ftv1.write_tensor(args.attention_out, np.stack(out.attention))
    print(
        f"compressed {out.source_tokens} -> {out.query_count} tokens per frame "
        f"({out.frame_count} frames) -> {args.out}"
    )
    return 0


def _cmd_compress(args) -> int:
    video = load_features(args.features)
    params = _load_or_init_params(args, video)
    out = adapt_video(video, params)
    sampled = sample_video(out, args.k, order=args.order)
    save_sampled(sampled, args.out)
    print(
        f"kept top-{sampled.keep} of {out.query_count} tokens per frame "
        f"({sampled.frame_count} frames) -> {args.out}"
    )
    return 0


def _cmd_assemble(args) -> int:
    sampled = load_sampled(args.tokens)
    seq = assemble_sequence(sampled, args.prompt_len)
    if args.out:
        ftv1.write_tensor(args.out, seq.video_tokens)
    print(
        f"sequence length {seq.total_len} = {seq.frame_count} frames x "
        f"{sampled.keep} tokens + {seq.prompt_len} prompt"
    )
    return 0


def _read_calibration_csv(path) -> list[tuple[int, float]]:
    points = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and not parts[0].lstrip("-").isdigit():
            continue  # header row
        if len(parts) < 2:
            raise ParameterError(f"{path}:{lineno}: expected 'k,tflops'")
        points.append((int(parts[0]), float(parts[1])))
    return points


def _cmd_cost(args) -> int:
    points = (
        _read_calibration_csv(args.calibrate)
        if args.calibrate
        else cost.REFERENCE_TOTALS
    )
    result = cost.calibrate(points, frames=args.frames, prompt_len=args.prompt_len)
    print(cost.calibration_report_text(result), end="")
    ks = [int(k) for k in args.k.split(",")] if args.k else [k for k, _ in points]
    template = cost.calibrated_config(
        result, frames=args.frames, tokens_per_frame=ks[0], prompt_len=args.prompt_len
    )
    print(cost.sweep_csv(ks, template), end="")
    return 0


def _cmd_subsample(args) -> int:
    manifest = curriculum.read_manifest(args.manifest)
    sub = curriculum.subsample(
        manifest, args.fraction, args.seed, qa_cap_per_video=args.qa_cap
    )
    curriculum.write_manifest(sub, args.out)
    print(
        f"{manifest.unique_videos} videos / {manifest.qa_pairs} QA pairs -> "
        f"{sub.unique_videos} videos / {sub.qa_pairs} QA pairs -> {args.out}"
    )
    return 0


def _cmd_filter(args) -> int:
    manifest = curriculum.read_manifest(args.manifest)
    types = {t.strip() for t in args.types.split(",") if t.strip()}
    filtered = curriculum.filter_type(manifest, types)
    curriculum.write_manifest(filtered, args.out)
    print(
        f"kept {filtered.qa_pairs} of {manifest.qa_pairs} QA pairs "
        f"({', '.join(sorted(types))}) -> {args.out}"
    )
    return 0


def _cmd_plan(args) -> int:
    plan = curriculum.make_plan(
        args.strategy,
        pretrain_fraction=args.pretrain_fraction,
        instruct_fraction=args.instruct_fraction,
    )
    text = curriculum.plan_to_text(plan)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_train_toy(args) -> int:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ParameterError("config must be a JSON object of ToyTaskSpec fields")
    spec = spec_from_dict(raw)
    report = train_toy(spec)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    metrics = report.final_metrics
    print(
        f"toy run: keep={spec.keep}/{spec.queries}, {spec.steps} steps, "
        f"loss {metrics['initial_loss']:.6f} -> {metrics['final_loss']:.6f}"
    )
    for check in report.checks:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status}  {check['name']}: {check['detail']}")
    return 0 if report.all_passed else 1


def _cmd_verify(args) -> int:
    report = verify_all()
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(format_report(report), end="")
    return 0 if report.all_passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framepress",
        description="Video token compression pipeline: encode, adapt, "
        "sample, assemble, cost, data tooling, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="images or synthetic frames -> FTV1 features")
    p.add_argument("--images", nargs="*", help=".npy pixel arrays (H, W, 3) in [0,1]")
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--grid", default="8x8", help="patch grid for synthetic frames")
    p.add_argument("--dim", type=int, default=DEFAULT_FEATURE_DIM)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_encode)

    for name, helptext in (
        ("adapt", "features -> compressed tokens (no pruning)"),
        ("compress", "features -> top-k kept tokens per frame"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--features", required=True, help="FTV1 (T, gh, gw, D) file")
        p.add_argument("--checkpoint", help="adapter checkpoint directory")
        p.add_argument("--queries", type=int, default=32)
        p.add_argument("--width", type=int, default=32)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        if name == "adapt":
            p.add_argument("--attention-out")
            p.set_defaults(fn=_cmd_adapt)
        else:
            p.add_argument("--k", type=int, required=True)
            p.add_argument("--order", choices=("score", "index"), default="score")
            p.set_defaults(fn=_cmd_compress)

    p = sub.add_parser("assemble", help="kept tokens -> decoder-ready sequence")
    p.add_argument("--tokens", required=True, help="file written by compress")
    p.add_argument("--prompt-len", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_assemble)

    p = sub.add_parser("cost", help="calibrate and sweep the compute cost model")
    p.add_argument("--k", help="comma-separated kept-token budgets")
    p.add_argument("--calibrate", help="CSV of measured k,tflops pairs")
    p.add_argument("--frames", type=int, default=cost.REFERENCE_FRAMES)
    p.add_argument("--prompt-len", type=int, default=0)
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("subsample", help="video-level manifest subsampling")
    p.add_argument("manifest")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--qa-cap", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_subsample)

    p = sub.add_parser("filter", help="keep QA records of given instruction types")
    p.add_argument("manifest")
    p.add_argument("--types", required=True, help="comma-separated type names")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_filter)

    p = sub.add_parser("plan", help="emit a training stage plan")
    p.add_argument("--strategy", required=True, choices=curriculum.STRATEGIES)
    p.add_argument("--pretrain-fraction", type=float, default=None)
    p.add_argument("--instruct-fraction", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_plan)

    p = sub.add_parser("train-toy", help="run the toy regression end to end")
    p.add_argument("--config", help="JSON file overriding ToyTaskSpec defaults")
    p.add_argument("--report", help="write the full run report here")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("verify", help="run the full self-verification suite")
    p.add_argument("--report", help="write the verification report here")
    p.set_defaults(fn=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FramepressError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
