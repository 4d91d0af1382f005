"""End-to-end orchestration: sequence assembly, toy training, run reports.

The toy task stands in for the late video-tuning stage of the real
recipe at desk scale: synthetic videos hide a signal vector in a few
patches per frame, the regression target is a linear readout of the mean
signal-patch feature, and the adapter + top-K sampler + linear head are
trained by plain full-batch gradient descent. Because only the signal
patches matter, a sampler that keeps the right tokens should track the
no-pruning baseline closely — which is exactly what the verification
suite measures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import cost
from .adapter import (
    AdapterParams,
    adapt_video,
    adapter_gradients,
    init_adapter_params,
)
from .encoder import FrameTokenGrid, VideoTokenTensor
from .errors import NumericError, ParameterError, ShapeError
from .linalg import frozen_matrix, split_rng
from .sampler import SampledTokens, sample_video

SCHEMA_VERSION = 1

TARGET_MODES = ("readout", "init")


@dataclass(frozen=True)
class SequenceAssembly:
    """The decoder-ready token sequence for one video plus prompt budget."""

    video_tokens: np.ndarray  # (T*K, C), frames concatenated in order
    prompt_len: int
    frame_boundaries: tuple[int, ...]  # T+1 fence posts into video_tokens

    def __post_init__(self):
        tokens = frozen_matrix(self.video_tokens, "video tokens")
        if self.prompt_len < 0:
            raise ParameterError(f"prompt_len must be >= 0, got {self.prompt_len}")
        bounds = tuple(int(b) for b in self.frame_boundaries)
        if len(bounds) < 2 or bounds[0] != 0 or bounds[-1] != tokens.shape[0]:
            raise ShapeError("frame boundaries must start at 0 and end at the row count")
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ShapeError("frame boundaries must be strictly increasing")
        object.__setattr__(self, "video_tokens", tokens)
        object.__setattr__(self, "frame_boundaries", bounds)

    @property
    def frame_count(self) -> int:
        return len(self.frame_boundaries) - 1

    @property
    def total_len(self) -> int:
        return self.video_tokens.shape[0] + self.prompt_len

    def frame_block(self, t: int) -> np.ndarray:
        a, b = self.frame_boundaries[t], self.frame_boundaries[t + 1]
        return self.video_tokens[a:b]


def assemble_sequence(sampled: SampledTokens, prompt_len: int) -> SequenceAssembly:
    """Concatenate kept tokens frame by frame and account for the prompt."""
    if prompt_len < 0:
        raise ParameterError(f"prompt_len must be >= 0, got {prompt_len}")
    widths = {t.shape for t in sampled.tokens}
    if len(widths) != 1:
        raise ShapeError(f"frames are ragged: shapes {sorted(widths)}")
    stacked = np.concatenate(sampled.tokens, axis=0)
    k = sampled.keep
    bounds = tuple(k * i for i in range(sampled.frame_count + 1))
    return SequenceAssembly(
        video_tokens=stacked, prompt_len=prompt_len, frame_boundaries=bounds
    )


@dataclass(frozen=True)
class ToyTaskSpec:
    """Configuration of the synthetic signal-patch regression task."""

    seed: int = 0
    frames: int = 8
    grid_h: int = 8
    grid_w: int = 8
    feature_dim: int = 32
    queries: int = 32
    embed_dim: int = 32
    keep: int = 16
    out_dim: int = 8
    signal_patches: int = 4
    noise_scale: float = 0.05
    steps: int = 150
    learning_rate: float = 0.5
    batch_videos: int = 4
    target_mode: str = "readout"

    def __post_init__(self):
        m = self.grid_h * self.grid_w
        if self.frames < 1 or self.grid_h < 1 or self.grid_w < 1:
            raise ParameterError("frames and grid dims must be >= 1")
        if self.feature_dim < 1 or self.queries < 1 or self.embed_dim < 1:
            raise ParameterError("feature_dim, queries and embed_dim must be >= 1")
        if self.out_dim < 1 or self.batch_videos < 1:
            raise ParameterError("out_dim and batch_videos must be >= 1")
        if not 1 <= self.signal_patches <= m:
            raise ParameterError(
                f"signal_patches must be in [1, {m}], got {self.signal_patches}"
            )
        if not 1 <= self.keep <= self.queries:
            raise ParameterError(
                f"keep must be in [1, {self.queries}], got {self.keep}"
            )
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ParameterError("learning_rate must be finite and >= 0")
        if not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise ParameterError("noise_scale must be finite and >= 0")
        if self.target_mode not in TARGET_MODES:
            raise ParameterError(
                f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}"
            )

    @property
    def patch_tokens(self) -> int:
        return self.grid_h * self.grid_w

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "frames": self.frames,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "feature_dim": self.feature_dim,
            "queries": self.queries,
            "embed_dim": self.embed_dim,
            "keep": self.keep,
            "out_dim": self.out_dim,
            "signal_patches": self.signal_patches,
            "noise_scale": self.noise_scale,
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "batch_videos": self.batch_videos,
            "target_mode": self.target_mode,
        }


def spec_from_dict(raw: dict) -> ToyTaskSpec:
    """Build a :class:`ToyTaskSpec` from parsed config text, rejecting unknown keys."""
    known = set(ToyTaskSpec().as_dict())
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown config keys {sorted(unknown)}")
    return ToyTaskSpec(**raw)


@dataclass(frozen=True)
class RunReport:
    """A serializable record of one run (training or verification)."""

    kind: str
    config: dict
    loss_curve: tuple[float, ...]
    final_metrics: dict
    checks: tuple[dict, ...]
    cost_summary: dict
    schema_version: int = SCHEMA_VERSION

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "config": self.config,
            "loss_curve": list(self.loss_curve),
            "final_metrics": self.final_metrics,
            "checks": list(self.checks),
            "cost_summary": self.cost_summary,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ParameterError(
                f"unsupported report schema {raw.get('schema_version')!r}"
            )
        return cls(
            kind=raw["kind"],
            config=raw["config"],
            loss_curve=tuple(raw["loss_curve"]),
            final_metrics=raw["final_metrics"],
            checks=tuple(raw["checks"]),
            cost_summary=raw["cost_summary"],
            schema_version=raw["schema_version"],
        )


@dataclass
class _ToyBatch:
    videos: list[VideoTokenTensor]
    targets: np.ndarray  # (B, out)
    signal_positions: list[list[np.ndarray]] = field(default_factory=list)


def _make_batch(spec: ToyTaskSpec, data_rng, target_rng) -> _ToyBatch:
    b, t = spec.batch_videos, spec.frames
    m, d, s = spec.patch_tokens, spec.feature_dim, spec.signal_patches
    feats = spec.noise_scale * data_rng.normal(size=(b, t, m, d))
    positions = []
    for vb in range(b):
        per_frame = []
        for ft in range(t):
            pos = data_rng.choice(m, size=s, replace=False)
            feats[vb, ft, pos, :] += data_rng.normal(size=d)
            per_frame.append(np.sort(pos))
        positions.append(per_frame)
    readout = target_rng.normal(size=(d, spec.out_dim)) / np.sqrt(d)
    targets = np.empty((b, spec.out_dim))
    for vb in range(b):
        signal_mean = np.mean(
            [feats[vb, ft, positions[vb][ft], :].mean(axis=0) for ft in range(t)],
            axis=0,
        )
        targets[vb] = signal_mean @ readout
    videos = [
        VideoTokenTensor(
            tuple(
                FrameTokenGrid(spec.grid_h, spec.grid_w, feats[vb, ft])
                for ft in range(t)
            )
        )
        for vb in range(b)
    ]
    return _ToyBatch(videos=videos, targets=targets, signal_positions=positions)


def _forward(spec: ToyTaskSpec, batch: _ToyBatch, params: AdapterParams, head):
    """Loss, predictions, and everything the backward pass needs."""
    outputs = [adapt_video(video, params) for video in batch.videos]
    sampled = [sample_video(out, spec.keep) for out in outputs]
    pooled = np.stack(
        [np.concatenate(s.tokens, axis=0).mean(axis=0) for s in sampled]
    )  # (B, C)
    preds = pooled @ head  # (B, out)
    diff = preds - batch.targets
    loss = float(np.mean(diff**2))
    return loss, preds, pooled, diff, outputs, sampled


def train_toy(spec: ToyTaskSpec) -> RunReport:
    """Run the toy regression end to end and report the loss curve.

    Trainable tensors: the adapter's input projection, query bank and
    temporal table, plus the readout head. The positional table stays at
    its initialization, and the per-step token selection is treated as a
    constant of the forward pass. Raises a numeric error naming the step
    if the loss leaves the finite range.
    """
    data_rng, target_rng = split_rng(spec.seed, 2)
    batch = _make_batch(spec, data_rng, target_rng)
    params = init_adapter_params(
        queries=spec.queries,
        width=spec.embed_dim,
        feature_dim=spec.feature_dim,
        grid_h=spec.grid_h,
        grid_w=spec.grid_w,
        frames=spec.frames,
        seed=spec.seed,
    )
    head = (
        (target_rng.normal(size=(spec.embed_dim, spec.out_dim)) / np.sqrt(spec.embed_dim))
        .astype(np.float32)
        .astype(np.float64)
    )
    if spec.target_mode == "init":
        _, preds0, *_ = _forward(spec, batch, params, head)
        batch = replace(batch, targets=preds0)

    b, t, k = spec.batch_videos, spec.frames, spec.keep
    n, c = spec.queries, spec.embed_dim
    denom = b * spec.out_dim
    curve = []
    for step in range(spec.steps + 1):
        try:
            # Overflow here is not a bug to warn about — it is the
            # divergence this loop reports by step index.
            with np.errstate(over="ignore", invalid="ignore"):
                loss, preds, pooled, diff, outputs, sampled = _forward(
                    spec, batch, params, head
                )
        except NumericError as exc:
            raise NumericError(f"loss diverged at step {step}: {exc}") from exc
        if not np.isfinite(loss):
            raise NumericError(f"loss diverged at step {step}: loss={loss}")
        curve.append(loss)
        if step == spec.steps:
            break
        g_preds = 2.0 * diff / denom  # (B, out)
        g_head = pooled.T @ g_preds
        g_pooled = g_preds @ head.T  # (B, C)
        g_proj = np.zeros_like(params.input_proj)
        g_queries = np.zeros_like(params.queries)
        g_temporal = np.zeros_like(params.temporal)
        for vb in range(b):
            token_grads = np.zeros((t, n, c))
            per_token = g_pooled[vb] / (t * k)
            for ft in range(t):
                token_grads[ft, sampled[vb].indices[ft], :] = per_token
            grads = adapter_gradients(batch.videos[vb], params, token_grads)
            g_proj += grads.input_proj
            g_queries += grads.queries
            g_temporal += grads.temporal
        lr = spec.learning_rate
        try:
            params = replace(
                params,
                input_proj=params.input_proj - lr * g_proj,
                queries=params.queries - lr * g_queries,
                temporal=params.temporal - lr * g_temporal,
            )
        except NumericError as exc:
            raise NumericError(f"loss diverged at step {step}: {exc}") from exc
        head = head - lr * g_head

    checks = _run_checks(outputs, sampled, curve)
    calibration = cost.calibrate()
    cost_cfg = cost.calibrated_config(
        calibration, frames=spec.frames, tokens_per_frame=spec.keep
    )
    return RunReport(
        kind="train-toy",
        config=spec.as_dict(),
        loss_curve=tuple(curve),
        final_metrics={
            "initial_loss": curve[0],
            "final_loss": curve[-1],
            "steps_run": spec.steps,
        },
        checks=tuple(checks),
        cost_summary=cost.estimate(cost_cfg).as_dict(),
    )


def _run_checks(outputs, sampled, curve) -> list[dict]:
    """Cheap invariants evaluated on the final state of a training run."""
    worst_row = 0.0
    for out in outputs:
        for att in out.attention:
            worst_row = max(worst_row, float(np.max(np.abs(att.sum(axis=1) - 1.0))))
    rows_ok = worst_row <= 1e-9
    kept_ok = all(
        np.unique(idx).size == idx.size for s in sampled for idx in s.indices
    )
    finite_ok = all(np.isfinite(v) for v in curve)
    return [
        {
            "name": "attention_rows_sum_to_one",
            "passed": bool(rows_ok),
            "detail": f"max row-sum deviation {worst_row:.3e}",
        },
        {
            "name": "kept_indices_distinct",
            "passed": bool(kept_ok),
            "detail": "per-frame kept indices are unique",
        },
        {
            "name": "loss_curve_finite",
            "passed": bool(finite_ok),
            "detail": f"{len(curve)} recorded losses",
        },
    ]
