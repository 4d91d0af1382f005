"""Learnable-query cross-attention adapter.

Compresses the M patch tokens of each frame down to N query outputs with a
single-head cross-attention block:

* a learnable per-frame temporal vector is added to every patch token of
  frame t *before* projection,
* patch features are linearly projected into the query width,
* keys are the projected features plus a learnable 2-D positional table,
* values are the projected features alone,
* N learnable query vectors attend over the M keys.

Besides the forward pass this module carries its own reverse-mode
gradients (the whole block is small enough that hand-written backprop
beats pulling in an autodiff framework) and directory-based checkpoint
I/O built on FTV1 tensor files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ftv1
from .encoder import VideoTokenTensor
from .errors import FormatError, ParameterError, ShapeError
from .linalg import cross_attention, frozen_matrix, make_rng

CHECKPOINT_HEADER = "adapter.json"
_CHECKPOINT_FORMAT = "framepress-adapter"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdapterParams:
    """All trainable tensors of the adapter plus its attention scale.

    ``scale`` defaults to ``1 / sqrt(width)`` when not given. ``query_pos``
    is an optional additive query-side positional term; it is off by
    default because the query bank is itself learnable and can absorb any
    constant offset.
    """

    input_proj: np.ndarray  # (D, C)
    queries: np.ndarray  # (N, C)
    pos_table: np.ndarray  # (M, C)
    temporal: np.ndarray  # (T, D)
    scale: float | None = None
    query_pos: np.ndarray | None = None

    def __post_init__(self):
        proj = frozen_matrix(self.input_proj, "input projection")
        queries = frozen_matrix(self.queries, "query bank")
        pos = frozen_matrix(self.pos_table, "positional table")
        temporal = frozen_matrix(self.temporal, "temporal table")
        d, c = proj.shape
        if queries.shape[1] != c:
            raise ShapeError(
                f"query width {queries.shape[1]} != projection width {c}"
            )
        if pos.shape[1] != c:
            raise ShapeError(
                f"positional width {pos.shape[1]} != projection width {c}"
            )
        if temporal.shape[1] != d:
            raise ShapeError(
                f"temporal width {temporal.shape[1]} != feature dim {d}"
            )
        scale = self.scale
        if scale is None:
            scale = 1.0 / np.sqrt(c)
        scale = float(scale)
        if not np.isfinite(scale) or scale <= 0.0:
            raise ParameterError(f"scale must be finite and > 0, got {scale}")
        qpos = self.query_pos
        if qpos is not None:
            qpos = frozen_matrix(qpos, "query positional term")
            if qpos.shape != queries.shape:
                raise ShapeError(
                    f"query positional shape {qpos.shape} != query bank "
                    f"shape {queries.shape}"
                )
        object.__setattr__(self, "input_proj", proj)
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "pos_table", pos)
        object.__setattr__(self, "temporal", temporal)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "query_pos", qpos)

    @property
    def feature_dim(self) -> int:
        return self.input_proj.shape[0]

    @property
    def width(self) -> int:
        return self.input_proj.shape[1]

    @property
    def query_count(self) -> int:
        return self.queries.shape[0]

    @property
    def source_tokens(self) -> int:
        return self.pos_table.shape[0]

    @property
    def frame_count(self) -> int:
        return self.temporal.shape[0]

    def effective_queries(self) -> np.ndarray:
        if self.query_pos is None:
            return self.queries
        return self.queries + self.query_pos


@dataclass(frozen=True)
class AdapterOutput:
    """Per-frame compressed tokens and the attention that produced them."""

    tokens: tuple[np.ndarray, ...]  # T arrays of shape (N, C)
    attention: tuple[np.ndarray, ...]  # T arrays of shape (N, M)

    def __post_init__(self):
        tokens = tuple(frozen_matrix(t, "compressed tokens") for t in self.tokens)
        attention = tuple(frozen_matrix(a, "attention weights") for a in self.attention)
        if not tokens:
            raise ShapeError("adapter output needs at least one frame")
        if len(tokens) != len(attention):
            raise ShapeError(
                f"{len(tokens)} token frames vs {len(attention)} attention frames"
            )
        for i, (tok, att) in enumerate(zip(tokens, attention)):
            if tok.shape != tokens[0].shape or att.shape != attention[0].shape:
                raise ShapeError(f"frame {i} shape differs from frame 0")
            if tok.shape[0] != att.shape[0]:
                raise ShapeError(
                    f"frame {i}: {tok.shape[0]} tokens vs {att.shape[0]} attention rows"
                )
            sums = att.sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > 1e-9:
                raise ShapeError(f"frame {i}: attention rows do not sum to 1")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "attention", attention)

    @property
    def frame_count(self) -> int:
        return len(self.tokens)

    @property
    def query_count(self) -> int:
        return self.tokens[0].shape[0]

    @property
    def width(self) -> int:
        return self.tokens[0].shape[1]

    @property
    def source_tokens(self) -> int:
        return self.attention[0].shape[1]


@dataclass(frozen=True)
class AdapterGrads:
    """Gradients matching the layout of :class:`AdapterParams`."""

    input_proj: np.ndarray
    queries: np.ndarray
    pos_table: np.ndarray
    temporal: np.ndarray
    query_pos: np.ndarray | None = None


def sinusoidal_pos_table(grid_h: int, grid_w: int, width: int) -> np.ndarray:
    """A fixed 2-D sin/cos table over the patch grid, raster-scan rows.

    Each of the four width quarters carries sin/cos of the row index and
    sin/cos of the column index at geometrically spaced frequencies.
    """
    if grid_h < 1 or grid_w < 1:
        raise ParameterError("grid dims must be >= 1")
    if width < 4 or width % 4 != 0:
        raise ParameterError(f"width must be a positive multiple of 4, got {width}")
    quarter = width // 4
    omega = 1.0 / (10000.0 ** (np.arange(quarter) / quarter))
    rows = np.repeat(np.arange(grid_h), grid_w).astype(np.float64)
    cols = np.tile(np.arange(grid_w), grid_h).astype(np.float64)
    row_angle = rows[:, None] * omega[None, :]
    col_angle = cols[:, None] * omega[None, :]
    return np.concatenate(
        [np.sin(row_angle), np.cos(row_angle), np.sin(col_angle), np.cos(col_angle)],
        axis=1,
    )


def init_adapter_params(
    queries: int,
    width: int,
    feature_dim: int,
    grid_h: int,
    grid_w: int,
    frames: int,
    seed: int,
    scale: float | None = None,
    use_query_pos: bool = False,
) -> AdapterParams:
    """Fresh training-ready parameters.

    The projection and query bank get scaled normal draws, the positional
    table starts from the sinusoidal layout, and the temporal table starts
    at zero (frames initially indistinguishable). Everything is rounded to
    float32 so checkpoints round-trip bit-exactly through FTV1 files.
    """
    if queries < 1 or frames < 1 or feature_dim < 1:
        raise ParameterError("queries, frames and feature_dim must be >= 1")
    rng = make_rng(seed)
    proj = rng.normal(size=(feature_dim, width)) / np.sqrt(feature_dim)
    bank = rng.normal(size=(queries, width)) / np.sqrt(width)
    pos = sinusoidal_pos_table(grid_h, grid_w, width)
    temporal = np.zeros((frames, feature_dim))
    qpos = rng.normal(size=(queries, width)) / np.sqrt(width) if use_query_pos else None

    def f32(a):
        return a.astype(np.float32).astype(np.float64)

    return AdapterParams(
        input_proj=f32(proj),
        queries=f32(bank),
        pos_table=f32(pos),
        temporal=f32(temporal),
        scale=scale,
        query_pos=None if qpos is None else f32(qpos),
    )


def random_adapter_params(
    queries: int,
    width: int,
    feature_dim: int,
    source_tokens: int,
    frames: int,
    seed: int,
    scale: float | None = None,
    use_query_pos: bool = False,
) -> AdapterParams:
    """Fully random parameters (including positional and temporal tables).

    Used by gradient and equivariance checks, which need every table to sit
    at a generic point rather than at a structured initialization.
    """
    rng = make_rng(seed)
    return AdapterParams(
        input_proj=rng.normal(size=(feature_dim, width)),
        queries=rng.normal(size=(queries, width)),
        pos_table=rng.normal(size=(source_tokens, width)),
        temporal=rng.normal(size=(frames, feature_dim)),
        scale=scale,
        query_pos=rng.normal(size=(queries, width)) if use_query_pos else None,
    )


def add_temporal(video: VideoTokenTensor, temporal: np.ndarray) -> np.ndarray:
    """Features as (T, M, D) with the frame vector added to every patch token."""
    table = np.asarray(temporal, dtype=np.float64)
    if table.ndim != 2:
        raise ShapeError(f"temporal table must be 2-D, got shape {table.shape}")
    if table.shape[0] != video.frame_count:
        raise ShapeError(
            f"temporal table covers {table.shape[0]} frames, video has "
            f"{video.frame_count}"
        )
    if table.shape[1] != video.feature_dim:
        raise ShapeError(
            f"temporal width {table.shape[1]} != feature dim {video.feature_dim}"
        )
    return video.stacked() + table[:, None, :]


def adapt_frame(
    features: np.ndarray, params: AdapterParams
) -> tuple[np.ndarray, np.ndarray]:
    """Compress one frame's (M, D) features to (N, C) tokens.

    Returns ``(tokens, attention)`` where attention rows are the softmax
    weights each query spread over the M source tokens. The caller is
    responsible for adding temporal vectors first (see
    :func:`adapt_video`).
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ShapeError(f"frame features must be 2-D, got shape {feats.shape}")
    if feats.shape[0] != params.source_tokens:
        raise ShapeError(
            f"frame has {feats.shape[0]} tokens, positional table expects "
            f"{params.source_tokens}"
        )
    if feats.shape[1] != params.feature_dim:
        raise ShapeError(
            f"feature dim {feats.shape[1]} != projection input {params.feature_dim}"
        )
    projected = feats @ params.input_proj
    weights, out = cross_attention(
        params.effective_queries(),
        projected + params.pos_table,
        projected,
        scale=params.scale,
    )
    return out, weights


def adapt_video(video: VideoTokenTensor, params: AdapterParams) -> AdapterOutput:
    """Compress every frame of a video, preserving frame order."""
    if video.token_count != params.source_tokens:
        raise ShapeError(
            f"video has {video.token_count} tokens per frame, adapter expects "
            f"{params.source_tokens}"
        )
    shifted = add_temporal(video, params.temporal)
    tokens = []
    attention = []
    for t in range(video.frame_count):
        out, weights = adapt_frame(shifted[t], params)
        tokens.append(out)
        attention.append(weights)
    return AdapterOutput(tokens=tuple(tokens), attention=tuple(attention))


def adapter_gradients(
    video: VideoTokenTensor,
    params: AdapterParams,
    token_grads,
    attention_grads=None,
) -> AdapterGrads:
    """Reverse-mode gradients of a loss through :func:`adapt_video`.

    ``token_grads`` holds dLoss/dTokens per frame ((T, N, C) array or a
    sequence of T (N, C) arrays); ``attention_grads`` optionally adds
    dLoss/dAttention per frame ((T, N, M)). Gradients are returned for the
    projection, query bank, positional table, temporal table, and — when
    present — the query positional term.
    """
    g_tokens = np.asarray(token_grads, dtype=np.float64)
    t_count = video.frame_count
    n, c = params.query_count, params.width
    m, d = params.source_tokens, params.feature_dim
    if g_tokens.shape != (t_count, n, c):
        raise ShapeError(
            f"token grads must have shape {(t_count, n, c)}, got {g_tokens.shape}"
        )
    if attention_grads is not None:
        g_att_all = np.asarray(attention_grads, dtype=np.float64)
        if g_att_all.shape != (t_count, n, m):
            raise ShapeError(
                f"attention grads must have shape {(t_count, n, m)}, "
                f"got {g_att_all.shape}"
            )
    else:
        g_att_all = None

    shifted = add_temporal(video, params.temporal)
    queries_eff = params.effective_queries()
    scale = params.scale

    g_proj = np.zeros((d, c))
    g_queries = np.zeros((n, c))
    g_pos = np.zeros((m, c))
    g_temporal = np.zeros((t_count, d))

    for t in range(t_count):
        x = shifted[t]  # (M, D)
        projected = x @ params.input_proj  # (M, C)
        keys = projected + params.pos_table
        att, _ = cross_attention(queries_eff, keys, projected, scale=scale)

        g_out = g_tokens[t]  # (N, C)
        g_att = g_out @ projected.T  # (N, M) via the value-mixing path
        if g_att_all is not None:
            g_att = g_att + g_att_all[t]
        # Softmax backward, row-wise.
        g_logits = att * (g_att - np.sum(g_att * att, axis=1, keepdims=True))
        g_queries += scale * (g_logits @ keys)
        g_keys = scale * (g_logits.T @ queries_eff)  # (M, C)
        g_pos += g_keys
        # projected feeds both the values and (through the positional add)
        # the keys.
        g_projected = att.T @ g_out + g_keys
        g_proj += x.T @ g_projected
        g_x = g_projected @ params.input_proj.T  # (M, D)
        g_temporal[t] = g_x.sum(axis=0)

    return AdapterGrads(
        input_proj=g_proj,
        queries=g_queries,
        pos_table=g_pos,
        temporal=g_temporal,
        query_pos=None if params.query_pos is None else g_queries.copy(),
    )


def apply_grads(params: AdapterParams, grads: AdapterGrads, lr: float) -> AdapterParams:
    """One plain gradient step; immutable in, immutable out."""
    if not np.isfinite(lr):
        raise ParameterError("learning rate must be finite")
    qpos = params.query_pos
    if qpos is not None and grads.query_pos is not None:
        qpos = qpos - lr * grads.query_pos
    return replace(
        params,
        input_proj=params.input_proj - lr * grads.input_proj,
        queries=params.queries - lr * grads.queries,
        pos_table=params.pos_table - lr * grads.pos_table,
        temporal=params.temporal - lr * grads.temporal,
        query_pos=qpos,
    )


def save_checkpoint(params: AdapterParams, dirpath) -> None:
    """Write a checkpoint directory: a JSON header plus FTV1 tensors."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "queries": params.query_count,
        "width": params.width,
        "feature_dim": params.feature_dim,
        "source_tokens": params.source_tokens,
        "frames": params.frame_count,
        "scale": params.scale,
        "query_pos": params.query_pos is not None,
    }
    (root / CHECKPOINT_HEADER).write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    ftv1.write_tensor(root / "input_proj.ftv1", params.input_proj)
    ftv1.write_tensor(root / "queries.ftv1", params.queries)
    ftv1.write_tensor(root / "pos_table.ftv1", params.pos_table)
    ftv1.write_tensor(root / "temporal.ftv1", params.temporal)
    if params.query_pos is not None:
        ftv1.write_tensor(root / "query_pos.ftv1", params.query_pos)


def load_checkpoint(dirpath) -> AdapterParams:
    """Read a checkpoint directory written by :func:`save_checkpoint`."""
    root = Path(dirpath)
    header_path = root / CHECKPOINT_HEADER
    if not header_path.is_file():
        raise FormatError(f"missing checkpoint header {header_path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise FormatError(f"not an adapter checkpoint: {header_path}")
    if header.get("version") != _CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')!r}")
    qpos = None
    if header.get("query_pos"):
        qpos = ftv1.read_tensor(root / "query_pos.ftv1", expect_rank=2)
    params = AdapterParams(
        input_proj=ftv1.read_tensor(root / "input_proj.ftv1", expect_rank=2),
        queries=ftv1.read_tensor(root / "queries.ftv1", expect_rank=2),
        pos_table=ftv1.read_tensor(root / "pos_table.ftv1", expect_rank=2),
        temporal=ftv1.read_tensor(root / "temporal.ftv1", expect_rank=2),
        scale=float(header["scale"]),
        query_pos=qpos,
    )
    declared = (
        header.get("queries"),
        header.get("width"),
        header.get("feature_dim"),
        header.get("source_tokens"),
        header.get("frames"),
    )
    actual = (
        params.query_count,
        params.width,
        params.feature_dim,
        params.source_tokens,
        params.frame_count,
    )
    if declared != actual:
        raise FormatError(
            f"checkpoint header {declared} does not match tensors {actual}"
        )
    return params
