"""Attention-weighted token sampling.

After the adapter compresses a frame to N tokens, each token gets a
relevance score: the largest weight in its attention row. Only the
top-K scoring tokens per frame are kept. Ties break toward the lower
token index, which makes the selection deterministic and nested —
the keep-set for K is always contained in the keep-set for K+1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ftv1
from .adapter import AdapterOutput
from .errors import FormatError, ParameterError, ShapeError
from .linalg import frozen_matrix

KEEP_ORDERS = ("score", "index")


@dataclass(frozen=True)
class FrameScores:
    """Per-token relevance scores for one frame."""

    values: np.ndarray  # (N,)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 1 or vals.size == 0:
            raise ShapeError(f"scores must be a non-empty vector, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("scores must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def token_count(self) -> int:
        return self.values.size


def score_frame(attention: np.ndarray) -> FrameScores:
    """Row maxima of an (N, M) attention matrix.

    With rows summing to one, every score lands in [1/M, 1]: a token that
    spreads evenly scores 1/M, a token locked onto a single source patch
    scores 1.
    """
    att = np.asarray(attention, dtype=np.float64)
    if att.ndim != 2 or att.shape[0] == 0 or att.shape[1] == 0:
        raise ShapeError(f"attention must be a non-empty matrix, got shape {att.shape}")
    return FrameScores(att.max(axis=1))


def select_topk(scores: FrameScores, k: int) -> np.ndarray:
    """Indices of the k highest scores, ties broken toward lower index.

    The result is ordered by descending score (ascending index within a
    tie), so its length-J prefix is exactly the selection for k=J.
    """
    n = scores.token_count
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -scores.values))
    return order[:k].copy()


@dataclass(frozen=True)
class SampledTokens:
    """The kept tokens of each frame and where they came from."""

    keep: int
    indices: tuple[np.ndarray, ...]  # T arrays of shape (K,), int64
    tokens: tuple[np.ndarray, ...]  # T arrays of shape (K, C)

    def __post_init__(self):
        if self.keep < 1:
            raise ParameterError(f"keep must be >= 1, got {self.keep}")
        if not self.indices or len(self.indices) != len(self.tokens):
            raise ShapeError("indices and tokens must cover the same frames")
        frozen_idx = []
        for i, idx in enumerate(self.indices):
            arr = np.array(idx, dtype=np.int64, copy=True)
            if arr.shape != (self.keep,):
                raise ShapeError(
                    f"frame {i}: expected {self.keep} indices, got shape {arr.shape}"
                )
            if arr.min() < 0:
                raise ShapeError(f"frame {i}: negative token index")
            if np.unique(arr).size != arr.size:
                raise ShapeError(f"frame {i}: duplicate token indices")
            arr.setflags(write=False)
            frozen_idx.append(arr)
        frozen_tok = []
        for i, tok in enumerate(self.tokens):
            mat = frozen_matrix(tok, "sampled tokens")
            if mat.shape[0] != self.keep:
                raise ShapeError(
                    f"frame {i}: expected {self.keep} token rows, got {mat.shape[0]}"
                )
            if frozen_tok and mat.shape[1] != frozen_tok[0].shape[1]:
                raise ShapeError(f"frame {i}: token width differs from frame 0")
            frozen_tok.append(mat)
        object.__setattr__(self, "indices", tuple(frozen_idx))
        object.__setattr__(self, "tokens", tuple(frozen_tok))

    @property
    def frame_count(self) -> int:
        return len(self.tokens)

    @property
    def width(self) -> int:
        return self.tokens[0].shape[1]


def sample_video(output: AdapterOutput, k: int, order: str = "score") -> SampledTokens:
    """Keep the top-k tokens of every frame of an adapter output.

    ``order`` controls how kept tokens are laid out within a frame:
    ``"score"`` keeps the descending-score order of :func:`select_topk`,
    ``"index"`` re-sorts them by their original token index.
    """
    if order not in KEEP_ORDERS:
        raise ParameterError(f"order must be one of {KEEP_ORDERS}, got {order!r}")
    if not 1 <= k <= output.query_count:
        raise ParameterError(
            f"k must be in [1, {output.query_count}], got {k}"
        )
    indices = []
    tokens = []
    for att, tok in zip(output.attention, output.tokens):
        idx = select_topk(score_frame(att), k)
        if order == "index":
            idx = np.sort(idx)
        indices.append(idx)
        tokens.append(tok[idx])
    return SampledTokens(keep=k, indices=tuple(indices), tokens=tuple(tokens))


def save_sampled(sampled: SampledTokens, path) -> None:
    """Write kept tokens as a rank-3 FTV1 file plus a JSON index sidecar."""
    path = Path(path)
    stacked = np.stack([t for t in sampled.tokens])
    ftv1.write_tensor(path, stacked)
    sidecar = {
        "keep": sampled.keep,
        "indices": [idx.tolist() for idx in sampled.indices],
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_sampled(path) -> SampledTokens:
    """Read a token file and sidecar written by :func:`save_sampled`."""
    path = Path(path)
    stacked = ftv1.read_tensor(path, expect_rank=3)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.is_file():
        raise FormatError(f"missing index sidecar {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable index sidecar: {exc}") from exc
    indices = sidecar.get("indices")
    keep = sidecar.get("keep")
    if not isinstance(indices, list) or len(indices) != stacked.shape[0]:
        raise FormatError("index sidecar does not match token file")
    return SampledTokens(
        keep=int(keep),
        indices=tuple(np.asarray(ix, dtype=np.int64) for ix in indices),
        tokens=tuple(stacked[i] for i in range(stacked.shape[0])),
    )
