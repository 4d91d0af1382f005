"""Per-frame patch tokenization.

A deterministic toy patch encoder (one frozen linear projection) stands in
for a large pretrained vision backbone: it turns an image into an M x D grid
of patch tokens with the right shape and ordering, supplying structure
rather than semantics. Precomputed features can also be loaded from FTV1
files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ftv1
from .errors import EmptyInputError, ParameterError, ShapeError
from .linalg import frozen_matrix, make_rng

DEFAULT_PATCH_SIZE = 14
DEFAULT_IMAGE_SIDE = 112  # 8 x 8 patch grid at the default patch size
DEFAULT_FEATURE_DIM = 64

# Seed of the frozen toy projection. Fixed so that every pipeline run,
# checkpoint, and test agrees on the same stand-in encoder.
FROZEN_PROJECTION_SEED = 1401


@dataclass(frozen=True)
class ImagePlane:
    """An H x W RGB image with pixel values in [0, 1]."""

    pixels: np.ndarray  # (H, W, 3) float64

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"pixels must have shape (H, W, 3), got {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ShapeError("image must be non-empty")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("pixel values must be finite and within [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FrameTokenGrid:
    """Patch tokens of one frame, ordered raster-scan over the patch grid."""

    grid_h: int
    grid_w: int
    features: np.ndarray  # (M, D) with M = grid_h * grid_w

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ShapeError(f"patch grid must be non-empty, got {self.grid_h}x{self.grid_w}")
        feats = frozen_matrix(self.features, "frame features")
        if feats.shape[0] != self.grid_h * self.grid_w:
            raise ShapeError(
                f"feature rows ({feats.shape[0]}) must equal grid_h*grid_w "
                f"({self.grid_h * self.grid_w})"
            )
        object.__setattr__(self, "features", feats)

    @property
    def token_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class VideoTokenTensor:
    """An ordered sequence of frame token grids with homogeneous shapes."""

    frames: tuple[FrameTokenGrid, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise EmptyInputError("a video needs at least one frame")
        first = frames[0]
        for i, frame in enumerate(frames[1:], start=1):
            if (frame.grid_h, frame.grid_w, frame.feature_dim) != (
                first.grid_h,
                first.grid_w,
                first.feature_dim,
            ):
                raise ShapeError(f"frame {i} shape differs from frame 0")
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def token_count(self) -> int:
        return self.frames[0].token_count

    @property
    def feature_dim(self) -> int:
        return self.frames[0].feature_dim

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.frames[0].grid_h, self.frames[0].grid_w

    def stacked(self) -> np.ndarray:
        """Features as one (T, M, D) array."""
        return np.stack([f.features for f in self.frames])


def frozen_projection(
    patch_size: int = DEFAULT_PATCH_SIZE,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    seed: int = FROZEN_PROJECTION_SEED,
) -> np.ndarray:
    """The toy encoder's (3*p*p, D) projection, fixed by its seed."""
    if patch_size < 1 or feature_dim < 1:
        raise ParameterError("patch_size and feature_dim must be >= 1")
    rng = make_rng(seed)
    flat = 3 * patch_size * patch_size
    proj = rng.normal(size=(flat, feature_dim)) / np.sqrt(flat)
    # Round to storage precision so checkpoints and FTV1 files round-trip
    # bit-exactly.
    return proj.astype(np.float32).astype(np.float64)


def patchify_encode(img: ImagePlane, patch_size: int, projection) -> FrameTokenGrid:
    """Flatten each non-overlapping p x p x 3 patch and project it to D dims.

    Patches are flattened row-major with channels innermost and ordered
    raster-scan over the patch grid, so positional tables line up with
    token index ``row * grid_w + col``.
    """
    if patch_size < 1:
        raise ParameterError(f"patch size must be >= 1, got {patch_size}")
    h, w = img.height, img.width
    if h % patch_size != 0 or w % patch_size != 0:
        raise ShapeError(
            f"patch size {patch_size} must divide image dims {h}x{w}"
        )
    proj = np.asarray(projection, dtype=np.float64)
    flat = 3 * patch_size * patch_size
    if proj.ndim != 2 or proj.shape[0] != flat:
        raise ShapeError(
            f"projection must have shape ({flat}, D), got {proj.shape}"
        )
    grid_h, grid_w = h // patch_size, w // patch_size
    # (gh, p, gw, p, 3) -> (gh, gw, p, p, 3) -> (M, 3p^2)
    patches = img.pixels.reshape(grid_h, patch_size, grid_w, patch_size, 3)
    patches = patches.transpose(0, 2, 1, 3, 4).reshape(grid_h * grid_w, flat)
    return FrameTokenGrid(grid_h, grid_w, patches @ proj)


def sample_frames(video_frame_count: int, t: int) -> list[int]:
    """Indices of ``t`` evenly spaced frames: ``floor(i * count / t)``."""
    if video_frame_count < 1:
        raise EmptyInputError("cannot sample frames from an empty video")
    if t < 1:
        raise ParameterError(f"frame count t must be >= 1, got {t}")
    return [(i * video_frame_count) // t for i in range(t)]


def save_features(video: VideoTokenTensor, path) -> None:
    """Write a video's features as a rank-4 (T, grid_h, grid_w, D) FTV1 file."""
    gh, gw = video.grid_shape
    t, d = video.frame_count, video.feature_dim
    ftv1.write_tensor(path, video.stacked().reshape(t, gh, gw, d))


def load_features(path) -> VideoTokenTensor:
    """Read a rank-4 (T, grid_h, grid_w, D) FTV1 file into a video tensor."""
    arr = ftv1.read_tensor(path, expect_rank=4)
    t, gh, gw, d = arr.shape
    frames = tuple(
        FrameTokenGrid(gh, gw, arr[i].reshape(gh * gw, d)) for i in range(t)
    )
    return VideoTokenTensor(frames)


def synthetic_video(
    frames: int,
    grid_h: int,
    grid_w: int,
    feature_dim: int,
    seed: int,
) -> VideoTokenTensor:
    """A seeded random video tensor with float32-representable values."""
    rng = make_rng(seed)
    raw = rng.normal(size=(frames, grid_h * grid_w, feature_dim))
    vals = raw.astype(np.float32).astype(np.float64)
    return VideoTokenTensor(
        tuple(FrameTokenGrid(grid_h, grid_w, vals[i]) for i in range(frames))
    )
