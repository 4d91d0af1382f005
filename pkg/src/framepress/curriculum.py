"""Training-data curriculum tools.

Manifests are JSON Lines files of QA records tied to videos. The
operations here are the data-side levers of the training recipe:
video-level subsampling (pick a fraction of the *videos*, keep their QA
pairs), instruction-type filtering, fixed-size QA sampling, and
generation of multi-stage training plans that differ in where video data
enters the schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyInputError, FormatError, ParameterError, PlanError
from .linalg import make_rng

DATA_TYPES = (
    "classification",
    "simple_caption",
    "detailed_caption",
    "conversation",
    "vqa",
    "reasoning",
    "unspecified",
)

STRATEGIES = ("S4-V", "S3-IV", "S2-S3-IV")

# Image datasets by training-stage role.
IMAGE_DATASET_ROLES = {
    "align": ("LAION",),
    "pretrain": ("GRIT", "VisualGenome", "VQAv2", "GQA", "LAION", "ShareGPT4V-caption"),
    "instruct": ("ShareGPT4V", "M3IT"),
}

VIDEO_PRETRAIN_DATASET = "Valley702k"
VIDEO_INSTRUCT_DATASET = "VideoInstruct"

# What gets optimizer updates in each stage. The first stage only warms
# up the adapter; later stages unfreeze the language model and the last
# encoder layers as well.
STAGE_TRAINABLE = {
    "align": ("adapter",),
    "pretrain": ("encoder_last3", "adapter", "llm"),
    "instruct": ("adapter", "llm"),
    "video-instruct": ("adapter", "llm"),
}


@dataclass(frozen=True)
class QaRecord:
    video_id: str
    qa_id: str
    question: str
    answer: str
    data_type: str = "unspecified"

    def __post_init__(self):
        if not self.video_id or not self.qa_id:
            raise ParameterError("video_id and qa_id must be non-empty")
        if self.data_type not in DATA_TYPES:
            raise ParameterError(
                f"unknown data_type {self.data_type!r}; expected one of {DATA_TYPES}"
            )


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered collection of QA records with unique (video_id, qa_id)."""

    name: str
    records: tuple[QaRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        seen = set()
        for rec in records:
            key = (rec.video_id, rec.qa_id)
            if key in seen:
                raise ParameterError(f"duplicate record key {key}")
            seen.add(key)
        object.__setattr__(self, "records", records)

    @property
    def qa_pairs(self) -> int:
        return len(self.records)

    @property
    def unique_videos(self) -> int:
        return len({rec.video_id for rec in self.records})

    def video_ids(self) -> list[str]:
        """Distinct video ids in first-appearance order."""
        seen = set()
        out = []
        for rec in self.records:
            if rec.video_id not in seen:
                seen.add(rec.video_id)
                out.append(rec.video_id)
        return out


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(
                json.dumps(
                    {
                        "video_id": rec.video_id,
                        "qa_id": rec.qa_id,
                        "question": rec.question,
                        "answer": rec.answer,
                        "data_type": rec.data_type,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_manifest(path, name: str | None = None) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad record: {exc}") from exc
            if not isinstance(raw, dict):
                raise FormatError(f"{path}:{lineno}: record is not an object")
            try:
                records.append(
                    QaRecord(
                        video_id=str(raw["video_id"]),
                        qa_id=str(raw["qa_id"]),
                        question=str(raw.get("question", "")),
                        answer=str(raw.get("answer", "")),
                        data_type=str(raw.get("data_type", "unspecified")),
                    )
                )
            except KeyError as exc:
                raise FormatError(f"{path}:{lineno}: missing field {exc}") from exc
    return DatasetManifest(name=name or path.stem, records=tuple(records))


def subsample(
    manifest: DatasetManifest,
    fraction: float,
    seed: int,
    qa_cap_per_video: int | None = None,
) -> DatasetManifest:
    """Keep floor(fraction * unique_videos) videos and their QA records.

    Videos are drawn uniformly without replacement under the seed;
    surviving records keep their original order. ``qa_cap_per_video``
    optionally limits how many QA records each chosen video contributes
    (again drawn uniformly), for corpora whose QA counts per video are
    heavily skewed.
    """
    if manifest.qa_pairs == 0:
        raise EmptyInputError("cannot subsample an empty manifest")
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    if qa_cap_per_video is not None and qa_cap_per_video < 1:
        raise ParameterError(f"qa_cap_per_video must be >= 1, got {qa_cap_per_video}")
    ids = manifest.video_ids()
    n_keep = math.floor(fraction * len(ids))
    rng = make_rng(seed)
    chosen = set(rng.choice(len(ids), size=n_keep, replace=False).tolist())
    keep_ids = {ids[i] for i in chosen}
    kept_indices = [
        i for i, rec in enumerate(manifest.records) if rec.video_id in keep_ids
    ]
    if qa_cap_per_video is not None:
        by_video: dict[str, list[int]] = {}
        for i in kept_indices:
            by_video.setdefault(manifest.records[i].video_id, []).append(i)
        capped = []
        # Iterate videos in first-appearance order so the rng consumption
        # is deterministic.
        for vid in ids:
            if vid not in keep_ids:
                continue
            indices = by_video[vid]
            if len(indices) > qa_cap_per_video:
                picked = rng.choice(
                    len(indices), size=qa_cap_per_video, replace=False
                )
                indices = [indices[j] for j in sorted(picked.tolist())]
            capped.extend(indices)
        kept_indices = sorted(capped)
    return DatasetManifest(
        name=manifest.name,
        records=tuple(manifest.records[i] for i in kept_indices),
    )


def filter_type(manifest: DatasetManifest, types) -> DatasetManifest:
    """Records whose data_type lies in ``types``, order preserved."""
    wanted = set(types)
    if not wanted:
        raise ParameterError("type set must be non-empty")
    unknown = wanted - set(DATA_TYPES)
    if unknown:
        raise ParameterError(
            f"unknown data types {sorted(unknown)}; expected from {DATA_TYPES}"
        )
    return DatasetManifest(
        name=manifest.name,
        records=tuple(r for r in manifest.records if r.data_type in wanted),
    )


def take_n(manifest: DatasetManifest, n: int, seed: int) -> DatasetManifest:
    """A uniform seeded sample of n QA records, original order preserved."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if n > manifest.qa_pairs:
        raise ParameterError(
            f"n={n} exceeds the manifest's {manifest.qa_pairs} QA pairs"
        )
    rng = make_rng(seed)
    picked = rng.choice(manifest.qa_pairs, size=n, replace=False)
    return DatasetManifest(
        name=manifest.name,
        records=tuple(manifest.records[i] for i in sorted(picked.tolist())),
    )


def synthetic_manifest(
    videos: int,
    qa_per_video: int,
    seed: int = 0,
    name: str = "synthetic",
) -> DatasetManifest:
    """A quick deterministic manifest for tests and demos."""
    if videos < 1 or qa_per_video < 1:
        raise ParameterError("videos and qa_per_video must be >= 1")
    rng = make_rng(seed)
    type_idx = rng.integers(0, len(DATA_TYPES) - 1, size=videos * qa_per_video)
    records = []
    pos = 0
    for v in range(videos):
        for q in range(qa_per_video):
            records.append(
                QaRecord(
                    video_id=f"vid{v:07d}",
                    qa_id=f"qa{q:04d}",
                    question=f"what happens in clip {v} segment {q}?",
                    answer=f"event {v}-{q}",
                    data_type=DATA_TYPES[int(type_idx[pos])],
                )
            )
            pos += 1
    return DatasetManifest(name=name, records=tuple(records))


@dataclass(frozen=True)
class StageSpec:
    """One training stage: its data sources and what gets updated."""

    name: str
    image_datasets: tuple[str, ...]
    video_dataset: str | None
    video_fraction: float | None
    trainable: tuple[str, ...]

    def __post_init__(self):
        if (self.video_dataset is None) != (self.video_fraction is None):
            raise PlanError(
                f"stage {self.name}: video dataset and fraction must come together"
            )
        if self.video_fraction is not None and not 0.0 < self.video_fraction <= 1.0:
            raise PlanError(
                f"stage {self.name}: video fraction must be in (0, 1], "
                f"got {self.video_fraction}"
            )


@dataclass(frozen=True)
class StagePlan:
    """An ordered training schedule satisfying its strategy's placement rule."""

    strategy: str
    stages: tuple[StageSpec, ...]

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PlanError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        stages = tuple(self.stages)
        names = [s.name for s in stages]
        expected = ["align", "pretrain", "instruct"]
        if len(names) == 4:
            expected.append("video-instruct")
        if names != expected:
            raise PlanError(f"stage order must be {expected}, got {names}")
        video_stages = {s.name for s in stages if s.video_dataset is not None}
        allowed = {
            "S4-V": {"video-instruct"},
            "S3-IV": {"instruct"},
            "S2-S3-IV": {"pretrain", "instruct"},
        }[self.strategy]
        if video_stages != allowed:
            raise PlanError(
                f"strategy {self.strategy} places video data in {sorted(allowed)}, "
                f"plan has it in {sorted(video_stages)}"
            )
        object.__setattr__(self, "stages", stages)


def make_plan(
    strategy: str,
    pretrain_fraction: float | None = None,
    instruct_fraction: float | None = None,
) -> StagePlan:
    """Build the stage schedule for one of the three video strategies.

    ``pretrain_fraction`` scales the video data mixed into the pretrain
    stage (S2-S3-IV only); ``instruct_fraction`` scales the video data in
    the instruction stage (or the dedicated fourth stage for S4-V) and
    defaults to the full set. Supplying a fraction for a stage the
    strategy keeps video-free is an error.
    """
    if strategy not in STRATEGIES:
        raise ParameterError(
            f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
        )
    if strategy != "S2-S3-IV" and pretrain_fraction is not None:
        raise PlanError(
            f"strategy {strategy} keeps the pretrain stage video-free; "
            "pretrain_fraction is not allowed"
        )
    if strategy == "S2-S3-IV" and pretrain_fraction is None:
        raise PlanError("strategy S2-S3-IV needs a pretrain_fraction")
    video_fraction = 1.0 if instruct_fraction is None else instruct_fraction

    def stage(name, video_dataset=None, video_fraction=None):
        return StageSpec(
            name=name,
            image_datasets=IMAGE_DATASET_ROLES.get(name, ()),
            video_dataset=video_dataset,
            video_fraction=video_fraction,
            trainable=STAGE_TRAINABLE[name],
        )

    if strategy == "S4-V":
        stages = (
            stage("align"),
            stage("pretrain"),
            stage("instruct"),
            stage("video-instruct", VIDEO_INSTRUCT_DATASET, video_fraction),
        )
    elif strategy == "S3-IV":
        stages = (
            stage("align"),
            stage("pretrain"),
            stage("instruct", VIDEO_INSTRUCT_DATASET, video_fraction),
        )
    else:  # S2-S3-IV
        stages = (
            stage("align"),
            stage("pretrain", VIDEO_PRETRAIN_DATASET, pretrain_fraction),
            stage("instruct", VIDEO_INSTRUCT_DATASET, video_fraction),
        )
    return StagePlan(strategy=strategy, stages=stages)


def plan_to_text(plan: StagePlan) -> str:
    """Render a plan as structured text with a stable field order."""
    payload = {
        "strategy": plan.strategy,
        "stages": [
            {
                "name": s.name,
                "image_datasets": list(s.image_datasets),
                "video_dataset": s.video_dataset,
                "video_fraction": s.video_fraction,
                "trainable": list(s.trainable),
            }
            for s in plan.stages
        ],
    }
    return json.dumps(payload, indent=2) + "\n"
