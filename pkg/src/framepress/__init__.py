"""framepress: desk-scale video token compression.

Per-frame patch features are compressed by a learnable-query
cross-attention adapter, scored by the attention each output token paid
to its best source patch, pruned to the top-K per frame, and assembled
into a decoder-ready sequence — with an analytic compute cost model,
dataset curriculum tools, and a self-verification suite around it.
"""

from .adapter import (
    AdapterGrads,
    AdapterOutput,
    AdapterParams,
    adapt_frame,
    adapt_video,
    adapter_gradients,
    init_adapter_params,
    load_checkpoint,
    save_checkpoint,
)
from .cost import (
    CalibrationResult,
    CostConfig,
    CostReport,
    DecoderSpec,
    REFERENCE_TOTALS,
    analytic_config,
    calibrate,
    calibrated_config,
    estimate,
    sweep,
)
from .curriculum import (
    DatasetManifest,
    QaRecord,
    StagePlan,
    StageSpec,
    filter_type,
    make_plan,
    read_manifest,
    subsample,
    take_n,
    write_manifest,
)
from .encoder import (
    FrameTokenGrid,
    ImagePlane,
    VideoTokenTensor,
    patchify_encode,
    sample_frames,
    synthetic_video,
)
from .errors import (
    EmptyInputError,
    FitError,
    FormatError,
    FramepressError,
    NumericError,
    ParameterError,
    PlanError,
    ShapeError,
)
from .pipeline import (
    RunReport,
    SequenceAssembly,
    ToyTaskSpec,
    assemble_sequence,
    train_toy,
)
from .sampler import (
    FrameScores,
    SampledTokens,
    sample_video,
    score_frame,
    select_topk,
)
from .verify import verify_all

__version__ = "0.1.0"

__all__ = [
    "AdapterGrads",
    "AdapterOutput",
    "AdapterParams",
    "CalibrationResult",
    "CostConfig",
    "CostReport",
    "DatasetManifest",
    "DecoderSpec",
    "EmptyInputError",
    "FitError",
    "FormatError",
    "FrameScores",
    "FrameTokenGrid",
    "FramepressError",
    "ImagePlane",
    "NumericError",
    "ParameterError",
    "PlanError",
    "QaRecord",
    "REFERENCE_TOTALS",
    "RunReport",
    "SampledTokens",
    "SequenceAssembly",
    "ShapeError",
    "StagePlan",
    "StageSpec",
    "ToyTaskSpec",
    "VideoTokenTensor",
    "adapt_frame",
    "adapt_video",
    "adapter_gradients",
    "analytic_config",
    "assemble_sequence",
    "calibrate",
    "calibrated_config",
    "estimate",
    "filter_type",
    "init_adapter_params",
    "load_checkpoint",
    "make_plan",
    "patchify_encode",
    "read_manifest",
    "sample_frames",
    "sample_video",
    "save_checkpoint",
    "score_frame",
    "select_topk",
    "subsample",
    "sweep",
    "synthetic_video",
    "take_n",
    "train_toy",
    "verify_all",
    "write_manifest",
]
