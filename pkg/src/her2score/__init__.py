"""her2score: patch-grid HER2 scoring of paired H&E/IHC slide rasters."""

from .errors import (
    BackendUnavailableError,
    Her2ScoreError,
    IncompleteGridError,
    InvalidArgumentError,
    MappingOutOfRangeError,
    NotInvertibleError,
    ProtocolViolationError,
    UndefinedRocError,
)
from .mapping import (
    BijectionReport,
    MappingKind,
    ModalityMapping,
    identity_mapping,
    invert,
    map_coord,
    verify_bijection,
)
from .models import (
    Backend,
    LabelMap,
    ModelBinding,
    ModelGateway,
    ModelRole,
    StainLabel,
    StainPrediction,
    TumorLabel,
    TumorPrediction,
    default_bindings,
)
from .scoring import (
    BinaryStatus,
    CaseReport,
    ConfidenceFlag,
    Her2Score,
    PatchScoreRecord,
    PixelHistogram,
    ScoringMode,
    SlideScore,
    annotation_code,
    binary_histogram,
    patch_percentage,
    pixel_histogram,
    run_pipeline,
    score_patch,
    score_slide,
)
from .tiling import (
    GridSpec,
    Modality,
    Patch,
    PatchCoord,
    PatchGrid,
    SlideImage,
    compute_grid_spec,
    extract_patches,
    implode,
    load_patch_grid,
    read_slide,
    save_patch_grid,
)

__version__ = "0.1.0"
