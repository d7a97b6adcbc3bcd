"""maskforge: landmark-driven fabric-mask overlay for face images, with an
IoU placement gate, RGBA layer packaging, verification metrics, and a
pairwise human-realism study service."""

__version__ = "0.1.0"

from .geometry import (
    DegenerateGeometryError,
    LandmarkConvention,
    LandmarkSet,
    Polygon,
    mask_region_polygon,
    parse_landmarks,
    polygon_iou,
    raster_footprint_iou,
)
from .maskkit import HsvShift, MaskRegistry, MaskTemplate, load_registry, pick_mask
from .pipeline import (
    BatchReport,
    CorpusManifest,
    ManifestEntry,
    PlacementRecord,
    QaConfig,
    enhance_corpus,
    overlay_corpus,
    qa_report,
)
from .render import (
    ColorStats,
    MaskLayer,
    color_match,
    composite,
    face_color_stats,
    feather_alpha,
    warp_mask,
    warp_mask_global,
)
from .studysvc import StudyManifest, TallyTable, VoteRecord, make_study, tally
from .verifybench import (
    EmbeddingTable,
    FoldPlan,
    PairSet,
    VerificationReport,
    calibrate_threshold,
    evaluate,
    far_at,
    generate_pairs,
    make_folds,
    pair_distances,
)

__all__ = [name for name in dir() if not name.startswith("_")]
