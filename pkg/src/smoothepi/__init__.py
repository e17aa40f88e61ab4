"""Two-view epipolar geometry recovery for images of smooth featureless surfaces.

The package implements five recovery methods sharing one toolkit:

- isophoto extraction and curvature signatures (``isophoto``),
- cyclic-correlation point correspondence on closed curves (``correspond``),
- plane-induced homography estimation and refinement (``homography``),
- an equal-hit-measure partition of the epipole plane (``partition``),
- the spiral fundamental-matrix search with leashed refinement (``fsearch``),
- epipolar-tangency candidate scoring (``ctpm``),
- characteristic-point, outline-tangent, and exact-match methods (``features``),
- a synthetic Lambertian scene oracle (``synthgen``),
- and the end-to-end driver with SVG diagnostics (``cli``).
"""

from .correspond import (
    MatchSet,
    build_match_set,
    correlate_curves,
    from_euclidean,
    point_at_frac,
    prepare_curve,
    verify_by_centroid,
)
from .ctpm import (
    TangencyObservation,
    cost_ctpm,
    rank_candidates,
    scan_tangencies,
    tangent_points_from_epipole,
)
from .errors import SmoothEpiError, ValidationError
from .features import (
    CharacteristicPoint,
    cost_B,
    detect_characteristic_points,
    eight_point,
    match_characteristic_points,
    otpm_search,
    ransac_F,
)
from .fsearch import (
    CandidateEntry,
    CandidateSet,
    FundamentalMatrix,
    compose_F,
    cost_Z,
    from_matrix,
    local_minima_filter,
    polish_retained,
    refine_at_epipole,
    search,
)
from .homography import Homography, cost_S, dlt, normalize_h, refine
from .imagery import IntensityImage, from_array, load_image, write_pgm
from .isophoto import (
    IsophotoCurve,
    OutlineCurve,
    curve_from_points,
    extract_isophotos,
    extract_outline,
    rescale_curvature,
    resample_curve,
)
from .partition import (
    EpipolePartition,
    EpipoleRegion,
    PartitionFrame,
    alpha_G,
    build_partition,
    hit_measure,
    solve_outer_ring,
    spiral_representatives,
)
from .synthgen import SceneSpec, exact_matches, render, scene_a, scene_b, true_F

__version__ = "0.1.0"

__all__ = [
    "CandidateEntry",
    "CandidateSet",
    "CharacteristicPoint",
    "EpipolePartition",
    "EpipoleRegion",
    "FundamentalMatrix",
    "Homography",
    "IntensityImage",
    "IsophotoCurve",
    "MatchSet",
    "OutlineCurve",
    "PartitionFrame",
    "SceneSpec",
    "SmoothEpiError",
    "TangencyObservation",
    "ValidationError",
    "alpha_G",
    "build_match_set",
    "build_partition",
    "compose_F",
    "correlate_curves",
    "cost_B",
    "cost_S",
    "cost_Z",
    "cost_ctpm",
    "curve_from_points",
    "detect_characteristic_points",
    "dlt",
    "eight_point",
    "exact_matches",
    "extract_isophotos",
    "extract_outline",
    "from_array",
    "from_euclidean",
    "from_matrix",
    "hit_measure",
    "load_image",
    "local_minima_filter",
    "match_characteristic_points",
    "normalize_h",
    "otpm_search",
    "point_at_frac",
    "polish_retained",
    "prepare_curve",
    "rank_candidates",
    "ransac_F",
    "refine",
    "refine_at_epipole",
    "render",
    "resample_curve",
    "rescale_curvature",
    "scan_tangencies",
    "scene_a",
    "scene_b",
    "search",
    "solve_outer_ring",
    "spiral_representatives",
    "tangent_points_from_epipole",
    "true_F",
    "verify_by_centroid",
    "write_pgm",
]
