"""pelt: unwrap deformable surface patterns into a canonical texture space
via normal-guided isometric UV mapping, and evaluate what that does to
individual re-identification."""

from .geometry import (DEFAULT_TAU, GradientField, MetricField, NormalField,
                       depth_gradients, make_normal_field, metric_for_cylinder,
                       metric_from_gradients)
from .uvfield import (SolveReport, UVField, identity_uv, isometry_residual,
                      normalize_origin, procrustes_align)
from .coordnet import (CoordinateNetConfig, NetParams, fourier_encode,
                       network_forward_with_jacobian, pretrain, solve_uv_network)
from .gridfit import solve_uv_grid
from .unwrap import (TriangleMesh, UnwrappedTexture, UVSampleSet, build_samples,
                     delaunay, filter_triangles, rasterize, unwrap_image)
from .synth import (PatternSpec, SurfaceSpec, SyntheticScene, generate_reid_set,
                    generate_scene)
from .matching import (KeypointSet, MatchSet, SimilarityMatrix,
                       build_similarity_matrix, detect_and_describe, match,
                       similarity_from_matches)
from .evaluate import (EvalReport, RankedRetrieval, compare_variants, emit_report,
                       leave_one_out, mean_average_precision, metrics_for, top_k)

__version__ = "0.1.0"
