"""Hierarchical visual localisation with difficulty-adaptive image retrieval."""

from .geometry import Camera, Pose, Quaternion, project, rotation_error, translation_error
from .index import DescriptorIndex, cosine_similarity, query_score, retrieve_top_k
from .policy import Difficulty, PolicyConfig, budget, classify, expected_average_k
from .matching import LocalFeatureSet, MatchSet, match_features, match_ratio
from .pnp import PoseEstimate, PoseEstimationError, RansacConfig, p3p_solve, ransac_pnp, refine_pose
from .bundle_io import Query, QuerySet, ReferenceImage, SceneBundle, load_bundle, load_queries, save_bundle, save_queries
from .pipeline import Adaptive, Fixed, MatcherConfig, QueryResult, localize, run_batch
from .synthworld import WorldConfig, generate

__version__ = "0.1.0"
