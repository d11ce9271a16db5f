"""Pairwise matching of fractured 3D surfaces with Gaussian mixture descriptors."""
from .alignment import AlignmentFailure, AlignmentResult, icp_refine, ransac_align
from .gmd import GMD, GMM, DescriptorParams, compute_gmd, describe_keypoints, em_fit, run_xmeans
from .keypoints import SiftParams, detect_keypoints, extract_patch
from .lrf import LRF, compute_lrf
from .matching import Correspondence, MatchDecision, distance_matrix, l2_distance, match_descriptors
from .metrics import MatchReport, aonv, local_aonv, poc
from .pipeline import PipelineError, RunConfig, run_pipeline
from .ply import load_ply, save_ply
from .pointcloud import PointCloud, RigidTransform, compute_resolution, estimate_normals
from .synth import SynthConfig, generate_fragment_pair

__version__ = "0.1.0"
