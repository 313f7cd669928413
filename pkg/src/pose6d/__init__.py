"""Keypoint-voting 6D object pose estimation toolkit.

Geometry and rigid fitting, keypoint selection (FPS and SIFT-FPS), mean-shift
voting, pose metrics, a procedural scene generator, a toy RGB/point-cloud
fusion network with hand-written autodiff, file formats and a CLI.
"""
from .errors import (ConfigurationError, DivergenceError, FormatError, InvariantError, Pose6DError,
                     ValidationError)
from .geometry import (CameraIntrinsics, PointCloud, RgbdFrame, RigidTransform, XyzMap, knn,
                       lift_depth, make_rng, project, random_subsample)
from .keypoints import KeypointModel, fps, sift_fps_select
from .metrics import add, add_01d, add_auc, add_s, accuracy_at_threshold
from .rigid_fit import Correspondences, fit_pose
from .voting import Detection, VoteField, detect_and_fit, mean_shift

__version__ = "0.1.0"
