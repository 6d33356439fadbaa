"""Day/night stereo localization: a style-transform network in front of a
learned keypoint/descriptor network, dense soft matching and a weighted SVD
pose solver, trained end to end on synthetic stereo pairs."""

from .diffcore import DTYPE, ContractError, grad_check
from .evaluate import EvalReport, evaluate
from .featnet import FeatureNetwork, FeatureSet, detect
from .matchpose import MatcherConfig, MatchSet, match, solve_pose
from .se3 import SE3Pose
from .stereocam import StereoCamera, backproject, project
from .synthdata import DataConfig, Dataset, build_dataset
from .trainer import TrainConfig, train
from .transnet import LossNetwork, TransformNetwork

__version__ = "0.1.0"
