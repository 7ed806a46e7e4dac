"""Speech and text to 106-D body, hand and face pose synthesis."""
from .audio import MFCCExtractor, mfcc_features
from .keypose import apply_plan, insert_motion, insert_still, plan_insertions
from .lstm import LSTMPoseRegressor, infer, train
from .pose import POSE_DIM, PoseSequence
from .render import find_part_crops, render_skeleton
from .skeleton import PoseFitter, default_skeleton, fit_pose, fit_sequence
from .text import TranscriptEncoder, encode_transcript

__version__ = "0.1.0"

__all__ = [
    "MFCCExtractor", "mfcc_features", "TranscriptEncoder", "encode_transcript", "POSE_DIM", "PoseSequence",
    "default_skeleton", "fit_pose", "fit_sequence", "PoseFitter", "LSTMPoseRegressor", "train", "infer",
    "plan_insertions", "insert_still", "insert_motion", "apply_plan", "render_skeleton", "find_part_crops",
]
