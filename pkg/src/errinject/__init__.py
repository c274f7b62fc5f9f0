"""Learned joint-space error injection for simulated robot manipulators."""
from .kinematics import DhTable, Pose, default_dh, forward_kinematics, inverse_kinematics
from .calibration import HandEyeSolution, solve_hand_eye
from .phystwin import generate_trajectory, make_twin_config, run_collection
from .learning import build_dataset, hyperparameter_search, mlp_forward, mlp_train
from .pipeline import compare, inject

__version__ = "0.1.0"
