"""Synthetic stand-in for a physical cable-driven arm.

The twin is commanded in joint space and reports three things per step:
the setpoint it was given, the joint values its encoders read after the
controller settled, and the marker pose an external tracker sees. Three
error sources separate them:

* controller error: a smooth configuration-dependent steady-state offset
  ``gains * f(q)`` (gravity-like), plus encoder noise;
* non-kinematic error: a direction-dependent joint offset combining cable
  hysteresis ``+h`` and a backlash lag ``-b/2`` in the direction of motion;
* kinematic error: the true DH parameters differ from the nominal ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .calibration import HandEyeSolution, MarkerObservation, compute_actual_pose, solve_hand_eye
from .kinematics import (
    DhTable,
    IKError,
    JointLimitError,
    Pose,
    compose,
    default_dh,
    forward_kinematics,
    inverse_kinematics,
)

DEFAULT_TRAJECTORY_STEPS = 3684


class CollectionError(RuntimeError):
    pass


@dataclass
class Trajectory:
    setpoints: np.ndarray
    seed: int
    interpolation_step: np.ndarray

    def __len__(self):
        return len(self.setpoints)


@dataclass
class TwinConfig:
    dh_nominal: DhTable
    dh_true: DhTable
    controller_gains: np.ndarray
    hysteresis_magnitude: np.ndarray
    backlash_width: np.ndarray
    noise_sigma_joint: np.ndarray
    tracker_noise: tuple
    handeye_true: HandEyeSolution

    def __post_init__(self):
        for name in ("controller_gains", "hysteresis_magnitude", "backlash_width", "noise_sigma_joint"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(6)
            setattr(self, name, v)
        for name in ("hysteresis_magnitude", "backlash_width", "noise_sigma_joint"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be non-negative")
        self.tracker_noise = tuple(float(x) for x in self.tracker_noise)
        if min(self.tracker_noise) < 0:
            raise ValueError("tracker noise must be non-negative")
        for rn, rt in zip(self.dh_nominal.rows, self.dh_true.rows):
            if (rn.kind, rn.lower, rn.upper) != (rt.kind, rt.lower, rt.upper):
                raise ValueError("true and nominal DH tables must share joint kinds and limits")


@dataclass
class StepRecord:
    k: int
    setpoint_q: np.ndarray
    measured_q: np.ndarray
    actual_pose: Pose
    tracker_marker: Pose
    actual_q: np.ndarray | None = None
    true_actual_pose: Pose | None = None


DEFAULT_GAINS = (0.011, 0.014, 0.014, 0.016, 0.013, 0.013)
DEFAULT_HYSTERESIS = (0.014, 0.016, 0.0011, 0.040, 0.034, 0.034)
DEFAULT_BACKLASH = (0.003, 0.003, 0.0003, 0.008, 0.006, 0.006)
DEFAULT_JOINT_NOISE = (5e-5, 5e-5, 5e-6, 1e-4, 1e-4, 1e-4)
DEFAULT_TRACKER_NOISE = (1e-4, np.deg2rad(0.05))


def default_handeye_true() -> HandEyeSolution:
    gripper_marker = Pose.from_rotvec([0.3, -0.2, 0.5], [0.012, -0.008, 0.035])
    tracker_robot = Pose.from_rotvec([2.2, 0.4, -0.3], [0.08, -0.15, 0.95])
    return HandEyeSolution(gripper_marker, tracker_robot)


def perturb_dh(dh: DhTable, rng, max_length=1e-3, max_angle=np.deg2rad(0.5)) -> DhTable:
    """Uniform additive DH perturbations at manufacturing-tolerance scale."""
    return dh.perturbed(
        rng.uniform(-max_length, max_length, 6),
        rng.uniform(-max_angle, max_angle, 6),
        rng.uniform(-max_length, max_length, 6),
        rng.uniform(-max_angle, max_angle, 6),
    )


def make_twin_config(seed=0, dh_nominal=None, *, kinematic_error=True,
                     max_length_error=1e-3, max_angle_error=np.deg2rad(0.5),
                     controller_gains=DEFAULT_GAINS, hysteresis_magnitude=DEFAULT_HYSTERESIS,
                     backlash_width=DEFAULT_BACKLASH, noise_sigma_joint=DEFAULT_JOINT_NOISE,
                     tracker_noise=DEFAULT_TRACKER_NOISE, handeye_true=None) -> TwinConfig:
    dh_nominal = dh_nominal or default_dh()
    rng = np.random.default_rng(seed)
    dh_true = perturb_dh(dh_nominal, rng, max_length_error, max_angle_error) if kinematic_error else dh_nominal
    return TwinConfig(
        dh_nominal=dh_nominal,
        dh_true=dh_true,
        controller_gains=controller_gains,
        hysteresis_magnitude=hysteresis_magnitude,
        backlash_width=backlash_width,
        noise_sigma_joint=noise_sigma_joint,
        tracker_noise=tracker_noise,
        handeye_true=handeye_true or default_handeye_true(),
    )


def ideal_twin_config(dh_nominal=None) -> TwinConfig:
    """Twin with every error source switched off."""
    z = np.zeros(6)
    return make_twin_config(0, dh_nominal, kinematic_error=False, controller_gains=z,
                            hysteresis_magnitude=z, backlash_width=z, noise_sigma_joint=z,
                            tracker_noise=(0.0, 0.0))


# --------------------------------------------------------------------------
# trajectories


def interpolate(start, goal, step) -> np.ndarray:
    """Points after ``start`` up to and including ``goal``, no joint moving
    more than ``step`` between consecutive points."""
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    n = int(np.ceil(np.max(np.abs(goal - start) / step)))
    n = max(n, 1)
    s = np.arange(1, n + 1)[:, None] / n
    return start + s * (goal - start)


def default_interpolation_step(dh: DhTable) -> np.ndarray:
    return np.where(dh.prismatic, 0.005, 0.05)


def generate_trajectory(dh: DhTable, n_goals: int, interpolation_step=None, seed=0,
                        n_steps=None, start=None, margin=0.05) -> Trajectory:
    """Random joint-space goals joined by linear interpolation.

    Goals are drawn uniformly inside the joint limits shrunk by ``margin``
    (fraction of each range). The trajectory starts at ``start`` (default:
    mid-range). If ``n_steps`` is given the result has exactly that many
    setpoints: extra goals are drawn when ``n_goals`` falls short, and the
    tail is cut otherwise.
    """
    if n_goals < 1:
        raise ValueError("n_goals must be at least 1")
    step = default_interpolation_step(dh) if interpolation_step is None else np.asarray(interpolation_step, float)
    if step.shape != (6,) or np.any(step <= 0):
        raise ValueError("interpolation_step must be 6 positive values")
    rng = np.random.default_rng(seed)
    lo, hi = dh.lower, dh.upper
    pad = margin * (hi - lo)
    current = (lo + hi) / 2 if start is None else np.asarray(start, float)
    if not dh.within_limits(current):
        raise JointLimitError("trajectory start outside joint limits")
    chunks = [current[None, :]]
    total, goals = 1, 0
    while goals < n_goals or (n_steps is not None and total < n_steps):
        goal = rng.uniform(lo + pad, hi - pad)
        seg = interpolate(current, goal, step)
        chunks.append(seg)
        total += len(seg)
        current = goal
        goals += 1
    setpoints = np.vstack(chunks)
    if n_steps is not None:
        setpoints = setpoints[:n_steps]
    return Trajectory(setpoints, seed, step)


# --------------------------------------------------------------------------
# error model


def controller_error(cfg: TwinConfig, q) -> np.ndarray:
    """Steady-state offset of the position controller at configuration q.

    Gravity loads the outer pitch and yaw axes and the insertion stage; the
    wrist joints see a cable-tension offset that varies with their angle.
    """
    q = np.asarray(q, float)
    f = np.array([
        np.sin(q[1]),
        np.cos(q[1]) * np.sin(q[0]),
        q[2],
        0.5 + 0.5 * np.sin(q[3]),
        0.5 + 0.5 * np.sin(q[4]),
        0.5 + 0.5 * np.sin(q[5]),
    ])
    return cfg.controller_gains * f


def motion_direction(current, previous) -> np.ndarray:
    """Per-joint sign of motion; a joint that did not move counts as +1."""
    return np.where(np.asarray(current) - np.asarray(previous) >= 0, 1.0, -1.0)


def nonkinematic_error(cfg: TwinConfig, direction) -> np.ndarray:
    """Joint offset between encoder reading and true joint position.

    Hysteresis pushes the output ``h`` ahead in the direction of motion and
    backlash makes it trail by half the dead-band. The backlash part assumes
    every step traverses the whole dead-band, i.e. steps larger than ``b``.
    """
    return direction * (cfg.hysteresis_magnitude - cfg.backlash_width / 2)


def _noisy(pose: Pose, rng, sigma_t, sigma_r) -> Pose:
    if sigma_t == 0 and sigma_r == 0:
        return pose
    dt = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
    dr = rng.normal(0.0, sigma_r, 3) if sigma_r > 0 else np.zeros(3)
    return Pose(pose.rotation @ Rotation.from_rotvec(dr).as_matrix(), pose.translation + dt)


def twin_step(cfg: TwinConfig, setpoint, prev_measured, rng, k=0) -> StepRecord:
    """Command one setpoint and read back encoders and tracker.

    The returned record carries the *true* pose in both ``actual_pose`` and
    ``true_actual_pose``; run_collection replaces ``actual_pose`` with the
    tracker-based estimate.
    """
    dh = cfg.dh_nominal
    setpoint = np.asarray(setpoint, float)
    if not dh.within_limits(setpoint):
        raise JointLimitError(f"step {k}: setpoint outside joint limits")
    noise = rng.normal(0.0, 1.0, 6) * cfg.noise_sigma_joint
    measured = setpoint + controller_error(cfg, setpoint) + noise
    direction = motion_direction(measured, prev_measured)
    joint_true = measured + nonkinematic_error(cfg, direction)
    true_pose = forward_kinematics(cfg.dh_true, joint_true, check_limits=False)
    he = cfg.handeye_true
    marker = compose(compose(he.tracker_robot, true_pose), he.gripper_marker)
    marker = _noisy(marker, rng, *cfg.tracker_noise)
    return StepRecord(k, setpoint, measured, true_pose, marker, None, true_pose)


def observations(records, dh: DhTable) -> list:
    return [
        MarkerObservation(forward_kinematics(dh, r.measured_q, check_limits=False), r.tracker_marker)
        for r in records
    ]


def fit_hand_eye(records, dh: DhTable) -> HandEyeSolution:
    return solve_hand_eye(observations(records, dh))


def actual_joints(dh: DhTable, pose: Pose, seed, k=0) -> np.ndarray:
    """Joint values that realize ``pose`` under the nominal table."""
    try:
        return inverse_kinematics(dh, pose, seed, enforce_limits=False)
    except IKError as exc:
        raise CollectionError(f"step {k}: {exc}") from exc


def attach_actual(records, solution: HandEyeSolution, dh: DhTable) -> list:
    """Fill ``actual_pose`` from the tracker and ``actual_q`` by IK."""
    out = []
    for r in records:
        pose = compute_actual_pose(solution, r.tracker_marker)
        out.append(replace(r, actual_pose=pose, actual_q=actual_joints(dh, pose, r.measured_q, r.k)))
    return out


def run_collection(cfg: TwinConfig, traj: Trajectory, seed=0, calibration=None):
    """Drive the twin through ``traj``.

    ``actual_pose`` is estimated the way a lab would: tracker readings mapped
    through a hand-eye solution, fitted on these same records unless one is
    given. Returns ``(records, solution)``.
    """
    rng = np.random.default_rng(seed)
    raw = []
    prev = np.asarray(traj.setpoints[0], float)
    for k, s in enumerate(traj.setpoints):
        rec = twin_step(cfg, s, prev, rng, k)
        raw.append(rec)
        prev = rec.measured_q
    solution = calibration if calibration is not None else fit_hand_eye(raw, cfg.dh_nominal)
    return attach_actual(raw, solution, cfg.dh_nominal), solution
