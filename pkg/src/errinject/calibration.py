"""AX = YB hand-eye calibration between robot base, gripper, tracker and marker.

Frames: R robot base, G gripper control point, O optical tracker, M marker.
Every observation pairs the robot's reported gripper pose ``R_T_G`` with the
tracker's marker pose ``O_T_M``; the unknowns are ``G_T_M`` (X) and
``O_T_R`` (so that ``R_T_O = Y``):

    R_T_G  G_T_M  =  R_T_O  O_T_M
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import Pose, compose, inverse, project_to_so3, relative_angle, translation_error

DEGENERACY_ANGLE = np.deg2rad(15.0)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerObservation:
    robot_gripper: Pose
    tracker_marker: Pose


@dataclass(frozen=True)
class HandEyeSolution:
    gripper_marker: Pose
    tracker_robot: Pose
    residual_rot: float = 0.0
    residual_trans: float = 0.0

    def to_dict(self) -> dict:
        def enc(p):
            return {"quat_wxyz": p.quat().tolist(), "translation": p.translation.tolist()}
        return {
            "gripper_marker": enc(self.gripper_marker),
            "tracker_robot": enc(self.tracker_robot),
            "residual_rot": self.residual_rot,
            "residual_trans": self.residual_trans,
        }

    @classmethod
    def from_dict(cls, data) -> "HandEyeSolution":
        def dec(d):
            return Pose.from_quat(d["quat_wxyz"], d["translation"])
        return cls(dec(data["gripper_marker"]), dec(data["tracker_robot"]),
                   float(data.get("residual_rot", 0.0)), float(data.get("residual_trans", 0.0)))


def _rotation_axis(R):
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    angle = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    if angle > np.pi - 1e-3:
        # near pi the skew part vanishes; use the dominant column of R + I
        M = R + np.eye(3)
        w = M[:, np.argmax(np.linalg.norm(M, axis=0))]
    n = np.linalg.norm(w)
    return angle, (w / n if n > 0 else np.zeros(3))


def check_rotational_diversity(robot_rotations, min_angle=DEGENERACY_ANGLE):
    """Raise CalibrationError unless the relative motions rotate about two
    axes separated by more than ``min_angle``."""
    R0 = robot_rotations[0]
    angles, axes = [], []
    for R in robot_rotations[1:]:
        ang, ax = _rotation_axis(R0.T @ R)
        angles.append(ang)
        axes.append(ax)
    angles = np.asarray(angles)
    significant = angles > 1e-6
    if significant.sum() < 2:
        raise CalibrationError("degenerate motion: fewer than two relative rotations")
    axes = np.asarray(axes)[significant]
    ref = axes[np.argmax(angles[significant])]
    spread = np.arccos(np.clip(np.abs(axes @ ref), 0.0, 1.0)).max()
    if spread <= min_angle:
        raise CalibrationError(
            f"degenerate motion: all rotation axes within {np.rad2deg(spread):.2f} deg of each other"
        )


def solve_hand_eye(observations, min_count=10) -> HandEyeSolution:
    """Least-squares solution of ``A_i X = Y B_i`` over all observations.

    Rotations come from the null vector of the stacked Kronecker system
    ``(I kron R_A) vec(R_X) - (R_B^T kron I) vec(R_Y) = 0``; translations
    then follow from the linear system ``R_A t_X - t_Y = R_Y t_B - t_A``.
    """
    obs = list(observations)
    if len(obs) < min_count:
        raise CalibrationError(f"too few observations: {len(obs)} < {min_count}")
    RA = np.array([o.robot_gripper.rotation for o in obs])
    tA = np.array([o.robot_gripper.translation for o in obs])
    RB = np.array([o.tracker_marker.rotation for o in obs])
    tB = np.array([o.tracker_marker.translation for o in obs])
    check_rotational_diversity(RA)

    n = len(obs)
    I3 = np.eye(3)
    K = np.empty((9 * n, 18))
    for i in range(n):
        K[9 * i:9 * i + 9, :9] = np.kron(I3, RA[i])
        K[9 * i:9 * i + 9, 9:] = -np.kron(RB[i].T, I3)
    _, _, Vt = np.linalg.svd(K, full_matrices=False)
    v = Vt[-1]
    X = v[:9].reshape(3, 3, order="F")
    Y = v[9:].reshape(3, 3, order="F")
    scale = np.cbrt(np.linalg.det(X))
    if scale == 0:
        raise CalibrationError("degenerate motion: rotation system has no proper solution")
    RX = project_to_so3(X / scale)
    RY = project_to_so3(Y / scale)

    C = np.zeros((3 * n, 6))
    rhs = np.zeros(3 * n)
    for i in range(n):
        C[3 * i:3 * i + 3, :3] = RA[i]
        C[3 * i:3 * i + 3, 3:] = -I3
        rhs[3 * i:3 * i + 3] = RY @ tB[i] - tA[i]
    sol, *_ = np.linalg.lstsq(C, rhs, rcond=None)
    gripper_marker = Pose(RX, sol[:3])
    robot_tracker = Pose(RY, sol[3:])
    tracker_robot = inverse(robot_tracker)

    rot_res, trans_res = [], []
    for o in obs:
        lhs = compose(o.robot_gripper, gripper_marker)
        rhs_pose = compose(robot_tracker, o.tracker_marker)
        rot_res.append(relative_angle(lhs, rhs_pose))
        trans_res.append(translation_error(lhs, rhs_pose))
    return HandEyeSolution(
        gripper_marker,
        tracker_robot,
        float(np.sqrt(np.mean(np.square(rot_res)))),
        float(np.sqrt(np.mean(np.square(trans_res)))),
    )


def compute_actual_pose(solution: HandEyeSolution, tracker_marker: Pose) -> Pose:
    """Gripper pose in the robot base frame seen through the tracker:
    ``R_T_O  O_T_M  M_T_G``."""
    return compose(compose(inverse(solution.tracker_robot), tracker_marker),
                   inverse(solution.gripper_marker))
