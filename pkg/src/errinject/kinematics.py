"""Rigid transforms, modified-DH serial chains and pose error metrics.

Conventions: meters and radians everywhere. Link transforms follow the
modified (Craig) DH convention

    T_i = Rx(alpha_i) Tx(a_i) Rz(theta_i) Tz(d_i)

where ``alpha_i`` and ``a_i`` describe the link *preceding* joint ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

ORTHO_TOL = 1e-9


class JointLimitError(ValueError):
    """A joint configuration lies outside the table's limits."""


class IKError(RuntimeError):
    """Inverse kinematics did not converge."""

    def __init__(self, message, residual_pos, residual_rot, q):
        super().__init__(
            f"{message} (residual {residual_pos:.3e} m, {residual_rot:.3e} rad)"
        )
        self.residual_pos = residual_pos
        self.residual_rot = residual_rot
        self.q = q


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.linalg.norm(R.T @ R - np.eye(3)) >= ORTHO_TOL or abs(np.linalg.det(R) - 1.0) >= ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quat(cls, wxyz, translation) -> "Pose":
        """Build from a (w, x, y, z) quaternion; it is normalized first."""
        w, x, y, z = np.asarray(wxyz, dtype=float)
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(project_to_so3(R), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(project_to_so3(Rotation.from_rotvec(rotvec).as_matrix()), translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quat(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        if q[0] < 0:
            q = -q
        return q / np.linalg.norm(q)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def project_to_so3(M) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (det forced to +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    return np.pi - np.mod(np.pi - x, 2 * np.pi)


# --------------------------------------------------------------------------
# DH tables


@dataclass(frozen=True)
class DhRow:
    a: float
    alpha: float
    d: float
    theta: float
    kind: str
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class DhTable:
    rows: tuple

    def __post_init__(self):
        rows = tuple(r if isinstance(r, DhRow) else DhRow(**r) for r in self.rows)
        if len(rows) != 6:
            raise ValueError(f"expected 6 DH rows, got {len(rows)}")
        for i, r in enumerate(rows):
            if r.kind not in (REVOLUTE, PRISMATIC):
                raise ValueError(f"row {i + 1}: unknown joint kind {r.kind!r}")
            if not r.lower < r.upper:
                raise ValueError(f"row {i + 1}: lower limit must be below upper limit")
        if sum(r.kind == PRISMATIC for r in rows) != 1:
            raise ValueError("exactly one prismatic joint is required")
        object.__setattr__(self, "rows", rows)
        # cached arrays for the hot loops
        object.__setattr__(self, "_a", np.array([r.a for r in rows]))
        object.__setattr__(self, "_alpha", np.array([r.alpha for r in rows]))
        object.__setattr__(self, "_d", np.array([r.d for r in rows]))
        object.__setattr__(self, "_theta", np.array([r.theta for r in rows]))
        object.__setattr__(self, "prismatic", np.array([r.kind == PRISMATIC for r in rows]))

    @property
    def lower(self) -> np.ndarray:
        return np.array([r.lower for r in self.rows])

    @property
    def upper(self) -> np.ndarray:
        return np.array([r.upper for r in self.rows])

    @property
    def revolute(self) -> np.ndarray:
        return ~self.prismatic

    def within_limits(self, q, tol=0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clip(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def perturbed(self, da, dalpha, dd, dtheta) -> "DhTable":
        """Copy with additive parameter offsets; joint kinds and limits are kept."""
        rows = [
            DhRow(r.a + da[i], r.alpha + dalpha[i], r.d + dd[i], r.theta + dtheta[i], r.kind, r.lower, r.upper)
            for i, r in enumerate(self.rows)
        ]
        return DhTable(tuple(rows))

    def to_dict(self) -> dict:
        return {"convention": "modified", "rows": [vars(r).copy() for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> "DhTable":
        conv = data.get("convention", "modified")
        if conv != "modified":
            raise ValueError(f"only the modified DH convention is supported, got {conv!r}")
        return cls(tuple(DhRow(**{k: (v if k == "kind" else float(v)) for k, v in r.items()}) for r in data["rows"]))


def default_dh() -> DhTable:
    """Illustrative RR-P-RRR remote-center-of-motion arm.

    Geometry resembles a surgical patient-side manipulator (outer yaw and
    pitch about a remote center, tool insertion, tool roll and a two-axis
    wrist). The numbers are not those of any real robot.
    """
    h = np.pi / 2
    return DhTable((
        DhRow(0.0, h, 0.0, h, REVOLUTE, -1.2, 1.2),
        DhRow(0.0, -h, 0.0, -h, REVOLUTE, -0.8, 0.8),
        DhRow(0.0, h, -0.4318, 0.0, PRISMATIC, 0.06, 0.24),
        DhRow(0.0, 0.0, 0.4162, 0.0, REVOLUTE, -1.5, 1.5),
        DhRow(0.0, -h, 0.0, -h, REVOLUTE, -1.2, 1.2),
        DhRow(0.0091, -h, 0.0, -h, REVOLUTE, -1.2, 1.2),
    ))


def link_transform(a, alpha, d, theta) -> np.ndarray:
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array([
        [ct, -st, 0.0, a],
        [st * ca, ct * ca, -sa, -sa * d],
        [st * sa, ct * sa, ca, ca * d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _frames(dh: DhTable, q: np.ndarray) -> list:
    theta = dh._theta + np.where(dh.prismatic, 0.0, q)
    d = dh._d + np.where(dh.prismatic, q, 0.0)
    T = np.eye(4)
    out = []
    for i in range(6):
        T = T @ link_transform(dh._a[i], dh._alpha[i], d[i], theta[i])
        out.append(T)
    return out


def _check_q(dh: DhTable, q, tol=1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape != (6,):
        raise ValueError(f"joint configuration must have 6 entries, got {q.shape[0]}")
    if not dh.within_limits(q, tol):
        bad = [i + 1 for i in range(6) if not dh.lower[i] - tol <= q[i] <= dh.upper[i] + tol]
        raise JointLimitError(f"joints {bad} outside limits: q={np.round(q, 6).tolist()}")
    return q


def fk_matrix(dh: DhTable, q, check_limits=True) -> np.ndarray:
    q = _check_q(dh, q) if check_limits else np.asarray(q, dtype=float)
    return _frames(dh, q)[-1]


def forward_kinematics(dh: DhTable, q, check_limits=True) -> Pose:
    return Pose.from_matrix(fk_matrix(dh, q, check_limits))


def jacobian(dh: DhTable, q) -> np.ndarray:
    """Geometric Jacobian (rows: linear velocity, angular velocity) in the base frame."""
    frames = _frames(dh, np.asarray(q, dtype=float))
    return _jacobian_from_frames(dh, frames)


def _jacobian_from_frames(dh, frames):
    p = frames[-1][:3, 3]
    J = np.zeros((6, 6))
    for i, F in enumerate(frames):
        z = F[:3, 2]
        if dh.prismatic[i]:
            J[:3, i] = z
        else:
            J[:3, i] = np.cross(z, p - F[:3, 3])
            J[3:, i] = z
    return J


def _rot_residual(R_target, R):
    return Rotation.from_matrix(R_target @ R.T).as_rotvec()


def inverse_kinematics(dh: DhTable, target: Pose, seed, *, max_iter=200, damping=1e-4,
                       tol_pos=1e-8, tol_rot=1e-8, max_step=0.2, enforce_limits=True) -> np.ndarray:
    """Damped least-squares IK started from ``seed``.

    The iterate is projected onto the joint limits after every step, so the
    result is always in range and on the branch reached from the seed.
    ``enforce_limits=False`` drops the projection, for poses of a real arm
    that may sit slightly past a nominal limit. Raises IKError when the
    residual is not below tolerance after max_iter.
    """
    lo, hi = (dh.lower, dh.upper) if enforce_limits else (-np.inf, np.inf)
    q = np.clip(np.asarray(seed, dtype=float).reshape(6), lo, hi)
    lam2 = damping ** 2
    step_scale = np.where(dh.prismatic, 0.1, 1.0) * max_step
    ep = er = np.inf
    for _ in range(max_iter + 1):
        frames = _frames(dh, q)
        T = frames[-1]
        e = np.empty(6)
        e[:3] = target.translation - T[:3, 3]
        e[3:] = _rot_residual(target.rotation, T[:3, :3])
        ep, er = np.linalg.norm(e[:3]), np.linalg.norm(e[3:])
        if ep < tol_pos and er < tol_rot:
            return q
        J = _jacobian_from_frames(dh, frames)
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(6), e)
        ratio = np.max(np.abs(dq) / step_scale)
        if ratio > 1.0:
            dq /= ratio
        dq[dh.revolute] = wrap_angle(dq[dh.revolute])
        q = np.clip(q + dq, lo, hi)
    raise IKError("inverse kinematics did not converge", ep, er, q)


# --------------------------------------------------------------------------
# error metrics


def translation_error(a: Pose, b: Pose) -> float:
    """Euclidean distance between the two translations [m]."""
    return float(np.linalg.norm(a.translation - b.translation))


def rotation_error(a: Pose, b: Pose) -> float:
    """Angle of ``R_a R_b^-1`` [rad], in [0, pi]. Never NaN."""
    c = (np.trace(a.rotation @ b.rotation.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def relative_angle(a: Pose, b: Pose) -> float:
    """Same quantity as rotation_error, computed with atan2 so it stays
    accurate for angles near 0 and pi."""
    M = a.rotation @ b.rotation.T
    s = np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]]) / 2.0
    c = (np.trace(M) - 1.0) / 2.0
    return float(np.arctan2(s, c))
