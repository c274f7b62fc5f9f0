"""Error injection into an ideal simulated arm, and sim-vs-real comparison."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import DhTable, Pose, forward_kinematics, rotation_error, translation_error
from .learning import MlpModel, encode_features, mlp_forward
from .stats import ks_statistic, summarize

LAYERS = ("M-S", "A-M")


class ComparisonError(ValueError):
    pass


@dataclass
class InjectionResult:
    """One step of the simulated arm.

    ``actual_q`` is the unclamped sum ``setpoint + alpha1 + alpha2``;
    ``commanded_q`` is what the simulated arm is sent after clamping to the
    joint limits, and ``actual_pose`` is its forward kinematics.
    """

    k: int
    setpoint_q: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    measured_q: np.ndarray
    actual_q: np.ndarray
    commanded_q: np.ndarray
    actual_pose: Pose
    clamped: bool = False


def inject(nn1: MlpModel, nn2: MlpModel, setpoints, dh: DhTable, steps=None) -> list:
    """Three-stage injection along a setpoint sequence.

    1. ``alpha1 = nn1(S)``, the controller offset;
    2. ``alpha2 = nn2(S + alpha1)``, the kinematic/non-kinematic offset;
    3. the ideal arm is commanded to ``S + alpha1 + alpha2``.

    Steps are processed in order so CP/CPE features can use the previous
    injected measured state ``S + alpha1``. At the first step the previous
    state is taken to be the setpoint itself.
    """
    if nn1.role != "NN1" or nn2.role != "NN2":
        raise ValueError("expected an NN1 model followed by an NN2 model")
    S = np.asarray(getattr(setpoints, "setpoints", setpoints), float)
    steps = np.arange(len(S)) if steps is None else np.asarray(steps)
    lo, hi = dh.lower, dh.upper
    out = []
    prev_measured = S[0]
    for k, s in zip(steps, S):
        if not dh.within_limits(s):
            raise ValueError(f"step {k}: setpoint outside joint limits")
        a1 = mlp_forward(nn1, encode_features(s, prev_measured, nn1.encoding))
        m = s + a1
        a2 = mlp_forward(nn2, encode_features(m, prev_measured, nn2.encoding))
        actual = s + a1 + a2
        commanded = np.clip(actual, lo, hi)
        clamped = bool(np.any(commanded != actual))
        pose = forward_kinematics(dh, commanded)
        out.append(InjectionResult(int(k), s, a1, a2, m, actual, commanded, pose, clamped))
        prev_measured = m
    return out


def no_injection(setpoints, dh: DhTable, steps=None) -> list:
    """The ideal arm without any injected error (``A2 = FK(S)``)."""
    S = np.asarray(getattr(setpoints, "setpoints", setpoints), float)
    steps = np.arange(len(S)) if steps is None else np.asarray(steps)
    z = np.zeros(6)
    return [InjectionResult(int(k), s, z, z, s, s, s, forward_kinematics(dh, s)) for k, s in zip(steps, S)]


@dataclass
class ComparisonReport:
    steps: np.ndarray
    et_without: np.ndarray
    er_without: np.ndarray
    et_with: np.ndarray
    er_with: np.ndarray
    ks: dict = field(default_factory=dict)
    physical_layers: dict = field(default_factory=dict)
    simulated_layers: dict = field(default_factory=dict)
    n_clamped: int = 0

    def summary(self) -> dict:
        """Table of mean/std/median/max in mm and degrees."""
        return {
            "without": {"E_T [mm]": summarize(self.et_without * 1e3),
                        "E_R [deg]": summarize(np.rad2deg(self.er_without))},
            "with": {"E_T [mm]": summarize(self.et_with * 1e3),
                     "E_R [deg]": summarize(np.rad2deg(self.er_with))},
        }

    @property
    def translation_factor(self) -> float:
        return float(self.et_without.mean() / self.et_with.mean())

    @property
    def rotation_factor(self) -> float:
        return float(self.er_without.mean() / self.er_with.mean())

    def max_ks(self) -> float:
        return max(v for vals in self.ks.values() for v in vals)


def compare(physical, simulated, dh: DhTable) -> ComparisonReport:
    """Pose differences between the physical ``A1`` and simulated ``A2``,
    with and without injection, plus per-joint KS distances between the
    physical and simulated error layers."""
    physical, simulated = list(physical), list(simulated)
    if len(physical) != len(simulated):
        raise ComparisonError(f"length mismatch: {len(physical)} physical vs {len(simulated)} simulated")
    if len(physical) == 0:
        raise ComparisonError("nothing to compare")
    for p, s in zip(physical, simulated):
        if p.k != s.k:
            raise ComparisonError(f"step mismatch: physical k={p.k} vs simulated k={s.k}")
        if p.actual_q is None:
            raise ComparisonError(f"step {p.k}: physical record has no actual joints")

    n = len(physical)
    et_wo, er_wo, et_w, er_w = (np.empty(n) for _ in range(4))
    for i, (p, s) in enumerate(zip(physical, simulated)):
        ideal = forward_kinematics(dh, p.setpoint_q)
        et_wo[i] = translation_error(p.actual_pose, ideal)
        er_wo[i] = rotation_error(p.actual_pose, ideal)
        et_w[i] = translation_error(p.actual_pose, s.actual_pose)
        er_w[i] = rotation_error(p.actual_pose, s.actual_pose)

    S1 = np.array([p.setpoint_q for p in physical])
    M1 = np.array([p.measured_q for p in physical])
    A1 = np.array([p.actual_q for p in physical])
    phys = {"M-S": M1 - S1, "A-M": A1 - M1}
    sim = {"M-S": np.array([s.alpha1 for s in simulated]),
           "A-M": np.array([s.alpha2 for s in simulated])}
    ks = {layer: [ks_statistic(phys[layer][:, j], sim[layer][:, j]) for j in range(6)]
          for layer in LAYERS}
    return ComparisonReport(
        np.array([p.k for p in physical]), et_wo, er_wo, et_w, er_w, ks, phys, sim,
        sum(s.clamped for s in simulated),
    )
