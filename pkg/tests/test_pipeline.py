import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from errinject.kinematics import forward_kinematics
from errinject.learning import Normalizer, encode_features, init_model, mlp_forward
from errinject.phystwin import generate_trajectory, run_collection
from errinject.pipeline import ComparisonError, InjectionResult, compare, inject, no_injection
from errinject.stats import histogram, ks_statistic, summarize


def null_model(role, encoding="CPE", mean=None):
    m = init_model([12 if encoding != "OC" else 6, 16, 32, 6], np.random.default_rng(0),
                   target_normalizer=Normalizer(np.zeros(6) if mean is None else mean, np.ones(6)),
                   encoding=encoding, role=role)
    for W in m.weights:
        W[:] = 0
    return m


def verbatim(records):
    """Injection results that replay the physical records exactly."""
    return [InjectionResult(r.k, r.setpoint_q, r.measured_q - r.setpoint_q, r.actual_q - r.measured_q,
                            r.measured_q, r.actual_q, r.actual_q, r.actual_pose) for r in records]


# --- stats --------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40),
       st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_ks_matches_scipy(a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # only the statistic is used, not scipy's p-value
        expected = ks_2samp(a, b).statistic
    assert ks_statistic(a, b) == pytest.approx(expected, abs=1e-12)


def test_ks_edge_cases():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0
    assert ks_statistic([0, 0], [1, 1]) == 1
    with pytest.raises(ValueError):
        ks_statistic([], [1.0])


def test_summarize_and_histogram():
    s = summarize([1.0, 2.0, 3.0, 10.0])
    assert s == {"mean": 4.0, "std": pytest.approx(np.std([1, 2, 3, 10])), "median": 2.5, "max": 10.0}
    edges, ca, cb = histogram([0, 1, 2], [1, 1], bins=4)
    assert len(edges) == 5 and ca.sum() == 3 and cb.sum() == 2


# --- inject -------------------------------------------------------------------

def test_null_injection(dh):
    traj = generate_trajectory(dh, 3, seed=0)
    res = inject(null_model("NN1"), null_model("NN2"), traj, dh)
    for r, s in zip(res, traj.setpoints):
        np.testing.assert_array_equal(r.actual_q, s)
        np.testing.assert_array_equal(r.actual_pose.matrix(), forward_kinematics(dh, s).matrix())
    base = no_injection(traj, dh)
    assert all(np.array_equal(a.actual_q, b.actual_q) for a, b in zip(res, base))


def test_injection_invariants(bench, trained):
    nn1, nn2 = trained
    res = inject(nn1, nn2, bench.test_traj, bench.dh)
    assert len(res) == len(bench.test_traj)
    for r, s in zip(res, bench.test_traj.setpoints):
        np.testing.assert_array_equal(r.setpoint_q, s)
        np.testing.assert_array_equal(r.actual_q, r.setpoint_q + r.alpha1 + r.alpha2)
        # rearranged, the sum only holds to rounding
        np.testing.assert_allclose(r.actual_q - r.setpoint_q, r.alpha1 + r.alpha2, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(r.measured_q, r.setpoint_q + r.alpha1)


def test_stage_two_uses_injected_state(bench, trained):
    nn1, nn2 = trained
    res = inject(nn1, nn2, bench.test_traj.setpoints[:20], bench.dh)
    changed = False
    for prev, r in zip(res, res[1:]):
        from_setpoint = mlp_forward(nn2, encode_features(r.setpoint_q, prev.measured_q, "CPE"))
        assert np.any(r.alpha1 != 0)
        changed |= not np.allclose(from_setpoint, r.alpha2)
    assert changed


def test_injected_offsets_reproduce_twin(bench, trained):
    nn1, _ = trained
    # controller offsets on the held-out run, predicted from setpoints alone
    res = inject(nn1, null_model("NN2"), bench.test_traj, bench.dh)
    truth = np.array([r.measured_q - r.setpoint_q for r in bench.test_records])
    pred = np.array([r.alpha1 for r in res])
    sigma = bench.twin.noise_sigma_joint
    assert np.all(np.sqrt(np.mean((pred - truth) ** 2, axis=0)) < 5 * sigma + 0.05 * np.abs(truth).max(axis=0))


def test_clamping_is_flagged(dh):
    push = np.array([0.0, 0.0, 0.05, 0.0, 0.0, 0.0])
    q = (dh.lower + dh.upper) / 2
    q[2] = dh.upper[2] - 0.01
    res = inject(null_model("NN1", mean=push), null_model("NN2"), np.array([q, q]), dh)
    assert all(r.clamped for r in res)
    assert res[0].commanded_q[2] == dh.upper[2]
    np.testing.assert_allclose(res[0].actual_q[2], q[2] + 0.05)


def test_inject_role_check(dh):
    with pytest.raises(ValueError):
        inject(null_model("NN2"), null_model("NN1"), np.zeros((1, 6)), dh)


# --- compare ------------------------------------------------------------------

def test_compare_identity(bench):
    rep = compare(bench.test_records, verbatim(bench.test_records), bench.dh)
    assert np.all(rep.et_with == 0) and np.all(rep.er_with == 0)
    assert rep.max_ks() == 0
    assert np.all(rep.et_without >= 0) and rep.et_without.mean() > 0


def test_compare_errors(bench):
    sim = verbatim(bench.test_records)
    with pytest.raises(ComparisonError, match="length"):
        compare(bench.test_records, sim[:-1], bench.dh)
    with pytest.raises(ComparisonError, match="step"):
        compare(bench.test_records[1:], sim[:-1], bench.dh)


def test_ks_self_consistency(bench):
    # identical seeds replay exactly; a different noise stream stays within 0.05
    twin, traj = bench.twin, bench.traj
    seed = bench.cfg.collection_seed()
    again, _ = run_collection(twin, traj, seed, bench.solution)
    other, _ = run_collection(twin, traj, seed + 100, bench.solution)
    assert compare(bench.records, verbatim(again), bench.dh).max_ks() == 0
    rep = compare(bench.records, verbatim(other), bench.dh)
    assert rep.max_ks() < 0.05


def test_summary_units(bench):
    rep = compare(bench.test_records, no_injection(bench.test_traj, bench.dh), bench.dh)
    s = rep.summary()
    assert s["without"]["E_T [mm]"]["mean"] == pytest.approx(rep.et_without.mean() * 1e3)
    assert s["with"]["E_R [deg]"]["max"] == pytest.approx(np.rad2deg(rep.er_with.max()))
    assert rep.translation_factor == pytest.approx(1.0)
