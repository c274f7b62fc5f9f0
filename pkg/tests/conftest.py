import numpy as np
import pytest

from errinject.kinematics import default_dh


@pytest.fixture(scope="session")
def dh():
    return default_dh()


def random_q(dh, rng, n=None, margin=0.0):
    lo, hi = dh.lower, dh.upper
    span = hi - lo
    size = (6,) if n is None else (n, 6)
    return rng.uniform(lo + margin * span, hi - margin * span, size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Bench:
    """Default twin benchmark: training and held-out collections."""

    def __init__(self, seed=0):
        from errinject.config import RunConfig
        from errinject.phystwin import generate_trajectory, run_collection

        self.cfg = RunConfig.from_dict({"seed": seed})
        self.twin = self.cfg.twin_config()
        self.dh = self.cfg.dh
        self.traj = generate_trajectory(self.dh, **self.cfg.trajectory_kwargs())
        self.test_traj = generate_trajectory(self.dh, **self.cfg.trajectory_kwargs(test=True))
        self.records, self.solution = run_collection(self.twin, self.traj, self.cfg.collection_seed())
        self.test_records, _ = run_collection(self.twin, self.test_traj, self.cfg.collection_seed(test=True),
                                              self.solution)


@pytest.fixture(scope="session")
def bench():
    return Bench(0)


@pytest.fixture(scope="session")
def trained(bench):
    """NN1 and NN2 trained on the default benchmark with shipped settings."""
    from errinject.learning import build_dataset, mlp_train

    train = bench.cfg.train_config()
    nn1, _ = mlp_train(build_dataset(bench.records, "NN1", "CPE"), bench.cfg.hidden, train)
    nn2, _ = mlp_train(build_dataset(bench.records, "NN2", "CPE"), bench.cfg.hidden, train)
    return nn1, nn2


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
