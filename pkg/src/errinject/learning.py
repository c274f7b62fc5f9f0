"""Joint-offset regression with a small numpy MLP.

Two regressors are trained from twin (or lab) records:

* NN1 maps a setpoint to the controller offset ``M - S``;
* NN2 maps a measured configuration to the offset ``A - M``, where ``A`` is
  the tracker-derived pose converted to joints by IK.

Input encodings: ``OC`` current joints only, ``CP`` current plus the
previous measured joints, ``CPE`` current plus the sign of the motion
since the previous measured joints.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .phystwin import actual_joints, motion_direction

log = logging.getLogger(__name__)

ENCODINGS = ("OC", "CP", "CPE")
ROLES = ("NN1", "NN2")
DEFAULT_HIDDEN = (16, 32)


class DatasetError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# features and datasets


def encode_features(current, prev_measured, encoding: str) -> np.ndarray:
    """Feature vector(s) for one or many steps (rows)."""
    current = np.asarray(current, float)
    if encoding == "OC":
        return current.copy()
    prev = np.asarray(prev_measured, float)
    if encoding == "CP":
        return np.concatenate([current, prev], axis=-1)
    if encoding == "CPE":
        return np.concatenate([current, motion_direction(current, prev)], axis=-1)
    raise ValueError(f"unknown encoding {encoding!r}")


def feature_width(encoding: str) -> int:
    return 6 if encoding == "OC" else 12


@dataclass
class ErrorDataset:
    inputs: np.ndarray
    targets: np.ndarray
    encoding: str
    role: str
    steps: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, float))
        self.targets = np.atleast_2d(np.asarray(self.targets, float))
        if len(self.inputs) != len(self.targets):
            raise DatasetError("inputs and targets differ in length")
        if self.inputs.shape[1] != feature_width(self.encoding):
            raise DatasetError(f"{self.encoding} needs {feature_width(self.encoding)} features")
        if self.targets.shape[1] != 6:
            raise DatasetError("targets must be 6 joint offsets")

    def __len__(self):
        return len(self.inputs)


def build_dataset(records, role: str, encoding: str, dh=None) -> ErrorDataset:
    """Training pairs for NN1 (``S -> M - S``) or NN2 (``M -> A - M``).

    Records must be ordered by step index. CP/CPE need the previous step's
    measured joints, so their first record is dropped. Records without
    ``actual_q`` get one by IK under ``dh``.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    records = list(records)
    ks = np.array([r.k for r in records])
    if len(ks) > 1 and np.any(np.diff(ks) <= 0):
        raise DatasetError("records are not ordered by step index")
    if encoding != "OC" and len(records) < 2:
        raise DatasetError(f"{encoding} encoding needs at least 2 records")

    S = np.array([r.setpoint_q for r in records])
    M = np.array([r.measured_q for r in records])
    if role == "NN1":
        current, target = S, M - S
    else:
        A = []
        for r in records:
            if r.actual_q is not None:
                A.append(r.actual_q)
            elif dh is None:
                raise DatasetError(f"step {r.k}: no actual joints and no DH table to compute them")
            else:
                try:
                    A.append(actual_joints(dh, r.actual_pose, r.measured_q, r.k))
                except Exception as exc:
                    raise DatasetError(str(exc)) from exc
        current, target = M, np.array(A) - M

    if encoding == "OC":
        return ErrorDataset(current, target, encoding, role, ks)
    X = encode_features(current[1:], M[:-1], encoding)
    return ErrorDataset(X, target[1:], encoding, role, ks[1:])


# --------------------------------------------------------------------------
# model


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Normalizer":
        x = np.asarray(x, float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, width) -> "Normalizer":
        return cls(np.zeros(width), np.ones(width))

    def normalize(self, x):
        return (np.asarray(x, float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class MlpModel:
    """ReLU hidden layers, linear output; weights are ``(fan_in, fan_out)``."""

    layer_sizes: list
    weights: list
    biases: list
    input_normalizer: Normalizer
    target_normalizer: Normalizer
    encoding: str = "OC"
    role: str = "NN1"
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if self.layer_sizes[-1] != 6:
            raise ValueError("output layer must have 6 units")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight arrays does not match layer_sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i}: parameter shapes inconsistent with layer_sizes")

    @property
    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_sizes), [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases], self.input_normalizer,
                        self.target_normalizer, self.encoding, self.role, self.seed)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_normalizer": self.input_normalizer.to_dict(),
            "target_normalizer": self.target_normalizer.to_dict(),
            "encoding": self.encoding,
            "role": self.role,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        return cls(
            d["layer_sizes"],
            [np.asarray(W, float).reshape(d["layer_sizes"][i], d["layer_sizes"][i + 1])
             for i, W in enumerate(d["weights"])],
            [np.asarray(b, float) for b in d["biases"]],
            Normalizer.from_dict(d["input_normalizer"]),
            Normalizer.from_dict(d["target_normalizer"]),
            d["encoding"],
            d["role"],
            int(d.get("seed", 0)),
        )


def init_model(layer_sizes, rng, input_normalizer=None, target_normalizer=None,
               encoding="OC", role="NN1", seed=0) -> MlpModel:
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-limit, limit, (n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpModel(
        list(layer_sizes), weights, biases,
        input_normalizer or Normalizer.identity(layer_sizes[0]),
        target_normalizer or Normalizer.identity(layer_sizes[-1]),
        encoding, role, seed,
    )


def _forward(weights, biases, x):
    """Returns the list of layer inputs and the network output."""
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def loss_and_grads(weights, biases, x, y):
    """MSE over all output entries and its gradients (normalized space)."""
    acts = _forward(weights, biases, x)
    diff = acts[-1] - y
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (acts[i] > 0)
    return loss, gW, gb


def predict_normalized(model: MlpModel, xn) -> np.ndarray:
    return _forward(model.weights, model.biases, xn)[-1]


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Denormalized joint offsets for one feature vector or a batch."""
    x = np.asarray(x, float)
    if x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(f"expected {model.layer_sizes[0]} features, got {x.shape[-1]}")
    single = x.ndim == 1
    xn = model.input_normalizer.normalize(np.atleast_2d(x))
    out = model.target_normalizer.denormalize(predict_normalized(model, xn))
    return out[0] if single else out


def grad_check(model: MlpModel, x, y, h=1e-5) -> float:
    """Largest relative gap between backprop and central differences.

    ``x`` and ``y`` are raw features and targets; they go through the
    model's normalizers first. Gradients smaller than ``1e-7`` in magnitude
    are compared on an absolute scale.
    """
    xn = model.input_normalizer.normalize(np.atleast_2d(x))
    yn = model.target_normalizer.normalize(np.atleast_2d(y))
    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    _, gW, gb = loss_and_grads(weights, biases, xn, yn)
    worst = 0.0
    for params, grads in ((weights, gW), (biases, gb)):
        for P, G in zip(params, grads):
            it = np.nditer(P, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = P[idx]
                P[idx] = orig + h
                lp, _, _ = loss_and_grads(weights, biases, xn, yn)
                P[idx] = orig - h
                lm, _, _ = loss_and_grads(weights, biases, xn, yn)
                P[idx] = orig
                num = (lp - lm) / (2 * h)
                err = abs(num - G[idx]) / max(abs(num) + abs(G[idx]), 1e-7)
                worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.0064
    epochs: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("Adam parameters must satisfy 0 <= beta < 1 and eps > 0")


@dataclass
class History:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val(self) -> float:
        return self.val_mse[self.best_epoch]

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.val_mse))

    def final_val(self, window=25) -> float:
        """Validation loss at the end of training, averaged over ``window`` epochs."""
        return float(np.mean(self.val_mse[-window:]))

    def epochs_to_within(self, fraction=0.05, window=25, smooth=5) -> int:
        """First epoch (1-based) at which the ``smooth``-epoch moving average
        of the validation loss is within ``fraction`` of the final loss."""
        v = np.asarray(self.val_mse)
        smooth = min(smooth, len(v))
        avg = np.convolve(v, np.ones(smooth) / smooth, mode="valid")
        hit = avg <= self.final_val(window) * (1 + fraction)
        return int(np.argmax(hit)) + smooth


def split_indices(n, val_fraction, rng):
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    if n - n_val < 1:
        raise TrainingError("validation split leaves no training data")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def mlp_train(dataset: ErrorDataset, hidden=DEFAULT_HIDDEN, cfg: TrainConfig | None = None):
    """Mini-batch Adam on MSE in normalized space.

    Normalizers are fitted on the training split. The returned model holds
    the weights of the epoch with the lowest validation loss.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) < 2:
        raise TrainingError("dataset needs at least 2 samples")
    rng = np.random.default_rng(cfg.seed)
    tr, va = split_indices(len(dataset), cfg.val_fraction, rng)
    xin = Normalizer.fit(dataset.inputs[tr])
    yin = Normalizer.fit(dataset.targets[tr])
    Xtr, Ytr = xin.normalize(dataset.inputs[tr]), yin.normalize(dataset.targets[tr])
    Xva, Yva = xin.normalize(dataset.inputs[va]), yin.normalize(dataset.targets[va])

    sizes = [dataset.inputs.shape[1], *hidden, 6]
    model = init_model(sizes, rng, xin, yin, dataset.encoding, dataset.role, cfg.seed)
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_eps
    t = 0
    history = History()
    best = None
    n = len(Xtr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        # overflow on divergence is expected; it is caught by the finiteness check
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                _, gW, gb = loss_and_grads(model.weights, model.biases, Xtr[idx], Ytr[idx])
                grads = [g for pair in zip(gW, gb) for g in pair]
                t += 1
                c1 = 1 - b1 ** t
                c2 = 1 - b2 ** t
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= b1
                    mi += (1 - b1) * g
                    vi *= b2
                    vi += (1 - b2) * g * g
                    p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
            train_loss = float(np.mean((predict_normalized(model, Xtr) - Ytr) ** 2))
            val_loss = float(np.mean((predict_normalized(model, Xva) - Yva) ** 2))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(
                f"loss became non-finite at epoch {epoch + 1} "
                f"(learning rate {lr:g}); retry with a smaller learning rate"
            )
        history.train_mse.append(train_loss)
        history.val_mse.append(val_loss)
        if best is None or val_loss < history.val_mse[history.best_epoch]:
            history.best_epoch = epoch
            best = model.copy()
    return best, history


# --------------------------------------------------------------------------
# hyperparameter search


@dataclass
class SearchGrid:
    batch_sizes: list = field(default_factory=lambda: [32])
    learning_rates: list = field(default_factory=lambda: [0.0064])
    architectures: list = field(default_factory=lambda: [list(DEFAULT_HIDDEN)])
    encodings: list = field(default_factory=lambda: list(ENCODINGS))

    def cells(self):
        return list(itertools.product(self.encodings, [tuple(a) for a in self.architectures],
                                      self.batch_sizes, self.learning_rates))

    @classmethod
    def from_dict(cls, d) -> "SearchGrid":
        return cls(**{k: list(v) for k, v in d.items()})


@dataclass
class SearchResult:
    encoding: str
    hidden: tuple
    batch_size: int
    learning_rate: float
    best_val: float = float("nan")
    best_epoch: int = -1
    epochs_to_within_5pct: int = -1
    history: History | None = None
    error: str | None = None

    @property
    def label(self) -> str:
        return f"{'-'.join(map(str, self.hidden))}-{self.encoding}-bs{self.batch_size}-lr{self.learning_rate:g}"


def _run_cell(args):
    dataset, hidden, batch_size, lr, base = args
    cfg = TrainConfig(**{**asdict(base), "batch_size": batch_size, "learning_rate": lr})
    res = SearchResult(dataset.encoding, tuple(hidden), batch_size, lr)
    try:
        _, hist = mlp_train(dataset, hidden, cfg)
    except (TrainingError, ValueError) as exc:
        res.error = str(exc)
        return res
    res.best_val = hist.best_val
    res.best_epoch = hist.best_epoch + 1
    res.epochs_to_within_5pct = hist.epochs_to_within(0.05)
    res.history = hist
    return res


def hyperparameter_search(records, role: str, grid: SearchGrid, train_cfg: TrainConfig | None = None,
                          dh=None, workers=1) -> list:
    """Train every grid cell; results sorted by best validation loss.

    Failed cells are kept with their error message and sort last. Every
    cell uses the same seed, so cells differ only in their settings.
    """
    base = train_cfg or TrainConfig()
    datasets = {enc: build_dataset(records, role, enc, dh) for enc in grid.encodings}
    jobs = [(datasets[enc], hidden, bs, lr, base) for enc, hidden, bs, lr in grid.cells()]
    if not jobs:
        raise ValueError("empty search grid")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for job in jobs:
            res = _run_cell(job)
            log.info("search cell %s: best val %.4g", res.label, res.best_val)
            results.append(res)
    order = sorted(range(len(results)),
                   key=lambda i: (results[i].error is not None, results[i].best_val, i))
    return [results[i] for i in order]
