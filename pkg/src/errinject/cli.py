"""Command-line entry point.

Every command loads and validates all of its inputs and finishes its
computation before writing anything. Failures print a single line

    error=<kind> message="<text>"

to stderr and exit with 2 (bad usage) or 1 (anything else).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .calibration import CalibrationError
from .config import ConfigError, RunConfig, default_config
from .kinematics import IKError, JointLimitError
from .learning import ROLES, ENCODINGS, DatasetError, TrainingError, build_dataset, hyperparameter_search, mlp_train
from .phystwin import CollectionError, fit_hand_eye, generate_trajectory, run_collection
from .pipeline import ComparisonError, compare, inject

log = logging.getLogger("errinject")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(args) -> RunConfig:
    data = io.read_json(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig.from_dict(data)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# --------------------------------------------------------------------------
# commands


def cmd_default_config(args):
    text = json.dumps(default_config(), indent=2) + "\n"
    if args.out:
        io.write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_gen_traj(args):
    cfg = load_config(args)
    kw = cfg.trajectory_kwargs(test=args.test)
    if args.n_goals is not None:
        if args.n_goals < 1:
            raise UsageError("--n-goals must be at least 1")
        kw["n_goals"] = args.n_goals
    if args.n_steps is not None:
        if args.n_steps < 1:
            raise UsageError("--n-steps must be at least 1")
        kw["n_steps"] = args.n_steps
    traj = generate_trajectory(cfg.dh, **kw)
    io.write_trajectory(args.out, traj)
    log.info("wrote %d setpoints to %s", len(traj), args.out)


def cmd_simulate(args):
    cfg = load_config(args)
    traj = io.read_trajectory(args.trajectory)
    calibration = io.read_calibration(args.calibration) if args.calibration else None
    twin = cfg.twin_config()
    seed = args.noise_seed if args.noise_seed is not None else cfg.collection_seed(args.test)
    records, _ = run_collection(twin, traj, seed, calibration)
    io.write_dataset(args.out, records)
    io.write_truth(args.truth, twin, records)
    log.info("wrote %d records to %s", len(records), args.out)


def cmd_calibrate(args):
    cfg = load_config(args)
    records = io.read_dataset(args.dataset)
    sol = fit_hand_eye(records, cfg.dh)
    io.write_calibration(args.out, sol)
    log.info("hand-eye residuals: %.4g rad, %.4g m", sol.residual_rot, sol.residual_trans)


def _train_settings(cfg, args):
    train = cfg.train_config()
    if args.batch_size is not None:
        train.batch_size = args.batch_size
    if args.lr is not None:
        train.learning_rate = args.lr
    if args.epochs is not None:
        train.epochs = args.epochs
    try:
        train.__post_init__()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    hidden = cfg.hidden
    if args.hidden:
        try:
            hidden = tuple(int(n) for n in args.hidden.split(","))
        except ValueError:
            raise UsageError("--hidden expects comma-separated integers, e.g. 16,32")
    return train, hidden


def cmd_train(args):
    cfg = load_config(args)
    train, hidden = _train_settings(cfg, args)
    encoding = args.encoding or cfg.encoding
    records = io.read_dataset(args.dataset, cfg.dh if args.role == "NN2" else None)
    dataset = build_dataset(records, args.role, encoding)
    model, hist = mlp_train(dataset, hidden, train)
    io.write_model(args.out, model)
    io.write_history(args.history or str(Path(args.out).with_suffix("")) + "_history.csv", hist)
    log.info("%s/%s best validation MSE %.4g at epoch %d", args.role, encoding, hist.best_val, hist.best_epoch + 1)


def cmd_inject(args):
    cfg = load_config(args)
    nn1, nn2 = io.read_model(args.nn1), io.read_model(args.nn2)
    if nn1.role != "NN1" or nn2.role != "NN2":
        raise UsageError("--nn1 must be an NN1 model and --nn2 an NN2 model")
    traj = io.read_trajectory(args.trajectory)
    results = inject(nn1, nn2, traj, cfg.dh)
    io.write_injection(args.out, results)


def cmd_evaluate(args):
    cfg = load_config(args)
    physical = io.read_dataset(args.dataset, cfg.dh)
    simulated = io.read_injection(args.injected)
    report = compare(physical, simulated, cfg.dh)
    io.write_report(args.out, report)
    sys.stdout.write(io.summary_table(report))


def cmd_search(args):
    cfg = load_config(args)
    train, _ = _train_settings(cfg, args)
    grid = cfg.search_grid()
    if args.grid:
        grid = type(grid).from_dict(io.read_json(args.grid))
    records = io.read_dataset(args.dataset, cfg.dh if args.role == "NN2" else None)
    results = hyperparameter_search(records, args.role, grid, train, workers=args.workers)
    curves = args.curves or str(Path(args.out).with_suffix("")) + "_curves.csv"
    io.write_search(args.out, curves, results)
    for i, r in enumerate(results[:5]):
        log.info("#%d %s best val %.4g", i + 1, r.label, r.best_val)


def run_pipeline(cfg: RunConfig, out_dir) -> dict:
    """gen-traj -> simulate -> calibrate -> train -> inject -> evaluate,
    with a held-out trajectory for the evaluation. Returns the report."""
    out = Path(out_dir)
    twin = cfg.twin_config()
    train_traj = generate_trajectory(cfg.dh, **cfg.trajectory_kwargs())
    test_traj = generate_trajectory(cfg.dh, **cfg.trajectory_kwargs(test=True))
    records, sol = run_collection(twin, train_traj, cfg.collection_seed())
    test_records, _ = run_collection(twin, test_traj, cfg.collection_seed(test=True), sol)
    train = cfg.train_config()
    nn1, h1 = mlp_train(build_dataset(records, "NN1", cfg.encoding), cfg.hidden, train)
    nn2, h2 = mlp_train(build_dataset(records, "NN2", cfg.encoding), cfg.hidden, train)
    results = inject(nn1, nn2, test_traj, cfg.dh)
    report = compare(test_records, results, cfg.dh)

    io.write_trajectory(out / "trajectory.csv", train_traj)
    io.write_trajectory(out / "test_trajectory.csv", test_traj)
    io.write_dataset(out / "dataset.csv", records)
    io.write_truth(out / "truth.json", twin, records)
    io.write_dataset(out / "test_dataset.csv", test_records)
    io.write_truth(out / "test_truth.json", twin, test_records)
    io.write_calibration(out / "calibration.json", sol)
    io.write_model(out / "nn1.json", nn1)
    io.write_model(out / "nn2.json", nn2)
    io.write_history(out / "nn1_history.csv", h1)
    io.write_history(out / "nn2_history.csv", h2)
    io.write_injection(out / "injected.csv", results)
    io.write_report(out / "reports", report)
    return report


def cmd_run(args):
    cfg = load_config(args)
    report = run_pipeline(cfg, args.out or cfg.paths.get("out_dir", "run"))
    sys.stdout.write(io.summary_table(report))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="errinject", description="Learned error injection for simulated robot arms.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True, out_help="output path"):
        sp.add_argument("--config", help="run configuration JSON (defaults built in)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--out", required=out_required, help=out_help)

    sp = sub.add_parser("default-config", help="print or write the default configuration")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_default_config)

    sp = sub.add_parser("gen-traj", help="random joint-space trajectory")
    common(sp, out_help="trajectory CSV")
    sp.add_argument("--n-goals", type=int)
    sp.add_argument("--n-steps", type=int)
    sp.add_argument("--test", action="store_true", help="use the held-out trajectory settings and seed")
    sp.set_defaults(func=cmd_gen_traj)

    sp = sub.add_parser("simulate", help="drive the physical twin along a trajectory")
    common(sp, out_help="dataset CSV")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--truth", required=True, help="validation-only ground truth JSON")
    sp.add_argument("--calibration", help="use this hand-eye solution instead of fitting one")
    sp.add_argument("--noise-seed", type=int)
    sp.add_argument("--test", action="store_true", help="use the held-out collection seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="hand-eye calibration from a dataset")
    common(sp, out_help="calibration JSON")
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_calibrate)

    def train_opts(sp):
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--role", required=True, choices=ROLES)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--hidden", help="hidden layer sizes, e.g. 16,32")

    sp = sub.add_parser("train", help="train NN1 or NN2")
    common(sp, out_help="model JSON")
    train_opts(sp)
    sp.add_argument("--encoding", choices=ENCODINGS)
    sp.add_argument("--history", help="loss history CSV (default: <out>_history.csv)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("inject", help="inject learned errors along a setpoint trajectory")
    common(sp, out_help="injection results CSV")
    sp.add_argument("--nn1", required=True)
    sp.add_argument("--nn2", required=True)
    sp.add_argument("--trajectory", required=True)
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("evaluate", help="compare physical and simulated trajectories")
    common(sp, out_help="report directory")
    sp.add_argument("--dataset", required=True, help="physical dataset CSV")
    sp.add_argument("--injected", required=True, help="injection results CSV")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("search", help="hyperparameter grid search")
    common(sp, out_help="ranked results CSV")
    train_opts(sp)
    sp.add_argument("--grid", help="grid JSON overriding the config's search section")
    sp.add_argument("--curves", help="per-cell loss curves CSV (default: <out>_curves.csv)")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("run", help="full pipeline with a held-out evaluation trajectory")
    common(sp, out_required=False, out_help="output directory (default: config paths.out_dir)")
    sp.set_defaults(func=cmd_run)
    return p


def _fail(kind, message, code):
    sys.stderr.write(f"error={kind} message={json.dumps(str(message))}\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except ConfigError as exc:
        return _fail("config", exc, 1)
    except io.FormatError as exc:
        return _fail("format", exc, 1)
    except (CalibrationError, CollectionError, DatasetError, TrainingError, ComparisonError,
            IKError, JointLimitError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    except OSError as exc:
        return _fail("io", f"{exc.filename}: {exc.strerror}", 1)
    except ValueError as exc:
        return _fail("value", exc, 1)
    except Exception as exc:  # keep the one-line contract for unexpected failures too
        log.debug("unexpected failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
