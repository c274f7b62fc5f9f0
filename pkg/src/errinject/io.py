"""CSV/JSON readers and writers for every on-disk artifact.

Poses are stored as a unit quaternion (w, x, y, z) followed by the
translation in meters. Files are written to a temporary sibling and renamed,
so a failed command never leaves a partial file behind.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .calibration import HandEyeSolution
from .kinematics import DhTable, Pose
from .learning import History, MlpModel
from .phystwin import StepRecord, Trajectory, actual_joints

JOINTS = [f"q{i}" for i in range(1, 7)]
POSE_FIELDS = ["qw", "qx", "qy", "qz", "tx", "ty", "tz"]
DATASET_HEADER = (
    ["k"]
    + [f"s1_{j}" for j in JOINTS]
    + [f"m1_{j}" for j in JOINTS]
    + [f"a1_{f}" for f in POSE_FIELDS]
    + [f"otm_{f}" for f in POSE_FIELDS]
)
TRAJECTORY_HEADER = ["k"] + JOINTS
INJECTION_HEADER = (
    ["k"]
    + [f"s2_{j}" for j in JOINTS]
    + [f"alpha1_{j}" for j in JOINTS]
    + [f"alpha2_{j}" for j in JOINTS]
    + [f"m2_{j}" for j in JOINTS]
    + [f"a2_{j}" for j in JOINTS]
    + [f"cmd_{j}" for j in JOINTS]
    + [f"a2_{f}" for f in POSE_FIELDS]
    + ["clamped"]
)


class FormatError(ValueError):
    pass


def fmt(x) -> str:
    return format(float(x), ".17g")


def pose_row(p: Pose) -> list:
    return [fmt(v) for v in (*p.quat(), *p.translation)]


def pose_from_row(values) -> Pose:
    q = np.asarray(values[:4], float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 0.5:
        raise FormatError("invalid quaternion")
    return Pose.from_quat(q / n, values[4:7])


def write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    write_text(path, buf.getvalue())


def write_json(path, data):
    write_text(path, json.dumps(data, indent=2, sort_keys=False) + "\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def read_csv(path, header):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            got = next(reader, None)
            if got != header:
                raise FormatError(f"{path}: unexpected header")
            rows = [r for r in reader if r]
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise FormatError(f"{path}: line {i + 2} has {len(r)} fields, expected {len(header)}")
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    try:
        return [[float(v) for v in r] for r in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc


# --------------------------------------------------------------------------
# artifacts


def write_trajectory(path, traj: Trajectory):
    write_csv(path, TRAJECTORY_HEADER, [[k, *map(fmt, q)] for k, q in enumerate(traj.setpoints)])


def read_trajectory(path) -> Trajectory:
    rows = read_csv(path, TRAJECTORY_HEADER)
    if not rows:
        raise FormatError(f"{path}: empty trajectory")
    arr = np.array(rows)
    return Trajectory(arr[:, 1:], -1, np.full(6, np.nan))


def write_dataset(path, records):
    rows = []
    for r in records:
        rows.append([r.k, *map(fmt, r.setpoint_q), *map(fmt, r.measured_q),
                     *pose_row(r.actual_pose), *pose_row(r.tracker_marker)])
    write_csv(path, DATASET_HEADER, rows)


def read_dataset(path, dh: DhTable | None = None) -> list:
    """Step records from a dataset CSV; ``actual_q`` is filled by IK when
    ``dh`` is given."""
    rows = read_csv(path, DATASET_HEADER)
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    records = []
    for row in rows:
        k = int(row[0])
        try:
            a1 = pose_from_row(row[13:20])
            otm = pose_from_row(row[20:27])
        except (FormatError, ValueError) as exc:
            raise FormatError(f"{path}: step {k}: {exc}") from exc
        rec = StepRecord(k, np.array(row[1:7]), np.array(row[7:13]), a1, otm)
        if dh is not None:
            rec.actual_q = actual_joints(dh, a1, rec.measured_q, k)
        records.append(rec)
    return records


def write_truth(path, cfg, records):
    write_json(path, {
        "handeye_true": cfg.handeye_true.to_dict(),
        "dh_true": cfg.dh_true.to_dict(),
        "true_actual_pose": [
            {"k": r.k, "pose": [float(v) for v in (*r.true_actual_pose.quat(), *r.true_actual_pose.translation)]}
            for r in records
        ],
    })


def write_calibration(path, sol: HandEyeSolution):
    write_json(path, sol.to_dict())


def read_calibration(path) -> HandEyeSolution:
    try:
        return HandEyeSolution.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid calibration file ({exc})") from exc


def write_model(path, model: MlpModel):
    write_json(path, model.to_dict())


def read_model(path) -> MlpModel:
    try:
        return MlpModel.from_dict(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid model file ({exc})") from exc


def write_history(path, hist: History):
    write_csv(path, ["epoch", "train_mse", "val_mse"],
              [[i + 1, fmt(t), fmt(v)] for i, (t, v) in enumerate(zip(hist.train_mse, hist.val_mse))])


def write_injection(path, results):
    rows = []
    for r in results:
        rows.append([r.k, *map(fmt, r.setpoint_q), *map(fmt, r.alpha1), *map(fmt, r.alpha2),
                     *map(fmt, r.measured_q), *map(fmt, r.actual_q), *map(fmt, r.commanded_q),
                     *pose_row(r.actual_pose), int(r.clamped)])
    write_csv(path, INJECTION_HEADER, rows)


def read_injection(path) -> list:
    from .pipeline import InjectionResult

    rows = read_csv(path, INJECTION_HEADER)
    out = []
    for row in rows:
        v = np.array(row)
        out.append(InjectionResult(int(v[0]), v[1:7], v[7:13], v[13:19], v[19:25], v[25:31],
                                   v[31:37], pose_from_row(v[37:44]), bool(v[44])))
    return out


# --------------------------------------------------------------------------
# reports


def report_files(report, bins=30) -> dict:
    """Rendered report artifacts keyed by file name."""
    from .stats import histogram

    def csv_text(header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()

    f6 = "{:.6f}".format
    files = {}
    files["errors.csv"] = csv_text(
        ["k", "et_without_mm", "er_without_deg", "et_with_mm", "er_with_deg"],
        [[int(k), f6(a * 1e3), f6(np.rad2deg(b)), f6(c * 1e3), f6(np.rad2deg(d))]
         for k, a, b, c, d in zip(report.steps, report.et_without, report.er_without,
                                  report.et_with, report.er_with)],
    )
    summ = report.summary()
    stats = ["mean", "std", "median", "max"]
    files["summary.csv"] = csv_text(
        ["statistic", "without_et_mm", "without_er_deg", "with_et_mm", "with_er_deg"],
        [[s, f6(summ["without"]["E_T [mm]"][s]), f6(summ["without"]["E_R [deg]"][s]),
          f6(summ["with"]["E_T [mm]"][s]), f6(summ["with"]["E_R [deg]"][s])] for s in stats],
    )
    files["ks.csv"] = csv_text(
        ["layer", "joint", "ks"],
        [[layer, j + 1, f6(v)] for layer, vals in report.ks.items() for j, v in enumerate(vals)],
    )
    hist_rows = []
    for layer in report.ks:
        for j in range(6):
            edges, cp, cs = histogram(report.physical_layers[layer][:, j],
                                      report.simulated_layers[layer][:, j], bins)
            for b in range(bins):
                hist_rows.append([layer, j + 1, format(edges[b], ".9g"), format(edges[b + 1], ".9g"),
                                  int(cp[b]), int(cs[b])])
    files["histograms.csv"] = csv_text(
        ["layer", "joint", "bin_lo", "bin_hi", "physical_count", "simulated_count"], hist_rows)
    files["summary.txt"] = summary_table(report)
    return files


def summary_table(report) -> str:
    summ = report.summary()
    lines = [
        "Differences between simulated and physical actual poses",
        f"{'':>8} | {'without injection':^21} | {'with injection':^21}",
        f"{'':>8} | {'E_T [mm]':>10} {'E_R [deg]':>10} | {'E_T [mm]':>10} {'E_R [deg]':>10}",
        "-" * 58,
    ]
    for s in ("mean", "std", "median", "max"):
        lines.append(
            f"{s:>8} | {summ['without']['E_T [mm]'][s]:>10.3f} {summ['without']['E_R [deg]'][s]:>10.3f}"
            f" | {summ['with']['E_T [mm]'][s]:>10.3f} {summ['with']['E_R [deg]'][s]:>10.3f}"
        )
    lines.append("-" * 58)
    lines.append(f"reduction factor: E_T x{report.translation_factor:.2f}, E_R x{report.rotation_factor:.2f}")
    lines.append("max KS per layer: " + ", ".join(f"{k} {max(v):.3f}" for k, v in report.ks.items()))
    if report.n_clamped:
        lines.append(f"steps clamped to joint limits: {report.n_clamped}")
    return "\n".join(lines) + "\n"


def write_report(out_dir, report, bins=30):
    files = report_files(report, bins)
    for name, text in files.items():
        write_text(Path(out_dir) / name, text)
    return sorted(files)


def write_search(path, curves_path, results):
    write_csv(path, ["rank", "label", "encoding", "hidden", "batch_size", "learning_rate",
                     "best_val_mse", "best_epoch", "epochs_to_within_5pct", "error"],
              [[i + 1, r.label, r.encoding, "-".join(map(str, r.hidden)), r.batch_size, fmt(r.learning_rate),
                fmt(r.best_val), r.best_epoch, r.epochs_to_within_5pct, r.error or ""]
               for i, r in enumerate(results)])
    rows = []
    for r in results:
        if r.history is None:
            continue
        for e, (t, v) in enumerate(zip(r.history.train_mse, r.history.val_mse)):
            rows.append([r.label, e + 1, fmt(t), fmt(v)])
    write_csv(curves_path, ["label", "epoch", "train_mse", "val_mse"], rows)
