"""Metrics at millisecond horizons, baselines and the robustness studies.

Horizons are given in milliseconds and must land on integer frame indices
at the sequence frame rate (80 ms at 25 fps is frame 2, 1000 ms is frame
25). Position error is the mean per-joint Euclidean distance (mm) at the
horizon frame; angle error converts each axis-angle triple to intrinsic
ZYX Euler angles and reports the Euclidean distance over all components.

Evaluation windows start at every 5th frame of each test sequence, and all
window-level work reduces in a fixed order so results are reproducible
regardless of the thread count (``MOTIONATTN_THREADS`` caps parallelism).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gcn_predictor import recursive_predict, zero_velocity
from .pose_data import PoseSequence, add_noise, rotation_from_expmap

EVAL_STRIDE = 5  # evaluation windows start at every 5th frame
DEFAULT_HORIZONS_MS = (80, 160, 320, 400, 560, 720, 880, 1000)


def thread_count() -> int:
    value = os.environ.get("MOTIONATTN_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map, optionally threaded; the reduction order never changes."""
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# error tables -----------------------------------------------------------------


@dataclass
class ErrorTable:
    """Per-horizon metric values; columns keyed by model/group name."""

    horizons_ms: list[int]
    columns: dict[str, list[float]] = field(default_factory=dict)

    def add_column(self, name: str, values) -> None:
        values = [float(v) for v in values]
        if len(values) != len(self.horizons_ms):
            raise ValueError(
                f"column {name!r} has {len(values)} values for "
                f"{len(self.horizons_ms)} horizons"
            )
        self.columns[name] = values

    def to_csv(self) -> str:
        names = list(self.columns)
        lines = [",".join(["horizon_ms", *names])]
        for i, h in enumerate(self.horizons_ms):
            row = [str(h)] + [f"{self.columns[n][i]:.6g}" for n in names]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def horizon_frames(horizons_ms, fps: float) -> list[int]:
    """Map millisecond horizons to 1-based frame indices; must be exact."""
    frames = []
    for ms in horizons_ms:
        exact = ms * fps / 1000.0
        frame = round(exact)
        if abs(exact - frame) > 1e-9 or frame < 1:
            raise ValueError(
                f"horizon {ms} ms is not an integer frame count at {fps} fps"
            )
        frames.append(int(frame))
    return frames


def _position_frame_error(pred: np.ndarray, gt: np.ndarray) -> float:
    diff = (pred - gt).reshape(-1, 3)
    return float(np.linalg.norm(diff, axis=1).mean())


def mpjpe_at_horizons(pairs, horizons_ms, fps: float) -> ErrorTable:
    """Mean per-joint position error at each horizon, averaged over windows.

    ``pairs`` is one (pred, gt) tuple or a list of them; arrays are aligned
    from the first future frame and must reach the largest horizon.
    """
    if isinstance(pairs, tuple):
        pairs = [pairs]
    frames = horizon_frames(horizons_ms, fps)
    table = ErrorTable(list(horizons_ms))
    values = []
    for frame in frames:
        total = 0.0
        for pred, gt in pairs:
            pred = np.asarray(pred, dtype=np.float64)
            gt = np.asarray(gt, dtype=np.float64)
            if pred.shape != gt.shape:
                raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
            if frame > pred.shape[0]:
                raise ValueError(
                    f"horizon frame {frame} beyond prediction length {pred.shape[0]}"
                )
            total += _position_frame_error(pred[frame - 1], gt[frame - 1])
        values.append(total / len(pairs))
    table.add_column("mpjpe_mm", values)
    return table


# Euler conversion ---------------------------------------------------------------

GIMBAL_TOL = 1e-9


def euler_zyx(rotation: np.ndarray) -> np.ndarray:
    """Intrinsic Z-Y-X angles of a rotation matrix, branch in (-pi, pi].

    At gimbal lock (|cos(pitch)| ~ 0) the roll is fixed to 0 and the yaw
    absorbs the remaining rotation (the standard two-angle convention).
    """
    r20 = float(np.clip(rotation[2, 0], -1.0, 1.0))
    cos_b = math.hypot(rotation[0, 0], rotation[1, 0])
    b = math.atan2(-r20, cos_b)
    if cos_b < GIMBAL_TOL:
        a = math.atan2(-rotation[0, 1], rotation[1, 1])
        c = 0.0
    else:
        a = math.atan2(rotation[1, 0], rotation[0, 0])
        c = math.atan2(rotation[2, 1], rotation[2, 2])
    return np.array([a, b, c])


def expmap_frame_to_euler(frame: np.ndarray) -> np.ndarray:
    """Flatten one pose of axis-angle triples into all its Euler components."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size % 3:
        raise ValueError(f"frame length {frame.size} is not triples")
    triples = frame.reshape(-1, 3)
    return np.concatenate([euler_zyx(rotation_from_expmap(t)) for t in triples])


def euler_error_at_horizons(pairs, horizons_ms, fps: float) -> ErrorTable:
    """Euclidean distance in Euler-angle space at each horizon."""
    if isinstance(pairs, tuple):
        pairs = [pairs]
    frames = horizon_frames(horizons_ms, fps)
    table = ErrorTable(list(horizons_ms))
    values = []
    for frame in frames:
        total = 0.0
        for pred, gt in pairs:
            pred = np.asarray(pred, dtype=np.float64)
            gt = np.asarray(gt, dtype=np.float64)
            if frame > pred.shape[0]:
                raise ValueError(
                    f"horizon frame {frame} beyond prediction length {pred.shape[0]}"
                )
            e_pred = expmap_frame_to_euler(pred[frame - 1])
            e_gt = expmap_frame_to_euler(gt[frame - 1])
            total += float(np.linalg.norm(e_pred - e_gt))
        values.append(total / len(pairs))
    table.add_column("euler", values)
    return table


def error_table(pairs, horizons_ms, fps: float, metric: str = "mpjpe") -> ErrorTable:
    if metric == "mpjpe":
        return mpjpe_at_horizons(pairs, horizons_ms, fps)
    if metric == "euler":
        return euler_error_at_horizons(pairs, horizons_ms, fps)
    raise ValueError(f"unknown metric {metric!r}")


# window harness -----------------------------------------------------------------


@dataclass
class EvalWindow:
    history: np.ndarray
    truth: np.ndarray  # future frames


def evaluation_windows(sequences, n_history: int, n_future: int,
                       stride: int = EVAL_STRIDE) -> tuple[list[EvalWindow], int]:
    """Windows starting every ``stride`` frames; returns (windows, skipped seqs)."""
    windows: list[EvalWindow] = []
    skipped = 0
    for seq in sequences:
        data = seq.data if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
        starts = range(n_history, data.shape[0] - n_future + 1, stride)
        if not len(starts):
            skipped += 1
            continue
        for t0 in starts:
            windows.append(EvalWindow(data[t0 - n_history : t0], data[t0 : t0 + n_future]))
    return windows, skipped


def model_future(model, history: np.ndarray, n_frames: int) -> np.ndarray:
    """Recursive prediction cut to exactly ``n_frames`` future frames."""
    steps = -(-n_frames // model.horizon)  # ceil
    result = recursive_predict(history, model, steps)
    return result.future[:n_frames]


def evaluate_model(model, sequences, horizons_ms, fps: float, n_history: int,
                   *, metric: str = "mpjpe", stride: int = EVAL_STRIDE,
                   include_zero_velocity: bool = True) -> ErrorTable:
    """Error table over every evaluation window of the test sequences."""
    frames = horizon_frames(horizons_ms, fps)
    n_future = max(frames)
    windows, _ = evaluation_windows(sequences, n_history, n_future, stride)
    if not windows:
        raise ValueError("no evaluation windows: sequences too short")
    preds = parallel_map(lambda w: model_future(model, w.history, n_future), windows)
    pairs = [(p, w.truth) for p, w in zip(preds, windows)]
    table = error_table(pairs, horizons_ms, fps, metric)
    if include_zero_velocity:
        zv_pairs = [
            (zero_velocity(w.history, n_future), w.truth) for w in windows
        ]
        zv = error_table(zv_pairs, horizons_ms, fps, metric)
        table.add_column("zero_velocity", next(iter(zv.columns.values())))
    return table


def long_history_compare(model, sequences, n_short: int, n_long: int,
                         horizons_ms, fps: float, *, metric: str = "mpjpe",
                         stride: int = EVAL_STRIDE):
    """Evaluate one checkpoint with two history lengths at the same cut points.

    Sequences too short for the long history are skipped (and counted).
    Returns (short table, long table, per-horizon delta, skipped count).
    """
    if n_long < n_short:
        raise ValueError("n_long must be >= n_short")
    frames = horizon_frames(horizons_ms, fps)
    n_future = max(frames)
    long_windows, skipped = evaluation_windows(sequences, n_long, n_future, stride)
    if not long_windows:
        raise ValueError("no evaluation windows long enough for the long history")
    pairs_short = []
    pairs_long = []
    futures = parallel_map(
        lambda w: (
            model_future(model, w.history[-n_short:], n_future),
            model_future(model, w.history, n_future),
        ),
        long_windows,
    )
    for (pred_short, pred_long), w in zip(futures, long_windows):
        pairs_short.append((pred_short, w.truth))
        pairs_long.append((pred_long, w.truth))
    short_table = error_table(pairs_short, horizons_ms, fps, metric)
    long_table = error_table(pairs_long, horizons_ms, fps, metric)
    key = next(iter(short_table.columns))
    delta = [
        long_table.columns[key][i] - short_table.columns[key][i]
        for i in range(len(short_table.horizons_ms))
    ]
    return short_table, long_table, delta, skipped


def noise_sweep(model, sequences, sigmas, seed: int, horizons_ms, fps: float,
                n_history: int, *, metric: str = "mpjpe",
                stride: int = EVAL_STRIDE) -> ErrorTable:
    """Mean error per horizon with the history corrupted at each noise level.

    Predictions are always scored against the clean ground truth; sigma 0
    reproduces the clean evaluation exactly.
    """
    sigmas = list(sigmas)
    if sigmas != sorted(sigmas):
        raise ValueError("sigmas must be sorted ascending")
    frames = horizon_frames(horizons_ms, fps)
    n_future = max(frames)
    windows, _ = evaluation_windows(sequences, n_history, n_future, stride)
    if not windows:
        raise ValueError("no evaluation windows: sequences too short")
    table = ErrorTable(list(horizons_ms))
    for si, sigma in enumerate(sigmas):
        rng = np.random.default_rng([seed, si])
        noisy = []
        for w in windows:
            hist = w.history
            if sigma > 0:
                hist = hist + rng.normal(0.0, sigma, size=hist.shape)
            noisy.append(hist)
        preds = parallel_map(
            lambda hw: model_future(model, hw, n_future), noisy
        )
        pairs = [(p, w.truth) for p, w in zip(preds, windows)]
        col = error_table(pairs, horizons_ms, fps, metric)
        table.add_column(f"sigma={sigma:g}", next(iter(col.columns.values())))
    return table


# attention export -----------------------------------------------------------------


@dataclass
class AttentionExport:
    future: np.ndarray
    maps: dict[str, list[list[np.ndarray]]]  # level -> per part -> per step scores


def export_attention(model, history, steps: int) -> AttentionExport:
    """Recursive prediction plus one score row per step, per level and part."""
    result = recursive_predict(history, model, steps)
    maps: dict[str, list[list[np.ndarray]]] = {}
    for step_scores in result.step_scores:
        for level, per_part in step_scores.items():
            rows = maps.setdefault(level, [[] for _ in per_part])
            for part, scores in enumerate(per_part):
                rows[part].append(scores)
    return AttentionExport(result.future, maps)


def attention_csv(rows: list[np.ndarray]) -> str:
    """Rows = recursive steps, columns = key index; ragged rows padded empty."""
    width = max(len(r) for r in rows)
    lines = [",".join(["step", *[f"key_{i}" for i in range(width)]])]
    for step, row in enumerate(rows):
        cells = [f"{v:.6g}" for v in row] + [""] * (width - len(row))
        lines.append(",".join([str(step), *cells]))
    return "\n".join(lines) + "\n"


def trajectory_csv(history: np.ndarray, future: np.ndarray,
                   truth: np.ndarray | None, coords: list[int]) -> str:
    """Selected coordinates over observed + predicted (+ truth) frames."""
    history = np.asarray(history, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    n_hist, n_fut = history.shape[0], future.shape[0]
    header = ["frame"]
    for c in coords:
        header.extend([f"coord{c}_observed", f"coord{c}_predicted", f"coord{c}_truth"])
    lines = [",".join(header)]
    for t in range(n_hist + n_fut):
        row = [str(t - n_hist)]  # prediction starts at frame 0
        for c in coords:
            if t < n_hist:
                row.extend([f"{history[t, c]:.6g}", "", ""])
            else:
                truth_cell = ""
                if truth is not None and t - n_hist < truth.shape[0]:
                    truth_cell = f"{truth[t - n_hist, c]:.6g}"
                row.extend(["", f"{future[t - n_hist, c]:.6g}", truth_cell])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def corrupt_sequence(seq: PoseSequence, sigma: float, seed: int) -> PoseSequence:
    """Convenience passthrough so callers need not import pose_data."""
    return add_noise(seq, sigma, seed)
