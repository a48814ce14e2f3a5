"""Losses, learning-rate schedule and the training loops.

The position loss averages per-joint Euclidean distances over every frame
the model reconstructs (observed window plus horizon); the angle loss is
the mean absolute coordinate error over the same span. Validation tracks
the loss restricted to the future frames only, and the returned model
carries the parameters of the best validation epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    AdamState,
    ShapeError,
    Tape,
    Tensor,
    absolute,
    adam_step,
    as_tensor,
    mul,
    named_gradients,
    reshape,
    row_norms,
    sub,
)
from .pose_data import PoseSequence


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    history: int  # observed frames fed to the model (N)
    horizon: int  # frames to predict (T)
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 5e-4
    loss: str = "mpjpe"  # or "angle-l1"
    squared: bool = False
    seed: int = 0
    val_fraction: float = 0.1
    fusion_epochs: int = 20

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.base_lr <= 0:
            raise ValueError("need epochs >= 1, batch >= 1, lr > 0")
        if self.loss not in ("mpjpe", "angle-l1"):
            raise ValueError(f"unknown loss {self.loss!r}")


def lr_at(epoch: int, base_lr: float = 5e-4) -> float:
    """Geometric decay calibrated to reach base_lr / 10 at epoch 50."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * 10.0 ** (-epoch / 50.0)


# losses ---------------------------------------------------------------------


def loss_mpjpe(pred, target, *, squared: bool = False,
               representation: str = "xyz") -> Tensor:
    """Mean per-joint position error over all frames (millimetres).

    ``squared=True`` averages squared distances instead; the default is the
    plain Euclidean distance so the training loss matches the evaluation
    metric.
    """
    if representation != "xyz":
        raise ValueError("position loss needs xyz data, got " + representation)
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    frames, k = pred.shape
    if k % 3:
        raise ValueError(f"K={k} is not divisible into 3D joints")
    diff = reshape(sub(pred, target), (frames * (k // 3), 3))
    dists = row_norms(diff)
    if squared:
        dists = mul(dists, dists)
    return dists.mean()


def loss_angle_l1(pred, target, *, representation: str = "expmap") -> Tensor:
    """Mean absolute angle error over all frames (radians)."""
    if representation != "expmap":
        raise ValueError("angle loss needs expmap data, got " + representation)
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    return absolute(sub(pred, target)).mean()


def make_loss(cfg: TrainConfig):
    if cfg.loss == "mpjpe":
        return lambda pred, target: loss_mpjpe(pred, target, squared=cfg.squared)
    return lambda pred, target: loss_angle_l1(pred, target)


# data windows ----------------------------------------------------------------


@dataclass
class Window:
    history: np.ndarray  # (N, K)
    target: np.ndarray  # (T, K)
    source: int

    def full_target(self, window: int) -> np.ndarray:
        """Ground truth over the reconstructed span: last M observed + future."""
        return np.vstack([self.history[-window:], self.target])


def slice_windows(sequences, history: int, horizon: int) -> list[Window]:
    """Every contiguous (history + horizon)-frame span of every sequence."""
    windows: list[Window] = []
    for source, seq in enumerate(sequences):
        data = seq.data if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
        count = data.shape[0] - history - horizon + 1
        for start in range(max(count, 0)):
            windows.append(
                Window(
                    data[start : start + history],
                    data[start + history : start + history + horizon],
                    source,
                )
            )
    return windows


def split_validation(
    windows: list[Window], fraction: float, seed: int
) -> tuple[list[Window], list[Window]]:
    """Hold out a fraction of windows by source sequence."""
    sources = sorted({w.source for w in windows})
    if len(sources) < 2 or fraction <= 0:
        return list(windows), []
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(fraction * len(sources))))
    val_sources = set(rng.choice(sources, size=n_val, replace=False).tolist())
    train = [w for w in windows if w.source not in val_sources]
    val = [w for w in windows if w.source in val_sources]
    if not train:  # degenerate split; train on everything
        return list(windows), []
    return train, val


# loops ------------------------------------------------------------------------


@dataclass
class CurveRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    curve: list[CurveRow] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,lr"]
        for row in self.curve:
            lines.append(
                f"{row.epoch},{row.train_loss:.6g},{row.val_loss:.6g},{row.lr:.6g}"
            )
        return "\n".join(lines) + "\n"


def _future_loss(loss_fn, pred_full: np.ndarray, window: Window, horizon: int) -> float:
    pred_future = pred_full[-horizon:]
    return float(loss_fn(as_tensor(pred_future), window.target).item())


def _validate(model, loss_fn, windows: list[Window], horizon: int) -> float:
    if not windows:
        return float("nan")
    total = 0.0
    for w in windows:
        poses, _ = model.forward(w.history)
        total += _future_loss(loss_fn, poses.data, w, horizon)
    return total / len(windows)


def train_model(model, sequences, cfg: TrainConfig, *,
                windows: list[Window] | None = None,
                val_windows: list[Window] | None = None) -> TrainResult:
    """Shuffled mini-batch Adam over the model's trainable parameters.

    Checkpoints (in memory) the epoch with the best mean future-frame loss
    on the held-out windows and restores it before returning. With no
    validation split the final epoch wins by its training loss.
    """
    if windows is None:
        windows = slice_windows(sequences, cfg.history, cfg.horizon)
    if not windows:
        raise TrainingError("no training windows: sequences shorter than history + horizon")
    if val_windows is None:
        train_windows, val_windows = split_validation(windows, cfg.val_fraction, cfg.seed)
    else:
        train_windows = list(windows)
    loss_fn = make_loss(cfg)
    params = model.trainable_parameters()
    state = AdamState.for_params(params, cfg.base_lr)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.base_lr)
        order = rng.permutation(len(train_windows))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_windows[i] for i in order[start : start + cfg.batch_size]]
            with Tape() as tape:
                total = None
                for w in batch:
                    poses, _ = model.forward(w.history)
                    sample = loss_fn(poses, w.full_target(model.window))
                    total = sample if total is None else total + sample
                loss = total * (1.0 / len(batch))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(batch starting {start}): {loss_value}"
                )
            grads = named_gradients(tape, loss, params)
            adam_step(params, grads, state, lr=lr)
            epoch_loss += loss_value * len(batch)
        epoch_loss /= len(train_windows)
        val_loss = _validate(model, loss_fn, val_windows, cfg.horizon)
        result.curve.append(CurveRow(epoch, epoch_loss, val_loss, lr))
        score = val_loss if val_windows else epoch_loss
        if score < result.best_val:
            result.best_val = score
            result.best_epoch = epoch
            best_state = {n: p.data.copy() for n, p in params.items()}

    if best_state is not None:
        for name, p in params.items():
            p.data[...] = best_state[name]
    return result


def train_fusion(model, sequences, cfg: TrainConfig, *,
                 windows: list[Window] | None = None,
                 val_windows: list[Window] | None = None) -> TrainResult:
    """Staged training of the post-fusion weight head on frozen bases.

    Base predictions are precomputed once per window as constants, so base
    parameters are excluded from the gradient set by construction and stay
    bitwise identical.
    """
    if model.kind != "post":
        raise TrainingError("staged fusion training applies to post-fusion models")
    if windows is None:
        windows = slice_windows(sequences, cfg.history, cfg.horizon)
    if not windows:
        raise TrainingError("no training windows for fusion stage")
    if val_windows is None:
        train_windows, val_windows = split_validation(windows, cfg.val_fraction, cfg.seed)
    else:
        train_windows = list(windows)
    loss_fn = make_loss(cfg)

    def cache(ws: list[Window]):
        cached = []
        for w in ws:
            coeffs, _, _ = model.base_coeffs(w.history)
            cached.append(([np.array(c.data) for c in coeffs], w))
        return cached

    train_cached = cache(train_windows)
    val_cached = cache(val_windows)

    params = model.trainable_parameters()
    state = AdamState.for_params(params, cfg.base_lr)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best_state: dict[str, np.ndarray] | None = None

    epochs = cfg.fusion_epochs
    for epoch in range(epochs):
        lr = lr_at(epoch, cfg.base_lr)
        order = rng.permutation(len(train_cached))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_cached[i] for i in order[start : start + cfg.batch_size]]
            with Tape() as tape:
                total = None
                for coeffs, w in batch:
                    poses, _ = model.fuse_coeffs(coeffs)
                    sample = loss_fn(poses, w.full_target(model.window))
                    total = sample if total is None else total + sample
                loss = total * (1.0 / len(batch))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(f"non-finite fusion loss at epoch {epoch}")
            grads = named_gradients(tape, loss, params)
            adam_step(params, grads, state, lr=lr)
            epoch_loss += loss_value * len(batch)
        epoch_loss /= len(train_cached)

        if val_cached:
            val_loss = 0.0
            for coeffs, w in val_cached:
                poses, _ = model.fuse_coeffs(coeffs)
                val_loss += _future_loss(loss_fn, poses.data, w, cfg.horizon)
            val_loss /= len(val_cached)
        else:
            val_loss = float("nan")
        result.curve.append(CurveRow(epoch, epoch_loss, val_loss, lr))
        score = val_loss if val_cached else epoch_loss
        if score < result.best_val:
            result.best_val = score
            result.best_epoch = epoch
            best_state = {n: p.data.copy() for n, p in params.items()}

    if best_state is not None:
        for name, p in params.items():
            p.data[...] = best_state[name]
    return result
