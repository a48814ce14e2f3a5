"""Residual graph-convolutional predictor over DCT trajectory features.

Every coordinate of the pose is a graph node with a fully trainable
adjacency per layer (no kinematic-tree sparsity). The network consumes
the trajectory coefficients of the padded last window concatenated with
the attended motion prior(s), and emits a coefficient residual. Decoding
adds the residual's time-domain form onto the padded window, so a
zero-weight network reproduces the zero-velocity baseline exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dct_codec import dct, idct_rows_t, pad_replicate
from .motion_attention import (
    AttentionConfig,
    AttentionModel,
    KeyValueBank,
    build_bank,
    extend_bank,
)
from .numerics import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    glorot_uniform,
    load_archive,
    matmul,
    save_archive,
    tanh,
    transpose,
)
from .pose_data import PartPartition


class GcnLayer:
    """One graph convolution: activation(A @ H @ W), both A and W trainable."""

    def __init__(self, nodes: int, in_features: int, out_features: int,
                 rng: np.random.Generator, name: str, *,
                 activation: str | None = "tanh",
                 adjacency_init: str = "glorot",
                 weight_init: str = "glorot"):
        if activation not in (None, "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        if adjacency_init == "glorot":
            a0 = glorot_uniform(rng, (nodes, nodes))
        elif adjacency_init == "identity":
            a0 = np.eye(nodes)
        else:
            raise ValueError(f"unknown adjacency init {adjacency_init!r}")
        if weight_init == "glorot":
            w0 = glorot_uniform(rng, (in_features, out_features))
        elif weight_init == "zeros":
            w0 = np.zeros((in_features, out_features))
        else:
            raise ValueError(f"unknown weight init {weight_init!r}")
        self.adjacency = Tensor(a0, trainable=True, name=f"{name}.A")
        self.weight = Tensor(w0, trainable=True, name=f"{name}.W")
        self.activation = activation

    def forward(self, h) -> Tensor:
        h = as_tensor(h)
        out = matmul(matmul(self.adjacency, h), self.weight)
        return tanh(out) if self.activation == "tanh" else out

    def named_parameters(self) -> dict[str, Tensor]:
        return {self.adjacency.name: self.adjacency, self.weight.name: self.weight}


class GcnCore:
    """Input layer, residual blocks of two layers each, linear output layer."""

    def __init__(self, nodes: int, in_width: int, hidden: int, blocks: int,
                 out_width: int, rng: np.random.Generator, name: str, *,
                 adjacency_init: str = "glorot",
                 output_weight_init: str = "glorot"):
        self.input_layer = GcnLayer(nodes, in_width, hidden, rng, f"{name}.in",
                                    adjacency_init=adjacency_init)
        self.blocks = [
            (
                GcnLayer(nodes, hidden, hidden, rng, f"{name}.b{i}.0",
                         adjacency_init=adjacency_init),
                GcnLayer(nodes, hidden, hidden, rng, f"{name}.b{i}.1",
                         adjacency_init=adjacency_init),
            )
            for i in range(blocks)
        ]
        self.output_layer = GcnLayer(nodes, hidden, out_width, rng, f"{name}.out",
                                     activation=None,
                                     adjacency_init=adjacency_init,
                                     weight_init=output_weight_init)

    def forward(self, h0) -> Tensor:
        h = self.input_layer.forward(h0)
        for first, second in self.blocks:
            h = add(h, second.forward(first.forward(h)))
        return self.output_layer.forward(h)

    def named_parameters(self) -> dict[str, Tensor]:
        params = dict(self.input_layer.named_parameters())
        for first, second in self.blocks:
            params.update(first.named_parameters())
            params.update(second.named_parameters())
        params.update(self.output_layer.named_parameters())
        return params


class GcnPredictor:
    """Coefficient-residual predictor for one pose stream."""

    def __init__(self, coords: int, window: int, horizon: int, hidden: int,
                 blocks: int, rng: np.random.Generator, *,
                 prior_streams: int = 1, n_keep: int | None = None,
                 adjacency_init: str = "glorot", name: str = "pred"):
        self.coords = coords
        self.window = window
        self.horizon = horizon
        self.hidden = hidden
        self.n_blocks = blocks
        self.prior_streams = prior_streams
        self.n_keep = n_keep
        value_len = window + horizon
        self.core = GcnCore(coords, (1 + prior_streams) * value_len, hidden, blocks,
                            value_len, rng, name, adjacency_init=adjacency_init)

    @property
    def value_len(self) -> int:
        return self.window + self.horizon

    def padded_window(self, history: np.ndarray) -> np.ndarray:
        history = np.asarray(history, dtype=np.float64)
        if history.ndim != 2 or history.shape[0] < self.window:
            raise ShapeError(
                f"history {history.shape} shorter than window {self.window}"
            )
        if history.shape[1] != self.coords:
            raise ShapeError(
                f"history has {history.shape[1]} coords, predictor expects {self.coords}"
            )
        return pad_replicate(history[-self.window :], self.horizon)

    def predict_coeffs(self, history: np.ndarray, priors: list) -> tuple[Tensor, np.ndarray]:
        """Predicted trajectory coefficients (window coeffs + learned residual).

        Returns the coefficient tensor and the padded window it was built
        from (needed for exact decoding).
        """
        padded = self.padded_window(history)
        d_coeffs = dct(padded.T, n_keep=self.n_keep).values
        if len(priors) != self.prior_streams:
            raise ShapeError(
                f"predictor wired for {self.prior_streams} prior stream(s), got "
                f"{len(priors)}"
            )
        pieces = [as_tensor(d_coeffs)] + [as_tensor(u) for u in priors]
        residual = self.core.forward(concat(pieces, axis=1))
        return add(as_tensor(d_coeffs), residual), padded

    def predict(self, history: np.ndarray, priors: list) -> Tensor:
        """Pose estimate for frames covering the window and the horizon.

        Implemented as padded window + inverse transform of the residual
        (equal to decoding the predicted coefficients, but exact when the
        residual is zero).
        """
        padded = self.padded_window(history)
        d_coeffs = dct(padded.T, n_keep=self.n_keep).values
        pieces = [as_tensor(d_coeffs)] + [as_tensor(u) for u in priors]
        residual = self.core.forward(concat(pieces, axis=1))
        poses_cols = add(as_tensor(padded.T), idct_rows_t(residual))
        return transpose(poses_cols)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.core.named_parameters()


@dataclass
class RecursiveResult:
    """Concatenated multi-step future plus per-step attention maps."""

    future: np.ndarray  # (steps * horizon, coords)
    step_scores: list[dict[str, list[np.ndarray]]]  # per step: level -> per-part scores


class MotionPredictor:
    """One attention level wired to its coefficient-residual predictor."""

    kind = "single"

    def __init__(self, attention: AttentionModel, predictor: GcnPredictor):
        if attention.partition.k_total != predictor.coords:
            raise ShapeError("attention partition and predictor disagree on K")
        if (attention.cfg.window, attention.cfg.horizon) != (
            predictor.window,
            predictor.horizon,
        ):
            raise ShapeError("attention and predictor disagree on window/horizon")
        self.attention = attention
        self.predictor = predictor

    @classmethod
    def build(cls, cfg: AttentionConfig, partition: PartPartition, hidden: int,
              blocks: int, seed: int, *, adjacency_init: str = "glorot") -> "MotionPredictor":
        rng = np.random.default_rng(seed)
        attention = AttentionModel(cfg, partition, rng)
        predictor = GcnPredictor(partition.k_total, cfg.window, cfg.horizon, hidden,
                                 blocks, rng, n_keep=cfg.n_keep,
                                 adjacency_init=adjacency_init)
        return cls(attention, predictor)

    @property
    def cfg(self) -> AttentionConfig:
        return self.attention.cfg

    @property
    def coords(self) -> int:
        return self.predictor.coords

    @property
    def window(self) -> int:
        return self.cfg.window

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def levels(self) -> list[str]:
        return [self.cfg.level]

    def forward(self, history, bank: KeyValueBank | None = None
                ) -> tuple[Tensor, dict[str, list[Tensor]]]:
        """Graph-building forward pass; returns (window+horizon, K) poses."""
        if bank is None:
            bank = self.attention.bank(history)
        prior, scores = self.attention.prior(bank)
        poses = self.predictor.predict(bank.history, [prior])
        return poses, {self.cfg.level: scores}

    def step(self, history) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
        """Numpy convenience: future frames only, plus score arrays."""
        poses, scores = self.forward(history)
        future = np.asarray(poses.data[-self.horizon :], dtype=np.float64)
        return future, {
            level: [np.asarray(s.data, dtype=np.float64) for s in per_part]
            for level, per_part in scores.items()
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params = dict(self.attention.named_parameters())
        params.update(self.predictor.named_parameters())
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    # checkpointing -----------------------------------------------------

    def meta(self) -> dict[str, str]:
        cfg = self.cfg
        return {
            "kind": self.kind,
            "level": cfg.level,
            "window": str(cfg.window),
            "horizon": str(cfg.horizon),
            "embed_dim": str(cfg.embed_dim),
            "k1": str(cfg.k1),
            "k2": str(cfg.k2),
            "mode": cfg.mode,
            "n_keep": "" if cfg.n_keep is None else str(cfg.n_keep),
            "share_joint_nets": str(int(cfg.share_joint_nets)),
            "hidden": str(self.predictor.hidden),
            "blocks": str(self.predictor.n_blocks),
            "coords": str(self.coords),
            "partition": json.dumps([list(g) for g in self.attention.partition.groups]),
        }

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:4]} ...")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model "
                    f"shape {p.data.shape}"
                )
            p.data[...] = arr

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        save_archive(path, self.state(), meta)

    @classmethod
    def load(cls, path) -> "MotionPredictor":
        tensors, meta = load_archive(path)
        model = cls.from_meta(meta)
        model.load_state(tensors)
        return model

    @classmethod
    def from_meta(cls, meta: dict[str, str], prefix: str = "") -> "MotionPredictor":
        def get(key: str) -> str:
            return meta[prefix + key]

        groups = tuple(tuple(g) for g in json.loads(get("partition")))
        partition = PartPartition(get("level"), groups)
        cfg = AttentionConfig(
            window=int(get("window")),
            horizon=int(get("horizon")),
            embed_dim=int(get("embed_dim")),
            level=get("level"),
            k1=int(get("k1")),
            k2=int(get("k2")),
            mode=get("mode"),
            n_keep=int(get("n_keep")) if get("n_keep") else None,
            share_joint_nets=bool(int(get("share_joint_nets"))),
        )
        return cls.build(cfg, partition, int(get("hidden")), int(get("blocks")), seed=0)


def zero_velocity(history: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed pose over the whole horizon."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] < 1:
        raise ValueError(f"history must be (frames, K) with frames >= 1, got {history.shape}")
    return np.repeat(history[-1:], horizon, axis=0)


def recursive_predict(history, model, steps: int) -> RecursiveResult:
    """Predict ``steps * horizon`` frames by feeding predictions back in.

    After each step the history (and with it every attention bank) grows by
    ``horizon`` frames, so later steps attend over earlier predictions too.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    data = history.data if hasattr(history, "data") and not isinstance(history, np.ndarray) else np.asarray(history, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    chunks = []
    step_scores = []
    for _ in range(steps):
        future, scores = model.step(data)
        chunks.append(future)
        step_scores.append(scores)
        data = np.vstack([data, future])
    return RecursiveResult(np.vstack(chunks), step_scores)


__all__ = [
    "GcnCore",
    "GcnLayer",
    "GcnPredictor",
    "MotionPredictor",
    "RecursiveResult",
    "build_bank",
    "extend_bank",
    "recursive_predict",
    "zero_velocity",
]
