"""Combining the pose/part/joint attention levels.

Three strategies:

* concat    - one predictor sees the padded-window coefficients next to all
              level priors side by side;
* pre       - a small weight head blends the level priors into one prior
              before a single predictor runs;
* post      - each level runs its own full predictor and the weight head
              blends the predicted coefficient matrices per coordinate.

The weight head is a GCN stack (same layer form as the predictor, no
overall residual) whose three output channels are softmax-normalized per
coordinate, so every emitted weight triple is a convex combination. Its
output layer starts at zero, which makes the initial blend exactly uniform.
"""

from __future__ import annotations

import numpy as np

from .dct_codec import idct_rows_t
from .gcn_predictor import GcnCore, GcnPredictor, MotionPredictor
from .motion_attention import AttentionModel
from .numerics import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    load_archive,
    matmul,
    mul,
    save_archive,
    sub,
    take,
    transpose,
)

STRATEGIES = ("concat", "pre", "post")


def softmax_columns(logits: Tensor) -> Tensor:
    """Row-wise softmax of a (rows, channels) tensor; rows sum to 1."""
    logits = as_tensor(logits)
    shift = logits.data.max(axis=1, keepdims=True)  # constant: softmax is shift-invariant
    e = exp(sub(logits, shift))
    return div(e, e.sum(axis=1, keepdims=True))


class FusionNet:
    """Per-coordinate convex weights over ``n_streams`` stacked inputs."""

    def __init__(self, coords: int, stream_width: int, hidden: int, blocks: int,
                 n_streams: int, rng: np.random.Generator, name: str = "fusion"):
        self.coords = coords
        self.stream_width = stream_width
        self.hidden = hidden
        self.n_blocks = blocks
        self.n_streams = n_streams
        self.core = GcnCore(coords, n_streams * stream_width, hidden, blocks,
                            n_streams, rng, name, output_weight_init="zeros")

    def weights(self, stacked) -> Tensor:
        stacked = as_tensor(stacked)
        expected = (self.coords, self.n_streams * self.stream_width)
        if stacked.shape != expected:
            raise ShapeError(f"fusion input {stacked.shape}, expected {expected}")
        return softmax_columns(self.core.forward(stacked))

    def named_parameters(self) -> dict[str, Tensor]:
        return self.core.named_parameters()


def blend(weights: Tensor, streams: list) -> Tensor:
    """Per-coordinate convex combination: sum_j w[:, j] * streams[j]."""
    streams = [as_tensor(s) for s in streams]
    out = None
    for j, stream in enumerate(streams):
        w_col = take(weights, (slice(None), slice(j, j + 1)))  # (K, 1)
        term = mul(w_col, stream)
        out = term if out is None else add(out, term)
    return out


def _check_compatible(bases: list[MotionPredictor]) -> None:
    if len(bases) < 2:
        raise ValueError("fusion needs at least two attention levels")
    first = bases[0]
    for base in bases[1:]:
        if (base.window, base.horizon, base.coords) != (
            first.window,
            first.horizon,
            first.coords,
        ):
            raise ValueError(
                "fusion bases disagree on window/horizon/coords: "
                f"{(base.window, base.horizon, base.coords)} vs "
                f"{(first.window, first.horizon, first.coords)}"
            )


def _level_labels(levels: list[str]) -> list[str]:
    if len(set(levels)) == len(levels):
        return list(levels)
    return [f"{level}{i}" for i, level in enumerate(levels)]


class PostFusionModel:
    """Frozen-base late fusion: blends per-level predicted coefficients."""

    kind = "post"

    def __init__(self, bases: list[MotionPredictor], fusion: FusionNet):
        _check_compatible(bases)
        if fusion.n_streams != len(bases):
            raise ValueError("fusion head stream count != number of bases")
        self.bases = bases
        self.fusion = fusion
        self.labels = _level_labels([b.cfg.level for b in bases])

    @classmethod
    def build(cls, bases: list[MotionPredictor], hidden: int, blocks: int,
              seed: int) -> "PostFusionModel":
        _check_compatible(bases)
        rng = np.random.default_rng(seed)
        first = bases[0]
        fusion = FusionNet(first.coords, first.window + first.horizon, hidden,
                           blocks, len(bases), rng)
        return cls(bases, fusion)

    @property
    def window(self) -> int:
        return self.bases[0].window

    @property
    def horizon(self) -> int:
        return self.bases[0].horizon

    @property
    def coords(self) -> int:
        return self.bases[0].coords

    @property
    def levels(self) -> list[str]:
        return list(self.labels)

    def base_coeffs(self, history) -> tuple[list[Tensor], np.ndarray,
                                            dict[str, list[Tensor]]]:
        """Per-base predicted coefficient matrices for one history."""
        coeffs = []
        scores_all: dict[str, list[Tensor]] = {}
        padded = None
        for label, base in zip(self.labels, self.bases):
            bank = base.attention.bank(history)
            prior, scores = base.attention.prior(bank)
            chat, padded = base.predictor.predict_coeffs(bank.history, [prior])
            coeffs.append(chat)
            scores_all[label] = scores
        return coeffs, padded, scores_all

    def fuse_coeffs(self, coeffs: list) -> tuple[Tensor, Tensor]:
        """Blend coefficient predictions; returns (poses, weights)."""
        coeffs = [as_tensor(c) for c in coeffs]
        weights = self.fusion.weights(concat(coeffs, axis=1))
        fused = blend(weights, coeffs)
        return transpose(idct_rows_t(fused)), weights

    def forward(self, history) -> tuple[Tensor, dict[str, list[Tensor]]]:
        coeffs, _, scores = self.base_coeffs(history)
        poses, _ = self.fuse_coeffs(coeffs)
        return poses, scores

    def step(self, history) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
        poses, scores = self.forward(history)
        future = np.asarray(poses.data[-self.horizon :], dtype=np.float64)
        return future, {
            label: [np.asarray(s.data, dtype=np.float64) for s in per_part]
            for label, per_part in scores.items()
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, base in enumerate(self.bases):
            for name, p in base.named_parameters().items():
                params[f"base{i}.{name}"] = p
        for name, p in self.fusion.named_parameters().items():
            params[f"fused.{name}"] = p
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Only the weight head; the bases stay frozen during staged training."""
        return {f"fused.{n}": p for n, p in self.fusion.named_parameters().items()}

    def meta(self) -> dict[str, str]:
        meta = {
            "kind": self.kind,
            "bases": str(len(self.bases)),
            "fusion_hidden": str(self.fusion.hidden),
            "fusion_blocks": str(self.fusion.n_blocks),
        }
        for i, base in enumerate(self.bases):
            for key, value in base.meta().items():
                meta[f"base{i}.{key}"] = value
        return meta

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        save_archive(path, self.state(), meta)

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "PostFusionModel":
        n = int(meta["bases"])
        bases = [MotionPredictor.from_meta(meta, prefix=f"base{i}.") for i in range(n)]
        return cls.build(bases, int(meta["fusion_hidden"]), int(meta["fusion_blocks"]),
                         seed=0)


class PreFusionModel:
    """Blend the level priors first, then run one predictor end to end."""

    kind = "pre"

    def __init__(self, attentions: list[AttentionModel], fusion: FusionNet,
                 predictor: GcnPredictor):
        if fusion.n_streams != len(attentions):
            raise ValueError("fusion head stream count != number of attention levels")
        self.attentions = attentions
        self.fusion = fusion
        self.predictor = predictor
        self.labels = _level_labels([a.cfg.level for a in attentions])

    @classmethod
    def from_bases(cls, bases: list[MotionPredictor], hidden: int, blocks: int,
                   fusion_hidden: int, fusion_blocks: int, seed: int) -> "PreFusionModel":
        _check_compatible(bases)
        rng = np.random.default_rng(seed)
        first = bases[0]
        fusion = FusionNet(first.coords, first.window + first.horizon, fusion_hidden,
                           fusion_blocks, len(bases), rng)
        predictor = GcnPredictor(first.coords, first.window, first.horizon, hidden,
                                 blocks, rng, n_keep=first.cfg.n_keep)
        return cls([b.attention for b in bases], fusion, predictor)

    @property
    def window(self) -> int:
        return self.predictor.window

    @property
    def horizon(self) -> int:
        return self.predictor.horizon

    @property
    def coords(self) -> int:
        return self.predictor.coords

    @property
    def levels(self) -> list[str]:
        return list(self.labels)

    def forward(self, history) -> tuple[Tensor, dict[str, list[Tensor]]]:
        priors = []
        scores_all: dict[str, list[Tensor]] = {}
        history_arr = None
        for label, attention in zip(self.labels, self.attentions):
            bank = attention.bank(history)
            prior, scores = attention.prior(bank)
            priors.append(prior)
            scores_all[label] = scores
            history_arr = bank.history
        weights = self.fusion.weights(concat(priors, axis=1))
        fused = blend(weights, priors)
        poses = self.predictor.predict(history_arr, [fused])
        return poses, scores_all

    def step(self, history) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
        poses, scores = self.forward(history)
        future = np.asarray(poses.data[-self.horizon :], dtype=np.float64)
        return future, {
            label: [np.asarray(s.data, dtype=np.float64) for s in per_part]
            for label, per_part in scores.items()
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, attention in enumerate(self.attentions):
            for name, p in attention.named_parameters().items():
                params[f"lvl{i}.{name}"] = p
        for name, p in self.fusion.named_parameters().items():
            params[f"fused.{name}"] = p
        for name, p in self.predictor.named_parameters().items():
            params[f"pred.{name}"] = p
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def meta(self) -> dict[str, str]:
        meta = {
            "kind": self.kind,
            "bases": str(len(self.attentions)),
            "fusion_hidden": str(self.fusion.hidden),
            "fusion_blocks": str(self.fusion.n_blocks),
            "hidden": str(self.predictor.hidden),
            "blocks": str(self.predictor.n_blocks),
        }
        for i, attention in enumerate(self.attentions):
            meta.update(_attention_meta(attention, f"lvl{i}."))
        return meta

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            p.data[...] = np.asarray(state[name], dtype=np.float64).reshape(p.data.shape)

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        save_archive(path, self.state(), meta)

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "PreFusionModel":
        n = int(meta["bases"])
        rng = np.random.default_rng(0)
        attentions = [_attention_from_meta(meta, f"lvl{i}.", rng) for i in range(n)]
        coords = attentions[0].partition.k_total
        cfg = attentions[0].cfg
        fusion = FusionNet(coords, cfg.window + cfg.horizon, int(meta["fusion_hidden"]),
                           int(meta["fusion_blocks"]), n, rng)
        predictor = GcnPredictor(coords, cfg.window, cfg.horizon, int(meta["hidden"]),
                                 int(meta["blocks"]), rng, n_keep=cfg.n_keep)
        return cls(attentions, fusion, predictor)


class ConcatFusionModel:
    """All level priors concatenated beside the window coefficients."""

    kind = "concat"

    def __init__(self, attentions: list[AttentionModel], predictor: GcnPredictor):
        if predictor.prior_streams != len(attentions):
            raise ValueError("predictor prior streams != number of attention levels")
        self.attentions = attentions
        self.predictor = predictor
        self.labels = _level_labels([a.cfg.level for a in attentions])

    @classmethod
    def from_bases(cls, bases: list[MotionPredictor], hidden: int, blocks: int,
                   seed: int) -> "ConcatFusionModel":
        _check_compatible(bases)
        rng = np.random.default_rng(seed)
        first = bases[0]
        predictor = GcnPredictor(first.coords, first.window, first.horizon, hidden,
                                 blocks, rng, prior_streams=len(bases),
                                 n_keep=first.cfg.n_keep)
        return cls([b.attention for b in bases], predictor)

    @property
    def window(self) -> int:
        return self.predictor.window

    @property
    def horizon(self) -> int:
        return self.predictor.horizon

    @property
    def coords(self) -> int:
        return self.predictor.coords

    @property
    def levels(self) -> list[str]:
        return list(self.labels)

    def forward(self, history) -> tuple[Tensor, dict[str, list[Tensor]]]:
        priors = []
        scores_all: dict[str, list[Tensor]] = {}
        history_arr = None
        for label, attention in zip(self.labels, self.attentions):
            bank = attention.bank(history)
            prior, scores = attention.prior(bank)
            priors.append(prior)
            scores_all[label] = scores
            history_arr = bank.history
        poses = self.predictor.predict(history_arr, priors)
        return poses, scores_all

    def step(self, history) -> tuple[np.ndarray, dict[str, list[np.ndarray]]]:
        poses, scores = self.forward(history)
        future = np.asarray(poses.data[-self.horizon :], dtype=np.float64)
        return future, {
            label: [np.asarray(s.data, dtype=np.float64) for s in per_part]
            for label, per_part in scores.items()
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, attention in enumerate(self.attentions):
            for name, p in attention.named_parameters().items():
                params[f"lvl{i}.{name}"] = p
        for name, p in self.predictor.named_parameters().items():
            params[f"pred.{name}"] = p
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def meta(self) -> dict[str, str]:
        meta = {
            "kind": self.kind,
            "bases": str(len(self.attentions)),
            "hidden": str(self.predictor.hidden),
            "blocks": str(self.predictor.n_blocks),
        }
        for i, attention in enumerate(self.attentions):
            meta.update(_attention_meta(attention, f"lvl{i}."))
        return meta

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            p.data[...] = np.asarray(state[name], dtype=np.float64).reshape(p.data.shape)

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        save_archive(path, self.state(), meta)

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ConcatFusionModel":
        n = int(meta["bases"])
        rng = np.random.default_rng(0)
        attentions = [_attention_from_meta(meta, f"lvl{i}.", rng) for i in range(n)]
        coords = attentions[0].partition.k_total
        cfg = attentions[0].cfg
        predictor = GcnPredictor(coords, cfg.window, cfg.horizon, int(meta["hidden"]),
                                 int(meta["blocks"]), rng, prior_streams=n,
                                 n_keep=cfg.n_keep)
        return cls(attentions, predictor)


def _attention_meta(attention: AttentionModel, prefix: str) -> dict[str, str]:
    import json as _json

    cfg = attention.cfg
    return {
        f"{prefix}level": cfg.level,
        f"{prefix}window": str(cfg.window),
        f"{prefix}horizon": str(cfg.horizon),
        f"{prefix}embed_dim": str(cfg.embed_dim),
        f"{prefix}k1": str(cfg.k1),
        f"{prefix}k2": str(cfg.k2),
        f"{prefix}mode": cfg.mode,
        f"{prefix}n_keep": "" if cfg.n_keep is None else str(cfg.n_keep),
        f"{prefix}share_joint_nets": str(int(cfg.share_joint_nets)),
        f"{prefix}partition": _json.dumps([list(g) for g in attention.partition.groups]),
    }


def _attention_from_meta(meta: dict[str, str], prefix: str,
                         rng: np.random.Generator) -> AttentionModel:
    import json as _json

    from .motion_attention import AttentionConfig
    from .pose_data import PartPartition

    groups = tuple(tuple(g) for g in _json.loads(meta[f"{prefix}partition"]))
    partition = PartPartition(meta[f"{prefix}level"], groups)
    cfg = AttentionConfig(
        window=int(meta[f"{prefix}window"]),
        horizon=int(meta[f"{prefix}horizon"]),
        embed_dim=int(meta[f"{prefix}embed_dim"]),
        level=meta[f"{prefix}level"],
        k1=int(meta[f"{prefix}k1"]),
        k2=int(meta[f"{prefix}k2"]),
        mode=meta[f"{prefix}mode"],
        n_keep=int(meta[f"{prefix}n_keep"]) if meta[f"{prefix}n_keep"] else None,
        share_joint_nets=bool(int(meta[f"{prefix}share_joint_nets"])),
    )
    return AttentionModel(cfg, partition, rng)


def load_model(path):
    """Open any checkpoint; dispatches on the recorded model kind."""
    tensors, meta = load_archive(path)
    kind = meta.get("kind", "single")
    if kind == "single":
        model = MotionPredictor.from_meta(meta)
    elif kind == "post":
        model = PostFusionModel.from_meta(meta)
    elif kind == "pre":
        model = PreFusionModel.from_meta(meta)
    elif kind == "concat":
        model = ConcatFusionModel.from_meta(meta)
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    model.load_state(tensors)
    return model, meta
