"""Attention over historical motion sub-sequences.

The last observed window of each body part is the query; every historical
window of the same length is a key; the value attached to a key is the DCT
of that window plus its continuation. Scores are plain normalized dot
products of ReLU-encoded query/key vectors (guaranteed non-negative), and
the attended sum of values is the motion prior handed to the predictor.

"frame-wise" mode is the single-frame ablation: queries and keys collapse
to one pose each (1x1 convolution stacks), which cannot tell apart motions
that pass through the same pose in different directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dct_codec import dct_matrix
from .numerics import (
    ShapeError,
    Tensor,
    as_tensor,
    conv1d,
    div,
    glorot_uniform,
    matmul,
    relu,
    reshape,
    concat,
)
from .pose_data import PartPartition, PoseSequence

ZERO_SCORE_EPS = 1e-12  # below this the score sum falls back to uniform


@dataclass(frozen=True)
class AttentionConfig:
    """Window geometry and encoder sizes for one attention level."""

    window: int  # query/key length, frames
    horizon: int  # prediction length, frames
    embed_dim: int
    level: str = "pose"
    k1: int = 6
    k2: int = 5
    mode: str = "motion"
    n_keep: int | None = None
    share_joint_nets: bool = True

    def __post_init__(self):
        if self.window < 2 or self.horizon < 1 or self.embed_dim < 1:
            raise ValueError("need window >= 2, horizon >= 1, embed_dim >= 1")
        if self.mode == "motion":
            if self.k1 + self.k2 - 1 != self.window:
                raise ValueError(
                    f"kernels {self.k1}+{self.k2}-1 != window {self.window}; "
                    "the receptive field must cover the window exactly"
                )
        elif self.mode == "frame-wise":
            if self.k1 != 1 or self.k2 != 1:
                raise ValueError("frame-wise mode uses kernel sizes 1 and 1")
        else:
            raise ValueError(f"unknown attention mode {self.mode!r}")
        if self.n_keep is not None and not 1 <= self.n_keep <= self.value_len:
            raise ValueError(f"n_keep={self.n_keep} out of range 1..{self.value_len}")

    @property
    def value_len(self) -> int:
        return self.window + self.horizon

    def frame_wise_variant(self) -> "AttentionConfig":
        return replace(self, mode="frame-wise", k1=1, k2=1)


def default_kernels(window: int) -> tuple[int, int]:
    """Two kernel sizes whose valid stack has receptive field ``window``."""
    k1 = (window + 2) // 2
    return k1, window + 1 - k1


class QueryKeyEncoder:
    """Two valid 1D convolutions with ReLU after each; output is >= 0."""

    def __init__(self, in_channels: int, embed_dim: int, k1: int, k2: int,
                 rng: np.random.Generator, name: str):
        self.in_channels = in_channels
        self.embed_dim = embed_dim
        self.k1 = k1
        self.k2 = k2
        self.name = name
        self.w1 = Tensor(glorot_uniform(rng, (embed_dim, in_channels, k1)),
                         trainable=True, name=f"{name}.w1")
        self.b1 = Tensor(np.zeros(embed_dim), trainable=True, name=f"{name}.b1")
        self.w2 = Tensor(glorot_uniform(rng, (embed_dim, embed_dim, k2)),
                         trainable=True, name=f"{name}.w2")
        self.b2 = Tensor(np.zeros(embed_dim), trainable=True, name=f"{name}.b2")

    @property
    def receptive_field(self) -> int:
        return self.k1 + self.k2 - 1

    def encode(self, track) -> Tensor:
        """Slide over a (channels, frames) track; returns (embed_dim, frames')."""
        track = as_tensor(track)
        if track.shape[0] != self.in_channels:
            raise ShapeError(
                f"{self.name}: track has {track.shape[0]} channels, expected "
                f"{self.in_channels}"
            )
        h = relu(conv1d(track, self.w1, self.b1))
        return relu(conv1d(h, self.w2, self.b2))

    def named_parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w1, self.b1, self.w2, self.b2)}


@dataclass
class KeyValueBank:
    """Per-part keys (history windows) and values (DCT of their continuations).

    ``encoded_keys`` caches the most recently computed key embeddings; it is
    refreshed whenever a prior is computed and invalidated by extension.
    """

    window: int
    horizon: int
    mode: str
    partition: PartPartition
    history: np.ndarray  # (n_frames, k)
    values: list[np.ndarray]  # per part: (n_keys, k_p, window + horizon)
    n_keep: int | None = None
    encoded_keys: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_keys(self) -> int:
        return self.history.shape[0] - self.window - self.horizon + 1

    @property
    def value_len(self) -> int:
        return self.window + self.horizon

    def key_window(self, part: int, i: int) -> np.ndarray:
        """Raw key i of one part: the M-frame window (or single frame)."""
        coords = list(self.partition.groups[part])
        if self.mode == "frame-wise":
            return self.history[i + self.window - 1 : i + self.window, coords]
        return self.history[i : i + self.window, coords]


def _history_array(history) -> np.ndarray:
    if isinstance(history, PoseSequence):
        return history.data
    arr = np.asarray(history, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"history must be (frames, K), got {arr.shape}")
    return arr


def _part_values(track: np.ndarray, value_len: int, n_keep: int | None) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(track, value_len, axis=1)
    basis = dct_matrix(value_len)
    coeffs = np.einsum("knl,ml->nkm", windows, basis)
    if n_keep is not None and n_keep < value_len:
        coeffs[:, :, n_keep:] = 0.0
    return coeffs


def build_bank(history, cfg: AttentionConfig, partition: PartPartition) -> KeyValueBank:
    """Slice the history into every (window + horizon)-frame sub-sequence."""
    data = _history_array(history)
    n_frames = data.shape[0]
    if partition.k_total != data.shape[1]:
        raise ShapeError(
            f"partition covers {partition.k_total} coords, history has {data.shape[1]}"
        )
    if n_frames < cfg.window + cfg.horizon:
        raise ValueError(
            f"history too short: {n_frames} frames < window {cfg.window} + "
            f"horizon {cfg.horizon}"
        )
    values = [
        _part_values(data[:, list(g)].T, cfg.value_len, cfg.n_keep)
        for g in partition.groups
    ]
    return KeyValueBank(cfg.window, cfg.horizon, cfg.mode, partition, data, values,
                        n_keep=cfg.n_keep)


def frame_wise_bank(history, cfg: AttentionConfig, partition: PartPartition) -> KeyValueBank:
    """Same index set and values as the motion bank; keys become single frames."""
    return build_bank(history, cfg.frame_wise_variant(), partition)


def extend_bank(bank: KeyValueBank, predicted: np.ndarray) -> KeyValueBank:
    """Append predicted frames; the bank gains one key-value pair per frame."""
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.ndim != 2 or predicted.shape[1] != bank.history.shape[1]:
        raise ShapeError(
            f"predicted frames shape {predicted.shape} does not extend history "
            f"of width {bank.history.shape[1]}"
        )
    history = np.vstack([bank.history, predicted])
    new_values = []
    value_len = bank.value_len
    old_n = bank.n_keys
    for part, group in enumerate(bank.partition.groups):
        tail = history[old_n:, list(group)].T  # covers all new windows
        new_values.append(
            np.concatenate(
                [bank.values[part], _part_values(tail, value_len, bank.n_keep)], axis=0
            )
        )
    return KeyValueBank(bank.window, bank.horizon, bank.mode, bank.partition,
                        history, new_values, n_keep=bank.n_keep)


def encode_query(window: np.ndarray, encoder: QueryKeyEncoder) -> Tensor:
    """Collapse one (frames, coords) window to a single embedding vector."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != encoder.receptive_field:
        raise ShapeError(
            f"query window shape {window.shape}; encoder needs exactly "
            f"{encoder.receptive_field} frames"
        )
    out = encoder.encode(window.T)  # (embed_dim, 1)
    return reshape(out, (encoder.embed_dim,))


def attention_scores(query: Tensor, keys: Tensor) -> Tensor:
    """Dot-product scores normalized by their sum (not a softmax).

    Inputs come out of ReLU encoders, so raw scores are non-negative; if
    their sum underflows ``ZERO_SCORE_EPS`` the scores fall back to uniform
    weights (this branch carries no gradient).
    """
    query = as_tensor(query)
    keys = as_tensor(keys)
    if keys.ndim != 2 or query.ndim != 1 or keys.shape[0] != query.shape[0]:
        raise ShapeError(f"scores: query {query.shape} vs keys {keys.shape}")
    if keys.shape[1] == 0:
        raise ValueError("empty key-value bank")
    raw = matmul(query, keys)  # (n_keys,)
    total = float(raw.data.sum())
    if total < ZERO_SCORE_EPS:
        n = keys.shape[1]
        return as_tensor(np.full(n, 1.0 / n))
    return div(raw, raw.sum())


def aggregate(scores: Tensor, values: np.ndarray) -> Tensor:
    """Weighted sum of one part's values: (n, k_p, L) -> (k_p, L)."""
    scores = as_tensor(scores)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or scores.shape != (values.shape[0],):
        raise ShapeError(f"aggregate: scores {scores.shape} vs values {values.shape}")
    flat = values.reshape(values.shape[0], -1)
    mixed = matmul(scores, flat)
    return reshape(mixed, (values.shape[1], values.shape[2]))


class AttentionModel:
    """Query/key encoders for every part of one attention level."""

    def __init__(self, cfg: AttentionConfig, partition: PartPartition,
                 rng: np.random.Generator):
        if cfg.level != partition.level:
            raise ValueError(
                f"config level {cfg.level!r} != partition level {partition.level!r}"
            )
        self.cfg = cfg
        self.partition = partition
        sizes = partition.sizes
        shared = (
            cfg.level == "joint"
            and cfg.share_joint_nets
            and len(set(sizes)) == 1
            and partition.n_parts > 1
        )
        self.shared = shared
        if shared:
            q = QueryKeyEncoder(sizes[0], cfg.embed_dim, cfg.k1, cfg.k2, rng, "attn.q")
            k = QueryKeyEncoder(sizes[0], cfg.embed_dim, cfg.k1, cfg.k2, rng, "attn.k")
            self.query_encoders = [q] * partition.n_parts
            self.key_encoders = [k] * partition.n_parts
        else:
            self.query_encoders = [
                QueryKeyEncoder(kp, cfg.embed_dim, cfg.k1, cfg.k2, rng, f"attn.q{p}")
                for p, kp in enumerate(sizes)
            ]
            self.key_encoders = [
                QueryKeyEncoder(kp, cfg.embed_dim, cfg.k1, cfg.k2, rng, f"attn.k{p}")
                for p, kp in enumerate(sizes)
            ]
        stacked = [c for g in partition.groups for c in g]
        if stacked == list(range(partition.k_total)):
            self._unstack = None
        else:
            perm = np.zeros((partition.k_total, partition.k_total))
            perm[stacked, np.arange(partition.k_total)] = 1.0
            self._unstack = perm

    def bank(self, history) -> KeyValueBank:
        return build_bank(history, self.cfg, self.partition)

    def part_scores(self, bank: KeyValueBank, part: int) -> tuple[Tensor, Tensor]:
        """Attention score vector and encoded keys for one part of the bank."""
        track = bank.history[:, list(self.partition.groups[part])].T
        n_frames = track.shape[1]
        m, t = self.cfg.window, self.cfg.horizon
        if self.cfg.mode == "frame-wise":
            key_track = track[:, m - 1 : n_frames - t]
            query_track = track[:, n_frames - 1 :]
        else:
            key_track = track[:, : n_frames - t]
            query_track = track[:, n_frames - m :]
        keys = self.key_encoders[part].encode(key_track)
        query = reshape(self.query_encoders[part].encode(query_track),
                        (self.cfg.embed_dim,))
        return attention_scores(query, keys), keys

    def prior(self, bank: KeyValueBank) -> tuple[Tensor, list[Tensor]]:
        """Attended motion prior (k x (window+horizon)) plus per-part scores.

        Keys are encoded by sliding the key network over the whole history,
        so each window costs exactly one output position. The bank's
        ``encoded_keys`` cache is refreshed with the embeddings produced by
        the current parameters.
        """
        per_part = []
        scores_out = []
        encoded = []
        for part in range(self.partition.n_parts):
            scores, keys = self.part_scores(bank, part)
            scores_out.append(scores)
            encoded.append(np.asarray(keys.data, dtype=np.float64))
            per_part.append(aggregate(scores, bank.values[part]))
        stacked = per_part[0] if len(per_part) == 1 else concat(per_part, axis=0)
        if self._unstack is not None:
            stacked = matmul(self._unstack, stacked)
        bank.encoded_keys = encoded
        return stacked, scores_out

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        seen: set[int] = set()
        for enc in [*self.query_encoders, *self.key_encoders]:
            if id(enc) in seen:
                continue
            seen.add(id(enc))
            params.update(enc.named_parameters())
        return params
