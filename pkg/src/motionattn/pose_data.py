"""Pose sequences: representation, file I/O, preprocessing, skeletons,
forward kinematics and synthetic motion generators.

File format (text, line oriented)::

    JOINTS=<int> DIMS=<1|3> FPS=<float> REPR=<xyz|expmap>
    <v_1> <v_2> ... <v_K>          # one line per frame, K = JOINTS * DIMS

xyz values are millimetres, expmap values are radians (axis-angle triples
per joint). Writers emit 17 significant digits so a save/load round trip
is bitwise exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

import numpy as np

XYZ = "xyz"
EXPMAP = "expmap"
LEVELS = ("pose", "part", "joint")


class PoseFileError(ValueError):
    """Parse failure; the message carries the offending line number."""


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree: parent index per joint (-1 for roots) and rest offsets (mm)."""

    parents: tuple[int, ...]
    offsets: np.ndarray  # (n_joints, 3)
    names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.parents)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.shape != (n, 3):
            raise SkeletonError(f"offsets shape {offsets.shape}, expected ({n}, 3)")
        object.__setattr__(self, "offsets", offsets)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"joint{i}" for i in range(n)))
        for j, p in enumerate(self.parents):
            if p >= j or p < -1:
                raise SkeletonError(
                    f"joint {j} has parent {p}; parents must precede children (-1 = root)"
                )

    @property
    def n_joints(self) -> int:
        return len(self.parents)


@dataclass
class PoseSequence:
    """N frames of K pose values plus representation metadata."""

    representation: str
    fps: float
    data: np.ndarray  # (n_frames, k)
    joints: int
    dims: int

    def __post_init__(self):
        if self.representation not in (XYZ, EXPMAP):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"pose data must be N x K with N >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("pose data contains non-finite values")
        if self.joints * self.dims != data.shape[1]:
            raise ValueError(
                f"JOINTS={self.joints} DIMS={self.dims} inconsistent with K={data.shape[1]}"
            )
        self.data = data

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PoseSequence":
        return replace(self, data=data)


# file I/O ----------------------------------------------------------------


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise PoseFileError(f"line 1: malformed header token {token!r}")
        fields[key] = value
    for key in ("JOINTS", "DIMS", "FPS", "REPR"):
        if key not in fields:
            raise PoseFileError(f"line 1: header missing {key}")
    return fields


def load_sequence(stream: IO[str] | str | Path) -> PoseSequence:
    if isinstance(stream, (str, Path)):
        with open(stream, "r", encoding="utf-8") as fh:
            return load_sequence(fh)
    lines = stream.read().splitlines()
    if not lines:
        raise PoseFileError("line 1: empty pose file")
    header = _parse_header(lines[0])
    try:
        joints = int(header["JOINTS"])
        dims = int(header["DIMS"])
        fps = float(header["FPS"])
    except ValueError as exc:
        raise PoseFileError(f"line 1: {exc}") from None
    repr_tag = header["REPR"]
    if dims not in (1, 3):
        raise PoseFileError(f"line 1: DIMS must be 1 or 3, got {dims}")
    if repr_tag not in (XYZ, EXPMAP):
        raise PoseFileError(f"line 1: REPR must be xyz or expmap, got {repr_tag!r}")
    k = joints * dims
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        values = line.split()
        if len(values) != k:
            raise PoseFileError(f"line {lineno}: expected {k} values, got {len(values)}")
        try:
            row = np.array([float(v) for v in values])
        except ValueError as exc:
            raise PoseFileError(f"line {lineno}: {exc}") from None
        if not np.all(np.isfinite(row)):
            raise PoseFileError(f"line {lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise PoseFileError("line 2: no frames")
    return PoseSequence(repr_tag, fps, np.vstack(rows), joints, dims)


def save_sequence(seq: PoseSequence, target: IO[str] | str | Path) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8") as fh:
            save_sequence(seq, fh)
        return
    target.write(
        f"JOINTS={seq.joints} DIMS={seq.dims} FPS={seq.fps:.17g} REPR={seq.representation}\n"
    )
    for row in seq.data:
        target.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_sequences(paths: Iterable[str | Path]) -> list[PoseSequence]:
    return [load_sequence(p) for p in paths]


# preprocessing -------------------------------------------------------------

CONST_COORD_TOL = 1e-9  # whole-sequence range below this counts as constant


@dataclass
class PreprocessResult:
    sequence: PoseSequence
    kept_indices: np.ndarray
    removed_indices: np.ndarray
    removed_values: np.ndarray  # constant value per removed coordinate


def preprocess(
    seq: PoseSequence, target_fps: float | None = None, drop_constant: bool = True
) -> PreprocessResult:
    """Integer-stride downsampling, root-translation removal (xyz) and
    constant-coordinate removal. The removed indices/values are returned so
    the original coordinate layout can be restored."""
    data = seq.data
    fps = seq.fps
    if target_fps is not None:
        if target_fps > seq.fps:
            raise ValueError(f"cannot upsample {seq.fps} fps to {target_fps} fps")
        stride = int(round(seq.fps / target_fps))
        data = data[::stride]
        fps = seq.fps / stride
    if seq.representation == XYZ and seq.dims == 3:
        root = data[:, 0:3]
        data = data - np.tile(root, seq.joints)
    elif seq.representation == EXPMAP and seq.dims == 3:
        data = data.copy()
        data[:, 0:3] = 0.0  # drop global rotation
    k = data.shape[1]
    if drop_constant:
        spans = data.max(axis=0) - data.min(axis=0)
        keep = spans >= CONST_COORD_TOL
    else:
        keep = np.ones(k, dtype=bool)
    kept = np.flatnonzero(keep)
    removed = np.flatnonzero(~keep)
    out = PoseSequence(seq.representation, fps, data[:, kept], int(kept.size), 1)
    return PreprocessResult(out, kept, removed, data[0, removed].copy())


def restore_coordinates(data: np.ndarray, result: PreprocessResult) -> np.ndarray:
    """Scatter processed columns back into the original coordinate order."""
    data = np.asarray(data)
    k = result.kept_indices.size + result.removed_indices.size
    full = np.empty((data.shape[0], k))
    full[:, result.kept_indices] = data
    full[:, result.removed_indices] = result.removed_values
    return full


# forward kinematics --------------------------------------------------------


def rotation_from_expmap(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' rotation for one axis-angle 3-vector."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        return np.eye(3)
    axis = omega / theta
    kx, ky, kz = axis
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(theta) * cross + (1.0 - math.cos(theta)) * (cross @ cross)


def expmap_to_xyz(seq: PoseSequence, skeleton: Skeleton) -> PoseSequence:
    """Compose per-joint rotations down the kinematic chains.

    Joint position = parent position + parent global rotation @ offset; the
    root sits at its own offset.
    """
    if seq.representation != EXPMAP:
        raise ValueError("expmap_to_xyz requires an expmap sequence")
    n_joints = skeleton.n_joints
    if seq.k != 3 * n_joints:
        raise ValueError(
            f"sequence has {seq.k} values per frame, skeleton needs {3 * n_joints}"
        )
    out = np.empty((seq.n_frames, 3 * n_joints))
    for t in range(seq.n_frames):
        angles = seq.data[t].reshape(n_joints, 3)
        global_rot = np.empty((n_joints, 3, 3))
        pos = np.empty((n_joints, 3))
        for j, parent in enumerate(skeleton.parents):
            local = rotation_from_expmap(angles[j])
            if parent < 0:
                global_rot[j] = local
                pos[j] = skeleton.offsets[j]
            else:
                global_rot[j] = global_rot[parent] @ local
                pos[j] = pos[parent] + global_rot[parent] @ skeleton.offsets[j]
        out[t] = pos.reshape(-1)
    return PoseSequence(XYZ, seq.fps, out, n_joints, 3)


# part partitions -------------------------------------------------------------


@dataclass(frozen=True)
class PartPartition:
    """Disjoint coordinate groups covering all K indices."""

    level: str
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown partition level {self.level!r}")
        seen: set[int] = set()
        for group in self.groups:
            if not group:
                raise ValueError("empty partition group")
            overlap = seen.intersection(group)
            if overlap:
                raise ValueError(f"coordinate(s) {sorted(overlap)} assigned twice")
            seen.update(group)
        if seen != set(range(len(seen))) or not seen:
            raise ValueError("partition groups must cover 0..K-1 exactly")
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))

    @property
    def n_parts(self) -> int:
        return len(self.groups)

    @property
    def k_total(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)


def make_partition(
    k_total: int,
    level: str,
    *,
    coords_per_joint: int = 3,
    part_map: dict[str, list[int]] | None = None,
) -> PartPartition:
    """Build the coordinate grouping for one attention level.

    ``part`` level requires a joint -> limb assignment (``part_map``); every
    joint must be assigned exactly once.
    """
    if level == "pose":
        return PartPartition("pose", (tuple(range(k_total)),))
    if level == "joint":
        if k_total % coords_per_joint:
            raise ValueError(
                f"K={k_total} not divisible by {coords_per_joint} coords per joint"
            )
        groups = tuple(
            tuple(range(j, j + coords_per_joint))
            for j in range(0, k_total, coords_per_joint)
        )
        return PartPartition("joint", groups)
    if level == "part":
        if part_map is None:
            raise ValueError("part level requires a joint-to-limb part map")
        if k_total % coords_per_joint:
            raise ValueError(
                f"K={k_total} not divisible by {coords_per_joint} coords per joint"
            )
        n_joints = k_total // coords_per_joint
        assigned: set[int] = set()
        groups = []
        for name, joint_ids in part_map.items():
            coords: list[int] = []
            for j in joint_ids:
                if j < 0 or j >= n_joints:
                    raise ValueError(f"limb {name!r}: joint {j} out of range 0..{n_joints - 1}")
                if j in assigned:
                    raise ValueError(f"limb {name!r}: joint {j} assigned twice")
                assigned.add(j)
                coords.extend(range(j * coords_per_joint, (j + 1) * coords_per_joint))
            groups.append(tuple(coords))
        missing = set(range(n_joints)) - assigned
        if missing:
            raise ValueError(f"joints {sorted(missing)} not assigned to any limb")
        return PartPartition("part", tuple(groups))
    raise ValueError(f"unknown partition level {level!r}")


def parse_part_map(text: str) -> dict[str, list[int]]:
    """Parse ``<limb-name>: <joint indices comma-separated>`` lines."""
    result: dict[str, list[int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, rest = line.partition(":")
        if not sep:
            raise PoseFileError(f"line {lineno}: expected '<limb>: <joints>'")
        name = name.strip()
        if name in result:
            raise PoseFileError(f"line {lineno}: duplicate limb {name!r}")
        try:
            result[name] = [int(tok) for tok in rest.replace(",", " ").split()]
        except ValueError as exc:
            raise PoseFileError(f"line {lineno}: {exc}") from None
    if not result:
        raise PoseFileError("line 1: empty part map")
    return result


def default_part_map(n_joints: int, n_parts: int = 5) -> dict[str, list[int]]:
    """Contiguous joint chunks; a stand-in limb map for synthetic skeletons."""
    n_parts = min(n_parts, n_joints)
    bounds = np.linspace(0, n_joints, n_parts + 1).astype(int)
    return {
        f"group{i}": list(range(bounds[i], bounds[i + 1]))
        for i in range(n_parts)
        if bounds[i] < bounds[i + 1]
    }


# synthetic generators --------------------------------------------------------


def _triangle(phase01: np.ndarray) -> np.ndarray:
    """Unit triangle wave over [0, 1): -1 -> 1 rising then 1 -> -1 falling."""
    return np.where(phase01 < 0.5, 4.0 * phase01 - 1.0, 3.0 - 4.0 * phase01)


def synth_periodic(
    joints: int,
    period: int,
    length: int,
    seed: int,
    *,
    fps: float = 25.0,
    amplitude: np.ndarray | float | None = None,
    phase: np.ndarray | int | None = None,
    noise: float = 0.0,
    waveform: str = "sine",
) -> PoseSequence:
    """Periodic per-coordinate waves with integer-frame phase offsets.

    The phase argument is reduced mod ``period`` before evaluation, so with
    zero noise frame t and frame t+period are bitwise identical. ``phase``
    defaults to random integer offsets per coordinate; pass 0 for a shared
    phase (which makes each pose occur on both the rising and the falling
    flank - deliberately ambiguous for single-frame matching).
    """
    if period < 2:
        raise ValueError("period must be >= 2 frames")
    if waveform not in ("sine", "triangle"):
        raise ValueError(f"unknown waveform {waveform!r}")
    k = 3 * joints
    rng = np.random.default_rng(seed)
    if amplitude is None:
        amp = rng.uniform(0.5, 1.5, size=k)
    else:
        amp = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (k,)).copy()
    if phase is None:
        ph = rng.integers(0, period, size=k)
    else:
        ph = np.broadcast_to(np.asarray(phase), (k,)).astype(np.int64)
    t = np.arange(length)[:, None]
    cycle = (t + ph[None, :]) % period
    if waveform == "sine":
        data = amp[None, :] * np.sin(2.0 * np.pi * cycle / period)
    else:
        data = amp[None, :] * _triangle(cycle / period)
    if noise > 0:
        data = data + rng.normal(0.0, noise, size=data.shape)
    return PoseSequence(XYZ, fps, data, joints, 3)


def _smooth_track(
    rng: np.random.Generator, k: int, base_period: int, length: int, harmonics: int = 3
) -> np.ndarray:
    """Sum of harmonics of ``base_period``: smooth and exactly cyclic in it."""
    t = np.arange(length)[:, None, None]
    orders = np.arange(1, harmonics + 1)[None, None, :]
    amps = rng.uniform(0.2, 1.0, size=(1, k, harmonics)) / orders
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(1, k, harmonics))
    waves = amps * np.sin(2.0 * np.pi * orders * t / base_period + phases)
    return waves.sum(axis=2)


def synth_repeat_after_gap(
    motif_frames: int,
    gap_frames: int,
    total_frames: int,
    seed: int,
    *,
    joints: int = 6,
    fps: float = 25.0,
) -> PoseSequence:
    """A smooth random motif, an unrelated filler gap, then the motif again.

    Frames from ``motif + gap`` onward replay the motif cyclically, so the
    tail (and anything predicted beyond it) is the motif's continuation by
    construction. With ``gap_frames=0`` the motif repeats back to back.
    """
    if motif_frames < 2:
        raise ValueError("motif must be >= 2 frames")
    if gap_frames < 0:
        raise ValueError("gap must be >= 0 frames")
    if motif_frames + gap_frames > total_frames:
        raise ValueError("motif + gap must fit inside the total length")
    k = 3 * joints
    rng = np.random.default_rng(seed)
    motif = _smooth_track(rng, k, motif_frames, motif_frames)
    data = np.empty((total_frames, k))
    data[:motif_frames] = motif
    if gap_frames:
        filler = _smooth_track(rng, k, max(gap_frames, 4), gap_frames)
        data[motif_frames : motif_frames + gap_frames] = filler
    tail = total_frames - motif_frames - gap_frames
    if tail:
        idx = np.arange(tail) % motif_frames
        data[motif_frames + gap_frames :] = motif[idx]
    return PoseSequence(XYZ, fps, data, joints, 3)


def add_noise(seq: PoseSequence, sigma: float, seed: int) -> PoseSequence:
    """i.i.d. zero-mean Gaussian noise of std ``sigma`` on every value."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return seq.with_data(seq.data.copy())
    rng = np.random.default_rng(seed)
    return seq.with_data(seq.data + rng.normal(0.0, sigma, size=seq.data.shape))
