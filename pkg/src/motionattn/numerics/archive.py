"""Deterministic parameter-archive format.

An archive is a stored (uncompressed) zip with fixed entry timestamps so
identical contents always produce identical bytes, holding:

  manifest.txt   one line per tensor: ``<name> <dim0> <dim1> ...``,
                 names in canonical (sorted) order
  meta.txt       ``key=value`` lines, sorted by key
  tensors/<name> raw little-endian float64, row-major

Names are restricted to a filesystem-safe alphabet so entries stay valid
zip member paths on every platform.
"""

from __future__ import annotations

import io
import re
import zipfile
from pathlib import Path

import numpy as np

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-/]+$")
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    """Raised for malformed archives or invalid entry names."""


def _check_name(name: str) -> None:
    if not _NAME_RE.match(name) or name.startswith("/") or ".." in name:
        raise ArchiveError(f"invalid tensor name {name!r}")


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_archive(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    meta: dict[str, str] | None = None,
) -> None:
    names = sorted(tensors)
    for name in names:
        _check_name(name)
    manifest_lines = []
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64)
        manifest_lines.append(" ".join([name, *[str(d) for d in arr.shape]]))
    meta = meta or {}
    meta_lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    for k in sorted(meta):
        if "\n" in k or "\n" in meta[k] or "=" in k:
            raise ArchiveError(f"invalid meta entry {k!r}")

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.txt", ("\n".join(manifest_lines) + "\n").encode())
        _write_entry(zf, "meta.txt", ("\n".join(meta_lines) + "\n").encode())
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            _write_entry(zf, f"tensors/{name}", arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        zf = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
    with zf:
        try:
            manifest = zf.read("manifest.txt").decode()
            meta_text = zf.read("meta.txt").decode()
        except KeyError as exc:
            raise ArchiveError(f"archive {path} is missing {exc}") from exc
        tensors: dict[str, np.ndarray] = {}
        for line in manifest.splitlines():
            if not line.strip():
                continue
            fields = line.split()
            name, dims = fields[0], tuple(int(d) for d in fields[1:])
            _check_name(name)
            raw = zf.read(f"tensors/{name}")
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            expected = int(np.prod(dims)) if dims else 1
            if arr.size != expected:
                raise ArchiveError(
                    f"tensor {name!r}: payload has {arr.size} values, shape {dims} "
                    f"needs {expected}"
                )
            tensors[name] = arr.reshape(dims)
        meta: dict[str, str] = {}
        for line in meta_text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            meta[key] = value
    return tensors, meta
