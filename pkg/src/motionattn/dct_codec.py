"""Orthonormal per-row DCT trajectory codec.

Each coordinate's trajectory (one row of a K x L matrix) is mapped to L
frequency coefficients by the orthonormal cosine basis

    basis[l, n] = w_l * cos(pi * (2n + 1) * l / (2L)),   0-based l, n
    w_0 = sqrt(1/L),  w_l = sqrt(2/L) for l > 0

so a constant row maps onto the first coefficient only and the transform
is its own inverse-transpose. Both directions are dense L x L matrix
multiplies (L stays small here), which also makes them exact linear ops
for the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import Tensor, as_tensor, matmul


@lru_cache(maxsize=None)
def dct_matrix(length: int) -> np.ndarray:
    """Orthonormal DCT basis, rows indexed by frequency. Read-only."""
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    n = np.arange(length)
    l = np.arange(length)[:, None]
    basis = np.sqrt(2.0 / length) * np.cos(np.pi * (2 * n + 1) * l / (2 * length))
    basis[0] *= np.sqrt(0.5)
    basis.setflags(write=False)
    return basis


@dataclass
class DctCoeffs:
    """K x L coefficient matrix; columns at/after ``n_keep`` are exact zeros."""

    values: np.ndarray
    n_keep: int

    @property
    def length(self) -> int:
        return self.values.shape[1]


def dct(rows: np.ndarray, n_keep: int | None = None) -> DctCoeffs:
    """Transform each row of a K x L matrix, optionally low-pass truncated."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected K x L rows, got shape {rows.shape}")
    length = rows.shape[1]
    coeffs = rows @ dct_matrix(length).T
    out = DctCoeffs(coeffs, n_keep=length)
    if n_keep is not None and n_keep != length:
        out = truncate(out, n_keep)
    return out


def idct(coeffs: DctCoeffs | np.ndarray) -> np.ndarray:
    """Reconstruct the K x L rows from coefficients."""
    values = coeffs.values if isinstance(coeffs, DctCoeffs) else np.asarray(coeffs)
    if values.ndim != 2:
        raise ValueError(f"expected K x L coefficients, got shape {values.shape}")
    return values @ dct_matrix(values.shape[1])


def truncate(coeffs: DctCoeffs, n_keep: int) -> DctCoeffs:
    """Zero all columns at/after ``n_keep``; records the kept count."""
    length = coeffs.length
    if not 1 <= n_keep <= length:
        raise ValueError(f"n_keep={n_keep} out of range 1..{length}")
    values = coeffs.values.copy()
    values[:, n_keep:] = 0.0
    return DctCoeffs(values, n_keep=n_keep)


def pad_replicate(last_window: np.ndarray, horizon: int) -> np.ndarray:
    """Extend an M x K pose window by repeating its final pose ``horizon`` times."""
    window = np.asarray(last_window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 1:
        raise ValueError(f"expected M x K window with M >= 1, got {window.shape}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return window.copy()
    return np.concatenate([window, np.repeat(window[-1:], horizon, axis=0)], axis=0)


def dct_rows_t(rows: Tensor) -> Tensor:
    """Differentiable per-row DCT of a K x L tensor."""
    rows = as_tensor(rows)
    return matmul(rows, dct_matrix(rows.shape[1]).T)


def idct_rows_t(coeffs: Tensor) -> Tensor:
    """Differentiable per-row inverse DCT of a K x L tensor."""
    coeffs = as_tensor(coeffs)
    return matmul(coeffs, dct_matrix(coeffs.shape[1]))
