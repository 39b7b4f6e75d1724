"""Exact geometry on the unit hypersphere.

Vectors are plain 1-D float64 numpy arrays of dimension >= 2. A unit
vector is one whose L2 norm is within UNIT_NORM_TOL of 1; `normalize`
produces one from any vector whose norm is at least ZERO_NORM_THRESHOLD.
All arithmetic is 64-bit; the gradient of the cosine is closed form and
is checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, ZeroNormError

# Norms below this are treated as zero; well inside float64 precision and
# far from any trained embedding norm.
ZERO_NORM_THRESHOLD = 1e-12

# How far a "unit" vector's norm may drift from 1.
UNIT_NORM_TOL = 1e-9


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise DimensionMismatchError(
            f"expected a 1-D vector of dimension >= 2, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector entries must be finite")
    return arr


def normalize(v) -> np.ndarray:
    """Scale `v` onto the unit sphere, preserving direction.

    Raises ZeroNormError when the norm is below ZERO_NORM_THRESHOLD.
    """
    arr = _as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroNormError(f"norm {norm:.3e} below {ZERO_NORM_THRESHOLD:.0e}")
    return arr / norm


def normalize_rows(matrix) -> np.ndarray:
    """Row-wise `normalize` for a 2-D array; raises ZeroNormError if any row is degenerate."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D array, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < ZERO_NORM_THRESHOLD):
        bad = int(np.argmin(norms))
        raise ZeroNormError(f"row {bad} has norm {norms[bad]:.3e}")
    return arr / norms[:, None]


def cos_sim(a, b) -> float:
    """Cosine similarity of two unit vectors: the dot product, clamped to [-1, 1].

    The clamp guards arccos against rounding just outside the interval.
    Symmetric in its arguments exactly (bitwise).
    """
    va = _as_vector(a)
    vb = _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimensions differ: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.clip(np.dot(va, vb), -1.0, 1.0))


def angle(a, b) -> float:
    """Angle in radians between two unit vectors, in [0, pi]."""
    return float(np.arccos(cos_sim(a, b)))


def cos_sim_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of cos_sim(normalize(a), normalize(b)) w.r.t. the raw inputs.

    With unit directions ah = a/|a| and bh = b/|b| and c = ah.bh:

        d c / d a = (bh - c * ah) / |a|

    and symmetrically for b. Zero at aligned inputs (the cosine's maximum).
    """
    va = _as_vector(a)
    vb = _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimensions differ: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < ZERO_NORM_THRESHOLD or nb < ZERO_NORM_THRESHOLD:
        raise ZeroNormError("cannot differentiate through a zero-norm input")
    ah = va / na
    bh = vb / nb
    c = float(np.dot(ah, bh))
    grad_a = (bh - c * ah) / na
    grad_b = (ah - c * bh) / nb
    return grad_a, grad_b
