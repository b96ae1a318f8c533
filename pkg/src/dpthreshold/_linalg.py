from __future__ import annotations

import warnings

import numpy as np

from .exceptions import SingularMatrixWarning


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sym_inverse(a: np.ndarray, rtol: float = 1e-10, what: str = "matrix",
                warn: bool = True) -> tuple[np.ndarray, bool]:
    """Invert a symmetric PSD matrix, falling back to a pseudo-inverse.

    Returns the inverse and a flag that is True when eigenvalues at or
    below ``rtol * max|eig|`` were discarded.
    """
    a = symmetrize(np.asarray(a, dtype=float))
    vals, vecs = np.linalg.eigh(a)
    top = np.max(np.abs(vals)) if vals.size else 0.0
    keep = vals > rtol * top
    singular = bool(top == 0.0 or not keep.all())
    if singular and warn:
        warnings.warn(f"singular {what}; using pseudo-inverse",
                      SingularMatrixWarning, stacklevel=2)
    inv_vals = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
    return symmetrize((vecs * inv_vals) @ vecs.T), singular


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    vals, vecs = np.linalg.eigh(symmetrize(np.asarray(a, dtype=float)))
    return symmetrize((vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T)


def centered_second_moment(g: np.ndarray) -> np.ndarray:
    """(1/n) sum g_i g_i' - gbar gbar' for the rows g_i of ``g``."""
    g = np.asarray(g, dtype=float)
    c = g - g.mean(axis=0)
    return symmetrize(c.T @ c / g.shape[0])
