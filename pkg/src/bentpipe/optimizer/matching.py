"""Hard matching projection and the fixed-matching baseline gain matrix."""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..metrics import ZERO_REL_THRESHOLD

log = logging.getLogger(__name__)

SINGULAR_RIDGE = 1e-9


def harden_matching(B_soft, rel: float = ZERO_REL_THRESHOLD) -> np.ndarray:
    """Keep at most one entry per row and column of a non-negative gain matrix.

    Entries below ``rel`` times the largest one are zeroed first; the
    surviving support is chosen by a maximum-weight bipartite assignment on
    the entry magnitudes, and the kept entries retain their values.
    """
    B = np.array(B_soft, dtype=float)
    if np.any(B < 0):
        raise ValueError("B must be element-wise non-negative")
    if B.size == 0 or B.max() <= 0:
        return np.zeros_like(B)
    B[B <= rel * B.max()] = 0.0
    rows, cols = linear_sum_assignment(B, maximize=True)
    out = np.zeros_like(B)
    out[rows, cols] = B[rows, cols]
    return out


def support(B) -> np.ndarray:
    """Binary matching matrix of a hard gain matrix."""
    return (np.asarray(B) != 0).astype(float)


def inverse_sqrt_gain(F) -> np.ndarray:
    """Entry magnitudes of (F^H F)^{-1/2}, the fixed baseline gain matrix.

    The Hermitian inverse square root is generally complex off the
    diagonal; magnitudes keep the gains real and non-negative.  A singular
    Gram matrix is regularized with a small relative ridge.
    """
    F = np.asarray(F)
    gram = F.conj().T @ F
    gram = 0.5 * (gram + gram.conj().T)
    w, V = np.linalg.eigh(gram)
    if w.min() <= SINGULAR_RIDGE * max(w.max(), 0.0):
        log.warning("F^H F is singular; adding a %.0e relative ridge", SINGULAR_RIDGE)
        w = np.maximum(w, 0.0) + SINGULAR_RIDGE * max(w.max(), 1e-300)
    return np.abs((V / np.sqrt(w)) @ V.conj().T)
