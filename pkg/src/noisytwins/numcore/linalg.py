import numpy as np

from .errors import ShapeError


def matrix_sqrt_psd(m: np.ndarray, sym_tol: float = 1e-9) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix.

    Uses a symmetric eigendecomposition; eigenvalues below zero (roundoff on
    rank-deficient covariances) are clipped to zero before the root.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd needs a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    asym = float(np.abs(m - m.T).max(initial=0.0))
    if asym > sym_tol * scale:
        raise ShapeError(f"matrix is not symmetric (max |M - M^T| = {asym:.3g})")
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return 0.5 * (root + root.T)
