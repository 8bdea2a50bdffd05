"""Small dense-matrix helpers shared across the package."""

from __future__ import annotations

import numpy as np

HERMITICITY_TOL = 1e-12


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def frob(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def comm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hermiticity_defect(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.conj().T)))


def require_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL, name: str = "matrix") -> None:
    """Reject matrices whose anti-hermitian part exceeds tol relative to their scale."""
    defect = hermiticity_defect(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if defect > tol * scale:
        raise ValueError(f"{name} is not hermitian: max|A - A^dag| = {defect:.3e} > {tol:.1e}")


def vec(a: np.ndarray) -> np.ndarray:
    """Row-major flattening; superoperator matrices in this package use the same order."""
    return a.reshape(-1)


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim)
