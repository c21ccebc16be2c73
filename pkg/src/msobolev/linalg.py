"""Dense symmetric-matrix helpers and unit-ball volumes.

Everything here is a pure function on small (dim <= ~12) matrices; field-sized
batches are handled by the callers with vectorized numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_PSD_TOL = 1e-9


@dataclass(frozen=True)
class SpdCertificate:
    """Uniform-positivity witness: the smallest eigenvalue seen and the bar it must clear."""

    min_eigenvalue: float
    tolerance: float = DEFAULT_PSD_TOL

    @property
    def valid(self) -> bool:
        return self.min_eigenvalue >= self.tolerance


@dataclass(frozen=True)
class SymMatrix:
    """Real symmetric matrix, symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {e.shape}")
        if e.shape[0] < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "entries", 0.5 * (e + e.T))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def _entries(m) -> np.ndarray:
    if isinstance(m, SymMatrix):
        return m.entries
    e = np.asarray(m, dtype=float)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {e.shape}")
    return 0.5 * (e + e.T)


def det(m) -> float:
    """Determinant of a symmetric matrix."""
    return float(np.linalg.det(_entries(m)))


def cofactor_matrix(m) -> SymMatrix:
    """Cofactor (adjugate) matrix C with C @ M = det(M) * I.

    Defined for every symmetric M, singular ones included.  Dimensions up to 3
    use the explicit minor formulas; larger ones go through the symmetric
    eigendecomposition, which keeps the identity exact for rank-deficient input.
    """
    e = _entries(m)
    n = e.shape[0]
    if n == 1:
        return SymMatrix(np.array([[1.0]]))
    if n == 2:
        a, b = e[0, 0], e[0, 1]
        d = e[1, 1]
        return SymMatrix(np.array([[d, -b], [-b, a]]))
    if n == 3:
        c = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                minor = np.delete(np.delete(e, i, axis=0), j, axis=1)
                c[i, j] = (-1.0) ** (i + j) * (
                    minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0]
                )
        return SymMatrix(c.T)
    w, q = np.linalg.eigh(e)
    adj_diag = np.array([np.prod(np.delete(w, i)) for i in range(n)])
    return SymMatrix(q @ np.diag(adj_diag) @ q.T)


def min_eigenvalue(m) -> float:
    """Smallest eigenvalue; closed form for dim <= 2, symmetric eigensolve above."""
    e = _entries(m)
    n = e.shape[0]
    if n == 1:
        return float(e[0, 0])
    if n == 2:
        mean = 0.5 * (e[0, 0] + e[1, 1])
        radius = math.hypot(0.5 * (e[0, 0] - e[1, 1]), e[0, 1])
        return mean - radius
    return float(np.linalg.eigvalsh(e)[0])


@dataclass(frozen=True)
class AmgmResult:
    holds: bool
    gap: float
    equality_flag: bool


def matrix_amgm_check(a, b, tol: float = DEFAULT_PSD_TOL) -> AmgmResult:
    """Check det(AB) <= (tr(AB)/n)^n for positive definite A, nonnegative definite B.

    ``gap`` is the bound minus the determinant; ``equality_flag`` reports whether
    AB is within ``tol`` (max norm) of a nonnegative multiple of the identity.
    """
    ea, eb = _entries(a), _entries(b)
    if ea.shape != eb.shape:
        raise ValueError("A and B must have the same dimension")
    n = ea.shape[0]
    cert = SpdCertificate(min_eigenvalue(ea), tol)
    if not cert.valid:
        raise ValueError(f"A is not positive definite: min eigenvalue {cert.min_eigenvalue}")
    if min_eigenvalue(eb) < -tol:
        raise ValueError("B is not nonnegative definite")
    ab = ea @ eb
    trace = float(np.trace(ab))
    gap = (trace / n) ** n - float(np.linalg.det(ab))
    equality = float(np.max(np.abs(ab - (trace / n) * np.eye(n)))) < tol
    return AmgmResult(holds=gap >= -tol, gap=gap, equality_flag=equality)


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d: pi^(d/2) / Gamma(d/2 + 1)."""
    if d < 1 or int(d) != d:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
