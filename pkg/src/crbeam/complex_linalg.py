"""Small dense complex linear algebra helpers.

Thin wrappers over numpy/scipy that add the checks the solvers rely on
(pivot floor, hermiticity, relative rank tolerance).
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite, ZeroMatrix

PIVOT_FLOOR = 1e-14
RANK_TOL = 1e-9
HERMITIAN_TOL = 1e-12


def as_hermitian(A, tol=HERMITIAN_TOL):
    """Return `A` as a complex array after checking ``A == A^H`` within `tol`."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.conj().T)) > tol * scale:
        raise ValueError("matrix is not Hermitian")
    return A


def cholesky_upper(A):
    """Upper-triangular ``U`` with ``U^H U = A`` and a real positive diagonal."""
    A = as_hermitian(A)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    U = L.conj().T
    if U.size and np.min(np.diag(U).real) <= PIVOT_FLOOR:
        raise NotPositiveDefinite("pivot below floor")
    return U


def hermitian_solve(A, b):
    """Solve ``A x = b`` for Hermitian positive-definite ``A``."""
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A is {A.shape}, b has length {b.shape[0]}")
    U = cholesky_upper(A)
    y = solve_triangular(U, b, trans="C")
    return solve_triangular(U, y)


def matrix_rank(A, tol=RANK_TOL):
    """Number of singular values above ``tol`` times the largest one."""
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def dominant_eigenvector(X):
    """Unit-norm principal eigenvector of a Hermitian PSD matrix and its eigenvalue."""
    X = as_hermitian(X, tol=1e-9)
    vals, vecs = np.linalg.eigh(X)
    lam = float(vals[-1])
    if lam <= 0.0:
        raise ZeroMatrix("matrix has no positive eigenvalue")
    v = vecs[:, -1]
    # fix the global phase so the largest entry is real-positive
    k = int(np.argmax(np.abs(v)))
    v = v * (abs(v[k]) / v[k])
    return v, lam


def logdet_capacity(hD, hB, n0):
    """Rate (bits) of jointly decoding the users in ``hD`` with ``hB`` as noise.

    For a single receive antenna ``log2 det(I + h_D^H (n0 + |h_B|^2)^{-1} h_D)``
    collapses to ``log2(1 + |h_D|^2 / (n0 + |h_B|^2))`` by the matrix
    determinant lemma.
    """
    sig = float(np.sum(np.abs(np.asarray(hD, dtype=complex)) ** 2))
    if sig == 0.0:
        return 0.0
    intf = float(np.sum(np.abs(np.asarray(hB, dtype=complex)) ** 2))
    return float(np.log2(1.0 + sig / (n0 + intf)))


def subset_sums(values):
    """Sums of ``values`` over every bitmask of its index set."""
    values = np.asarray(values, dtype=float)
    out = np.zeros(1 << len(values))
    for j, v in enumerate(values):
        out[1 << j:2 << j] = out[:1 << j] + v
    return out
