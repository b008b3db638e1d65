"""Symmetric-matrix coordinates and the generalized Lyapunov operator.

Symmetric matrices are plain ``numpy`` arrays. Two coordinate systems on
the space of symmetric ``n x n`` matrices are used, both of length
``n(n+1)/2`` and both ordered ``(1,1), (1,2), ..., (1,n), (2,2), ..., (n,n)``:

* ``vecs`` coordinates scale off-diagonal entries by ``sqrt(2)``, which makes
  the map an isometry from the Frobenius norm to the Euclidean norm.
* plain upper-triangle coordinates (``triu_stack``) keep entries unscaled.
  These are the coordinates in which the H-representation operator
  ``(H^T H)^{-1} H^T K H`` acts, because ``vec(X) = H @ triu_stack(X)``.

``vecs_scaling`` converts between the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, SingularOperator

SQRT2 = np.sqrt(2.0)
SINGULAR_RTOL = 1e-12


def sym(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return 0.5 * (X + X.T)


def as_symmat(X, name: str = "X") -> np.ndarray:
    """Validate a square matrix and return its symmetric part."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {X.shape}")
    return sym(X)


def sym_dim(length: int) -> int:
    """Return n such that n(n+1)/2 == length."""
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if n < 1 or n * (n + 1) // 2 != length:
        raise DimensionError(f"length {length} is not a triangular number n(n+1)/2")
    return n


@lru_cache(maxsize=None)
def _triu(n: int):
    return np.triu_indices(n)


def vecs_scaling(n: int) -> np.ndarray:
    """Diagonal of D with ``vecs(X) = D @ triu_stack(X)``."""
    rows, cols = _triu(n)
    return np.where(rows == cols, 1.0, SQRT2)


def triu_stack(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[_triu(X.shape[0])].copy()


def triu_unstack(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    n = sym_dim(u.size)
    X = np.zeros((n, n))
    rows, cols = _triu(n)
    X[rows, cols] = u
    X[cols, rows] = u
    return X


def vecs(S) -> np.ndarray:
    S = as_symmat(S, "S")
    return vecs_scaling(S.shape[0]) * triu_stack(S)


def vecs_inv(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    n = sym_dim(v.size)
    return triu_unstack(v / vecs_scaling(n))


def xtilde(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    return vecs(np.outer(x, x))


def xtilde_batch(X) -> np.ndarray:
    """Row-wise ``xtilde`` for an array of states with shape (..., n)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    rows, cols = _triu(n)
    return X[..., rows] * X[..., cols] * vecs_scaling(n)


@dataclass(frozen=True)
class HRep:
    dim: int
    H: np.ndarray


@lru_cache(maxsize=None)
def _hrep_matrix(n: int) -> np.ndarray:
    rows, cols = _triu(n)
    H = np.zeros((n * n, rows.size))
    for k, (i, j) in enumerate(zip(rows, cols)):
        # vec is column-major: entry (i, j) sits at j*n + i
        H[j * n + i, k] = 1.0
        H[i * n + j, k] = 1.0
    H.flags.writeable = False
    return H


def build_hrep(n: int) -> HRep:
    if n < 1:
        raise DimensionError(f"H-representation needs n >= 1, got {n}")
    return HRep(n, _hrep_matrix(n))


@dataclass(frozen=True)
class LyapPencil:
    """Drift/diffusion pair (A, A1) of ``dx = A x dt + A1 x dW``."""

    A: np.ndarray
    A1: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        A1 = np.atleast_2d(np.asarray(self.A1, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape != A1.shape:
            raise DimensionError(f"pencil matrices must be square and equal-sized, got {A.shape} and {A1.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(A1))):
            raise DimensionError("pencil matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "A1", A1)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def lyap_apply(p: LyapPencil, X) -> np.ndarray:
    X = as_symmat(X)
    if X.shape[0] != p.dim:
        raise DimensionError(f"X is {X.shape}, pencil has dimension {p.dim}")
    return sym(X @ p.A + p.A.T @ X + p.A1.T @ X @ p.A1)


def hcal_matrix(p: LyapPencil, h: HRep | None = None) -> np.ndarray:
    """Reduced matrix of the Lyapunov operator in plain upper-triangle coordinates.

    ``triu_stack(lyap_apply(p, X)) == hcal_matrix(p) @ triu_stack(X)``.
    """
    n = p.dim
    if h is None:
        h = build_hrep(n)
    if h.dim != n:
        raise DimensionError(f"H-representation has dimension {h.dim}, pencil has {n}")
    eye = np.eye(n)
    K = (np.kron(p.A, eye) + np.kron(eye, p.A) + np.kron(p.A1, p.A1)).T
    HtH = np.einsum("ij,ij->j", h.H, h.H)
    return (h.H.T @ K @ h.H) / HtH[:, None]


def hcal_vecs(p: LyapPencil, h: HRep | None = None) -> np.ndarray:
    """The same operator expressed in ``vecs`` coordinates (D Hcal D^-1)."""
    d = vecs_scaling(p.dim)
    return d[:, None] * hcal_matrix(p, h) / d[None, :]


def ms_spectrum(p: LyapPencil) -> np.ndarray:
    return np.linalg.eigvals(hcal_matrix(p))


def ms_abscissa(p: LyapPencil) -> float:
    return float(np.max(ms_spectrum(p).real))


def is_ms_stable(p: LyapPencil) -> bool:
    return ms_abscissa(p) < 0.0


def solve_gle(p: LyapPencil, Y, h: HRep | None = None) -> np.ndarray:
    """Solve ``X A + A^T X + A1^T X A1 = Y`` for symmetric X.

    Raises SingularOperator when the reduced operator is numerically singular.
    """
    Y = as_symmat(Y, "Y")
    if Y.shape[0] != p.dim:
        raise DimensionError(f"Y is {Y.shape}, pencil has dimension {p.dim}")
    Hv = hcal_vecs(p, h)
    s = np.linalg.svd(Hv, compute_uv=False)
    if s[-1] < SINGULAR_RTOL * s[0] or s[0] == 0.0:
        raise SingularOperator(float(s[-1]), float(s[0]))
    return vecs_inv(np.linalg.solve(Hv, vecs(Y)))
