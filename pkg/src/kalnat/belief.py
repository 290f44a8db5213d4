"""Gaussian belief over the trainable parameters and SPD linear algebra.

Every covariance-valued result in the package passes through
:func:`symmetrize` and :func:`floor_diagonal` so that floating-point
drift never breaks symmetry or positivity of the stored state.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import blas, lapack

from .errors import InvalidArgumentError, SingularMatrixError

COV_FLOOR = 1e-12
SYMMETRY_RTOL = 1e-10
_SYM_BLOCK = 1024


class Backend(str, Enum):
    FULL = "Full"
    DIAGONAL = "Diagonal"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise InvalidArgumentError(f"unknown covariance backend {value!r}")


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianBelief:
    """Posterior N(mean, cov) over the parameter vector.

    ``cov`` is an n x n matrix for the Full backend and a length-n vector
    of variances for the Diagonal backend.
    """

    mean: np.ndarray
    cov: np.ndarray
    backend: Backend = Backend.FULL
    step: int = 0

    def __post_init__(self):
        backend = Backend.parse(self.backend)
        object.__setattr__(self, "backend", backend)
        mean = self.mean if _is_frozen(self.mean) else _frozen(self.mean)
        cov = self.cov if _is_frozen(self.cov) else _frozen(self.cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        n = mean.shape[0]
        if mean.ndim != 1:
            raise InvalidArgumentError("mean must be a vector")
        if backend is Backend.FULL and cov.shape != (n, n):
            raise InvalidArgumentError(f"Full covariance must be {n}x{n}, got {cov.shape}")
        if backend is Backend.DIAGONAL and cov.shape != (n,):
            raise InvalidArgumentError(f"Diagonal covariance must have length {n}, got {cov.shape}")
        if self.step < 0:
            raise InvalidArgumentError("step must be nonnegative")

    @property
    def n(self):
        return self.mean.shape[0]

    def cov_matrix(self):
        """Dense n x n covariance regardless of backend."""
        if self.backend is Backend.DIAGONAL:
            return np.diag(self.cov)
        return np.array(self.cov)

    def replace(self, **changes):
        values = dict(mean=self.mean, cov=self.cov, backend=self.backend, step=self.step)
        values.update(changes)
        return GaussianBelief(**values)


def _is_frozen(a):
    return (
        isinstance(a, np.ndarray)
        and a.dtype == np.float64
        and not a.flags.writeable
        and a.flags.c_contiguous
    )


@dataclass(frozen=True)
class ProcessNoise:
    """Isotropic process noise Q = q I added during prediction."""

    q: float = 1e-4

    def __post_init__(self):
        if not np.isfinite(self.q) or self.q < 0:
            raise InvalidArgumentError(f"process noise q must be >= 0, got {self.q}")


def init_belief(n, sigma0=1.0, backend=Backend.FULL):
    """Zero-mean isotropic prior N(0, sigma0 I)."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    if not np.isfinite(sigma0) or sigma0 <= 0:
        raise InvalidArgumentError(f"sigma0 must be positive, got {sigma0}")
    n = int(n)
    backend = Backend.parse(backend)
    if backend is Backend.FULL:
        cov = sigma0 * np.eye(n)
    else:
        cov = np.full(n, float(sigma0))
    return GaussianBelief(np.zeros(n), cov, backend, 0)


def symmetrize(M):
    """Return (M + M^T) / 2. Square arrays that own their data are updated in place."""
    M = np.asarray(M, dtype=np.float64)
    if not (M.flags.writeable and M.flags.owndata):
        return 0.5 * (M + M.T)
    n = M.shape[0]
    if n <= _SYM_BLOCK:
        M += M.T
        M *= 0.5
        return M
    # blockwise, so no n x n temporary is needed for large covariances
    for i in range(0, n, _SYM_BLOCK):
        bi = slice(i, i + _SYM_BLOCK)
        for j in range(i, n, _SYM_BLOCK):
            bj = slice(j, j + _SYM_BLOCK)
            avg = (M[bi, bj] + M[bj, bi].T) * 0.5
            M[bi, bj] = avg
            M[bj, bi] = avg.T
    return M


def floor_diagonal(M, floor=COV_FLOOR):
    """Clamp the diagonal of a square matrix (or a variance vector) from below."""
    if M.ndim == 1:
        return np.maximum(M, floor, out=M if M.flags.writeable else None)
    d = np.einsum("ii->i", M)
    if np.any(d < floor):
        if not M.flags.writeable:
            M = np.array(M)
            d = np.einsum("ii->i", M)
        np.maximum(d, floor, out=d)
    return M


def cholesky(A):
    """Lower Cholesky factor of an SPD matrix.

    Raises :class:`SingularMatrixError` with the failing pivot when ``A``
    is not positive definite.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("matrix has non-finite entries")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > SYMMETRY_RTOL * scale * 1e2:
        raise InvalidArgumentError("matrix is not symmetric")
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite (leading minor {info} failed)", pivot=int(info)
        )
    if info < 0:
        raise InvalidArgumentError(f"potrf argument {-info} is invalid")
    return L


def cho_solve(L, B):
    """Solve A X = B given the lower Cholesky factor L of A."""
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    X, info = lapack.dpotrs(L, B[:, None] if vector else B, lower=1)
    if info != 0:
        raise InvalidArgumentError(f"potrs argument {-info} is invalid")
    return X[:, 0] if vector else X


def cho_solve_wide(L, B):
    """:func:`cho_solve` for a C-ordered m x p right-hand side with p >> m.

    The transpose of B is already Fortran-ordered, so two triangular
    solves from the right (X L^T = B^T, then X L = X) work on a single
    copy and return a C-ordered m x p result.
    """
    B = np.ascontiguousarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != L.shape[0]:
        raise InvalidArgumentError(f"shape mismatch: factor is {L.shape}, B is {B.shape}")
    X = blas.dtrsm(1.0, L, B.T, side=1, lower=1, trans_a=1)
    X = blas.dtrsm(1.0, L, X, side=1, lower=1, trans_a=0, overwrite_b=1)
    return X.T


def spd_solve(A, B):
    """Solve A X = B for symmetric positive definite A via Cholesky.

    ``B`` may be a vector or an m x p matrix. No explicit inverse is formed.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != A.shape[0]:
        raise InvalidArgumentError(f"shape mismatch: A is {A.shape}, B is {B.shape}")
    return cho_solve(cholesky(A), B)


def woodbury_posterior_cov(prior_cov, H, R):
    """Precision-form posterior covariance (prior^-1 + H^T R^-1 H)^-1.

    Evaluated in information form with Cholesky solves on the n x n
    precision, which makes it an independent route to the covariance
    produced by the gain-form Kalman update.
    """
    prior_cov = np.asarray(prior_cov, dtype=np.float64)
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    n = prior_cov.shape[0]
    if prior_cov.shape != (n, n) or H.shape[1] != n or R.shape != (H.shape[0], H.shape[0]):
        raise InvalidArgumentError(
            f"inconsistent shapes: prior_cov {prior_cov.shape}, H {H.shape}, R {R.shape}"
        )
    if not np.any(H):
        # no information: the posterior is the prior, without a round trip through its inverse
        spd_solve(R, np.eye(R.shape[0]))  # still reject a singular R
        return symmetrize(np.array(prior_cov))
    prior_precision = spd_solve(prior_cov, np.eye(n))
    info = symmetrize(prior_precision) + H.T @ spd_solve(R, H)
    post = spd_solve(symmetrize(info), np.eye(n))
    return symmetrize(post)
