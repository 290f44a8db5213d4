"""Observation-noise adaptation and minibatch down-weighting.

R is tracked as an exponential moving average of per-batch residual
covariance estimates. Each batch is scored by the Mahalanobis distance of
its residual under the previous R, and that score is turned into a
regulation factor ``lambda = exp(-alpha * d_M)`` in (0, 1].
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .belief import spd_solve, symmetrize
from .errors import InvalidArgumentError


_TINY = np.finfo(np.float64).tiny


class RhatMethod(str, Enum):
    ZEROTH_ORDER = "ZerothOrder"
    FIRST_ORDER = "FirstOrder"


class LambdaScope(str, Enum):
    ALG1 = "Alg1"  # lambda scales the mean step and the R update
    TEXT_IVD = "TextIVD"  # additionally scales the covariance contraction


def parse_enum(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    for member in enum_cls:
        if str(value).lower() in (member.value.lower(), member.name.lower()):
            return member
    choices = ", ".join(m.value for m in enum_cls)
    raise InvalidArgumentError(f"unknown {enum_cls.__name__} {value!r} (expected one of {choices})")


@dataclass(frozen=True)
class NoiseState:
    R: np.ndarray
    beta: float = 0.98
    epsilon: float = 1e-3
    method: RhatMethod = RhatMethod.FIRST_ORDER

    def __post_init__(self):
        R = np.array(np.atleast_2d(self.R), dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise InvalidArgumentError(f"R must be square, got {R.shape}")
        if not 0.0 < self.beta < 1.0:
            raise InvalidArgumentError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")
        R.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "method", parse_enum(RhatMethod, self.method))

    @classmethod
    def initial(cls, m, beta=0.98, epsilon=1e-3, method=RhatMethod.FIRST_ORDER):
        """R_0 = 0 + epsilon I."""
        if int(m) != m or m < 1:
            raise InvalidArgumentError(f"batch size must be a positive integer, got {m}")
        return cls(epsilon * np.eye(int(m)), beta, epsilon, method)

    @property
    def m(self):
        return self.R.shape[0]


@dataclass(frozen=True)
class RobustConfig:
    alpha: float = 0.1
    lambda_scope: LambdaScope = LambdaScope.ALG1

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise InvalidArgumentError(f"alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "lambda_scope", parse_enum(LambdaScope, self.lambda_scope))


def residual(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise InvalidArgumentError(f"length mismatch: {y.shape} vs {yhat.shape}")
    return y - yhat


def rhat_method1(r):
    """Zeroth-order residual covariance estimate r r^T."""
    r = np.asarray(r, dtype=np.float64)
    return np.outer(r, r)


def projected_cov(H, prior_cov):
    """H Sigma H^T for either covariance representation."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    prior_cov = np.asarray(prior_cov, dtype=np.float64)
    if prior_cov.ndim == 1:
        if prior_cov.shape[0] != H.shape[1]:
            raise InvalidArgumentError(f"H has {H.shape[1]} columns, covariance has {prior_cov.shape[0]}")
        return (H * prior_cov) @ H.T
    if prior_cov.shape != (H.shape[1], H.shape[1]):
        raise InvalidArgumentError(f"H is {H.shape}, covariance is {prior_cov.shape}")
    return H @ prior_cov @ H.T


def rhat_method2(r, H, prior_cov, HSH=None):
    """First-order estimate r r^T + H Sigma H^T.

    Pass ``HSH`` when the projected covariance is already available from the
    gain computation; it is then reused rather than recomputed.
    """
    r = np.asarray(r, dtype=np.float64)
    if HSH is None:
        HSH = projected_cov(H, prior_cov)
    if HSH.shape != (r.shape[0], r.shape[0]):
        raise InvalidArgumentError(f"residual length {r.shape[0]} does not match H with {HSH.shape[0]} rows")
    return np.outer(r, r) + HSH


def mahalanobis(r, R_prev):
    """sqrt(r^T R_prev^-1 r) via a Cholesky solve."""
    r = np.asarray(r, dtype=np.float64)
    q = float(r @ spd_solve(R_prev, r))
    return float(np.sqrt(max(q, 0.0)))


def regulation(d_M, alpha):
    """exp(-alpha * d_M); 1 when either argument is zero.

    Clamped at the smallest normal double so the result never underflows
    to exactly zero.
    """
    if d_M < 0 or alpha < 0:
        raise InvalidArgumentError(f"d_M and alpha must be nonnegative, got {d_M}, {alpha}")
    return max(float(np.exp(-alpha * d_M)), _TINY)


def floor_spd(R, epsilon):
    """Project a symmetric matrix onto {R : R >= epsilon I} by eigenvalue clamping.

    Matrices already above the floor are returned untouched so that no
    rounding is introduced on the common path.
    """
    w, V = np.linalg.eigh(R)
    if w[0] >= epsilon:
        return R
    return symmetrize((V * np.maximum(w, epsilon)) @ V.T)


def ema_update(state, rhat, lam=1.0):
    """R <- beta R + lam (1 - beta) rhat, symmetrized and floored at epsilon I."""
    if not 0.0 < lam <= 1.0:
        raise InvalidArgumentError(f"lambda must lie in (0, 1], got {lam}")
    rhat = np.asarray(rhat, dtype=np.float64)
    if rhat.shape != state.R.shape:
        raise InvalidArgumentError(f"rhat shape {rhat.shape} does not match R {state.R.shape}")
    R = state.beta * state.R + lam * (1.0 - state.beta) * rhat
    R = floor_spd(symmetrize(R), state.epsilon)
    return NoiseState(R, state.beta, state.epsilon, state.method)
