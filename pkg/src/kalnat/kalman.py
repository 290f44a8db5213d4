"""Kalman-filter optimizer over the adapter parameters.

One optimizer step runs prediction, pre-updating (model output, Jacobian,
Mahalanobis score, regulation, R adaptation) and updating (gain, mean and
covariance). The Jacobian is always evaluated at the predicted mean.

Two covariance backends share the same step contract:

* ``Full`` keeps the dense n x n covariance; per-step cost O(m n^2).
* ``Diagonal`` keeps n variances; per-step cost O(m^2 n + m^3).
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .belief import (
    COV_FLOOR,
    Backend,
    GaussianBelief,
    ProcessNoise,
    cho_solve_wide,
    cholesky,
    floor_diagonal,
    init_belief,
    symmetrize,
)
from .errors import InvalidArgumentError
from .obsmodel import clip_loss, cosine_similarity_matrix, target_output
from .robust import (
    LambdaScope,
    NoiseState,
    RhatMethod,
    RobustConfig,
    ema_update,
    mahalanobis,
    parse_enum,
    regulation,
    residual,
    rhat_method1,
    rhat_method2,
)


@dataclass(frozen=True)
class StepReport:
    step: int
    loss: float
    residual_norm: float
    d_M: float
    lam: float
    r_trace: float
    step_norm: float
    ood_fraction: float

    @property
    def ood_flag(self):
        return int(self.ood_fraction > 0)


@dataclass(frozen=True)
class KalmanOptimizer:
    belief: GaussianBelief
    noise: NoiseState
    process: ProcessNoise
    robust: RobustConfig

    def __post_init__(self):
        if self.belief.backend is Backend.FULL and self.belief.cov.ndim != 2:
            raise InvalidArgumentError("Full backend requires a matrix covariance")

    @classmethod
    def create(
        cls,
        theta0,
        m,
        *,
        sigma0=1.0,
        backend=Backend.FULL,
        q=1e-4,
        alpha=0.1,
        beta=0.98,
        epsilon=1e-3,
        rhat_method=RhatMethod.FIRST_ORDER,
        lambda_scope=LambdaScope.ALG1,
    ):
        """Optimizer with prior N(theta0, sigma0 I) and R_0 = epsilon I."""
        theta0 = np.asarray(theta0, dtype=np.float64)
        belief = init_belief(theta0.shape[0], sigma0, backend).replace(mean=theta0)
        return cls(
            belief,
            NoiseState.initial(m, beta, epsilon, rhat_method),
            ProcessNoise(q),
            RobustConfig(alpha, lambda_scope),
        )

    @property
    def mean(self):
        return self.belief.mean

    @property
    def n(self):
        return self.belief.n

    @property
    def m(self):
        return self.noise.m


def predict(belief, process):
    """Prior for the next step: mean unchanged, covariance inflated by q I."""
    q = process.q if isinstance(process, ProcessNoise) else float(process)
    if q == 0.0:
        return belief
    if belief.backend is Backend.DIAGONAL:
        return belief.replace(cov=belief.cov + q)
    cov = np.array(belief.cov)
    np.einsum("ii->i", cov)[...] += q
    cov.flags.writeable = False
    return belief.replace(cov=cov)


def project(prior, H):
    """(H Sigma, H Sigma H^T) for the prior covariance, computed once per step.

    The Diagonal backend never needs the m x n product, so it returns None
    in its place.
    """
    H = np.ascontiguousarray(np.atleast_2d(H), dtype=np.float64)
    if H.shape[1] != prior.n:
        raise InvalidArgumentError(f"H has {H.shape[1]} columns, belief has n={prior.n}")
    if prior.backend is Backend.DIAGONAL:
        HS = None
        HSH = _backend.kernels.scaled_gram(H, prior.cov)
    else:
        HS = H @ prior.cov
        HSH = HS @ H.T
    return HS, symmetrize(np.asarray(HSH))


def gain(prior, H, R):
    """Kalman gain Sigma H^T (H Sigma H^T + R)^-1 as an n x m matrix.

    Only the m x m innovation matrix is factorized.
    """
    HS, HSH = project(prior, H)
    if HS is None:
        HS = H * prior.cov
    L = cholesky(_innovation(HSH, R))
    return cho_solve_wide(L, HS).T


def _innovation(HSH, R):
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if R.shape != HSH.shape:
        raise InvalidArgumentError(f"R is {R.shape}, expected {HSH.shape}")
    return symmetrize(HSH + R)


def update(prior, H, r, R, lam=1.0, lambda_scope=LambdaScope.ALG1, *, projected=None):
    """Posterior belief after observing residual ``r`` with Jacobian ``H``.

    ``mean += lam K r``; ``cov -= K H Sigma``, scaled by ``lam`` as well
    when ``lambda_scope`` is TextIVD. The step counter advances by one.
    """
    if not 0.0 < lam <= 1.0:
        raise InvalidArgumentError(f"lambda must lie in (0, 1], got {lam}")
    H = np.ascontiguousarray(np.atleast_2d(H), dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (H.shape[0],):
        raise InvalidArgumentError(f"residual length {r.shape} does not match H rows {H.shape[0]}")
    HS, HSH = projected if projected is not None else project(prior, H)
    L = cholesky(_innovation(HSH, R))
    cov_scale = lam if _parse_scope(lambda_scope) is LambdaScope.TEXT_IVD else 1.0

    if prior.backend is Backend.DIAGONAL:
        if HS is None:
            HS = H * prior.cov
        G = cho_solve_wide(L, HS)  # K^T
        mean = prior.mean + lam * (G.T @ r)
        cov = np.asarray(_backend.kernels.diag_downdate(prior.cov, HS, G, cov_scale, COV_FLOOR))
    else:
        G = cho_solve_wide(L, HS)  # K^T
        mean = prior.mean + lam * (G.T @ r)
        cov = G.T @ HS
        cov *= -cov_scale
        cov += prior.cov
        cov = floor_diagonal(symmetrize(cov))
    # hand ownership to the belief without a second copy of cov
    mean.flags.writeable = False
    cov.flags.writeable = False
    return GaussianBelief(mean, cov, prior.backend, prior.step + 1)


def _parse_scope(scope):
    return parse_enum(LambdaScope, scope)


def step(opt, model, batch):
    """One full filter step on a minibatch. Returns ``(new_opt, report)``.

    The input optimizer is never modified; if any factorization fails the
    exception propagates and the caller still holds the previous state.
    """
    if batch.m != opt.m:
        raise InvalidArgumentError(f"batch size {batch.m} does not match R of size {opt.m}")
    prior = predict(opt.belief, opt.process)
    yhat, H = model.output_and_jacobian(batch, prior.mean)
    r = residual(target_output(batch.m), yhat)

    d_M = mahalanobis(r, opt.noise.R)
    lam = regulation(d_M, opt.robust.alpha)

    projected = project(prior, H)
    if opt.noise.method is RhatMethod.FIRST_ORDER:
        rhat = rhat_method2(r, H, None, HSH=projected[1])
    else:
        rhat = rhat_method1(r)
    noise = ema_update(opt.noise, rhat, lam)

    post = update(prior, H, r, noise.R, lam, opt.robust.lambda_scope, projected=projected)

    Ei, Et = model.embed(batch.image_feats, batch.text_feats, prior.mean)
    loss = clip_loss(cosine_similarity_matrix(Ei, Et), model.tau)
    report = StepReport(
        step=post.step,
        loss=loss,
        residual_norm=float(np.linalg.norm(r)),
        d_M=d_M,
        lam=lam,
        r_trace=float(np.trace(noise.R)),
        step_norm=float(np.linalg.norm(post.mean - prior.mean)),
        ood_fraction=batch.ood_fraction,
    )
    return KalmanOptimizer(post, noise, opt.process, opt.robust), report


def diag_step(opt, model, batch):
    """:func:`step` for an optimizer holding a Diagonal covariance."""
    if opt.belief.backend is not Backend.DIAGONAL:
        raise InvalidArgumentError("diag_step requires the Diagonal backend")
    return step(opt, model, batch)


def filter_step(belief, H, r, R, q=0.0, lam=1.0, lambda_scope=LambdaScope.ALG1):
    """Predict + update with a given Jacobian and residual.

    The model-free core of :func:`step`, used by the backend benchmark.
    """
    prior = predict(belief, ProcessNoise(q))
    return update(prior, H, r, R, lam, lambda_scope)
