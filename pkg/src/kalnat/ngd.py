"""Natural-gradient view of the Kalman update, as executable checks.

With a Gaussian likelihood the loss is ``L = 1/2 (yhat - y)^T R^-1 (yhat - y)``
and the filter's gain-form update can be rewritten as

    Sigma_post^-1 = Sigma_prior^-1 + H^T R^-1 H
    mu_post       = mu_prior - Sigma_post grad L

so the mean step is a gradient step preconditioned by the accumulated
Gauss-Newton Fisher ``H^T R^-1 H`` plus the prior precision. The functions
here compute both sides independently so tests and the ``verify`` command
can measure how closely they agree.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .belief import (
    Backend,
    GaussianBelief,
    cholesky,
    cho_solve,
    spd_solve,
    symmetrize,
    woodbury_posterior_cov,
)
from .errors import InvalidArgumentError
from .kalman import update


class FisherKind(str, Enum):
    GAUSS_NEWTON = "GaussNewton"
    EMPIRICAL = "Empirical"


@dataclass(frozen=True)
class FisherEstimate:
    matrix: np.ndarray
    kind: FisherKind
    sample_count: int = 0


def loss_gradient(H, R, r):
    """Gradient of the Gaussian loss, H^T R^-1 (yhat - y) with r = y - yhat."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (H.shape[0],):
        raise InvalidArgumentError(f"residual length {r.shape} does not match H rows {H.shape[0]}")
    return H.T @ spd_solve(R, -r)


def gauss_newton_fisher(H, R):
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    return FisherEstimate(symmetrize(H.T @ spd_solve(R, H)), FisherKind.GAUSS_NEWTON)


def empirical_fisher(H, R, sample_count, seed=0, chunk_size=65536, residuals=None):
    """Monte-Carlo average of grad L grad L^T over residuals r ~ N(0, R).

    The seeded stream is split into fixed-size chunks with independent
    child generators, so the result does not depend on how chunks are
    scheduled. ``residuals`` (N x m) bypasses sampling.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    m, n = H.shape
    if int(sample_count) != sample_count or sample_count < 1:
        raise InvalidArgumentError(f"sample_count must be a positive integer, got {sample_count}")
    sample_count = int(sample_count)
    L = cholesky(R)
    # grad = -H^T R^-1 r; with r = L z this is -(H^T L^-T) z
    M = -(cho_solve(L, H).T @ L)

    acc = np.zeros((n, n))
    if residuals is not None:
        residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
        if residuals.shape != (sample_count, m):
            raise InvalidArgumentError(f"residuals must be {sample_count} x {m}")
        G = H.T @ cho_solve(L, -residuals.T)
        acc += G @ G.T
    else:
        n_chunks = -(-sample_count // chunk_size)
        children = np.random.SeedSequence(seed).spawn(n_chunks)
        for i, child in enumerate(children):
            size = min(chunk_size, sample_count - i * chunk_size)
            Z = np.random.default_rng(child).standard_normal((m, size))
            G = M @ Z
            acc += G @ G.T
    return FisherEstimate(symmetrize(acc / sample_count), FisherKind.EMPIRICAL, sample_count)


def natural_gradient_step(mu, post_cov, grad):
    """mu - Sigma grad; ``post_cov`` may be a matrix or a vector of variances."""
    mu = np.asarray(mu, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    post_cov = np.asarray(post_cov, dtype=np.float64)
    if mu.shape != grad.shape:
        raise InvalidArgumentError(f"mu {mu.shape} and grad {grad.shape} differ")
    if post_cov.ndim == 1:
        return mu - post_cov * grad
    return mu - post_cov @ grad


def _rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


@dataclass(frozen=True)
class UpdateFormsReport:
    """Agreement between gain-form and precision-form updates.

    ``prior_term_ratio`` is ||Sigma_prior^-1||_F / ||H^T R^-1 H||_F: how far
    the preconditioner is from the bare Fisher. ``rounding_bound`` is
    eps * max(cond R, cond Sigma_prior), the first-order size of rounding
    error either path can carry; when it exceeds the tolerance the check
    cannot certify agreement and the report is flagged.
    """

    mean_deviation: float
    cov_deviation: float
    fisher_deviation: float
    prior_term_ratio: float
    tolerance: float
    rounding_bound: float = 0.0

    @property
    def max_deviation(self):
        return max(self.mean_deviation, self.cov_deviation)

    @property
    def ok(self):
        return max(self.max_deviation, self.rounding_bound) <= self.tolerance


def verify_update_forms(prior, H, R, r, tol=1e-8):
    """Compute the posterior both ways and report relative deviations.

    Ill-conditioned inputs are reported (flagged via ``ok``), not raised;
    a matrix that is not positive definite raises SingularMatrixError.
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    prior_cov = prior.cov_matrix()
    n = prior.n
    post = update(prior, H, r, R, 1.0)
    cov_gain = post.cov_matrix()
    cov_info = woodbury_posterior_cov(prior_cov, H, R)
    mean_info = natural_gradient_step(prior.mean, cov_info, loss_gradient(H, R, r))
    fisher = gauss_newton_fisher(H, R).matrix
    prior_prec = spd_solve(prior_cov, np.eye(n))
    inc = spd_solve(cov_gain, np.eye(n)) - prior_prec

    fnorm = np.linalg.norm(fisher)
    if fnorm == 0.0:
        fisher_dev = float(np.linalg.norm(inc) / max(np.linalg.norm(prior_prec), 1.0))
        ratio = float("inf")
    else:
        fisher_dev = float(np.linalg.norm(inc - fisher) / fnorm)
        ratio = float(np.linalg.norm(prior_prec) / fnorm)
    bound = float(np.finfo(float).eps * max(np.linalg.cond(R), np.linalg.cond(prior_cov)))
    return UpdateFormsReport(
        _rel(post.mean, mean_info), _rel(cov_gain, cov_info), fisher_dev, ratio, tol, bound
    )


# name used by the interface contract
verify_lemma1 = verify_update_forms

def fisher_increment_deviation(prior, H, R):
    """Relative Frobenius gap between Sigma_post^-1 - Sigma_prior^-1 and H^T R^-1 H."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    m = H.shape[0]
    post = update(prior, H, np.zeros(m), R, 1.0)
    n = prior.n
    inc = spd_solve(post.cov_matrix(), np.eye(n)) - spd_solve(prior.cov_matrix(), np.eye(n))
    fisher = gauss_newton_fisher(H, R).matrix
    return float(np.linalg.norm(inc - fisher) / np.linalg.norm(fisher))


def random_spd(rng, k, cond):
    """Random k x k SPD matrix with condition number exactly ``cond``."""
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    if k == 1:
        eig = np.array([1.0])
    else:
        eig = np.geomspace(1.0, cond, k)
    return symmetrize((Q * eig) @ Q.T)


def random_instance(rng, n_max=16, m_max=4, cond_max=1e4):
    """A random (prior, H, R, r) with n <= n_max, m <= m_max, cond <= cond_max."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    cond_prior = float(10 ** rng.uniform(0, np.log10(cond_max)))
    cond_R = float(10 ** rng.uniform(0, np.log10(cond_max)))
    prior = GaussianBelief(
        rng.standard_normal(n), random_spd(rng, n, cond_prior), Backend.FULL, 0
    )
    H = rng.standard_normal((m, n))
    R = random_spd(rng, m, cond_R) * float(10 ** rng.uniform(-1, 1))
    r = rng.standard_normal(m)
    return prior, H, R, r


@dataclass(frozen=True)
class SuiteReport:
    instances: int
    max_mean_deviation: float
    max_cov_deviation: float
    max_fisher_increment_deviation: float
    # {sample_count: max relative Frobenius gap of the empirical Fisher}
    empirical_fisher_deviation: dict

    def passed(self, tol_identity=1e-8, tol_fisher=1e-7, tol_empirical=None):
        tol_empirical = tol_empirical or {}
        ok = max(self.max_mean_deviation, self.max_cov_deviation) <= tol_identity
        ok = ok and self.max_fisher_increment_deviation <= tol_fisher
        for count, dev in self.empirical_fisher_deviation.items():
            if count in tol_empirical:
                ok = ok and dev <= tol_empirical[count]
        return ok

    def format(self):
        lines = [
            f"instances: {self.instances}",
            f"max mean deviation: {self.max_mean_deviation:.3e}",
            f"max covariance deviation: {self.max_cov_deviation:.3e}",
            f"max Fisher increment deviation: {self.max_fisher_increment_deviation:.3e}",
        ]
        for count, dev in sorted(self.empirical_fisher_deviation.items()):
            lines.append(f"max empirical Fisher deviation at {count} samples: {dev:.3e}")
        return "\n".join(lines)


def verify_suite(instances=200, seed=0, fisher_samples=(100_000,), fisher_instances=None):
    """Run the identity checks on random instances and keep the worst case.

    ``fisher_instances`` limits the (costly) empirical-Fisher comparison to
    the first that many instances; None means all of them.
    """
    rng = np.random.default_rng(seed)
    cases = [random_instance(rng) for _ in range(instances)]
    mean_dev = cov_dev = inc_dev = 0.0
    for prior, H, R, r in cases:
        rep = verify_update_forms(prior, H, R, r)
        mean_dev = max(mean_dev, rep.mean_deviation)
        cov_dev = max(cov_dev, rep.cov_deviation)
        inc_dev = max(inc_dev, rep.fisher_deviation)
    limit = len(cases) if fisher_instances is None else min(fisher_instances, len(cases))
    emp = {}
    for count in fisher_samples:
        worst = 0.0
        for i, (_, H, R, _) in enumerate(cases[:limit]):
            est = empirical_fisher(H, R, count, seed=seed + i)
            ref = gauss_newton_fisher(H, R).matrix
            worst = max(worst, float(np.linalg.norm(est.matrix - ref) / np.linalg.norm(ref)))
        emp[int(count)] = worst
    return SuiteReport(instances, mean_dev, cov_dev, inc_dev, emp)
