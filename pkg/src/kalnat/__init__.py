"""Kalman-filter training as natural-gradient descent, with OOD-robust noise adaptation."""

from ._backend import HAVE_COMPILED, use_kernels
from .belief import (
    Backend,
    GaussianBelief,
    ProcessNoise,
    cholesky,
    init_belief,
    spd_solve,
    symmetrize,
    woodbury_posterior_cov,
)
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DegenerateInputError,
    InvalidArgumentError,
    SingularMatrixError,
)
from .kalman import KalmanOptimizer, StepReport, diag_step, filter_step, gain, predict, step, update
from .ngd import (
    FisherEstimate,
    FisherKind,
    empirical_fisher,
    gauss_newton_fisher,
    loss_gradient,
    natural_gradient_step,
    verify_update_forms,
    verify_suite,
)
from .obsmodel import (
    Minibatch,
    TwoTowerModel,
    clip_loss,
    cosine_similarity_matrix,
    jacobian,
    jacobian_fd,
    model_output,
    target_output,
)
from .robust import (
    LambdaScope,
    NoiseState,
    RhatMethod,
    RobustConfig,
    ema_update,
    mahalanobis,
    regulation,
    residual,
    rhat_method1,
    rhat_method2,
)

__version__ = "0.1.0"

__all__ = [
    "HAVE_COMPILED",
    "use_kernels",
    "Backend",
    "GaussianBelief",
    "ProcessNoise",
    "cholesky",
    "init_belief",
    "spd_solve",
    "symmetrize",
    "woodbury_posterior_cov",
    "CheckpointFormatError",
    "ConfigError",
    "DegenerateInputError",
    "InvalidArgumentError",
    "SingularMatrixError",
    "KalmanOptimizer",
    "StepReport",
    "diag_step",
    "filter_step",
    "gain",
    "predict",
    "step",
    "update",
    "FisherEstimate",
    "FisherKind",
    "empirical_fisher",
    "gauss_newton_fisher",
    "loss_gradient",
    "natural_gradient_step",
    "verify_update_forms",
    "verify_suite",
    "Minibatch",
    "TwoTowerModel",
    "clip_loss",
    "cosine_similarity_matrix",
    "jacobian",
    "jacobian_fd",
    "model_output",
    "target_output",
    "LambdaScope",
    "NoiseState",
    "RhatMethod",
    "RobustConfig",
    "ema_update",
    "mahalanobis",
    "regulation",
    "residual",
    "rhat_method1",
    "rhat_method2",
]
