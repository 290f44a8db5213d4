"""Two-tower contrastive observation model with low-rank adapters.

The filter observes ``yhat = diag(S_C(I, T))``: the cosine similarity of
each matched image/text pair in a minibatch, with target vector of ones.
The temperature only enters the contrastive evaluation loss.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .errors import DegenerateInputError, InvalidArgumentError


@dataclass(frozen=True)
class Minibatch:
    """m paired feature rows with class labels and an OOD flag per row."""

    image_feats: np.ndarray
    text_feats: np.ndarray
    labels: np.ndarray
    ood: np.ndarray = None

    def __post_init__(self):
        xi = np.ascontiguousarray(self.image_feats, dtype=np.float64)
        xt = np.ascontiguousarray(self.text_feats, dtype=np.float64)
        if xi.ndim != 2 or xi.shape != xt.shape or xi.shape[0] < 1:
            raise InvalidArgumentError(
                f"feature matrices must be matching m x d_in, got {xi.shape} and {xt.shape}"
            )
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (xi.shape[0],):
            raise InvalidArgumentError("labels must have one entry per pair")
        ood = np.zeros(xi.shape[0], dtype=bool) if self.ood is None else np.asarray(self.ood, dtype=bool)
        if ood.shape != labels.shape:
            raise InvalidArgumentError("ood flags must have one entry per pair")
        for name, X in (("image", xi), ("text", xt)):
            zero = np.flatnonzero(~np.any(X, axis=1))
            if zero.size:
                raise DegenerateInputError(f"{name} feature row {zero[0]} is the zero vector", row=int(zero[0]))
        for name, a in (("image_feats", xi), ("text_feats", xt), ("labels", labels), ("ood", ood)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def m(self):
        return self.image_feats.shape[0]

    @property
    def ood_fraction(self):
        return float(np.mean(self.ood))


@dataclass(frozen=True)
class TwoTowerModel:
    """Frozen linear projections per tower, perturbed by low-rank adapters.

    Tower embedding: ``x @ (W + A @ B)`` with ``A`` of shape (d_in, rank)
    and ``B`` of shape (rank, d_embed). The trainable vector is
    ``theta = [vec(A_img), vec(B_img), vec(A_txt), vec(B_txt)]``.
    """

    frozen_image_proj: np.ndarray
    frozen_text_proj: np.ndarray
    rank: int = 2
    tau: float = 0.07

    def __post_init__(self):
        wi = np.ascontiguousarray(self.frozen_image_proj, dtype=np.float64)
        wt = np.ascontiguousarray(self.frozen_text_proj, dtype=np.float64)
        if wi.ndim != 2 or wi.shape != wt.shape:
            raise InvalidArgumentError("frozen projections must both be d_in x d_embed")
        if self.rank < 1:
            raise InvalidArgumentError("adapter rank must be >= 1")
        if not self.tau > 0:
            raise InvalidArgumentError("temperature must be positive")
        wi.flags.writeable = False
        wt.flags.writeable = False
        object.__setattr__(self, "frozen_image_proj", wi)
        object.__setattr__(self, "frozen_text_proj", wt)

    @classmethod
    def random(cls, d_in=32, d_embed=16, rank=2, tau=0.07, rng=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / np.sqrt(d_in)
        return cls(
            rng.normal(0.0, scale, (d_in, d_embed)),
            rng.normal(0.0, scale, (d_in, d_embed)),
            rank,
            tau,
        )

    @property
    def d_in(self):
        return self.frozen_image_proj.shape[0]

    @property
    def d_embed(self):
        return self.frozen_image_proj.shape[1]

    @property
    def n(self):
        return 2 * self.rank * (self.d_in + self.d_embed)

    def unpack(self, theta):
        """Split theta into (A_img, B_img, A_txt, B_txt)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n,):
            raise InvalidArgumentError(f"theta must have length {self.n}, got shape {theta.shape}")
        r, d, e = self.rank, self.d_in, self.d_embed
        sizes = [d * r, r * e, d * r, r * e]
        shapes = [(d, r), (r, e), (d, r), (r, e)]
        out, start = [], 0
        for size, shape in zip(sizes, shapes):
            out.append(np.ascontiguousarray(theta[start:start + size].reshape(shape)))
            start += size
        return tuple(out)

    def init_theta(self, rng=None, scale=0.01):
        """Adapter start point: A ~ N(0, scale^2), B = 0 (zero perturbation)."""
        rng = np.random.default_rng(rng)
        r, d, e = self.rank, self.d_in, self.d_embed
        return np.concatenate([
            rng.normal(0.0, scale, d * r), np.zeros(r * e),
            rng.normal(0.0, scale, d * r), np.zeros(r * e),
        ])

    def projections(self, theta):
        Ai, Bi, At, Bt = self.unpack(theta)
        return self.frozen_image_proj + Ai @ Bi, self.frozen_text_proj + At @ Bt

    def embed(self, image_feats, text_feats, theta):
        Pi, Pt = self.projections(theta)
        return np.asarray(image_feats) @ Pi, np.asarray(text_feats) @ Pt

    def output(self, batch, theta):
        return self.output_and_jacobian(batch, theta)[0]

    def jacobian(self, batch, theta):
        return self.output_and_jacobian(batch, theta)[1]

    def output_and_jacobian(self, batch, theta):
        """Return ``(yhat, H)`` evaluated at ``theta`` in one pass."""
        Ai, Bi, At, Bt = self.unpack(theta)
        self._check_dims(batch)
        with np.errstate(divide="ignore", invalid="ignore"):
            y, J, ni, nt = _backend.kernels.pair_jacobian(
                batch.image_feats, batch.text_feats,
                self.frozen_image_proj, self.frozen_text_proj, Ai, Bi, At, Bt,
            )
        _check_norms(ni, "image")
        _check_norms(nt, "text")
        return np.asarray(y), np.asarray(J)

    def _check_dims(self, batch):
        if batch.image_feats.shape[1] != self.d_in:
            raise InvalidArgumentError(
                f"batch feature dimension {batch.image_feats.shape[1]} != model d_in {self.d_in}"
            )


def _check_norms(norms, tower):
    bad = np.flatnonzero(~(norms > 0))
    if bad.size:
        raise DegenerateInputError(f"{tower} embedding row {bad[0]} has zero norm", row=int(bad[0]))


def _normalize_rows(X, name):
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    _check_norms(norms, name)
    return X / norms[:, None]


def cosine_similarity_matrix(I, T):
    """Entry (i, j) is the cosine between row i of ``I`` and row j of ``T``."""
    S = _normalize_rows(np.atleast_2d(I), "image") @ _normalize_rows(np.atleast_2d(T), "text").T
    return np.clip(S, -1.0, 1.0)


def model_output(model, batch, theta):
    """Diagonal of the pair cosine-similarity matrix: one value per pair."""
    return model.output(batch, theta)


def jacobian(model, batch, theta):
    """Analytic m x n Jacobian of :func:`model_output` w.r.t. theta."""
    return model.jacobian(batch, theta)


def target_output(m):
    """The observation target: a vector of m ones."""
    if int(m) != m or m < 1:
        raise InvalidArgumentError(f"batch size must be a positive integer, got {m}")
    return np.ones(int(m))


def jacobian_fd(model, batch, theta, h=1e-5):
    """Central-difference Jacobian of ``model.output`` (verification oracle).

    Works for any object exposing ``output(batch, theta) -> vector``.
    """
    if not h > 0:
        raise InvalidArgumentError(f"finite-difference step must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64)
    cols = []
    for j in range(theta.shape[0]):
        saved = theta[j]
        theta[j] = saved + h
        plus = np.asarray(model.output(batch, theta))
        theta[j] = saved - h
        minus = np.asarray(model.output(batch, theta))
        theta[j] = saved
        cols.append((plus - minus) / (2.0 * h))
    return np.stack(cols, axis=1)


def clip_loss(S, tau):
    """Symmetric InfoNCE over a similarity matrix, averaged by 1/m.

    Row and column log-softmaxes are computed with log-sum-exp, so large
    ``S / tau`` stays finite.
    """
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {tau}")
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if not np.all(np.isfinite(S)):
        raise InvalidArgumentError("similarity matrix has non-finite entries")
    Z = S / tau
    diag = np.diagonal(Z)
    rows = diag - logsumexp(Z, axis=1)
    cols = diag - logsumexp(Z, axis=0)
    m = S.shape[0]
    return max(0.0, float(-(rows.sum() + cols.sum()) / m))


def clip_loss_grad_similarity(S, tau):
    """dL/dS for :func:`clip_loss`."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    m = S.shape[0]
    Z = S / tau
    P_row = np.exp(Z - logsumexp(Z, axis=1, keepdims=True))
    P_col = np.exp(Z - logsumexp(Z, axis=0, keepdims=True))
    G = (P_row + P_col - 2.0 * np.eye(m)) / (m * tau)
    return G


def batch_loss(model, batch, theta):
    """Contrastive loss of a minibatch at ``theta``."""
    Ei, Et = model.embed(batch.image_feats, batch.text_feats, theta)
    return clip_loss(cosine_similarity_matrix(Ei, Et), model.tau)


def clip_loss_gradient(model, batch, theta):
    """Gradient of the contrastive loss with respect to theta."""
    Ai, Bi, At, Bt = model.unpack(theta)
    Xi, Xt = batch.image_feats, batch.text_feats
    Ei, Et = model.embed(Xi, Xt, theta)
    ni = np.linalg.norm(Ei, axis=1)
    nt = np.linalg.norm(Et, axis=1)
    _check_norms(ni, "image")
    _check_norms(nt, "text")
    Ui, Ut = Ei / ni[:, None], Et / nt[:, None]
    G = clip_loss_grad_similarity(Ui @ Ut.T, model.tau)
    dUi, dUt = G @ Ut, G.T @ Ui
    # back through row normalization
    dEi = (dUi - np.sum(dUi * Ui, axis=1, keepdims=True) * Ui) / ni[:, None]
    dEt = (dUt - np.sum(dUt * Ut, axis=1, keepdims=True) * Ut) / nt[:, None]
    return np.concatenate([
        (Xi.T @ (dEi @ Bi.T)).ravel(), ((Xi @ Ai).T @ dEi).ravel(),
        (Xt.T @ (dEt @ Bt.T)).ravel(), ((Xt @ At).T @ dEt).ravel(),
    ])
