"""Synthetic paired features standing in for frozen backbone outputs.

Each class c has a latent code z_c. Image and text features are linear
maps of the (per-tower) latent plus isotropic feature noise. The frozen
projections invert those maps except for a rank-``rank`` misalignment
per tower, so the zero-shot model retrieves poorly while a low-rank
adapter of the same rank can restore alignment exactly.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InvalidArgumentError
from ..obsmodel import Minibatch, TwoTowerModel

# spawn keys for independent random streams derived from one seed
STREAM_DATA = 0
STREAM_THETA = 1
STREAM_EPOCH = 2
STREAM_OOD_POSITIONS = 3
STREAM_CORRUPT = 4


def stream(seed, *key):
    """Independent generator for (seed, key...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


@dataclass(frozen=True)
class Split:
    image_feats: np.ndarray
    text_feats: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def batch(self, idx):
        return Minibatch(self.image_feats[idx], self.text_feats[idx], self.labels[idx])


@dataclass(frozen=True)
class SyntheticDataset:
    train: Split
    test: Split
    classes: int
    shots: int
    d_in: int
    frozen_image_proj: np.ndarray
    frozen_text_proj: np.ndarray
    # adapter factors that exactly cancel the misalignment
    oracle_factors: tuple
    seed: int

    def model(self, rank, tau):
        return TwoTowerModel(self.frozen_image_proj, self.frozen_text_proj, rank, tau)

    def oracle_theta(self):
        return np.concatenate([f.ravel() for f in self.oracle_factors])


def gen_synthetic_pairs(config):
    c = config
    if c.classes * c.shots < c.batch_size:
        raise ConfigError("not enough samples for one batch", field="batch_size")
    rng = stream(c.seed, STREAM_DATA)
    e, d, r = c.d_embed, c.d_in, c.rank
    Z_img = rng.standard_normal((c.classes, e))
    Z_txt = c.modal_corr * Z_img + np.sqrt(1.0 - c.modal_corr**2) * rng.standard_normal((c.classes, e))

    towers = []
    for Z in (Z_img, Z_txt):
        G = rng.standard_normal((e, d)) / np.sqrt(e)
        W = np.linalg.pinv(G)
        U = rng.standard_normal((d, r))
        V = rng.standard_normal((r, e))
        s = c.misalignment * np.linalg.norm(W) / np.sqrt(d * e)
        towers.append((Z @ G, W + s * U @ V, (-s * U, V)))

    def draw(per_class):
        labels = np.repeat(np.arange(c.classes), per_class)
        feats = [
            centroids[labels] + c.feature_noise * rng.standard_normal((labels.size, d))
            for centroids, _, _ in towers
        ]
        return Split(feats[0], feats[1], labels)

    train = draw(c.shots)
    test = draw(c.test_per_class)
    (_, Wi, (Ai, Bi)), (_, Wt, (At, Bt)) = towers
    return SyntheticDataset(train, test, c.classes, c.shots, d, Wi, Wt, (Ai, Bi, At, Bt), c.seed)


def _derangement(rng, m):
    if m < 2:
        return np.arange(m)
    while True:
        p = rng.permutation(m)
        if not np.any(p == np.arange(m)):
            return p


def corrupt_batch(batch, severity, mode="FeatureNoise", seed=0):
    """Out-of-distribution version of ``batch``; every row is flagged OOD.

    FeatureNoise adds N(0, (severity * std)^2) per entry, std being the
    standard deviation of that tower's batch features. ClusterShift moves
    all rows of a tower along one seeded unit direction by severity * std.
    LabelShuffle pairs each image row with another row's text.
    """
    if severity < 0:
        raise InvalidArgumentError(f"severity must be >= 0, got {severity}")
    rng = np.random.default_rng(seed)
    xi, xt = np.array(batch.image_feats), np.array(batch.text_feats)
    if mode == "FeatureNoise":
        xi = xi + severity * np.std(xi) * rng.standard_normal(xi.shape)
        xt = xt + severity * np.std(xt) * rng.standard_normal(xt.shape)
    elif mode == "ClusterShift":
        for X in (xi, xt):
            u = rng.standard_normal(X.shape[1])
            X += severity * np.std(X) * u / np.linalg.norm(u)
    elif mode == "LabelShuffle":
        xt = xt[_derangement(rng, batch.m)]
    else:
        raise InvalidArgumentError(f"unknown corruption mode {mode!r}")
    return Minibatch(xi, xt, batch.labels, np.ones(batch.m, dtype=bool))


def retrieval_accuracy(model, theta, split, batch_eval_size=512):
    """Fraction of images whose most cosine-similar text shares their label."""
    if len(split) == 0:
        raise InvalidArgumentError("test split is empty")
    Ei, Et = model.embed(split.image_feats, split.text_feats, theta)
    Ui = Ei / np.linalg.norm(Ei, axis=1, keepdims=True)
    Ut = Et / np.linalg.norm(Et, axis=1, keepdims=True)
    hits = 0
    for start in range(0, len(split), batch_eval_size):
        sims = Ui[start:start + batch_eval_size] @ Ut.T
        nearest = np.argmax(sims, axis=1)
        hits += int(np.sum(split.labels[nearest] == split.labels[start:start + batch_eval_size]))
    return hits / len(split)
