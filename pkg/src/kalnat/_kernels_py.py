"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels`` extension;
selected automatically when the extension is not importable.
"""

import numpy as np


def scaled_gram(H, d):
    """H diag(d) H^T for an m x n matrix H and a length-n vector d."""
    return (H * d) @ H.T


def diag_downdate(d, HS, G, scale, floor):
    """Diagonal of diag(d) - scale * HS^T G, clamped at floor.

    ``HS`` is H diag(d) and ``G`` is S^-1 HS with S the innovation matrix,
    so the result is the diagonal of the gain-form posterior covariance
    restricted to a diagonal prior. The operation order matches the Full
    backend's ``prior - G^T HS`` term by term.
    """
    out = d - scale * np.einsum("ji,ji->i", G, HS)
    np.maximum(out, floor, out=out)
    return out


def pair_jacobian(Xi, Xt, Wi, Wt, Ai, Bi, At, Bt):
    """Diagonal cosine similarities of paired embeddings and their Jacobian.

    Embeddings are ``X (W + A B)`` per tower. The Jacobian columns follow
    the parameter layout vec(Ai), vec(Bi), vec(At), vec(Bt), row-major.
    Returns ``(y, J, ni, nt)`` where ``ni``/``nt`` are the embedding norms.
    """
    Pi = Wi + Ai @ Bi
    Pt = Wt + At @ Bt
    Ei = Xi @ Pi
    Et = Xt @ Pt
    ni = np.sqrt(np.einsum("ij,ij->i", Ei, Ei))
    nt = np.sqrt(np.einsum("ij,ij->i", Et, Et))
    dot = np.einsum("ij,ij->i", Ei, Et)
    inv = 1.0 / (ni * nt)
    y = dot * inv
    gi = Et * inv[:, None] - (y / (ni * ni))[:, None] * Ei
    gt = Ei * inv[:, None] - (y / (nt * nt))[:, None] * Et
    m = Xi.shape[0]
    blocks = (
        np.einsum("jp,jq->jpq", Xi, gi @ Bi.T).reshape(m, -1),
        np.einsum("jq,js->jqs", Xi @ Ai, gi).reshape(m, -1),
        np.einsum("jp,jq->jpq", Xt, gt @ Bt.T).reshape(m, -1),
        np.einsum("jq,js->jqs", Xt @ At, gt).reshape(m, -1),
    )
    return y, np.concatenate(blocks, axis=1), ni, nt
