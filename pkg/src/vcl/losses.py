"""Loss terms for robust variational contrastive learning.

The contrastive term replaces cosine similarity with a bounded
similarity derived from the beta divergence between Gaussians centered
at the two embeddings. For squared distance d between embeddings and a
fixed bandwidth sigma0,

    beta_dist(d) = -((beta + 1) / beta) * ((2 pi sigma0^2)^(-beta/2)
                                           * exp(-beta d / (2 sigma0^2)) - 1)

which is a dissimilarity: it grows with d but saturates at
(beta + 1) / beta, so a far-away (likely outlier) negative stops pushing
once it has left the neighborhood. As beta -> 0 it converges, up to an
additive constant, to the unbounded quantity d / (2 sigma0^2)
+ 0.5 log(2 pi sigma0^2), recovering the usual log-density geometry.

Inside the softmax the similarity enters negated by default (larger
means closer, matching the cosine convention); ``sign_mode="literal"``
keeps the raw dissimilarity sign for side-by-side comparison.

Two regularizers act on the Gaussian head outputs: ``dist_similarity``
pulls the paired-view distributions together (a symmetrized divergence
through the mixture midpoint), and ``dist_normalizing`` is the KL to a
standard normal, keeping the latent space from collapsing or drifting.

Everything that participates in training returns autograd Tensors;
scalar reference helpers (``beta_dist_at``, ``kl_gaussian``,
``alpha_log``) compute in float64 and return plain floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vcl import kernels
from vcl.autograd import (DomainError, ShapeError, Tensor, _accum, add, div,
                          exp, expm1, gather_rows, log, matmul, mul,
                          pow_scalar, reshape, scale, sub, tmean, transpose,
                          tsum)
from vcl.model import GaussianParams

SIGN_MODES = ("negated", "literal")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    beta: float = 0.005
    sigma0: float = 0.5
    lambda_dist: float = 1.0
    lambda_norm: float = 1.0
    sign_mode: str = "negated"
    distance: str = "sq_euclidean"
    normalize_z: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.sigma0 <= 0:
            raise ValueError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.lambda_dist < 0 or self.lambda_norm < 0:
            raise ValueError("loss weights must be >= 0")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}, "
                             f"got {self.sign_mode!r}")
        if self.distance != "sq_euclidean":
            raise ValueError(f"unsupported distance {self.distance!r}")


@dataclass(frozen=True)
class LossBreakdown:
    l_beta: float
    l_dist: float
    l_norm: float
    total: float


# ---------------------------------------------------------------------------
# scalar reference forms (float64, no tape)

def beta_dist_at(d: float, cfg: LossConfig) -> float:
    """Beta dissimilarity as a function of squared distance d.

    Uses expm1 so the tiny-beta regime keeps full relative precision:
    the bracket is exp(u) - 1 with u = -(beta/2) log(2 pi sigma0^2)
    - beta d / (2 sigma0^2), which underflows to 0 - 1e-3 territory for
    beta near 1e-6 and would lose digits to cancellation otherwise.
    """
    if d < 0:
        raise DomainError(f"squared distance must be >= 0, got {d}")
    b = float(cfg.beta)
    s2 = float(cfg.sigma0) ** 2
    u = -(b / 2.0) * math.log(2.0 * math.pi * s2) - b * d / (2.0 * s2)
    return -((b + 1.0) / b) * math.expm1(u)


def beta_dist(z_i, z_j, cfg: LossConfig) -> float:
    """Beta dissimilarity between two embedding vectors."""
    a = np.asarray(z_i, dtype=np.float64).reshape(-1)
    b = np.asarray(z_j, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    d = float(np.sum((a - b) ** 2))
    return beta_dist_at(d, cfg)


def kl_gaussian(mu_q, sigma_q, mu_p, sigma_p) -> float:
    """KL(q || p) between diagonal Gaussians, summed over dimensions."""
    mq = np.asarray(mu_q, dtype=np.float64).reshape(-1)
    sq = np.asarray(sigma_q, dtype=np.float64).reshape(-1)
    mp = np.asarray(mu_p, dtype=np.float64).reshape(-1)
    sp = np.asarray(sigma_p, dtype=np.float64).reshape(-1)
    if not (mq.shape == sq.shape == mp.shape == sp.shape):
        raise ShapeError("kl_gaussian needs four same-length vectors")
    if (sq <= 0).any() or (sp <= 0).any():
        raise DomainError("standard deviations must be > 0")
    return float(np.sum(np.log(sp / sq) + (sq ** 2 + (mq - mp) ** 2)
                        / (2.0 * sp ** 2) - 0.5))


def alpha_log(x: float, alpha: float) -> float:
    """Deformed logarithm: (x^(1-alpha) - 1) / (1-alpha), log x at alpha=1.

    Computed as expm1((1-alpha) log x) / (1-alpha) so values of alpha
    close to 1 do not cancel away the answer.
    """
    if x <= 0:
        raise DomainError(f"alpha_log needs x > 0, got {x}")
    if alpha == 1.0:
        return math.log(x)
    t = 1.0 - float(alpha)
    return math.expm1(t * math.log(x)) / t


# ---------------------------------------------------------------------------
# differentiable batch path

def pairwise_sq_distances(z: Tensor) -> Tensor:
    """Matrix of squared euclidean distances between rows, on the tape.

    Forward and backward both route through the kernels module, so this
    op follows the active acceleration path.
    """
    if z.data.ndim != 2:
        raise ShapeError(f"expected (n, d) embeddings, got {z.data.shape}")
    out = Tensor._from_op(kernels.pairwise_sqdist(z.data), (z,))
    if out.requires_grad:
        def backward():
            _accum(z, kernels.pairwise_sqdist_vjp(z.data, out.grad))
        out._backward = backward
    return out


def _validate_partner(partner, n: int) -> np.ndarray:
    p = np.asarray(partner, dtype=np.int64)
    if p.shape != (n,):
        raise ShapeError(f"partner must have shape ({n},), got {p.shape}")
    if p.size and (p.min() < 0 or p.max() >= n):
        raise ValueError("partner indices out of range")
    idx = np.arange(n)
    if (p == idx).any():
        raise ValueError("partner map has fixed points")
    if not (p[p] == idx).all():
        raise ValueError("partner map is not an involution")
    return p


def l2_normalize_rows(z: Tensor) -> Tensor:
    """Rows scaled to unit euclidean norm; zero rows are an error."""
    sumsq = tsum(mul(z, z), axis=1)
    if (sumsq.data == 0).any():
        raise DomainError("cannot normalize a zero embedding")
    norms = pow_scalar(sumsq, 0.5)
    return mul(z, pow_scalar(reshape(norms, (z.data.shape[0], 1)), -1.0))


def _nt_xent_from_similarity(s: Tensor, partner: np.ndarray,
                             tau: float) -> Tensor:
    """Contrastive cross-entropy over a similarity matrix.

    Row maxima (diagonal excluded) are subtracted as constants before
    exponentiation; that shift cancels exactly in the log-sum-exp, so it
    stabilizes without touching gradients. The diagonal is removed by
    adding -inf before exp rather than masking after, which keeps 0 * inf
    out of the backward pass.
    """
    n = s.data.shape[0]
    dt = s.data.dtype
    logits = scale(s, 1.0 / float(tau))
    eye = np.eye(n, dtype=bool)
    row_max = np.where(eye, -np.inf, logits.data).max(axis=1)
    shifted = sub(logits, Tensor(row_max[:, None].astype(dt), dtype=dt))
    diag_gate = np.where(eye, -np.inf, 0.0).astype(dt)
    gated = add(shifted, Tensor(diag_gate, dtype=dt))
    denom = tsum(exp(gated), axis=1)
    lse = add(log(denom), Tensor(row_max.astype(dt), dtype=dt))
    pos_mask = np.zeros((n, n), dtype=dt)
    pos_mask[np.arange(n), partner] = 1.0
    pos = tsum(mul(logits, Tensor(pos_mask, dtype=dt)), axis=1)
    return tmean(sub(lse, pos))


def beta_nt_xent(z: Tensor, partner, cfg: LossConfig) -> Tensor:
    """Contrastive loss over beta dissimilarities of all view pairs.

    z stacks 2N views row-wise; partner[i] is the index of the other
    view of the same sample. Returns the mean over all 2N anchor rows.
    """
    n = z.data.shape[0]
    if z.data.ndim != 2 or n < 4:
        raise ShapeError(
            f"need at least 4 stacked views of shape (2N, d), got {z.data.shape}")
    p = _validate_partner(partner, n)
    if cfg.normalize_z:
        z = l2_normalize_rows(z)
    d2 = pairwise_sq_distances(z)
    b = float(cfg.beta)
    s2 = float(cfg.sigma0) ** 2
    u = add(scale(d2, -b / (2.0 * s2)),
            Tensor(np.asarray(-(b / 2.0) * math.log(2.0 * math.pi * s2),
                              dtype=z.data.dtype), dtype=z.data.dtype))
    dissim = scale(expm1(u), -(b + 1.0) / b)
    s = scale(dissim, -1.0) if cfg.sign_mode == "negated" else dissim
    return _nt_xent_from_similarity(s, p, cfg.tau)


def nt_xent_cosine(z: Tensor, partner, tau: float) -> Tensor:
    """Plain NT-Xent on cosine similarities, the unbounded baseline."""
    n = z.data.shape[0]
    if z.data.ndim != 2 or n < 4:
        raise ShapeError(
            f"need at least 4 stacked views of shape (2N, d), got {z.data.shape}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    p = _validate_partner(partner, n)
    zn = l2_normalize_rows(z)
    sims = matmul(zn, transpose(zn))
    return _nt_xent_from_similarity(sims, p, tau)


def dist_normalizing(g: GaussianParams) -> Tensor:
    """Mean KL from each head Gaussian to the standard normal.

    Per dimension this is -(1 + logvar - exp(logvar) - mu^2) / 2, summed
    over latent dimensions and averaged over the batch.
    """
    lv = g.logvar
    one = Tensor(np.asarray(1.0, dtype=lv.data.dtype), dtype=lv.data.dtype)
    inner = sub(sub(add(lv, one), exp(lv)), mul(g.mu, g.mu))
    return tmean(scale(tsum(inner, axis=1), -0.5))


def dist_similarity(g_i: GaussianParams, g_j: GaussianParams) -> Tensor:
    """Symmetric divergence between paired view distributions.

    Both directions are measured against the midpoint Gaussian with
    sigma_m = (sigma_i + sigma_j) / 2 and mu_m = (mu_i + mu_j) / 2:

        0.5 * sum_d [ log(sigma_m / sigma_i) + log(sigma_m / sigma_j)
                      + ((mu_i - mu_m)^2 + (mu_j - mu_m)^2) / (2 sigma_m^2) ]

    averaged over the batch. Zero iff the paired moments coincide. The
    variance-ratio terms that a full KL would add are exposed separately
    by dist_similarity_residual as a detached diagnostic.
    """
    if g_i.mu.data.shape != g_j.mu.data.shape:
        raise ShapeError(
            f"paired moment shapes differ: {g_i.mu.data.shape} vs "
            f"{g_j.mu.data.shape}")
    dt = g_i.mu.data.dtype
    half = Tensor(np.asarray(0.5, dtype=dt), dtype=dt)
    si = exp(scale(g_i.logvar, 0.5))
    sj = exp(scale(g_j.logvar, 0.5))
    sm = mul(add(si, sj), half)
    mm = mul(add(g_i.mu, g_j.mu), half)
    log_sm = log(sm)
    log_terms = sub(sub(scale(log_sm, 2.0), scale(g_i.logvar, 0.5)),
                    scale(g_j.logvar, 0.5))
    di = sub(g_i.mu, mm)
    dj = sub(g_j.mu, mm)
    quad = div(add(mul(di, di), mul(dj, dj)), scale(mul(sm, sm), 2.0))
    per_dim = add(log_terms, quad)
    return tmean(scale(tsum(per_dim, axis=1), 0.5))


def dist_similarity_residual(g_i: GaussianParams, g_j: GaussianParams) -> float:
    """Detached value of the variance-ratio terms dropped from dist_similarity.

    For each pair this is sum_d ((sigma_i^2 + sigma_j^2) / (2 sigma_m^2) - 1),
    averaged over the batch; zero when paired variances match.
    """
    si = np.exp(0.5 * g_i.logvar.data.astype(np.float64))
    sj = np.exp(0.5 * g_j.logvar.data.astype(np.float64))
    sm = 0.5 * (si + sj)
    per_pair = np.sum((si ** 2 + sj ** 2) / (2.0 * sm ** 2) - 1.0, axis=1)
    return float(per_pair.mean())


def total_loss(z: Tensor, g: GaussianParams, partner,
               cfg: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """Contrastive term plus weighted distribution regularizers.

    Returns the scalar loss on the tape together with a detached
    per-term breakdown for logging.
    """
    p = _validate_partner(partner, z.data.shape[0])
    if g.mu.data.shape[0] != z.data.shape[0]:
        raise ShapeError(
            f"head batch {g.mu.data.shape[0]} does not match embeddings "
            f"{z.data.shape[0]}")
    l_beta = beta_nt_xent(z, p, cfg)
    g_partner = GaussianParams(mu=gather_rows(g.mu, p),
                               logvar=gather_rows(g.logvar, p))
    l_dist = dist_similarity(g, g_partner)
    l_norm = dist_normalizing(g)
    total = add(l_beta, add(scale(l_dist, cfg.lambda_dist),
                            scale(l_norm, cfg.lambda_norm)))
    detail = LossBreakdown(l_beta=float(l_beta.data),
                           l_dist=float(l_dist.data),
                           l_norm=float(l_norm.data),
                           total=float(total.data))
    return total, detail
