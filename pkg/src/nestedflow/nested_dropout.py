"""Nested-dropout training machinery for flows.

A truncation index k is drawn per datapoint from a geometric distribution
clamped at the latent dimension K; latent coordinates whose ordering rank
exceeds k are zeroed before inverting the flow, and the squared
reconstruction error joins the negative log likelihood in one objective:

    loss = (1/N) sum_n [ -log p(x_n) + lambda * d(x_n, reconstruct(x_n, k_n)) ]

with d the per-dimension mean squared error.  Orders are permutations
mapping ordering rank (0-based) to latent coordinate index; rank 0 is the
most important, always-kept coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteLossError
from .flows import FlowModel, standard_normal_logpdf_rows


@dataclass(frozen=True)
class GeometricSchedule:
    """Truncation-index distribution: geometric(p) with all tail mass
    beyond K collapsed onto k = K."""

    p: float
    K: int

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must lie in (0, 1]")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    def pmf(self) -> np.ndarray:
        """Probabilities of k = 1..K (index 0 holds P(k=1))."""
        k = np.arange(1, self.K + 1)
        out = (1.0 - self.p) ** (k - 1) * self.p
        out[-1] = (1.0 - self.p) ** (self.K - 1)
        return out


def sample_k(s: GeometricSchedule, rng: np.random.Generator) -> int:
    """One truncation index in [1, K]."""
    return int(sample_ks(s, rng, 1)[0])


def sample_ks(s: GeometricSchedule, rng: np.random.Generator, n: int) -> np.ndarray:
    """n truncation indices via inverse-CDF sampling."""
    if s.p == 1.0:
        return np.ones(n, dtype=np.int64)
    u = rng.random(n)
    k = np.floor(np.log1p(-u) / math.log1p(-s.p)).astype(np.int64) + 1
    return np.minimum(k, s.K)


def identity_order(K: int) -> np.ndarray:
    return np.arange(K, dtype=np.int64)

def reversed_order(K: int) -> np.ndarray:
    return np.arange(K - 1, -1, -1, dtype=np.int64)


def as_order(order, K: int) -> np.ndarray:
    """Validate and normalize a drop order (permutation of 0..K-1)."""
    out = np.asarray(order, dtype=np.int64)
    if sorted(out.tolist()) != list(range(K)):
        raise ValueError(f"drop order must be a permutation of 0..{K - 1}")
    return out


@dataclass(frozen=True)
class NestedDropoutConfig:
    """Reconstruction-penalty settings: weight, index distribution, order."""

    lam: float
    schedule: GeometricSchedule
    drop_order: np.ndarray | None = None
    distance: str = "per-dim-mse"

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lambda must be nonnegative")
        if self.distance != "per-dim-mse":
            raise ValueError(f"unsupported distance metric {self.distance!r}")
        order = identity_order(self.schedule.K) if self.drop_order is None \
            else as_order(self.drop_order, self.schedule.K)
        object.__setattr__(self, "drop_order", order)


def keep_mask(ks, order, K: int) -> np.ndarray:
    """Boolean (N, K) mask, True where the latent coordinate's ordering rank
    is below the row's truncation index."""
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    if np.any((ks < 1) | (ks > K)):
        raise ValueError(f"truncation index out of range [1, {K}]")
    rank = np.empty(K, dtype=np.int64)
    rank[np.asarray(order, dtype=np.int64)] = np.arange(K)
    return rank[None, :] < ks[:, None]


def truncate(z, k: int, order) -> np.ndarray:
    """Zero every coordinate of z whose ordering rank is k or beyond."""
    z = np.asarray(z, dtype=np.float64)
    mask = keep_mask(k, as_order(order, z.size), z.size)[0]
    return np.where(mask, z, 0.0)


def reconstruct(m: FlowModel, x, k: int, order) -> np.ndarray:
    """Round-trip a point through the flow with the latent truncated to k
    dimensions: inverse(truncate(forward(x), k))."""
    x = np.asarray(x, dtype=np.float64)
    z, _ = m.forward_batch(x[None, :])
    z_trunc = truncate(np.asarray(z)[0], k, order)
    return np.asarray(m.inverse_batch(z_trunc[None, :]))[0]


def reconstruction_error(x, x_rec) -> float:
    """Per-dimension mean squared error between a point and its
    reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(x_rec, dtype=np.float64)
    return float(np.dot(diff, diff) / x.size)


def loss_terms(m: FlowModel, x: np.ndarray, ks, cfg: NestedDropoutConfig | None,
               theta=None):
    """Per-batch objective pieces given fixed truncation indices.

    Returns ``(total, nll_mean, recon_mean)``.  The truncation mask is a
    constant of the evaluation, so dropped coordinates contribute exactly
    zero gradient.  With ``cfg`` None or ``lam == 0`` the reconstruction
    pass is skipped entirely and the total is exactly the mean NLL.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    z, logdet = m.forward_batch(x, theta)
    ll = ad.add(standard_normal_logpdf_rows(z), logdet)
    nll_mean = ad.mul(ad.vsum(ll), -1.0 / n)
    if cfg is None or cfg.lam == 0.0:
        return nll_mean, nll_mean, 0.0
    mask = keep_mask(ks, cfg.drop_order, d).astype(np.float64)
    x_rec = m.inverse_batch(ad.mul(z, mask), theta)
    sq = ad.vsum(ad.square(ad.sub(x_rec, x)))
    recon_mean = ad.mul(sq, 1.0 / (n * d))
    total = ad.add(nll_mean, ad.mul(recon_mean, cfg.lam))
    return total, nll_mean, recon_mean


def combined_loss(m: FlowModel, batch: np.ndarray, cfg: NestedDropoutConfig,
                  rng: np.random.Generator) -> float:
    """Single-sample Monte Carlo estimate of the combined objective on a
    batch, one truncation index per datapoint."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be a nonempty (N, D) array")
    ks = sample_ks(cfg.schedule, rng, batch.shape[0])
    total, _, _ = loss_terms(m, batch, ks, cfg)
    total = float(total)
    if not np.isfinite(total):
        _raise_per_point(m, batch, ks, cfg)
    return total


def _raise_per_point(m, batch, ks, cfg):
    """Locate which datapoint produced a non-finite term and report it."""
    for i in range(batch.shape[0]):
        t, _, _ = loss_terms(m, batch[i : i + 1], ks[i : i + 1], cfg)
        if not np.isfinite(float(t)):
            raise NonFiniteLossError(f"non-finite loss term at datapoint index {i}")
    raise NonFiniteLossError("non-finite loss (no single datapoint isolated)")
