"""Affine coupling transforms and multi-scale flows on flat coordinates.

Each coupling leaves an identity set A untouched and maps the complement B
through an elementwise affine transform whose shift and log-scale come from
a small dense network over the A coordinates.  The log-scale is bounded by
``c = 2`` through tanh, so the map is invertible for every parameter value
and safe early in training.  Final conditioner layers start at zero, making
a freshly built flow the exact identity.

The multi-scale builder stacks couplings in levels; at the end of every
level the first half of the active variables is set aside and never
transformed again.  Variables that survive to deeper levels pass through
more transforms, which induces the depth ordering used as a drop order.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .flows import FlowModel


class AffineCouplingTransform:
    """z_A = x_A;  z_B = x_B * exp(s(x_A)) + t(x_A).

    The conditioner is a two-hidden-layer tanh network (width
    ``hidden_width``) from the A coordinates to ``(s_raw, t)``; the applied
    log-scale is ``bound * tanh(s_raw)``.
    """

    kind = "affine_coupling"

    def __init__(self, dim: int, identity_idx, transformed_idx,
                 hidden_width: int = 32, log_scale_bound: float = 2.0):
        self.dim = dim
        a = np.asarray(identity_idx, dtype=np.int64)
        b = np.asarray(transformed_idx, dtype=np.int64)
        if a.size == 0 or b.size == 0:
            raise ValueError("identity and transformed sets must be nonempty")
        if sorted(np.concatenate([a, b]).tolist()) != list(range(dim)):
            raise ValueError("identity and transformed sets must partition 0..D-1")
        self.identity_idx = a
        self.transformed_idx = b
        self.hidden_width = hidden_width
        self.log_scale_bound = float(log_scale_bound)
        na, nb, h = a.size, b.size, hidden_width
        self.param_blocks = [
            ("w1", na * h), ("b1", h),
            ("w2", h * h), ("b2", h),
            ("w3", h * 2 * nb), ("b3", 2 * nb),
        ]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        na, nb, h = self.identity_idx.size, self.transformed_idx.size, self.hidden_width
        return np.concatenate([
            rng.standard_normal(na * h) / np.sqrt(na),
            np.zeros(h),
            rng.standard_normal(h * h) / np.sqrt(h),
            np.zeros(h),
            np.zeros(h * 2 * nb),  # zero final layer: identity transform at init
            np.zeros(2 * nb),
        ])

    def _conditioner(self, p, xa):
        na, nb, h = self.identity_idx.size, self.transformed_idx.size, self.hidden_width
        h1 = ad.tanh(ad.add(ad.matmul(xa, ad.reshape(p["w1"], (na, h))), p["b1"]))
        h2 = ad.tanh(ad.add(ad.matmul(h1, ad.reshape(p["w2"], (h, h))), p["b2"]))
        out = ad.add(ad.matmul(h2, ad.reshape(p["w3"], (h, 2 * nb))), p["b3"])
        s = ad.mul(ad.tanh(ad.gather_cols(out, np.arange(nb))), self.log_scale_bound)
        t = ad.gather_cols(out, np.arange(nb, 2 * nb))
        return s, t

    def forward(self, p, x):
        xa = ad.gather_cols(x, self.identity_idx)
        xb = ad.gather_cols(x, self.transformed_idx)
        s, t = self._conditioner(p, xa)
        zb = ad.add(ad.mul(xb, ad.exp(s)), t)
        z = ad.scatter_cols(self.dim, [(self.identity_idx, xa), (self.transformed_idx, zb)])
        return z, ad.vsum(s, axis=1)

    def inverse(self, p, z):
        za = ad.gather_cols(z, self.identity_idx)
        zb = ad.gather_cols(z, self.transformed_idx)
        s, t = self._conditioner(p, za)
        xb = ad.mul(ad.sub(zb, t), ad.exp(ad.mul(s, -1.0)))
        return ad.scatter_cols(self.dim, [(self.identity_idx, za), (self.transformed_idx, xb)])

    def config(self):
        return {
            "dim": self.dim,
            "identity_idx": self.identity_idx.tolist(),
            "transformed_idx": self.transformed_idx.tolist(),
            "hidden_width": self.hidden_width,
            "log_scale_bound": self.log_scale_bound,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["dim"], cfg["identity_idx"], cfg["transformed_idx"],
                   cfg["hidden_width"], cfg["log_scale_bound"])


class MultiScaleFlow(FlowModel):
    """Flow of levelled couplings with variables set aside between levels.

    ``depth_rank[v]`` counts the levels variable v participated in; higher
    means deeper.
    """

    def __init__(self, dim, transforms, params, depth_rank, n_levels: int,
                 couplings_per_level: int):
        super().__init__(dim, transforms, params)
        self.depth_rank = np.asarray(depth_rank, dtype=np.int64)
        if self.depth_rank.size != dim:
            raise ValueError("depth_rank must assign every variable a depth")
        self.n_levels = n_levels
        self.couplings_per_level = couplings_per_level


def split_schedule(dim: int, n_levels: int) -> list[np.ndarray]:
    """Active variable indices per level: the first half of the active set
    is retired at the end of each level."""
    if n_levels < 1:
        raise ValueError("need at least one level")
    active = np.arange(dim, dtype=np.int64)
    levels = []
    for level in range(n_levels):
        if active.size < 2:
            raise ValueError(
                f"level {level} has {active.size} active variables; "
                f"dimension {dim} cannot support {n_levels} levels"
            )
        levels.append(active.copy())
        if level < n_levels - 1:
            active = active[active.size // 2 :]
    return levels


def build_multiscale_flow(dim: int, n_levels: int, couplings_per_level: int,
                          rng: np.random.Generator, hidden_width: int = 32,
                          log_scale_bound: float = 2.0) -> MultiScaleFlow:
    """Assemble the levelled coupling stack with alternating masks.

    Within a level the active variables are split positionally in half;
    consecutive couplings swap which half is transformed, so every active
    variable is updated at least once per pair of couplings.  Set-aside
    variables join the identity set of all later couplings.
    """
    levels = split_schedule(dim, n_levels)
    all_idx = np.arange(dim, dtype=np.int64)
    transforms = []
    depth_rank = np.zeros(dim, dtype=np.int64)
    for active in levels:
        depth_rank[active] += 1
        inactive = np.setdiff1d(all_idx, active)
        first, second = active[: active.size // 2], active[active.size // 2 :]
        for j in range(couplings_per_level):
            if j % 2 == 0:
                a, b = np.concatenate([inactive, first]), second
            else:
                a, b = np.concatenate([inactive, second]), first
            transforms.append(AffineCouplingTransform(
                dim, np.sort(a), np.sort(b), hidden_width, log_scale_bound))
    params = np.concatenate([t.init_params(rng) for t in transforms])
    return MultiScaleFlow(dim, transforms, params, depth_rank, n_levels,
                          couplings_per_level)


def multiscale_depth_order(m: MultiScaleFlow) -> np.ndarray:
    """Drop order ranking variables by descending depth (deepest kept
    longest), ties broken by ascending variable index."""
    return np.lexsort((np.arange(m.dim), -m.depth_rank)).astype(np.int64)


def depth_forward_order(m: MultiScaleFlow) -> np.ndarray:
    """The opposing order: shallowest variables ranked most important."""
    return np.lexsort((np.arange(m.dim), m.depth_rank)).astype(np.int64)
