"""Density of the pushforward distribution on the generated manifold, and its entropy.

Densities are with respect to the S-dimensional volume measure on the manifold.
In a full-rank, non-folding region the density at ``x = S(z)`` is the latent
density at ``z`` divided by the region's volume scalar.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import rng as rngmod
from .cpa_net import ActivationPattern, CpaNetwork, activation_pattern, region_affine, region_jacobians
from .errors import FoldingError, InputError, NotOnManifoldError, RankDeficientError
from .geometry import log_volumes, volume_scalar

ON_MANIFOLD_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LatentPrior:
    """``standard_gaussian`` on R^S or ``uniform_box`` on ``[lo, hi]``."""

    kind: str
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "uniform_box":
            lo = np.asarray(self.lo, dtype=np.float64).reshape(-1)
            hi = np.asarray(self.hi, dtype=np.float64).reshape(-1)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,) or not np.all(lo < hi):
                raise InputError("uniform_box prior needs lo < hi of length dim")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        elif self.kind != "standard_gaussian":
            raise InputError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def standard_gaussian(cls, dim: int) -> LatentPrior:
        return cls("standard_gaussian", dim)

    @classmethod
    def uniform_box(cls, lo, hi) -> LatentPrior:
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        return cls("uniform_box", lo.size, lo, hi)

    def log_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "standard_gaussian":
            return -0.5 * np.sum(z * z, axis=-1) - 0.5 * self.dim * np.log(2 * np.pi)
        inside = np.all((z >= self.lo) & (z <= self.hi), axis=-1)
        return np.where(inside, -np.sum(np.log(self.hi - self.lo)), -np.inf)

    def entropy(self) -> float:
        if self.kind == "standard_gaussian":
            return 0.5 * self.dim * np.log(2 * np.pi * np.e)
        return float(np.sum(np.log(self.hi - self.lo)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "standard_gaussian":
            return rng.standard_normal((n, self.dim))
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def to_dict(self) -> dict:
        if self.kind == "standard_gaussian":
            return {"kind": self.kind, "dim": self.dim}
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class ManifoldDensityValue:
    log_p: float
    region_pattern: ActivationPattern
    latent_preimage: np.ndarray

    @property
    def p(self) -> float:
        return float(np.exp(self.log_p))


def _check_prior(net: CpaNetwork, prior: LatentPrior):
    if prior.dim != net.latent_dim:
        raise InputError(f"prior dim {prior.dim} != latent dim {net.latent_dim}")


def density_at_latent(net: CpaNetwork, prior: LatentPrior, z) -> ManifoldDensityValue:
    _check_prior(net, prior)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    ra = region_affine(net, z)
    vol = volume_scalar(ra.A)
    if vol.rank_deficient:
        raise RankDeficientError("density undefined: region slope matrix is rank deficient")
    log_p = float(prior.log_density(z)) - vol.log_sigma
    return ManifoldDensityValue(log_p, ra.pattern, z)


def gaussian_log_density_closed_form(A, b, x) -> float:
    """Standard-Gaussian pushforward through one full-rank affine piece ``x = A z + b``."""
    A = np.asarray(A, dtype=np.float64)
    r = np.asarray(x, dtype=np.float64) - b
    Ap = np.linalg.pinv(A)
    y = Ap @ r
    S = A.shape[1]
    _, logdet = np.linalg.slogdet(A.T @ A)
    return float(-0.5 * y @ y - 0.5 * S * np.log(2 * np.pi) - 0.5 * logdet)


def density_at_point(
    net: CpaNetwork,
    prior: LatentPrior,
    x,
    candidates: Iterable,
    on_manifold_tol: float = ON_MANIFOLD_TOL,
) -> ManifoldDensityValue:
    """Density at an output point given candidate latent preimages.

    A candidate validates when its region's affine map, inverted with the
    pseudo-inverse, reconstructs ``x`` within ``on_manifold_tol`` and the
    recovered latent lies in that same region.
    """
    _check_prior(net, prior)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (net.output_dim,):
        raise InputError(f"point must have length {net.output_dim}")
    hits: dict = {}
    for zc in candidates:
        ra = region_affine(net, zc)
        if volume_scalar(ra.A).rank_deficient:
            continue
        z_star = np.linalg.lstsq(ra.A, x - ra.b, rcond=None)[0]
        if np.max(np.abs(ra(z_star) - x)) > on_manifold_tol:
            continue
        if activation_pattern(net, z_star) != ra.pattern:
            continue
        hits.setdefault(ra.pattern, z_star)
    if not hits:
        raise NotOnManifoldError("no candidate preimage reconstructs the point")
    if len(hits) > 1:
        raise FoldingError(f"{len(hits)} distinct regions map onto the same point")
    (z_star,) = hits.values()
    return density_at_latent(net, prior, z_star)


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    std_error: float
    latent_entropy: float
    mean_log_sigma: float
    n_samples: int
    n_excluded: int
    warning: Optional[str] = None
    seed: int = 0

    def __float__(self) -> float:
        return self.value


def pushforward_entropy(net: CpaNetwork, prior: LatentPrior, mc_samples: int, seed: int, threads: int = 1) -> EntropyEstimate:
    """Latent entropy plus the Monte-Carlo average log volume scalar under the prior."""
    _check_prior(net, prior)
    if mc_samples < 1:
        raise InputError("mc_samples must be positive")

    def block(b):
        Z = prior.sample(rngmod.stream(seed, rngmod.LATENT, b), rngmod.BLOCK)
        A, _ = region_jacobians(net, Z)
        return log_volumes(A)

    ls = np.concatenate(rngmod.parallel_map(block, range(rngmod.n_blocks(mc_samples)), threads))[:mc_samples]
    ok = np.isfinite(ls)
    n_bad = int(np.sum(~ok))
    if not np.any(ok):
        raise RankDeficientError("every draw landed in a rank-deficient region")
    warning = None
    if n_bad > 0.01 * mc_samples:
        warning = f"{n_bad} of {mc_samples} draws rank deficient and excluded"
    good = ls[ok]
    h0 = prior.entropy()
    m = float(np.mean(good))
    se = float(np.std(good, ddof=1) / np.sqrt(good.size)) if good.size > 1 else float("inf")
    return EntropyEstimate(h0 + m, se, h0, m, mc_samples, n_bad, warning, int(seed))
