"""Uniformity diagnostics for generated samples.

- eps-ball neighbour counts around reference points (dispersion of the counts)
- diagonal-covariance GMM log-likelihood (higher = more concentrated)
- Monte-Carlo Lipschitz traces (running max of ||J||_F)
- Pearson chi-square of bin occupancy against image-volume-proportional masses
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import shapely.geometry as sg
from scipy import stats
from scipy.spatial import cKDTree

from . import rng as rngmod
from .cpa_net import CpaNetwork, forward, line_regions, region_jacobians
from .errors import FoldingError, InputError
from .geometry import volume_scalar
from .sampling import (
    LatentDomain,
    SampleBatch,
    SamplerConfig,
    UniformBox,
    build_pool,
    draw_latents,
    magnet_sample,
)

EPS_MULTIPLIERS = (0.5, 1.0, 1.5)
VAR_FLOOR = 1e-6


# ---------------------------------------------------------------- eps-ball


@dataclass(frozen=True, eq=False)
class EpsBallReport:
    epsilon: float
    counts: np.ndarray
    histogram: np.ndarray
    dispersion: float

    @property
    def mean(self) -> float:
        return float(self.counts.mean())


def epsball_counts(reference, samples, epsilon: float) -> EpsBallReport:
    """Number of samples within ``epsilon`` (Euclidean, inclusive) of each reference point."""
    if not epsilon > 0:
        raise InputError("epsilon must be > 0")
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    smp = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(smp) == 0:
        counts = np.zeros(len(ref), dtype=np.int64)
    else:
        if ref.shape[1] != smp.shape[1]:
            raise InputError("reference and samples must share a dimension")
        counts = np.asarray(cKDTree(smp).query_ball_point(ref, r=epsilon, return_length=True), dtype=np.int64)
    hist = np.bincount(counts)
    mean = counts.mean()
    disp = float(counts.var() / mean) if mean > 0 else float("nan")
    return EpsBallReport(float(epsilon), counts, hist, disp)


def default_epsilon(reference, multiplier: float = 1.0) -> float:
    """Mean distance from each reference point to its nearest distinct neighbour."""
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if len(ref) < 2:
        raise InputError("need at least two reference points")
    uniq, inverse = np.unique(ref, axis=0, return_inverse=True)
    if len(uniq) < 2:
        raise InputError("reference set contains a single distinct point")
    d, _ = cKDTree(uniq).query(uniq, k=2)
    return float(multiplier * np.mean(d[np.ravel(inverse), 1]))


# ---------------------------------------------------------------- Lipschitz


@dataclass(frozen=True, eq=False)
class LipschitzTrace:
    per_run: np.ndarray  # (runs, n_max) running max of ||J||_F
    sampler: str
    seed: int

    @property
    def mean(self) -> np.ndarray:
        return self.per_run.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.per_run.std(axis=0)

    @property
    def running_max(self) -> np.ndarray:
        return self.mean


def frobenius_norms(net: CpaNetwork, Z: np.ndarray) -> np.ndarray:
    A, _ = region_jacobians(net, Z)
    return np.sqrt(np.sum(A * A, axis=(1, 2)))


def lipschitz_estimate(
    net: CpaNetwork,
    sampler: str,
    n_max: int,
    runs: int,
    seed: int,
    domain: LatentDomain,
    pool_size: int = 10_000,
    threads: int = 1,
) -> LipschitzTrace:
    """Running max of ``||J(z_i)||_F`` over the first n draws, for ``runs`` independent runs."""
    if n_max < 1 or runs < 1:
        raise InputError("n_max and runs must be >= 1")
    if sampler not in ("standard", "magnet"):
        raise InputError(f"unknown sampler {sampler!r}")
    seeds = rngmod.derived_seeds(seed, runs)

    def one(r):
        s = seeds[r]
        if sampler == "standard":
            Z = draw_latents(domain, n_max, s)
        else:
            pool = build_pool(net, SamplerConfig(domain, pool_size, n_max, s))
            Z = magnet_sample(net, pool, n_max, s).latents
        return np.maximum.accumulate(frobenius_norms(net, Z))

    per_run = np.stack(rngmod.parallel_map(one, range(runs), threads))
    return LipschitzTrace(per_run, sampler, int(seed))


def grid_max_frobenius(net: CpaNetwork, domain: UniformBox, points_per_dim: int) -> float:
    """Max of ``||J||_F`` over the centres of a regular grid of cells.

    Cell centres keep the probe off knots placed at round numbers, where the
    tie rule can mix slopes from both sides. With an odd count on a symmetric
    box the middle cell centre is the origin, so prefer even counts there.
    """
    axes = [lo + (np.arange(points_per_dim) + 0.5) * (hi - lo) / points_per_dim for lo, hi in zip(domain.lo, domain.hi)]
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return float(frobenius_norms(net, Z).max())


# ---------------------------------------------------------------- GMM


@dataclass(frozen=True, eq=False)
class GmmFitReport:
    n_components: int
    log_likelihood: float  # best mean per-sample log-likelihood over restarts
    n_restarts: int
    converged: bool
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    history: np.ndarray  # per-iteration mean log-likelihood of the best restart
    n_floored: int


def _kmeanspp(X, C, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, C):
        tot = d2.sum()
        idx = rng.integers(len(X)) if tot <= 0 else rng.choice(len(X), p=d2 / tot)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _em_restarts(X, means, floor, max_iter, tol):
    """EM for R restarts at once; ``means`` is (R, C, D).  Converged restarts are frozen."""
    n, D = X.shape
    R, C, _ = means.shape
    X2 = X * X
    means = means.copy()
    variances = np.tile(np.maximum(X.var(axis=0), floor), (R, C, 1))
    log_w = np.full((R, C), -np.log(C))
    history = [[] for _ in range(R)]
    active = np.arange(R)
    for _ in range(max_iter):
        mu, var, lw = means[active], variances[active], log_w[active]
        prec = 1.0 / var
        # (r, n, C) log joint via the expanded quadratic form
        lp = (
            np.matmul(X2, prec.transpose(0, 2, 1))
            - 2.0 * np.matmul(X, (mu * prec).transpose(0, 2, 1))
            + np.sum(mu * mu * prec + np.log(2 * np.pi * var), axis=2)[:, None, :]
        )
        lp = lw[:, None, :] - 0.5 * lp
        mx = lp.max(axis=2, keepdims=True)
        e = np.exp(lp - mx)
        tot = e.sum(axis=2)
        ll = np.mean(mx[..., 0] + np.log(tot), axis=1)
        keep = np.ones(active.size, dtype=bool)
        for j, r in enumerate(active):
            history[r].append(float(ll[j]))
            if len(history[r]) > 1 and abs(history[r][-1] - history[r][-2]) < tol:
                keep[j] = False
        if not keep.any():
            break
        active, e, tot = active[keep], e[keep], tot[keep]
        resp = e / tot[..., None]
        nk = resp.sum(axis=1)
        live = nk > 1e-12
        safe = np.where(live, nk, 1.0)[..., None]
        rt = resp.transpose(0, 2, 1)
        m = (rt @ X) / safe
        v = (rt @ X2) / safe - m * m
        means[active] = np.where(live[..., None], m, means[active])
        variances[active] = np.where(live[..., None], np.maximum(v, floor), variances[active])
        with np.errstate(divide="ignore"):
            log_w[active] = np.log(nk / n)
    return means, variances, log_w, [np.array(h) for h in history]


def gmm_loglik(
    samples,
    n_components: int,
    restarts: int = 5,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-3,
    var_floor: float = VAR_FLOOR,
) -> GmmFitReport:
    """Fit a diagonal GMM by EM (k-means++ seeding) and keep the best restart.

    ``log_likelihood`` is the mean per-sample log-likelihood.  ``converged`` is
    False when more than half of the components sit on the variance floor.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if n_components < 1 or restarts < 1:
        raise InputError("n_components and restarts must be >= 1")
    if len(X) <= n_components:
        raise InputError("need more samples than mixture components")
    init = np.stack(
        [_kmeanspp(X, n_components, rngmod.stream(seed, rngmod.MISC, 2, n_components, r)) for r in range(restarts)]
    )
    means, variances, log_w, hist = _em_restarts(X, init, var_floor, max_iter, tol)
    best = int(np.argmax([h[-1] for h in hist]))
    v = variances[best]
    n_floored = int(np.sum(np.any(v <= var_floor * (1 + 1e-9), axis=1)))
    return GmmFitReport(
        n_components,
        float(hist[best][-1]),
        restarts,
        n_floored <= n_components / 2,
        np.exp(log_w[best]),
        means[best],
        v,
        hist[best],
        n_floored,
    )


# ---------------------------------------------------------------- binning and chi-square


@dataclass(frozen=True, eq=False)
class RegionBins:
    """Latent regions of a 1-D latent interval; mass of a region ~ sigma * length."""

    breakpoints: np.ndarray
    log_sigmas: np.ndarray

    @classmethod
    def from_net(cls, net: CpaNetwork, domain: UniformBox) -> RegionBins:
        if net.latent_dim != 1:
            raise InputError("region bins need a 1-D latent space")
        lo, hi = float(domain.lo[0]), float(domain.hi[0])
        ts, regions = line_regions(net, [lo], [hi])
        ls = np.array([volume_scalar(r.A).log_sigma for r in regions])
        return cls(lo + ts * (hi - lo), ls)

    def masses(self) -> np.ndarray:
        m = np.exp(self.log_sigmas - self.log_sigmas.max()) * np.diff(self.breakpoints)
        return m / m.sum()

    def assign(self, batch: SampleBatch) -> np.ndarray:
        z = batch.latents[:, 0]
        return np.clip(np.searchsorted(self.breakpoints, z, side="right") - 1, 0, len(self.log_sigmas) - 1)

    def describe(self) -> dict:
        return {"kind": "region", "n_bins": len(self.log_sigmas), "breakpoints": self.breakpoints.tolist()}


@dataclass(frozen=True, eq=False)
class GridBins:
    """Regular grid over the image; mass of a cell ~ length/area of cell within the support."""

    edges: tuple
    cell_masses: np.ndarray

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> GridBins:
        edges = np.linspace(a, b, n + 1)
        return cls((edges,), np.diff(edges) / (b - a))

    @classmethod
    def polygon(cls, vertices, nx: int, ny: int) -> GridBins:
        poly = sg.Polygon(vertices)
        if not poly.is_valid:
            raise FoldingError("image boundary self-intersects")
        x0, y0, x1, y1 = poly.bounds
        ex, ey = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
        areas = np.array(
            [[sg.box(ex[i], ey[j], ex[i + 1], ey[j + 1]).intersection(poly).area for j in range(ny)] for i in range(nx)]
        )
        return cls((ex, ey), (areas / poly.area).ravel())

    @classmethod
    def from_net(cls, net: CpaNetwork, domain: UniformBox, shape: Sequence[int]) -> GridBins:
        """Grid over the exact image of a 1->1 or 2->2 network on a box."""
        S, D = net.latent_dim, net.output_dim
        if S == 1 and D == 1:
            ts, _ = line_regions(net, domain.lo, domain.hi)
            ends = forward(net, (domain.lo + ts[:, None] * (domain.hi - domain.lo)))[:, 0]
            return cls.interval(float(ends.min()), float(ends.max()), int(shape[0]))
        if S == 2 and D == 2:
            return cls.polygon(image_polygon(net, domain), int(shape[0]), int(shape[-1]))
        raise InputError("grid bins support 1->1 and 2->2 networks")

    def masses(self) -> np.ndarray:
        return self.cell_masses

    def assign(self, batch: SampleBatch) -> np.ndarray:
        X = batch.outputs
        idx = [np.clip(np.searchsorted(e, X[:, d], side="right") - 1, 0, len(e) - 2) for d, e in enumerate(self.edges)]
        if len(idx) == 1:
            return idx[0]
        return idx[0] * (len(self.edges[1]) - 1) + idx[1]

    def describe(self) -> dict:
        return {"kind": "grid", "shape": [len(e) - 1 for e in self.edges]}


Bins = Union[RegionBins, GridBins]


def image_polygon(net: CpaNetwork, domain: UniformBox) -> np.ndarray:
    """Vertices of the image of a 2-D box, walking its boundary region by region."""
    (x0, y0), (x1, y1) = domain.lo, domain.hi
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    pts = []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        a, b = np.array(a), np.array(b)
        ts, _ = line_regions(net, a, b)
        pts.append(a + ts[:-1, None] * (b - a))
    return forward(net, np.concatenate(pts))


@dataclass(frozen=True, eq=False)
class Chi2Result:
    statistic: float
    p_value: float
    dof: int
    observed: np.ndarray
    expected: np.ndarray
    groups: list = field(default_factory=list)

    @property
    def merged(self) -> bool:
        return any(len(g) > 1 for g in self.groups)


def chi2_test(observed, probs, min_expected: float = 5.0) -> Chi2Result:
    """Pearson chi-square against fixed cell probabilities, merging sparse cells."""
    obs = np.asarray(observed, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    n = obs.sum()
    groups = [[i] for i in range(len(obs))]
    o = list(obs)
    e = list(p / p.sum() * n)
    while len(e) > 2:
        order = np.argsort(e, kind="stable")
        i, j = int(order[0]), int(order[1])
        if e[i] >= min_expected:
            break
        e[j] += e[i]
        o[j] += o[i]
        groups[j] = sorted(groups[j] + groups[i])
        del e[i], o[i], groups[i]
    o, e = np.array(o), np.array(e)
    if np.any((e == 0) & (o > 0)):
        return Chi2Result(float("inf"), 0.0, len(e) - 1, o, e, groups)
    nz = e > 0
    stat = float(np.sum((o[nz] - e[nz]) ** 2 / e[nz]))
    dof = int(nz.sum()) - 1
    return Chi2Result(stat, float(stats.chi2.sf(stat, dof)), dof, o, e, groups)


def uniformity_chi2(net: CpaNetwork, samples: SampleBatch, bins: Bins) -> Chi2Result:
    """Observed bin counts of ``samples`` against image-volume-proportional expectations."""
    probs = bins.masses()
    counts = np.bincount(bins.assign(samples), minlength=len(probs))
    return chi2_test(counts, probs)
