"""Latent samplers: standard, volume-weighted resampling (MaGNET), online rejection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import special, stats

from . import rng as rngmod
from .cpa_net import CpaNetwork, forward, region_jacobians
from .errors import AcceptanceError, InputError, RankDeficientError
from .geometry import log_volumes, make_projection, projected_log_volumes


# ---------------------------------------------------------------- latent domains


def _vec(x, name) -> np.ndarray:
    out = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if out.ndim != 1 or not np.all(np.isfinite(out)):
        raise InputError(f"{name} must be a finite vector")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class UniformBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise InputError("UniformBox needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def log_volume(self) -> float:
        return float(np.sum(np.log(self.hi - self.lo)))

    def to_dict(self) -> dict:
        return {"kind": "uniform_box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m, s = _vec(self.mean, "mean"), _vec(self.std, "std")
        if m.shape != s.shape or not np.all(s > 0):
            raise InputError("Gaussian needs matching mean/std with std > 0")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.dim))

    def log_density(self, Z: np.ndarray) -> np.ndarray:
        u = (Z - self.mean) / self.std
        return -0.5 * np.sum(u * u, axis=-1) - 0.5 * self.dim * np.log(2 * np.pi) - np.sum(np.log(self.std))

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass(frozen=True, eq=False)
class TruncatedGaussian:
    """Gaussian restricted to ``||(z - mean) / std|| <= radius``."""

    mean: np.ndarray
    std: np.ndarray
    radius: float

    def __post_init__(self):
        m, s = _vec(self.mean, "mean"), _vec(self.std, "std")
        if m.shape != s.shape or not np.all(s > 0):
            raise InputError("TruncatedGaussian needs matching mean/std with std > 0")
        if not self.radius > 0:
            raise InputError("TruncatedGaussian radius must be > 0")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((0, self.dim))
        while len(out) < n:
            u = rng.standard_normal((n, self.dim))
            u = u[np.sum(u * u, axis=1) <= self.radius**2]
            out = np.concatenate([out, u])
        return self.mean + self.std * out[:n]

    def log_density(self, Z: np.ndarray) -> np.ndarray:
        u = (Z - self.mean) / self.std
        r2 = np.sum(u * u, axis=-1)
        base = -0.5 * r2 - 0.5 * self.dim * np.log(2 * np.pi) - np.sum(np.log(self.std))
        base -= np.log(stats.chi2.cdf(self.radius**2, self.dim))
        return np.where(r2 <= self.radius**2, base, -np.inf)

    def log_support_volume(self) -> float:
        S = self.dim
        log_ball = 0.5 * S * np.log(np.pi) - special.gammaln(S / 2 + 1) + S * np.log(self.radius)
        return float(log_ball + np.sum(np.log(self.std)))

    def to_dict(self) -> dict:
        return {
            "kind": "truncated_gaussian",
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "radius": self.radius,
        }


LatentDomain = Union[UniformBox, Gaussian, TruncatedGaussian]


def draw_latents(domain: LatentDomain, n: int, seed: int, key: int = rngmod.LATENT, threads: int = 1) -> np.ndarray:
    """``n`` latent draws; draw ``i`` depends only on ``(seed, key, i)``."""

    def block(b):
        return domain.sample(rngmod.stream(seed, key, b), rngmod.BLOCK)

    if n == 0:
        return np.empty((0, domain.dim))
    blocks = rngmod.parallel_map(block, range(rngmod.n_blocks(n)), threads)
    return np.concatenate(blocks)[:n]


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class VolumePolicy:
    """``exact`` (SVD of the full Jacobian) or ``projected`` (top-k of ``Q J``)."""

    method: str = "exact"
    d_proj: Optional[int] = None
    k: Optional[int] = None
    proj_seed: int = 0

    def __post_init__(self):
        if self.method not in ("exact", "projected"):
            raise InputError(f"unknown volume method {self.method!r}")

    def resolved(self, net: CpaNetwork) -> VolumePolicy:
        if self.method == "exact":
            return self
        d_proj = self.d_proj if self.d_proj is not None else min(net.output_dim, 64)
        k = self.k if self.k is not None else min(net.latent_dim, d_proj)
        return VolumePolicy("projected", d_proj, k, self.proj_seed)


@dataclass(frozen=True)
class Weighting:
    """``proportional`` (weights ~ sigma) or ``softmax`` (weights ~ exp(sigma / temperature))."""

    kind: str = "proportional"
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("proportional", "softmax"):
            raise InputError(f"unknown weighting {self.kind!r}")
        if not self.temperature > 0:
            raise InputError("softmax temperature must be > 0")


@dataclass(frozen=True)
class SamplerConfig:
    domain: LatentDomain
    pool_size: int
    sample_count: int
    seed: int = 0
    volume_policy: VolumePolicy = field(default_factory=VolumePolicy)
    weighting: Weighting = field(default_factory=Weighting)
    correct_to_uniform: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.pool_size < 1 or self.sample_count < 0:
            raise InputError("pool_size must be >= 1 and sample_count >= 0")
        rngmod.check_seed(self.seed)
        if self.correct_to_uniform and isinstance(self.domain, Gaussian):
            raise InputError("uniform correction needs a bounded domain (use a truncated Gaussian)")

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "pool_size": self.pool_size,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "volume_policy": {
                "method": self.volume_policy.method,
                "d_proj": self.volume_policy.d_proj,
                "k": self.volume_policy.k,
                "proj_seed": self.volume_policy.proj_seed,
            },
            "weighting": {"kind": self.weighting.kind, "temperature": self.weighting.temperature},
            "correct_to_uniform": self.correct_to_uniform,
        }


# ---------------------------------------------------------------- pools and batches


@dataclass(frozen=True, eq=False)
class WeightedLatentPool:
    latents: np.ndarray
    log_sigmas: np.ndarray
    config: SamplerConfig
    log_correction: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.log_sigmas)

    def log_weights(self) -> np.ndarray:
        """Unnormalized log resampling weights."""
        lw = self.log_sigmas
        if self.log_correction is not None:
            lw = lw + self.log_correction
        if self.config.weighting.kind == "softmax":
            with np.errstate(over="ignore"):
                lw = np.exp(lw) / self.config.weighting.temperature
        return lw

    def weights(self) -> np.ndarray:
        lw = self.log_weights()
        finite = np.isfinite(lw)
        w = np.zeros_like(lw)
        w[finite] = np.exp(lw[finite] - np.max(lw[finite]))
        return w / w.sum()

    def ess(self) -> float:
        w = self.weights()
        return float(1.0 / np.sum(w * w))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    latents: np.ndarray
    outputs: np.ndarray
    source_indices: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.latents)


def _domain_check(net: CpaNetwork, domain: LatentDomain):
    if domain.dim != net.latent_dim:
        raise InputError(f"domain dim {domain.dim} != latent dim {net.latent_dim}")


def standard_sample(net: CpaNetwork, domain: LatentDomain, K: int, seed: int, threads: int = 1) -> SampleBatch:
    """``K`` i.i.d. latent draws pushed through the network."""
    _domain_check(net, domain)
    Z = draw_latents(domain, K, seed, threads=threads)
    X = forward(net, Z) if K else np.empty((0, net.output_dim))
    meta = {"sampler": "standard", "seed": int(seed), "K": int(K), "domain": domain.to_dict()}
    return SampleBatch(Z, X, np.full(K, -1, dtype=np.int64), meta)


def pool_log_volumes(net: CpaNetwork, Z: np.ndarray, policy: VolumePolicy, threads: int = 1) -> np.ndarray:
    policy = policy.resolved(net)
    Q = make_projection(net.output_dim, policy.d_proj, policy.proj_seed) if policy.method == "projected" else None

    def chunk(b):
        Zb = Z[b * rngmod.BLOCK:(b + 1) * rngmod.BLOCK]
        A, _ = region_jacobians(net, Zb)
        if Q is None:
            return log_volumes(A)
        return projected_log_volumes(A, Q, policy.k)

    if len(Z) == 0:
        return np.empty(0)
    return np.concatenate(rngmod.parallel_map(chunk, range(rngmod.n_blocks(len(Z))), threads))


def build_pool(net: CpaNetwork, config: SamplerConfig) -> WeightedLatentPool:
    """Draw ``N`` latents and attach their log volume scalars."""
    _domain_check(net, config.domain)
    Z = draw_latents(config.domain, config.pool_size, config.seed, threads=config.threads)
    ls = pool_log_volumes(net, Z, config.volume_policy, config.threads)
    if not np.any(np.isfinite(ls)):
        raise RankDeficientError("every pool draw landed in a rank-deficient region")
    corr = None
    dom = config.domain
    if config.correct_to_uniform and isinstance(dom, TruncatedGaussian):
        corr = -dom.log_support_volume() - dom.log_density(Z)
    Z.setflags(write=False)
    ls.setflags(write=False)
    return WeightedLatentPool(Z, ls, config, corr)


def magnet_sample(net: CpaNetwork, pool: WeightedLatentPool, K: int, seed: int) -> SampleBatch:
    """Resample ``K`` pool latents with replacement, probability proportional to the weights."""
    w = pool.weights()
    cdf = np.cumsum(w)
    u = rngmod.stream(seed, rngmod.RESAMPLE).random(K) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), pool.size - 1)
    Z = pool.latents[idx]
    X = forward(net, Z) if K else np.empty((0, net.output_dim))
    meta = {
        "sampler": "magnet",
        "seed": int(seed),
        "K": int(K),
        "config": pool.config.to_dict(),
        "ess": float(1.0 / np.sum(w * w)),
        "rank_deficient_draws": int(np.sum(~np.isfinite(pool.log_sigmas))),
        "pool_smaller_than_k": bool(pool.size < K),
    }
    return SampleBatch(Z, X, idx.astype(np.int64), meta)


def magnet(net: CpaNetwork, config: SamplerConfig) -> SampleBatch:
    """Pool construction plus resampling in one call, seeds taken from the config."""
    pool = build_pool(net, config)
    return magnet_sample(net, pool, config.sample_count, config.seed)


def rejection_sample(
    net: CpaNetwork,
    domain: LatentDomain,
    warm_sigmas,
    K: int,
    seed: int,
    rule: str = "max_normalized",
    chunk: int = rngmod.BLOCK,
    max_proposals: int = 10**7,
    min_rate: float = 1e-6,
) -> SampleBatch:
    """Online accept/reject sampler.

    ``rule="as_written"`` accepts when ``s / (s + sum(warm)) >= u``.
    ``rule="max_normalized"`` accepts when ``s / s_max >= u`` where ``s_max``
    starts at ``max(warm)`` and grows online; when it grows, previously accepted
    draws are thinned with probability ``s_max_old / s_max_new`` so every kept
    draw was accepted with ``s / s_max_final``.
    """
    _domain_check(net, domain)
    if rule not in ("as_written", "max_normalized"):
        raise InputError(f"unknown rejection rule {rule!r}")
    warm = np.asarray(warm_sigmas, dtype=np.float64).ravel()
    if warm.size == 0:
        raise InputError("warm_sigmas must be nonempty")
    warm_sum = float(warm.sum())
    env = float(warm.max())
    growths = 0
    kept_z: list[np.ndarray] = []
    n_kept = 0
    proposals = 0
    b = 0
    thin_rng = rngmod.stream(seed, rngmod.MISC, 1)
    while n_kept < K:
        Z = domain.sample(rngmod.stream(seed, rngmod.LATENT, b), chunk)
        u = rngmod.stream(seed, rngmod.ACCEPT, b).random(chunk)
        b += 1
        A, _ = region_jacobians(net, Z)
        sig = np.exp(log_volumes(A))
        proposals += chunk
        if rule == "as_written":
            acc = sig / (sig + warm_sum) >= u
            kept_z.append(Z[acc])
        else:
            run_env = np.maximum.accumulate(np.maximum(sig, env))
            acc = sig >= u * run_env
            new_env = float(run_env[-1])
            if new_env > env:
                growths += 1
                # earlier acceptances all sit at the old envelope
                kept_z = [kz[thin_rng.random(len(kz)) * new_env < env] for kz in kept_z]
                keep = thin_rng.random(int(acc.sum())) * new_env < run_env[acc]
                kept_z.append(Z[acc][keep])
            else:
                kept_z.append(Z[acc])
            env = new_env
        n_kept = sum(len(k) for k in kept_z)
        if proposals >= max_proposals and n_kept / proposals < min_rate:
            raise AcceptanceError(
                f"acceptance rate {n_kept / proposals:.3g} below {min_rate:g} after {proposals} proposals"
            )
    Zk = np.concatenate(kept_z)[:K] if K else np.empty((0, net.latent_dim))
    X = forward(net, Zk) if K else np.empty((0, net.output_dim))
    meta = {
        "sampler": "rejection",
        "rule": rule,
        "seed": int(seed),
        "K": int(K),
        "domain": domain.to_dict(),
        "proposals": int(proposals),
        "acceptance_rate": float(n_kept / proposals) if proposals else 1.0,
        "envelope": env,
        "envelope_growths": growths,
    }
    return SampleBatch(Zk, X, np.full(len(Zk), -1, dtype=np.int64), meta)
