"""Continuous piecewise-affine (CPA) generator networks.

A network is a stack of dense layers, each followed by an elementwise activation
with two slopes ``{alpha, 1}`` and its breakpoint at zero.  Inside one region of
the latent partition (fixed activation pattern) the whole network collapses to a
single affine map ``z -> A z + b``; :func:`region_affine` returns that map.

All math is float64.  Patterns use the convention that a preactivation of
exactly zero takes slope 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ABS = "abs"
    IDENTITY = "identity"


_FIXED_ALPHA = {
    ActivationKind.RELU: 0.0,
    ActivationKind.ABS: -1.0,
    ActivationKind.IDENTITY: 1.0,
}


@dataclass(frozen=True)
class Activation:
    kind: ActivationKind
    alpha: float

    def __post_init__(self):
        kind = ActivationKind(self.kind)
        object.__setattr__(self, "kind", kind)
        alpha = float(self.alpha)
        if kind in _FIXED_ALPHA and alpha != _FIXED_ALPHA[kind]:
            raise InputError(f"{kind.value} requires alpha={_FIXED_ALPHA[kind]}, got {alpha}")
        if kind is ActivationKind.LEAKY_RELU and not (alpha > 0 and np.isfinite(alpha)):
            raise InputError(f"leaky_relu requires alpha > 0, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def relu(cls) -> Activation:
        return cls(ActivationKind.RELU, 0.0)

    @classmethod
    def leaky_relu(cls, alpha: float) -> Activation:
        return cls(ActivationKind.LEAKY_RELU, alpha)

    @classmethod
    def absolute(cls) -> Activation:
        return cls(ActivationKind.ABS, -1.0)

    @classmethod
    def identity(cls) -> Activation:
        return cls(ActivationKind.IDENTITY, 1.0)

    def slopes(self, pre: np.ndarray) -> np.ndarray:
        """Pointwise derivative, read off the sign of the preactivation."""
        return np.where(pre >= 0, 1.0, self.alpha)

    def __call__(self, pre: np.ndarray) -> np.ndarray:
        return np.where(pre >= 0, pre, self.alpha * pre)


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation

    def __post_init__(self):
        w = _frozen(self.weight)
        b = _frozen(self.bias)
        if w.ndim != 2:
            raise InputError(f"weight must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise InputError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class CpaNetwork:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InputError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise InputError(
                    f"layer {i} expects input dim {layers[i].in_dim}, "
                    f"previous layer outputs {layers[i - 1].out_dim}"
                )
        if layers[-1].activation.kind is not ActivationKind.IDENTITY:
            raise InputError("final layer activation must be identity")
        if layers[-1].out_dim < layers[0].in_dim:
            raise InputError(
                f"output dim {layers[-1].out_dim} < latent dim {layers[0].in_dim}"
            )
        object.__setattr__(self, "layers", layers)

    @property
    def latent_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.layers[:-1])


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """Per hidden layer, per unit: True where the preactivation is >= 0."""

    bits: tuple[np.ndarray, ...]

    @property
    def n_bits(self) -> int:
        return sum(b.size for b in self.bits)

    def flat(self) -> np.ndarray:
        if not self.bits:
            return np.zeros(0, dtype=bool)
        return np.concatenate(self.bits)

    def key(self) -> bytes:
        return np.packbits(self.flat()).tobytes() + self.n_bits.to_bytes(4, "little")

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return self.n_bits == other.n_bits and bool(np.array_equal(self.flat(), other.flat()))

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class RegionAffine:
    A: np.ndarray
    b: np.ndarray
    pattern: ActivationPattern

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(z, dtype=np.float64) + self.b


@dataclass(frozen=True, eq=False)
class FdJacobian:
    J: np.ndarray
    contaminated_columns: tuple[int, ...] = field(default=())

    @property
    def contaminated(self) -> bool:
        return bool(self.contaminated_columns)


def _as_batch(net: CpaNetwork, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.ndim != 2 or Z.shape[1] != net.latent_dim:
        raise InputError(f"expected latent vector(s) of length {net.latent_dim}, got shape {z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InputError("latent input must be finite")
    return Z, single


def _bits(layer: Layer, pre: np.ndarray) -> np.ndarray:
    # identity units have one slope, so they never split a region
    if layer.activation.kind is ActivationKind.IDENTITY:
        return np.ones(pre.shape, dtype=bool)
    return pre >= 0


def forward(net: CpaNetwork, z) -> np.ndarray:
    """Evaluate the network at one latent vector ``(S,)`` or a batch ``(n, S)``."""
    Z, single = _as_batch(net, z)
    h = Z
    for layer in net.layers:
        h = layer.activation(h @ layer.weight.T + layer.bias)
    return h[0] if single else h


def activation_codes(net: CpaNetwork, z) -> np.ndarray:
    """Flat boolean activation codes, shape ``(n, sum(hidden_widths))``."""
    Z, single = _as_batch(net, z)
    h = Z
    codes = []
    for layer in net.layers[:-1]:
        pre = h @ layer.weight.T + layer.bias
        codes.append(_bits(layer, pre))
        h = layer.activation(pre)
    out = np.concatenate(codes, axis=1) if codes else np.zeros((len(Z), 0), dtype=bool)
    return out[0] if single else out


def activation_pattern(net: CpaNetwork, z) -> ActivationPattern:
    Z, _ = _as_batch(net, np.asarray(z, dtype=np.float64).reshape(-1))
    h = Z[0]
    bits = []
    for layer in net.layers[:-1]:
        pre = layer.weight @ h + layer.bias
        bits.append(_bits(layer, pre))
        h = layer.activation(pre)
    return ActivationPattern(tuple(bits))


def preactivation_maps(net: CpaNetwork, z) -> tuple[list[tuple[np.ndarray, np.ndarray]], RegionAffine]:
    """Affine preactivation maps ``z -> P z + q`` of every layer, valid in the region of ``z``.

    Returns the per-layer maps and the region's output map.
    """
    Z, _ = _as_batch(net, np.asarray(z, dtype=np.float64).reshape(-1))
    S = net.latent_dim
    A = np.eye(S)
    b = np.zeros(S)
    h = Z[0]
    maps = []
    bits = []
    for layer in net.layers:
        P = layer.weight @ A
        q = layer.weight @ b + layer.bias
        pre = layer.weight @ h + layer.bias
        maps.append((P, q))
        s = layer.activation.slopes(pre)
        if layer is not net.layers[-1]:
            bits.append(_bits(layer, pre))
        A = s[:, None] * P
        b = s * q
        h = layer.activation(pre)
    return maps, RegionAffine(A, b, ActivationPattern(tuple(bits)))


def region_affine(net: CpaNetwork, z) -> RegionAffine:
    """Slope and offset of the region containing ``z``.

    Accumulates ``A <- diag(s) W A`` and ``b <- diag(s) (W b + bias)`` layer by
    layer, which expands to the usual product form of the per-region parameters.
    """
    return preactivation_maps(net, z)[1]


def region_jacobians(net: CpaNetwork, z) -> tuple[np.ndarray, np.ndarray]:
    """Batched region slopes ``(n, D, S)`` and offsets ``(n, D)``."""
    Z, single = _as_batch(net, z)
    n, S = Z.shape
    A = np.broadcast_to(np.eye(S), (n, S, S))
    b = np.zeros((n, S))
    h = Z
    for layer in net.layers:
        pre = h @ layer.weight.T + layer.bias
        s = layer.activation.slopes(pre)
        A = s[:, :, None] * np.matmul(layer.weight, A)
        b = s * (b @ layer.weight.T + layer.bias)
        h = layer.activation(pre)
    if single:
        return A[0], b[0]
    return A, b


def jacobian_fd(net: CpaNetwork, z, h: float = 1e-6) -> FdJacobian:
    """Central-difference Jacobian.

    Columns whose two probe points fall in different regions are listed in
    ``contaminated_columns`` and a RuntimeWarning is emitted.
    """
    if not h > 0:
        raise InputError("step h must be positive")
    z = np.asarray(z, dtype=np.float64)
    Z, _ = _as_batch(net, z.reshape(-1))
    z = Z[0]
    S = net.latent_dim
    E = np.eye(S) * h
    plus = z + E
    minus = z - E
    J = (forward(net, plus) - forward(net, minus)).T / (2 * h)
    cp = activation_codes(net, plus)
    cm = activation_codes(net, minus)
    bad = tuple(int(j) for j in np.flatnonzero(np.any(cp != cm, axis=1)))
    if bad:
        warnings.warn(
            f"finite-difference probes cross a region boundary in columns {bad}",
            RuntimeWarning,
            stacklevel=2,
        )
    return FdJacobian(J, bad)


def line_regions(net: CpaNetwork, start, stop, rel_step: float = 1e-10) -> tuple[np.ndarray, list[RegionAffine]]:
    """Exact partition of the segment ``start -> stop`` into linear regions.

    Returns breakpoints ``0 = t_0 < ... < t_m = 1`` (segment parameter) and the
    region map on each piece.  Pieces shorter than ``rel_step`` can be missed.
    """
    p = np.asarray(start, dtype=np.float64)
    d = np.asarray(stop, dtype=np.float64) - p
    ts = [0.0]
    regions = []
    t = 0.0
    while t < 1.0:
        probe = min(t + rel_step, 0.5 * (t + 1.0)) if t > 0 else rel_step
        maps, ra = preactivation_maps(net, p + probe * d)
        t_next = 1.0
        for layer, (P, q) in zip(net.layers[:-1], maps[:-1]):
            if layer.activation.kind is ActivationKind.IDENTITY:
                continue
            alpha = P @ p + q
            beta = P @ d
            with np.errstate(divide="ignore", invalid="ignore"):
                cross = -alpha / beta
            ok = (beta != 0) & (cross > probe)
            if np.any(ok):
                t_next = min(t_next, float(np.min(cross[ok])))
        regions.append(ra)
        ts.append(t_next)
        t = t_next
    return np.array(ts), regions
