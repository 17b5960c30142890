"""Model files, toy networks, and sample/report serialization.

Model files are UTF-8 JSON::

    {"format_version": 1, "latent_dim": S, "output_dim": D,
     "layers": [{"rows": r, "cols": c, "weight_data": [... r*c row-major ...],
                 "bias_data": [... r ...], "activation": {"kind": "relu", "alpha": 0.0}}, ...]}

Floats are written with Python's shortest round-trip repr, so a save/load cycle
is bit-exact.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .cpa_net import Activation, CpaNetwork, Layer
from .errors import InputError, ModelFileError
from .sampling import SampleBatch, UniformBox

FORMAT_VERSION = 1


# ---------------------------------------------------------------- model files


def model_to_dict(net: CpaNetwork) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "latent_dim": net.latent_dim,
        "output_dim": net.output_dim,
        "layers": [
            {
                "rows": layer.out_dim,
                "cols": layer.in_dim,
                "weight_data": [float(v) for v in layer.weight.ravel()],
                "bias_data": [float(v) for v in layer.bias],
                "activation": {"kind": layer.activation.kind.value, "alpha": layer.activation.alpha},
            }
            for layer in net.layers
        ],
    }


def dumps_model(net: CpaNetwork) -> str:
    return json.dumps(model_to_dict(net), indent=1, allow_nan=False) + "\n"


def save_model(net: CpaNetwork, path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps_model(net), encoding="utf-8")
    except OSError as e:
        raise InputError(f"{path}: cannot write model: {e}") from e


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelFileError(f"{where}.{key}: missing")
    return obj[key]


def _int_field(obj, key, where) -> int:
    v = _field(obj, key, where)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ModelFileError(f"{where}.{key}: expected a positive integer, got {v!r}")
    return v


def _reals(values, where: str) -> np.ndarray:
    if not isinstance(values, list):
        raise ModelFileError(f"{where}: expected a list of numbers")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ModelFileError(f"{where}[{i}]: not a number: {v!r}")
        if not math.isfinite(v):
            raise ModelFileError(f"{where}[{i}]: non-finite value {v!r}")
    return np.array(values, dtype=np.float64)


def model_from_dict(doc: dict) -> CpaNetwork:
    version = _field(doc, "format_version", "$")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"$.format_version: unsupported version {version!r} (expected {FORMAT_VERSION})")
    S = _int_field(doc, "latent_dim", "$")
    D = _int_field(doc, "output_dim", "$")
    raw_layers = _field(doc, "layers", "$")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFileError("$.layers: expected a nonempty list")
    layers = []
    prev = S
    for i, raw in enumerate(raw_layers):
        where = f"$.layers[{i}]"
        rows = _int_field(raw, "rows", where)
        cols = _int_field(raw, "cols", where)
        w = _reals(_field(raw, "weight_data", where), f"{where}.weight_data")
        b = _reals(_field(raw, "bias_data", where), f"{where}.bias_data")
        if w.size != rows * cols:
            raise ModelFileError(f"{where}.weight_data: layer {i} has {w.size} values, expected rows*cols={rows * cols}")
        if b.size != rows:
            raise ModelFileError(f"{where}.bias_data: layer {i} has {b.size} values, expected rows={rows}")
        if cols != prev:
            raise ModelFileError(f"{where}.cols: layer {i} takes {cols} inputs but receives {prev}")
        act = _field(raw, "activation", where)
        try:
            activation = Activation(_field(act, "kind", f"{where}.activation"), _field(act, "alpha", f"{where}.activation"))
        except ValueError as e:
            raise ModelFileError(f"{where}.activation: {e}") from e
        layers.append(Layer(w.reshape(rows, cols), b, activation))
        prev = rows
    if prev != D:
        raise ModelFileError(f"$.output_dim: last layer outputs {prev}, header says {D}")
    try:
        return CpaNetwork(tuple(layers))
    except InputError as e:
        raise ModelFileError(f"$: {e}") from e


def _reject_constant(name):
    raise ModelFileError(f"non-finite literal {name} in model file")


def load_model(path) -> CpaNetwork:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ModelFileError(f"{path}: cannot read model: {e}") from e
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}: invalid JSON: {e}") from e
    return model_from_dict(doc)


# ---------------------------------------------------------------- toys


@dataclass(frozen=True)
class TwoRegion1D:
    slope_neg: float = 0.5
    slope_pos: float = 1.0


@dataclass(frozen=True)
class TriangularSupport2D:
    """Box ``[0,1]^2`` onto the triangle (0,0), (1,0), (0,1).

    Each latent coordinate first passes through a monotone piecewise-linear warp
    whose segment slopes are proportional to ``bias_profile``; unequal slopes
    make the standard pushforward non-uniform on the triangle.
    """

    bias_profile: tuple = (1.0, 3.0)


@dataclass(frozen=True)
class RandomCpa:
    S: int
    D: int
    widths: tuple
    seed: int
    alpha: float = 0.0


@dataclass(frozen=True)
class Piecewise1D:
    """Continuous 1->1 map with slope ``slopes[k]`` between consecutive ``knots``."""

    knots: tuple = (-0.9, 0.0)
    slopes: tuple = (4.0, 1.0, 2.0)


ToySpec = Union[TwoRegion1D, TriangularSupport2D, RandomCpa, Piecewise1D]

# the 1->1 net whose steepest region holds 5% of the latent mass on [-1, 1]
LIPSCHITZ_PROBE = Piecewise1D((-0.9, 0.0), (4.0, 1.0, 2.0))


def toy_domain(spec: ToySpec) -> UniformBox:
    """Latent box each toy is meant to be sampled on."""
    if isinstance(spec, TriangularSupport2D):
        return UniformBox([0.0, 0.0], [1.0, 1.0])
    if isinstance(spec, RandomCpa):
        return UniformBox(-np.ones(spec.S), np.ones(spec.S))
    return UniformBox([-1.0], [1.0])


def _activation_for(alpha: float) -> Activation:
    if alpha == 0:
        return Activation.relu()
    if alpha == -1:
        return Activation.absolute()
    if alpha == 1:
        return Activation.identity()
    return Activation.leaky_relu(alpha)


def _piecewise(knots: Sequence[float], slopes: Sequence[float]) -> CpaNetwork:
    knots = [float(k) for k in knots]
    slopes = [float(s) for s in slopes]
    if len(slopes) != len(knots) + 1:
        raise InputError("need one more slope than knots")
    if any(s == 0 for s in slopes):
        raise InputError("zero slope makes a rank-deficient region")
    if any(b <= a for a, b in zip(knots, knots[1:])):
        raise InputError("knots must increase")
    # units: relu(z), relu(-z), relu(z - t_k)
    w1 = np.array([[1.0], [-1.0]] + [[1.0]] * len(knots))
    b1 = np.array([0.0, 0.0] + [-t for t in knots])
    w2 = np.array([[slopes[0], -slopes[0]] + [slopes[k + 1] - slopes[k] for k in range(len(knots))]])
    return CpaNetwork((Layer(w1, b1, Activation.relu()), Layer(w2, np.zeros(1), Activation.identity())))


def _triangle(profile: Sequence[float]) -> CpaNetwork:
    prof = np.asarray(profile, dtype=np.float64)
    if prof.ndim != 1 or prof.size < 1 or not np.all(prof > 0):
        raise InputError("bias_profile must be a nonempty list of positive numbers")
    m = prof.size
    slopes = prof / prof.mean()  # warp maps [0,1] onto [0,1]
    knots = np.arange(m) / m
    c = np.diff(slopes, prepend=0.0)
    # layer 1: relu(z_j - t_k) for both coordinates
    w1 = np.zeros((2 * m, 2))
    w1[:m, 0] = 1.0
    w1[m:, 1] = 1.0
    b1 = -np.concatenate([knots, knots])
    # layer 2: warped coords u1, u2 and relu(u2 - u1)
    w2 = np.zeros((3, 2 * m))
    w2[0, :m] = c
    w2[1, m:] = c
    w2[2, :m] = -c
    w2[2, m:] = c
    # layer 3: fold the square onto the triangle
    w3 = np.array([[1.0, -0.5, 0.5], [0.0, 0.5, 0.5]])
    return CpaNetwork(
        (
            Layer(w1, b1, Activation.relu()),
            Layer(w2, np.zeros(3), Activation.relu()),
            Layer(w3, np.zeros(2), Activation.identity()),
        )
    )


def make_toy(spec: ToySpec) -> CpaNetwork:
    if isinstance(spec, TwoRegion1D):
        neg, pos = float(spec.slope_neg), float(spec.slope_pos)
        if neg == 0 or pos == 0:
            raise InputError("zero slope makes a rank-deficient region")
        ratio = neg / pos
        if ratio > 0 or ratio == -1:
            return CpaNetwork(
                (
                    Layer([[pos]], [0.0], _activation_for(ratio)),
                    Layer([[1.0]], [0.0], Activation.identity()),
                )
            )
        return _piecewise((0.0,), (neg, pos))
    if isinstance(spec, Piecewise1D):
        return _piecewise(spec.knots, spec.slopes)
    if isinstance(spec, TriangularSupport2D):
        return _triangle(spec.bias_profile)
    if isinstance(spec, RandomCpa):
        if spec.D < spec.S:
            raise InputError("RandomCpa needs D >= S")
        rng = np.random.default_rng(spec.seed)
        dims = [spec.S, *spec.widths, spec.D]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            b = rng.standard_normal(fan_out) / np.sqrt(fan_in)
            last = i == len(dims) - 2
            layers.append(Layer(w, b, Activation.identity() if last else _activation_for(spec.alpha)))
        return CpaNetwork(tuple(layers))
    raise InputError(f"unknown toy spec {spec!r}")


# ---------------------------------------------------------------- samples and reports


def write_samples(batch: SampleBatch, path) -> None:
    """CSV with columns z_*, x_*, source_index; reals at 17 significant digits."""
    path = Path(path)
    S = batch.latents.shape[1]
    D = batch.outputs.shape[1]
    header = [f"z_{i}" for i in range(S)] + [f"x_{i}" for i in range(D)] + ["source_index"]
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for z, x, s in zip(batch.latents, batch.outputs, batch.source_indices):
                w.writerow([f"{v:.17g}" for v in z] + [f"{v:.17g}" for v in x] + [int(s)])
    except OSError as e:
        raise InputError(f"{path}: cannot write samples: {e}") from e


def read_samples(path) -> SampleBatch:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    S = sum(h.startswith("z_") for h in header)
    D = sum(h.startswith("x_") for h in header)
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), S + D + 1)
    return SampleBatch(data[:, :S], data[:, S:S + D], data[:, -1].astype(np.int64))


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps_report(report) -> str:
    return json.dumps(to_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(report, path) -> None:
    """Structured JSON report; callers include config and seeds so the run can be replayed."""
    path = Path(path)
    try:
        path.write_text(dumps_report(report), encoding="utf-8")
    except OSError as e:
        raise InputError(f"{path}: cannot write report: {e}") from e
