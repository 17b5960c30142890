"""Command-line entry point: ``magnet <subcommand> [flags]``.

Exit codes: 0 success, 1 input/usage error, 2 numerical failure.  Failures put a
single ``ERR:<code>:<message>`` line on stderr.  Every run first prints its
resolved configuration as one ``config {json}`` line on stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import rng as rngmod
from .cpa_net import Activation, CpaNetwork, Layer, forward
from .density import LatentPrior, density_at_latent, density_at_point, pushforward_entropy
from .diagnostics import (
    GridBins,
    RegionBins,
    default_epsilon,
    epsball_counts,
    gmm_loglik,
    lipschitz_estimate,
    uniformity_chi2,
)
from .errors import DegenerateFitError, InputError, MagnetError, NumericalError
from .model_io import (
    LIPSCHITZ_PROBE,
    Piecewise1D,
    RandomCpa,
    TriangularSupport2D,
    TwoRegion1D,
    dumps_report,
    load_model,
    make_toy,
    save_model,
    to_jsonable,
    write_report,
    write_samples,
)
from .sampling import (
    Gaussian,
    SamplerConfig,
    UniformBox,
    VolumePolicy,
    Weighting,
    build_pool,
    draw_latents,
    magnet_sample,
    pool_log_volumes,
    rejection_sample,
    standard_sample,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as input errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERR:USAGE:{message}\n")
        raise SystemExit(EXIT_INPUT)


# ---------------------------------------------------------------- flag parsing


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise InputError(f"bad {what}: {text!r}") from None


def parse_domain(text: str, dim: int):
    """``uniform:lo,hi`` (same bounds on every axis) or ``gaussian`` (standard normal)."""
    if text == "gaussian":
        return Gaussian(np.zeros(dim), np.ones(dim))
    if text.startswith("uniform:"):
        v = _floats(text[len("uniform:"):], "domain")
        if len(v) != 2:
            raise InputError("uniform domain takes lo,hi")
        return UniformBox(np.full(dim, v[0]), np.full(dim, v[1]))
    raise InputError(f"unknown domain {text!r}; use uniform:lo,hi or gaussian")


def prior_for(domain) -> LatentPrior:
    if isinstance(domain, UniformBox):
        return LatentPrior.uniform_box(domain.lo, domain.hi)
    return LatentPrior.standard_gaussian(domain.dim)


def parse_weighting(text: str) -> Weighting:
    if text == "proportional":
        return Weighting()
    if text.startswith("softmax:"):
        t = _floats(text[len("softmax:"):], "temperature")
        if len(t) != 1:
            raise InputError("softmax weighting takes softmax:T")
        return Weighting("softmax", t[0])
    raise InputError(f"unknown weighting {text!r}; use proportional or softmax:T")


def parse_volume(text: str) -> VolumePolicy:
    if text == "exact":
        return VolumePolicy()
    if text.startswith("proj:"):
        v = _floats(text[len("proj:"):], "volume")
        if len(v) != 2 or any(x != int(x) or x < 1 for x in v):
            raise InputError("projected volume takes proj:d,k with positive integers")
        return VolumePolicy("projected", int(v[0]), int(v[1]))
    raise InputError(f"unknown volume policy {text!r}; use exact or proj:d,k")


def parse_kind(text: str, seed: int) -> CpaNetwork:
    """Toy network from a ``--kind`` string."""
    name, _, arg = text.partition(":")
    if name == "two-region":
        v = _floats(arg, "two-region slopes") if arg else [0.5, 1.0]
        if len(v) != 2:
            raise InputError("two-region takes neg,pos slopes")
        return make_toy(TwoRegion1D(*v))
    if name == "triangle":
        v = _floats(arg, "bias profile") if arg else [1.0, 3.0]
        return make_toy(TriangularSupport2D(tuple(v)))
    if name == "lipschitz-probe":
        return make_toy(LIPSCHITZ_PROBE)
    if name == "piecewise":
        knots, _, slopes = arg.partition("/")
        return make_toy(Piecewise1D(tuple(_floats(knots, "knots")), tuple(_floats(slopes, "slopes"))))
    if name == "random":
        # random:S,D,w1-w2-...[,alpha]
        parts = arg.split(",")
        if len(parts) not in (3, 4):
            raise InputError("random takes S,D,w1-w2-...[,alpha]")
        try:
            S, D = int(parts[0]), int(parts[1])
            widths = tuple(int(w) for w in parts[2].split("-") if w)
            alpha = float(parts[3]) if len(parts) == 4 else 0.0
        except ValueError:
            raise InputError(f"bad random spec {arg!r}") from None
        return make_toy(RandomCpa(S, D, widths, seed, alpha))
    if name == "linear":
        # linear:a11,a12;a21,a22;... one row per output coordinate
        rows = [_floats(r, "linear rows") for r in arg.split(";") if r]
        if not rows or len({len(r) for r in rows}) != 1:
            raise InputError("linear takes equal-length rows separated by ';'")
        W = np.array(rows)
        return CpaNetwork((Layer(W, np.zeros(W.shape[0]), Activation.identity()),))
    raise InputError(f"unknown toy kind {name!r}")


def parse_bins(text: str, net: CpaNetwork, domain):
    if not isinstance(domain, UniformBox):
        raise InputError("uniformity bins need a uniform latent domain")
    if text == "region":
        return RegionBins.from_net(net, domain)
    if text.startswith("grid:"):
        v = _floats(text[len("grid:"):], "grid shape")
        if not v or len(v) > 2 or any(x != int(x) or x < 1 for x in v):
            raise InputError("grid bins take grid:n or grid:n,m")
        return GridBins.from_net(net, domain, [int(x) for x in v])
    raise InputError(f"unknown bins {text!r}; use region or grid:n[,m]")


def parse_components(text: str) -> list[int]:
    lo, sep, hi = text.partition("-")
    try:
        out = list(range(int(lo), int(hi) + 1)) if sep else [int(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"bad components {text!r}") from None
    if not out or min(out) < 1:
        raise InputError("components must be positive")
    return out


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", type=Path)

    model = _Parser(add_help=False)
    model.add_argument("--model", type=Path, required=True)
    model.add_argument("--domain", default="uniform:-1,1")

    pool = _Parser(add_help=False)
    pool.add_argument("--n", type=int, default=100_000, help="latent pool size")
    pool.add_argument("--k", type=int, default=1000, help="number of output samples")
    pool.add_argument("--weighting", default="proportional")
    pool.add_argument("--volume", default="exact")

    p = _Parser(prog="magnet", description="Uniform sampling on the manifold of a piecewise-affine generator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-toy", parents=[common], help="write a synthetic toy network")
    g.add_argument("--kind", required=True)

    s = sub.add_parser("sample", parents=[common, model, pool], help="draw samples to CSV")
    s.add_argument("--sampler", choices=["magnet", "standard", "rejection"], default="magnet")

    d = sub.add_parser("density", parents=[common, model], help="pushforward density at a point")
    d.add_argument("--at", required=True, help="comma-separated latent point (or output point with --space output)")
    d.add_argument("--space", choices=["latent", "output"], default="latent")
    d.add_argument("--n", type=int, default=100_000, help="latent draws searched for preimages (output space)")

    e = sub.add_parser("entropy", parents=[common, model], help="Monte-Carlo differential entropy")
    e.add_argument("--n", type=int, default=1_000_000, help="Monte-Carlo draws")

    eb = sub.add_parser("epsball", parents=[common, model, pool], help="epsilon-ball count dispersion")
    eb.add_argument("--epsilon", type=float)
    eb.add_argument("--reference", type=Path, help="CSV of reference points (x_* columns)")

    gm = sub.add_parser("gmm", parents=[common, model, pool], help="GMM log-likelihood per sampler")
    gm.add_argument("--components", default="2-10")
    gm.add_argument("--restarts", type=int, default=5)

    li = sub.add_parser("lipschitz", parents=[common, model, pool], help="running-max Jacobian norm traces")
    li.add_argument("--runs", type=int, default=200)

    u = sub.add_parser("uniformity", parents=[common, model, pool], help="chi-square uniformity test")
    u.add_argument("--bins", default="region")
    u.add_argument("--sampler", choices=["magnet", "standard", "rejection"], default="magnet")

    ps = sub.add_parser("pool-study", parents=[common, model, pool], help="chi-square p versus pool size")
    ps.add_argument("--bins", default="region")
    ps.add_argument("--pools", default="10000,100000,1000000")
    ps.add_argument("--runs", type=int, default=20)
    return p


# ---------------------------------------------------------------- helpers


def _emit(config: dict) -> dict:
    print("config " + json.dumps(to_jsonable(config), sort_keys=True), flush=True)
    return config


def _result(report: dict, out: Optional[Path], echo: Optional[dict] = None, sidecar: bool = False) -> None:
    """Print the result; with ``out``, also save it with the config echo for replay.

    When ``out`` already holds CSV data the report goes to ``<out>.json``.
    """
    sys.stdout.write(dumps_report(report))
    if out is not None and echo is not None:
        target = out.with_name(out.name + ".json") if sidecar else out
        write_report({"config": echo, "result": report}, target)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    except OSError as e:
        raise InputError(f"{path}: cannot write: {e}") from e


def _read_points(path: Path, D: int) -> np.ndarray:
    try:
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e}") from e
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h.startswith("x_")] or list(range(len(header)))
    try:
        X = np.array([[float(r[i]) for i in cols] for r in rows[1:]])
    except (ValueError, IndexError):
        raise InputError(f"{path}: non-numeric reference data") from None
    if X.ndim != 2 or X.shape[1] != D:
        raise InputError(f"{path}: reference points must have {D} columns")
    return X


def _context(args):
    net = load_model(args.model)
    domain = parse_domain(args.domain, net.latent_dim)
    return net, domain


def _sampler_config(args, domain) -> SamplerConfig:
    return SamplerConfig(
        domain,
        args.n,
        args.k,
        args.seed,
        parse_volume(args.volume),
        parse_weighting(args.weighting),
        threads=args.threads,
    )


def _draw(net, cfg: SamplerConfig, which: str, seed: int):
    """One batch from the named sampler; the pool and resampling share ``seed``."""
    if which == "standard":
        return standard_sample(net, cfg.domain, cfg.sample_count, seed, cfg.threads)
    if which == "rejection":
        warm_n = min(cfg.pool_size, 1000)
        Zw = draw_latents(cfg.domain, warm_n, seed, key=rngmod.MISC)
        warm = np.exp(pool_log_volumes(net, Zw, cfg.volume_policy))
        return rejection_sample(net, cfg.domain, warm[np.isfinite(np.log(warm))], cfg.sample_count, seed)
    c = SamplerConfig(cfg.domain, cfg.pool_size, cfg.sample_count, seed, cfg.volume_policy, cfg.weighting, threads=cfg.threads)
    return magnet_sample(net, build_pool(net, c), cfg.sample_count, seed)


def _base_config(args, net=None, domain=None) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    if net is not None:
        cfg["latent_dim"], cfg["output_dim"] = net.latent_dim, net.output_dim
    if domain is not None:
        cfg["domain_resolved"] = domain.to_dict()
    return cfg


# ---------------------------------------------------------------- commands


def cmd_gen_toy(args) -> None:
    if args.out is None:
        raise InputError("gen-toy needs --out")
    net = parse_kind(args.kind, args.seed)
    _emit(_base_config(args, net))
    save_model(net, args.out)
    _result({"model": str(args.out), "latent_dim": net.latent_dim, "output_dim": net.output_dim,
             "hidden_widths": list(net.hidden_widths)}, None)


def cmd_sample(args) -> None:
    net, domain = _context(args)
    cfg = _sampler_config(args, domain)
    echo = _emit({**_base_config(args, net, domain), "sampler_config": cfg.to_dict()})
    batch = _draw(net, cfg, args.sampler, args.seed)
    if args.out is not None:
        write_samples(batch, args.out)
    _result({"n_samples": len(batch), "metadata": batch.metadata}, args.out, echo, sidecar=True)


def cmd_density(args) -> None:
    net, domain = _context(args)
    prior = prior_for(domain)
    echo = _emit({**_base_config(args, net, domain), "prior": prior.to_dict()})
    at = np.array(_floats(args.at, "point"))
    if args.space == "latent":
        if at.size != net.latent_dim:
            raise InputError(f"--at needs {net.latent_dim} latent coordinates")
        val = density_at_latent(net, prior, at)
    else:
        if at.size != net.output_dim:
            raise InputError(f"--at needs {net.output_dim} output coordinates")
        Z = draw_latents(domain, args.n, args.seed, threads=args.threads)
        _, idx = cKDTree(forward(net, Z)).query(at, k=min(16, len(Z)))
        val = density_at_point(net, prior, at, Z[np.atleast_1d(idx)])
    _result(
        {"log_p": val.log_p, "p": val.p, "latent_preimage": val.latent_preimage,
         "region_pattern": val.region_pattern.flat().astype(int)},
        args.out,
        echo,
    )


def cmd_entropy(args) -> None:
    net, domain = _context(args)
    prior = prior_for(domain)
    echo = _emit({**_base_config(args, net, domain), "prior": prior.to_dict()})
    est = pushforward_entropy(net, prior, args.n, args.seed, args.threads)
    if est.warning:
        sys.stderr.write(f"WARN:RANK_DEFICIENT:{est.warning}\n")
    _result(to_jsonable(est), args.out, echo)


def cmd_epsball(args) -> None:
    net, domain = _context(args)
    cfg = _sampler_config(args, domain)
    echo = _emit({**_base_config(args, net, domain), "sampler_config": cfg.to_dict()})
    if args.reference is not None:
        ref = _read_points(args.reference, net.output_dim)
    else:
        # default reference: a uniform-on-manifold draw under an independent seed
        ref = _draw(net, cfg, "magnet", rngmod.derived_seeds(args.seed, 1)[0]).outputs
    eps = args.epsilon if args.epsilon is not None else default_epsilon(ref)
    out = {"epsilon": eps}
    for which in ("standard", "magnet"):
        rep = epsball_counts(ref, _draw(net, cfg, which, args.seed).outputs, eps)
        out[which] = {"dispersion": rep.dispersion, "mean": rep.mean, "histogram": rep.histogram}
    _result(out, args.out, echo)


def cmd_gmm(args) -> None:
    net, domain = _context(args)
    cfg = _sampler_config(args, domain)
    comps = parse_components(args.components)
    echo = _emit({**_base_config(args, net, domain), "sampler_config": cfg.to_dict(), "components_resolved": comps})
    out = {}
    for which in ("standard", "magnet"):
        X = _draw(net, cfg, which, args.seed).outputs
        fits = [gmm_loglik(X, c, args.restarts, args.seed) for c in comps]
        for f in fits:
            if f.n_floored == f.n_components:
                raise DegenerateFitError(f"{which}: every one of {f.n_components} components collapsed to the variance floor")
        out[which] = {str(f.n_components): {"log_likelihood": f.log_likelihood, "converged": f.converged} for f in fits}
    _result(out, args.out, echo)


def cmd_lipschitz(args) -> None:
    net, domain = _context(args)
    echo = _emit(_base_config(args, net, domain))
    traces = {
        w: lipschitz_estimate(net, w, args.k, args.runs, args.seed, domain, args.n, args.threads)
        for w in ("standard", "magnet")
    }
    if args.out is not None:
        rows = (
            (n + 1, *(float(v) for w in traces for v in (traces[w].mean[n], traces[w].std[n])))
            for n in range(args.k)
        )
        _write_csv(args.out, ["n", "standard_mean", "standard_std", "magnet_mean", "magnet_std"], rows)
    marks = sorted({m for m in (1, 10, 100, 1000, args.k) if m <= args.k})
    _result(
        {w: {str(m): {"mean": float(t.mean[m - 1]), "std": float(t.std[m - 1])} for m in marks} for w, t in traces.items()},
        args.out,
        echo,
        sidecar=True,
    )


def cmd_uniformity(args) -> None:
    net, domain = _context(args)
    cfg = _sampler_config(args, domain)
    bins = parse_bins(args.bins, net, domain)
    echo = _emit({**_base_config(args, net, domain), "sampler_config": cfg.to_dict(), "bins_resolved": bins.describe()})
    res = uniformity_chi2(net, _draw(net, cfg, args.sampler, args.seed), bins)
    _result({"statistic": res.statistic, "p_value": res.p_value, "dof": res.dof,
             "observed": res.observed, "expected": res.expected, "merged": res.merged}, args.out, echo)


def cmd_pool_study(args) -> None:
    net, domain = _context(args)
    pools = [int(v) for v in _floats(args.pools, "pools")]
    bins = parse_bins(args.bins, net, domain)
    base = _sampler_config(args, domain)
    echo = _emit({**_base_config(args, net, domain), "sampler_config": base.to_dict(), "pools_resolved": pools,
           "bins_resolved": bins.describe()})
    rows = []
    for N in pools:
        ps, ess = [], []
        for s in range(args.seed, args.seed + args.runs):
            cfg = SamplerConfig(domain, N, args.k, s, base.volume_policy, base.weighting, threads=args.threads)
            batch = magnet_sample(net, build_pool(net, cfg), args.k, s)
            ps.append(uniformity_chi2(net, batch, bins).p_value)
            ess.append(batch.metadata["ess"])
        rows.append((N, float(np.median(ps)), float(np.mean(ess)), float(np.mean(np.array(ps) > 0.01))))
    if args.out is not None:
        _write_csv(args.out, ["pool_size", "median_p", "mean_ess", "pass_rate"], rows)
    _result({str(r[0]): {"median_p": r[1], "mean_ess": r[2], "pass_rate": r[3]} for r in rows}, args.out, echo, sidecar=True)


COMMANDS = {
    "gen-toy": cmd_gen_toy,
    "sample": cmd_sample,
    "density": cmd_density,
    "entropy": cmd_entropy,
    "epsball": cmd_epsball,
    "gmm": cmd_gmm,
    "lipschitz": cmd_lipschitz,
    "uniformity": cmd_uniformity,
    "pool-study": cmd_pool_study,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        rngmod.check_seed(args.seed)
        COMMANDS[args.command](args)
    except NumericalError as e:
        sys.stderr.write(f"ERR:{e.code}:{e}\n")
        return EXIT_NUMERIC
    except MagnetError as e:
        sys.stderr.write(f"ERR:{e.code}:{e}\n")
        return EXIT_INPUT
    except (OSError, ValueError) as e:
        sys.stderr.write(f"ERR:INPUT:{e}\n")
        return EXIT_INPUT
    return EXIT_OK


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
