"""Command-line interface: ``manifold-mc {sample,integrate,analyze-nu,validate}``.

Configuration is a flat ``key = value`` file with dotted section names
(``sampler.step_scale = 0.5``); ``--override key=value`` entries are applied
on top. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from . import analysis, stats, validation, zoo
from .core import DegenerateConstraintError, NewtonParams, as_density
from .integrator import IntegrationConfig, IntegrationError, StageFailure, integrate
from .sampler import ProposalParams, iter_chunks, count_outcomes, Outcome

logger = logging.getLogger("manifold_mc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _words(text: str) -> List[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    return lambda text: None if text.strip().lower() in ("", "none", "auto") else conv(text)


# key -> (parser, default)
SCHEMA: Dict[str, tuple] = {
    "manifold.name": (str, "torus"),
    "manifold.R": (float, 1.0),
    "manifold.r": (float, 0.5),
    "manifold.n": (int, 11),
    "manifold.dim": (int, 3),
    "manifold.radius": (float, 1.0),
    "manifold.d": (int, 2),
    "manifold.codim": (int, 1),
    "manifold.cluster": (str, "chain"),
    "manifold.N": (int, 4),
    "manifold.edges_file": (_opt(str), None),
    "density.name": (str, "uniform"),
    "sampler.step_scale": (_opt(float), None),
    "sampler.n_steps": (int, 100_000),
    "sampler.stride": (int, 1),
    "sampler.x_init": (_opt(_floats), None),
    "sampler.reverse_check": (_bool, True),
    "newton.tol": (float, 1e-12),
    "newton.nmax": (int, 10),
    "newton.disk_nmax": (int, 50),
    "integrate.n_total": (int, 100_000),
    "integrate.k": (int, 2),
    "integrate.x0": (_opt(_floats), None),
    "integrate.r0": (_opt(float), None),
    "integrate.rk": (_opt(float), None),
    "integrate.n_initial": (int, 20_000),
    "integrate.initial_stride": (int, 10),
    "integrate.n_inner": (_opt(int), None),
    "integrate.n_probe": (int, 100_000),
    "integrate.angle_tol": (float, 1e-3),
    "integrate.step_radius_fraction": (float, 0.25),
    "integrate.burn_in_fraction": (float, 0.01),
    "integrate.warm_start": (_bool, True),
    "output.observables": (_opt(_words), None),
    "output.histogram": (_opt(_words), None),
    "output.bins": (int, 50),
    "analyze.d": (int, 2),
    "analyze.nu_min": (float, 1.05),
    "analyze.nu_max": (float, 50.0),
    "analyze.nu_points": (int, 200),
    "validate.suite": (str, "properties"),
    "seed": (int, 0),
}

POSITIVE = {"sampler.step_scale", "newton.tol", "newton.nmax", "newton.disk_nmax",
            "integrate.n_total", "integrate.k", "integrate.n_initial",
            "integrate.initial_stride", "integrate.n_probe", "integrate.angle_tol",
            "integrate.step_radius_fraction", "output.bins", "analyze.d",
            "analyze.nu_points", "sampler.stride", "manifold.R", "manifold.r",
            "manifold.radius", "manifold.n", "manifold.dim", "manifold.d",
            "manifold.codim", "manifold.N", "integrate.r0", "integrate.rk",
            "integrate.n_inner"}

# default step scales per built-in manifold
DEFAULT_STEP = {"torus": 0.5, "cone": 0.9, "son": 0.28, "cluster": 0.5}


def _split(item: str):
    if "=" not in item:
        raise ConfigError(f"expected key=value, got {item!r}")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def load_config(path: Optional[str], overrides: List[str], seed: Optional[int]) -> Dict[str, Any]:
    raw: Dict[str, str] = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None, strict=True,
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_string("[run]\n" + fh.read(), source=path)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if parser.sections() != ["run"]:
            raise ConfigError("section headers are not supported; use dotted keys")
        raw.update(parser["run"])
    for item in overrides:
        k, v = _split(item)
        raw[k] = v
    if seed is not None:
        raw["seed"] = str(seed)
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for k, v in raw.items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            cfg[k] = SCHEMA[k][0](v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    for k in POSITIVE:
        if cfg[k] is not None and not cfg[k] > 0:
            raise ConfigError(f"{k} must be positive")
    if cfg["sampler.n_steps"] < 0:
        raise ConfigError("sampler.n_steps must be >= 0")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return cfg


def config_hash(cfg: Dict[str, Any]) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=list)
    return hashlib.sha256(canon.encode()).hexdigest()


# --- manifold selection ------------------------------------------------------

@dataclass
class Target:
    kind: str
    M: Any
    x_init: np.ndarray
    observables: Dict[str, Callable]
    default_observables: List[str]
    density: Any = None


def build_target(cfg) -> Target:
    name = cfg["manifold.name"]
    if name == "torus":
        spec = zoo.TorusSpec(cfg["manifold.R"], cfg["manifold.r"])
        obs = {"phi": lambda X: zoo.torus_phi(X, spec), "theta": zoo.torus_theta,
               "cos_phi": lambda X: np.cos(zoo.torus_phi(X, spec))}
        t = Target(name, zoo.torus_manifold(spec), np.array([spec.R + spec.r, 0, 0.0]),
                   obs, ["cos_phi", "theta"])
    elif name == "cone":
        obs = {c: (lambda X, i=i: X[:, i]) for i, c in enumerate("xyz")}
        t = Target(name, zoo.cone_manifold(), np.array([0.5, 0.0, 0.5]), obs, ["x", "z"])
    elif name == "son":
        n = cfg["manifold.n"]
        if n < 2:
            raise ConfigError("manifold.n must be >= 2 for SO(n)")
        t = Target(name, zoo.son_manifold(n), np.eye(n).ravel(),
                   {"trace": lambda X: zoo.son_trace(X, n)}, ["trace"])
    elif name == "sphere":
        dim, rad = cfg["manifold.dim"], cfg["manifold.radius"]
        x = np.zeros(dim)
        x[0] = rad
        t = Target(name, zoo.sphere_manifold(dim, rad), x, {}, [])
    elif name == "flat":
        d, c = cfg["manifold.d"], cfg["manifold.codim"]
        t = Target(name, zoo.flat_manifold(d, c), np.zeros(d + c), {}, [])
    elif name == "cluster":
        if cfg["manifold.edges_file"]:
            try:
                spec = zoo.ClusterSpec.from_file(cfg["manifold.edges_file"])
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot load cluster edge list: {exc}") from None
        elif cfg["manifold.cluster"] in ("chain", "loop"):
            spec = getattr(zoo.ClusterSpec, cfg["manifold.cluster"])(cfg["manifold.N"])
        else:
            raise ConfigError("manifold.cluster must be chain or loop (or set edges_file)")
        M = zoo.cluster_manifold(spec)
        x = cfg["sampler.x_init"]
        if x is None:
            try:
                x = zoo.cluster_initial_point(spec)
            except ValueError as exc:
                raise ConfigError(f"{exc}; set sampler.x_init") from None
        t = Target(name, M, np.asarray(x), {"weight": lambda X: zoo.rigidity_weights(X, spec)},
                   ["weight"])
        if cfg["density.name"] == "rigidity":
            t.density = zoo.rigidity_density(spec)
    else:
        raise ConfigError(f"unknown manifold {name!r}")
    for i in range(t.M.ambient_dim):
        t.observables.setdefault(f"x{i}", lambda X, i=i: X[:, i])
    if cfg["density.name"] not in ("uniform", "rigidity"):
        raise ConfigError(f"unknown density {cfg['density.name']!r}")
    if cfg["density.name"] == "rigidity" and t.density is None:
        raise ConfigError("the rigidity density needs a cluster manifold")
    if cfg["sampler.x_init"] is not None:
        t.x_init = np.asarray(cfg["sampler.x_init"], dtype=np.float64)
        if t.x_init.shape != (t.M.ambient_dim,):
            raise ConfigError(f"sampler.x_init needs {t.M.ambient_dim} coordinates")
    return t


def _step_scale(cfg, target: Target) -> float:
    s = cfg["sampler.step_scale"]
    return s if s is not None else DEFAULT_STEP.get(target.kind, 0.5)


def _meta(cfg) -> dict:
    return {"config_sha256": config_hash(cfg), "seed": cfg["seed"]}


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(x):
    return x if math.isfinite(x) else None


# --- commands ----------------------------------------------------------------

def cmd_sample(cfg, out_dir) -> int:
    target = build_target(cfg)
    names = cfg["output.observables"] or target.default_observables
    hist = cfg["output.histogram"] or []
    for n in list(names) + list(hist):
        if n not in target.observables:
            raise ConfigError(f"unknown observable {n!r}; have {sorted(target.observables)}")
    params = ProposalParams(_step_scale(cfg, target), as_density(target.density),
                            NewtonParams(cfg["newton.tol"], cfg["newton.nmax"]),
                            cfg["sampler.reverse_check"])
    n_steps, stride = cfg["sampler.n_steps"], cfg["sampler.stride"]
    rng = np.random.default_rng(cfg["seed"])
    meta = _meta(cfg)
    series = {k: np.empty(n_steps) for k in set(names) | set(hist)}
    counts = {o.name: 0 for o in Outcome}
    t0 = time.perf_counter()
    with open(os.path.join(out_dir, "samples.csv"), "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_sha256={meta['config_sha256']} seed={meta['seed']}\n")
        w = csv.writer(fh)
        w.writerow(["step"] + [f"x{i}" for i in range(target.M.ambient_dim)])
        pos = 0
        for ch in iter_chunks(target.M, params, target.x_init, n_steps, rng):
            c = len(ch.codes)
            idx = np.arange(pos + 1, pos + c + 1)
            keep = idx % stride == 0
            for step, row in zip(idx[keep], ch.x[keep]):
                w.writerow([int(step)] + [repr(float(v)) for v in row])
            for k in series:
                series[k][pos:pos + c] = target.observables[k](ch.x)
            for k, v in count_outcomes(ch.codes).items():
                counts[k] += v
            pos += c
    summary = {**meta, "manifold": target.M.name, "n_steps": n_steps, "stride": stride,
               "step_scale": params.step_scale,
               "outcome_fractions": {k: (v / n_steps if n_steps else 0.0)
                                     for k, v in counts.items()},
               "acceptance": counts["Accepted"] / n_steps if n_steps else 0.0,
               "observables": {}, "wall_time": time.perf_counter() - t0}
    for k in names:
        entry = {"mean": _finite(float(series[k].mean())) if n_steps else None}
        try:
            est = stats.integrated_act(series[k])
            entry.update(tau=est.tau, window=est.window,
                         standard_error=stats.standard_error(series[k]))
        except (ValueError, stats.DegenerateSeriesError) as exc:
            entry["tau_error"] = str(exc)
        summary["observables"][k] = entry
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    if hist:
        with open(os.path.join(out_dir, "histogram.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            fh.write(f"# config_sha256={meta['config_sha256']} seed={meta['seed']}\n")
            w = csv.writer(fh)
            w.writerow(["observable", "bin_lo", "bin_hi", "count"])
            for k in hist:
                if n_steps == 0:
                    continue
                counts_k, edges = np.histogram(series[k][stride - 1::stride],
                                               bins=cfg["output.bins"])
                for lo, hi, c in zip(edges[:-1], edges[1:], counts_k):
                    w.writerow([k, repr(float(lo)), repr(float(hi)), int(c)])
    logger.info("acceptance %.3f over %d steps", summary["acceptance"], n_steps)
    return EXIT_OK


def cmd_integrate(cfg, out_dir) -> int:
    target = build_target(cfg)
    x0 = cfg["integrate.x0"]
    try:
        icfg = IntegrationConfig(
            n_total=cfg["integrate.n_total"], k=cfg["integrate.k"],
            step_scale=_step_scale(cfg, target),
            step_radius_fraction=cfg["integrate.step_radius_fraction"],
            tol=cfg["newton.tol"], nmax=cfg["newton.nmax"], disk_nmax=cfg["newton.disk_nmax"],
            n_initial=cfg["integrate.n_initial"], initial_stride=cfg["integrate.initial_stride"],
            n_inner=cfg["integrate.n_inner"], n_probe=cfg["integrate.n_probe"],
            angle_tol=cfg["integrate.angle_tol"],
            burn_in_fraction=cfg["integrate.burn_in_fraction"],
            warm_start=cfg["integrate.warm_start"], x_init=target.x_init,
            x0=None if x0 is None else np.asarray(x0, dtype=np.float64),
            r0=cfg["integrate.r0"], rk=cfg["integrate.rk"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    meta = _meta(cfg)
    try:
        est = integrate(target.M, target.density, icfg, np.random.default_rng(cfg["seed"]))
    except StageFailure as exc:
        _write_json(os.path.join(out_dir, "result.json"),
                    {**meta, "error": str(exc), "stage": exc.stage,
                     "stage_diagnostics": exc.diagnostics})
        raise
    _write_json(os.path.join(out_dir, "result.json"),
                {**meta, "manifold": target.M.name, **est.to_dict()})
    logger.info("Z_hat = %.6g (sigma_r = %.3g)", est.Z_hat, est.sigma_r)
    return EXIT_OK


def cmd_analyze_nu(cfg, out_dir) -> int:
    d = cfg["analyze.d"]
    lo, hi = cfg["analyze.nu_min"], cfg["analyze.nu_max"]
    if not 1 < lo < hi:
        raise ConfigError("need 1 < analyze.nu_min < analyze.nu_max")
    nus = np.geomspace(lo, hi, cfg["analyze.nu_points"])
    table = analysis.nu_table(d, nus)
    meta = _meta(cfg)
    with open(os.path.join(out_dir, "nu.csv"), "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_sha256={meta['config_sha256']} seed={meta['seed']}\n")
        w = csv.writer(fh)
        w.writerow(["nu", "g_const", f"g_d{d}", f"l_d{d}"])
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    argmins = {
        "g_const": analysis.minimize_scalar(analysis.g_const, lo, hi),
        f"g_d{d}": analysis.minimize_scalar(lambda nu: analysis.g_diffusive(nu, d), lo, hi),
        f"l_d{d}": analysis.minimize_scalar(lambda nu: analysis.l_brownian(nu, d), lo, hi),
    }
    _write_json(os.path.join(out_dir, "nu_argmins.json"),
                {**meta, "d": d, "interval": [lo, hi], "argmins": argmins})
    return EXIT_OK


def cmd_validate(cfg, out_dir) -> int:
    name = cfg["validate.suite"]
    if name not in validation.SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {sorted(validation.SUITES)}")
    res = validation.run_suite(name, seed=cfg["seed"])
    _write_json(os.path.join(out_dir, "validation.json"), {**_meta(cfg), **res.to_dict()})
    for line in res.lines():
        print(line)
    return EXIT_OK if res.passed else EXIT_VALIDATION


COMMANDS = {"sample": cmd_sample, "integrate": cmd_integrate,
            "analyze-nu": cmd_analyze_nu, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifold-mc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides config)")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory: {exc}") from None
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DegenerateConstraintError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # invalid starting points and similar input problems surface here
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
