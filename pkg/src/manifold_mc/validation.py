"""Named validation suites with measured values, tolerances and verdicts.

Every suite takes its tolerances as keyword arguments so callers (the test
suite, the ``validate`` subcommand) can pin them explicitly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import stats as sps

from . import analysis, stats, zoo
from .core import (NewtonParams, cross_jacobian, project, tangent_frame,
                   tangential_decompose)
from .integrator import IntegrationConfig, ball_volume, integrate
from .sampler import Outcome, ProposalParams, count_outcomes, iter_chunks


@dataclass
class Check:
    name: str
    measured: float
    target: str
    passed: bool

    def line(self, suite: str) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {suite}: {self.name} = {self.measured:.6g} ({self.target})"


@dataclass
class SuiteResult:
    name: str
    checks: List[Check] = field(default_factory=list)
    runtime: float = 0.0
    details: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, measured, target, passed):
        self.checks.append(Check(name, float(measured), target, bool(passed)))

    def within_se(self, name, value, expected, se, n_sigma):
        dev = abs(value - expected)
        self.add(name, value, f"{expected:g} +/- {n_sigma:g} SE = {n_sigma * se:.3g}",
                 dev <= n_sigma * se)

    def runtime_check(self, budget):
        self.add("runtime_s", self.runtime, f"<= {budget:g}", self.runtime <= budget)

    def lines(self) -> List[str]:
        return [c.line(self.name) for c in self.checks]

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "runtime": self.runtime,
                "checks": [vars(c) for c in self.checks], "details": self.details}


def _stream(M, params, x0, n_steps, rng, observables: Dict[str, Callable]):
    """Run a chain keeping only per-step observable values and outcome counts."""
    out = {k: np.empty(n_steps) for k in observables}
    counts = {o.name: 0 for o in Outcome}
    pos = 0
    for ch in iter_chunks(M, params, x0, n_steps, rng):
        c = len(ch.codes)
        for k, fn in observables.items():
            out[k][pos:pos + c] = fn(ch.x)
        for k, v in count_outcomes(ch.codes).items():
            counts[k] += v
        pos += c
    return out, {k: v / max(n_steps, 1) for k, v in counts.items()}


def chi2_pvalue(values, edges, probs) -> float:
    counts, _ = np.histogram(values, bins=edges)
    probs = np.asarray(probs, dtype=np.float64)
    expected = probs / probs.sum() * counts.sum()
    return float(sps.chisquare(counts, expected).pvalue)


# histogram tests use every THIN-th state so that counts are close to independent
THIN = 100


def torus_marginals(seed=0, n_steps=1_000_000, step_scale=0.5, n_sigma=3.0,
                    pmin=1e-3, bins=50, budget=60.0, reverse_check=True) -> SuiteResult:
    spec = zoo.TorusSpec()
    M = zoo.torus_manifold(spec)
    t0 = time.perf_counter()
    obs, frac = _stream(M, ProposalParams(step_scale, reverse_check=reverse_check),
                        [spec.R + spec.r, 0.0, 0.0], n_steps, np.random.default_rng(seed),
                        {"phi": lambda X: zoo.torus_phi(X, spec),
                         "theta": zoo.torus_theta})
    res = SuiteResult("torus-marginals")
    cphi, cth, sth = np.cos(obs["phi"]), np.cos(obs["theta"]), np.sin(obs["theta"])
    res.within_se("mean_cos_phi", cphi.mean(), spec.r / (2 * spec.R),
                  stats.standard_error(cphi), n_sigma)
    res.within_se("mean_cos_theta", cth.mean(), 0.0, stats.standard_error(cth), n_sigma)
    res.within_se("mean_sin_theta", sth.mean(), 0.0, stats.standard_error(sth), n_sigma)
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    probs = np.diff(edges) + spec.r / spec.R * np.diff(np.sin(edges))
    p = chi2_pvalue(obs["phi"][THIN - 1::THIN], edges, probs)
    res.add("phi_hist_chi2_p", p, f"> {pmin:g}", p > pmin)
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    res.details = {"outcome_fractions": frac,
                   "cos_phi_z": (cphi.mean() - 0.25) / stats.standard_error(cphi)}
    return res


def cone_marginals(seed=0, n_steps=1_000_000, step_scale=0.9, n_sigma=3.0,
                   pmin=1e-3, bins=50, budget=60.0) -> SuiteResult:
    M = zoo.cone_manifold()
    t0 = time.perf_counter()
    obs, frac = _stream(M, ProposalParams(step_scale), [0.5, 0.0, 0.5], n_steps,
                        np.random.default_rng(seed),
                        {"x": lambda X: X[:, 0], "z": lambda X: X[:, 2]})
    res = SuiteResult("cone-marginals")
    res.within_se("mean_z", obs["z"].mean(), 2 / 3, stats.standard_error(obs["z"]), n_sigma)
    res.within_se("mean_x", obs["x"].mean(), 0.0, stats.standard_error(obs["x"]), n_sigma)
    edges = np.linspace(0.0, 1.0, bins + 1)
    p = chi2_pvalue(obs["z"][THIN - 1::THIN], edges, np.diff(edges ** 2))
    res.add("z_hist_chi2_p", p, f"> {pmin:g}", p > pmin)
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    res.details = {"outcome_fractions": frac}
    return res


def son_trace(seed=0, n=11, n_steps=1_000_000, step_scale=0.28, n_sigma=3.0,
              var_rtol=0.15, acceptance=0.35, acceptance_tol=0.07,
              budget=600.0) -> SuiteResult:
    M = zoo.son_manifold(n)
    t0 = time.perf_counter()
    obs, frac = _stream(M, ProposalParams(step_scale), np.eye(n).ravel(), n_steps,
                        np.random.default_rng(seed),
                        {"trace": lambda X: zoo.son_trace(X, n)})
    res = SuiteResult("son-trace")
    tr = obs["trace"]
    res.within_se("mean_trace", tr.mean(), 0.0, stats.standard_error(tr), n_sigma)
    v = tr.var()
    res.add("var_trace", v, f"1 +/- {var_rtol:g}", abs(v - 1) <= var_rtol)
    acc = frac["Accepted"]
    res.add("acceptance", acc, f"{acceptance:g} +/- {acceptance_tol:g}",
            abs(acc - acceptance) <= acceptance_tol)
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    res.details = {"outcome_fractions": frac}
    return res


def _torus_integral(n_total, k, seed):
    spec = zoo.TorusSpec()
    cfg = IntegrationConfig(n_total=n_total, k=k, step_scale=0.5,
                            x0=np.array([spec.R + spec.r, 0.0, 0.0]),
                            r0=2 * (spec.R + spec.r), rk=spec.r)
    return integrate(zoo.torus_manifold(spec), None, cfg, np.random.default_rng(seed))


def torus_area(seed=0, n_total=100_000, k=2, n_sigma=3.0, sigma_range=(2e-3, 5e-2),
               budget=60.0) -> SuiteResult:
    t0 = time.perf_counter()
    est = _torus_integral(n_total, k, seed)
    exact = zoo.torus_area()
    res = SuiteResult("torus-area")
    res.within_se("Z_hat", est.Z_hat, exact, est.sigma_r * exact, n_sigma)
    lo, hi = sigma_range
    res.add("sigma_r", est.sigma_r, f"in [{lo:g}, {hi:g}]", lo <= est.sigma_r <= hi)
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    res.details = est.to_dict()
    return res


def error_bars(seed=0, n_total=10_000, ks=(1, 2, 4, 8), repeats=50, factor=2.0,
               budget=600.0) -> SuiteResult:
    t0 = time.perf_counter()
    exact = zoo.torus_area()
    res = SuiteResult("error-bars")
    observed = {}
    for k in ks:
        z = np.empty(repeats)
        s = np.empty(repeats)
        for j in range(repeats):
            est = _torus_integral(n_total, k, seed * 100_003 + 1000 * k + j)
            z[j], s[j] = est.Z_hat / exact, est.sigma_r
        sample_std, mean_sigma = z.std(ddof=1), s.mean()
        ratio = sample_std / mean_sigma
        observed[k] = sample_std
        res.add(f"std_over_sigma_k{k}", ratio, f"in [1/{factor:g}, {factor:g}]",
                1 / factor <= ratio <= factor)
        res.details[f"k{k}"] = {"sample_rel_std": sample_std, "mean_sigma_r": mean_sigma,
                                "mean_ratio": z.mean()}
    if 1 in observed and 2 in observed:
        res.add("std_k2_over_k1", observed[2] / observed[1], "<= 1",
                observed[2] <= observed[1])
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    return res


SON_REFERENCE = {2: 8.89, 3: 223.3, 4: 1.24e4, 5: 1.31e6}


def son_volumes(seed=0, ns=(2, 3, 4, 5), n_total=100_000, k=4, repeats=50,
                rtol=None, step_scale=0.5, budget=900.0) -> SuiteResult:
    """Relative error of the mean of ``repeats`` independent volume estimates."""
    rtol = rtol or {2: 0.05, 3: 0.05, 4: 0.05, 5: 0.10}
    t0 = time.perf_counter()
    res = SuiteResult("son-volumes")
    for n in ns:
        M = zoo.son_manifold(n)
        vals = np.empty(repeats)
        sig = np.empty(repeats)
        for j in range(repeats):
            cfg = IntegrationConfig(n_total=n_total, k=k, step_scale=step_scale,
                                    x_init=np.eye(n).ravel())
            est = integrate(M, None, cfg, np.random.default_rng(seed * 100_003 + 1000 * n + j))
            vals[j], sig[j] = est.Z_hat, est.sigma_r
        ref = SON_REFERENCE[n]
        err = abs(vals.mean() / ref - 1)
        res.add(f"rel_error_n{n}", err, f"<= {rtol[n]:g}", err <= rtol[n])
        res.details[f"n{n}"] = {"mean": vals.mean(), "exact": zoo.son_volume_exact(n),
                                "rel_sem": vals.std(ddof=1) / math.sqrt(repeats) / ref,
                                "mean_sigma_r": sig.mean()}
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    return res


CLUSTER_REFERENCE = {"chain": (3.51e2, 1.32e2), "loop": (8.27e1, 2.18e1)}


def sticky_chain_loop(seed=0, N=4, n_total=1_000_000, k=4, step_scale=0.5,
                      step_radius_fraction=0.25, rtol=0.10, n_sigma=3.0,
                      n_mean=1_000_000, budget=1800.0) -> SuiteResult:
    t0 = time.perf_counter()
    res = SuiteResult("sticky-chain-loop")
    z_vals = {}
    for j, kind in enumerate(("chain", "loop")):
        spec = zoo.ClusterSpec.chain(N) if kind == "chain" else zoo.ClusterSpec.loop(N)
        M = zoo.cluster_manifold(spec)
        x_init = zoo.cluster_initial_point(spec)
        out = {}
        for i, (label, f) in enumerate((("V", None), ("z", zoo.rigidity_density(spec)))):
            cfg = IntegrationConfig(n_total=n_total, k=k, step_scale=step_scale,
                                    step_radius_fraction=step_radius_fraction,
                                    x_init=x_init, n_initial=100_000)
            out[label] = integrate(M, f, cfg, np.random.default_rng([seed, j, i]))
        V, z = out["V"], out["z"]
        z_vals[kind] = z.Z_hat
        refV, refz = CLUSTER_REFERENCE[kind] if N == 4 else (None, None)
        if refV is not None:
            res.add(f"{kind}_V_rel_error", abs(V.Z_hat / refV - 1), f"<= {rtol:g}",
                    abs(V.Z_hat / refV - 1) <= rtol)
            res.add(f"{kind}_z_rel_error", abs(z.Z_hat / refz - 1), f"<= {rtol:g}",
                    abs(z.Z_hat / refz - 1) <= rtol)
        h_bar = z.Z_hat / V.Z_hat
        h_bar_se = h_bar * math.hypot(V.sigma_r, z.sigma_r)
        fvals, _ = _stream(M, ProposalParams(step_scale), x_init, n_mean,
                           np.random.default_rng([seed, j, 2]),
                           {"f": lambda X, s=spec: zoo.rigidity_weights(X, s)})
        h_tilde = fvals["f"].mean()
        se = math.hypot(h_bar_se, stats.standard_error(fvals["f"]))
        res.within_se(f"{kind}_h_bar_minus_h_tilde", h_bar - h_tilde, 0.0, se, n_sigma)
        res.details[kind] = {"V": V.to_dict(), "z": z.to_dict(), "h_bar": h_bar,
                             "h_tilde": h_tilde}
    ratio = zoo.chain_loop_stats(N, z_vals["chain"], z_vals["loop"])
    res.details["z_C_over_z_L"], res.details["nC_zC_over_nL_zL"] = ratio[0], ratio[1]
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    return res


NU_MINIMIZERS = {1: 2.6, 2: 2.7, 3: 3.1, 4: 3.4, 5: 3.6, 6: 3.7, 10: 4.1, 20: 4.5, 50: 4.7}


def nu_minimizers(const_target=4.9, const_tol=0.05, tol=0.1, limit_max=1e-4,
                  limit_dims=(1, 2, 3, 4, 5), identity_rtol=1e-12, budget=1.0,
                  seed=0) -> SuiteResult:
    t0 = time.perf_counter()
    res = SuiteResult("nu-minimizers")
    a = analysis.minimize_scalar(analysis.g_const, 1.01, 50.0)
    res.add("argmin_g_const", a, f"{const_target:g} +/- {const_tol:g}",
            abs(a - const_target) <= const_tol)
    for d, target in NU_MINIMIZERS.items():
        a = analysis.minimize_scalar(lambda nu: analysis.g_diffusive(nu, d), 1.01, 50.0)
        res.add(f"argmin_g_d{d}", a, f"{target:g} +/- {tol:g}", abs(a - target) <= tol)
    worst = max(max(analysis.h_brownian(1 + 1e-6, d), analysis.h_brownian(1e9, d))
                for d in limit_dims)
    res.add("h_d_limits_max", worst, f"< {limit_max:g}", worst < limit_max)
    rng = np.random.default_rng(seed)
    dev = 0.0
    for _ in range(200):
        nu, d = 1 + rng.exponential(5.0), int(rng.integers(1, 20))
        lhs = analysis.l_brownian(nu, d)
        rhs = analysis.g_diffusive(nu, d) * analysis.h_brownian(nu, d)
        dev = max(dev, abs(lhs / rhs - 1))
    res.add("l_d_identity_rel_dev", dev, f"<= {identity_rtol:g}", dev <= identity_rtol)
    res.runtime = time.perf_counter() - t0
    res.runtime_check(budget)
    return res


def jacobian_symmetry(seed=0, n_pairs=200, atol=1e-12) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    M = zoo.torus_manifold()
    worst = 0.0
    for _ in range(n_pairs):
        a, b = rng.uniform(0, 2 * np.pi, 2), rng.uniform(0, 2 * np.pi, 2)
        Fx = tangent_frame(M, zoo.torus_point(*a))
        Fy = tangent_frame(M, zoo.torus_point(*b))
        worst = max(worst, abs(abs(cross_jacobian(Fx, Fy)) - abs(cross_jacobian(Fy, Fx))))
    res = SuiteResult("jacobian-symmetry")
    res.add("max_abs_det_asymmetry", worst, f"<= {atol:g}", worst <= atol)
    res.runtime = time.perf_counter() - t0
    return res


def _random_son(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[0] = -q[0]
    return q.ravel()


def properties(seed=0, frame_atol=1e-10, n_sigma=3.0, ablation_sigma=5.0,
               flat_n_total=100_000, ablation=True) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    res = SuiteResult("properties")

    points = []
    T = zoo.torus_manifold()
    for _ in range(50):
        points.append((T, zoo.torus_point(*rng.uniform(0, 2 * np.pi, 2))))
    for n in (3, 5):
        S = zoo.son_manifold(n)
        points += [(S, _random_son(rng, n)) for _ in range(20)]
    orth, resid, decomp = 0.0, 0.0, 0.0
    newton = NewtonParams()
    for M, x in points:
        F = tangent_frame(M, x)
        d, m = F.U_tan.shape[1], F.U_norm.shape[1]
        orth = max(orth, np.abs(F.U_tan.T @ F.U_tan - np.eye(d)).max(),
                   np.abs(F.U_norm.T @ F.U_norm - np.eye(m)).max(),
                   np.abs(F.Q.T @ F.U_tan).max())
        z = x + 0.1 * F.U_tan @ rng.standard_normal(d)
        pr = project(M, z, F.Q, newton)
        if pr.success:
            resid = max(resid, M.residual(pr.point))
        delta = rng.standard_normal(len(x))
        vt, wn = tangential_decompose(delta, F)
        decomp = max(decomp, np.abs(vt + wn - delta).max() / np.linalg.norm(delta),
                     abs(vt @ wn) / (delta @ delta))
    res.add("frame_orthonormality", orth, f"<= {frame_atol:g}", orth <= frame_atol)
    res.add("projection_residual", resid, f"<= tol = {newton.tol:g}", resid <= newton.tol)
    res.add("decompose_exactness", decomp, "<= 1e-14", decomp <= 1e-14)

    sym = jacobian_symmetry(seed)
    res.checks += sym.checks

    for d in (1, 2, 3):
        M = zoo.flat_manifold(d, codim=1, rotation=_rotation(rng, d + 1))
        cfg = IntegrationConfig(n_total=flat_n_total, k=2, step_scale=0.5,
                                x0=np.zeros(d + 1), r0=1.0, n_probe=10_000)
        est = integrate(M, None, cfg, np.random.default_rng([seed, d]))
        exact = ball_volume(d, 1.0)
        res.within_se(f"flat_d{d}_volume", est.Z_hat, exact, est.sigma_r * exact, n_sigma)

    if ablation:
        abl = torus_marginals(seed=seed, reverse_check=False, budget=math.inf)
        z = abs(abl.details["cos_phi_z"])
        res.add("ablation_cos_phi_deviation_se", z, f">= {ablation_sigma:g}",
                z >= ablation_sigma)
    res.runtime = time.perf_counter() - t0
    return res


def _rotation(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    "torus-marginals": torus_marginals,
    "cone-marginals": cone_marginals,
    "son-trace": son_trace,
    "torus-area": torus_area,
    "error-bars": error_bars,
    "son-volumes": son_volumes,
    "sticky-chain-loop": sticky_chain_loop,
    "nu-minimizers": nu_minimizers,
    "jacobian-symmetry": jacobian_symmetry,
    "properties": properties,
}


def run_suite(name: str, seed: int = 0, **kwargs) -> SuiteResult:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    return fn(seed=seed, **kwargs)
