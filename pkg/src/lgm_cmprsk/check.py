"""Acceptance harness: simulate, fit and compare against independent oracles.

Every comparison has the form ``metric < tolerance * tolerance_scale``,
so a scale of 0 makes every comparison fail (a sanity check of the
harness itself). Coverage checks shrink each credible interval about
its median by the same scale.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaln

from . import families, gmrf
from .config import RunConfig
from .data import LongitudinalRecord, SurvivalRecord, validate_joint_dataset
from .inference import FitOptions, fit, latent_marginals, log_conditional, log_posterior_hyper
from .models import count_competing_risks_model
from .simulate import SimConfig, simulate_example5
from .stacker import Attachment, BlockSpec, CopyLink, EffectDecl, ModelSpec, assemble

TRUTH = {
    "sigma[u]": 1.0,
    "cause1:Age": 0.01,
    "cause2:Age": 0.015,
    "cause3:Age": 0.0003,
    "gamma[cause1<-u]": 0.3,
    "gamma[cause2<-u]": -0.1,
    "gamma[cause3<-u]": 0.2,
}
POINT_TOLERANCE = {
    "sigma[u]": 0.15,
    "gamma[cause1<-u]": 0.12,
    "gamma[cause2<-u]": 0.12,
    "gamma[cause3<-u]": 0.17,
}
NAMES = {
    1: "parameter recovery on the three-cause count simulation",
    2: "Laplace exactness on Gaussian models",
    3: "derivative correctness",
    4: "rw2 structure and scaling",
    5: "one-coordinate Poisson model against quadrature",
    6: "Weibull with unit shape equals exponential",
    7: "cumulative incidence sanity",
    8: "determinism of simulate and fit outputs",
}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": _finite(self.value), "tolerance": self.tolerance,
                "passed": bool(self.passed)}


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class CriterionResult:
    id: int
    checks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def as_dict(self):
        return {"id": self.id, "name": NAMES[self.id], "passed": self.passed,
                "seconds": round(self.seconds, 3),
                "checks": [c.as_dict() for c in self.checks], "details": self.details}


class Harness:
    """Runs the acceptance criteria; fits are cached across criteria."""

    def __init__(self, cfg: RunConfig | None = None, workdir=None, legacy=False):
        self.cfg = cfg or RunConfig()
        self.scale = float(self.cfg.check.tolerance_scale)
        self.options = self.cfg.options
        self.workdir = Path(workdir) if workdir else None
        self.legacy = legacy
        self._fits = {}
        self._data = {}

    def cmp(self, name, value, tol):
        return Check(name, float(value), tol * self.scale, bool(value < tol * self.scale))

    # -- shared fits ----------------------------------------------------

    def sim_config(self, seed):
        base = self.cfg.simulate or SimConfig()
        return replace(base, seed=int(seed), n_individuals=self.cfg.check.n_individuals,
                       legacy_appendix=self.legacy or base.legacy_appendix)

    def dataset(self, seed):
        if seed not in self._data:
            self._data[seed] = simulate_example5(self.sim_config(seed))
        return self._data[seed]

    def fitted(self, seed, family="exponential_surv"):
        key = (seed, family)
        if key not in self._fits:
            alpha = 1.0 if family == "weibull_surv" else None
            spec = count_competing_risks_model(family=family, alpha_fixed=alpha)
            self._fits[key] = fit(spec, self.dataset(seed), self.options)
        return self._fits[key]

    @property
    def reference_seed(self):
        return self.cfg.check.seeds[0]

    # -- criteria -------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        r = CriterionResult(1)
        seeds = self.cfg.check.seeds
        covered_total = 0
        per_param = {k: 0 for k in TRUTH}
        estimates = {}
        point_ok = {k: 0 for k in POINT_TOLERANCE}
        sign_ok = 0
        for seed in seeds:
            res = self.fitted(seed)
            fixed = {n: res.latent[n] for n in res.model.fixed_names}
            summ = {**res.hyper, **fixed}
            n_cov = 0
            row = {}
            for name, true in TRUTH.items():
                s = summ[name]
                lo = s.q50 - self.scale * (s.q50 - s.q025)
                hi = s.q50 + self.scale * (s.q975 - s.q50)
                cov = lo <= true <= hi and self.scale > 0
                n_cov += cov
                per_param[name] += cov
                row[name] = {"mean": s.mean, "q0.025": s.q025, "q0.975": s.q975, "covered": bool(cov)}
            covered_total += n_cov
            r.checks.append(self.cmp(f"seed {seed}: intervals missing the truth (of 7)", 7 - n_cov, 3))
            for name, tol in POINT_TOLERANCE.items():
                err = abs(summ[name].mean - TRUTH[name])
                ok = err < tol * self.scale
                point_ok[name] += ok
                r.checks.append(self.cmp(f"seed {seed}: |{name} - truth|", err, tol))
            mass = res.hyper["gamma[cause2<-u]"].prob_negative
            sign_ok += mass >= 1 - 0.05 * self.scale
            row["gamma2_mass_below_zero"] = mass
            # the spline precision has no recovery target; it only has to be a usable number
            tr = res.hyper["tau[trend]"]
            bad = not (math.isfinite(tr.mean) and math.isfinite(tr.q975) and tr.q025 > 0)
            r.checks.append(self.cmp(f"seed {seed}: tau[trend] not finite and positive", float(bad), 0.5))
            row["tau[trend]"] = tr.mean
            row["seconds"] = res.diagnostics["wall_time_s"]
            estimates[str(seed)] = row
            if seed == self.reference_seed:
                r.checks.append(self.cmp(f"seed {seed}: posterior mass of gamma2 above zero", 1 - mass, 0.05))
        n = len(seeds) * len(TRUTH)
        # at least 90% covered <=> fewer than floor(0.1 n) + 1 misses
        r.checks.append(self.cmp(f"pooled intervals missing the truth (of {n})",
                                 n - covered_total, math.floor(0.1 * n + 1e-9) + 1))
        r.details = {"per_seed": estimates, "coverage_by_parameter": per_param,
                     "pooled_coverage": covered_total / n, "point_tolerance_met": point_ok,
                     "gamma2_sign_recovered_seeds": int(sign_ok), "n_seeds": len(seeds)}
        return r

    def criterion_2(self) -> CriterionResult:
        r = CriterionResult(2)
        worst = 0.0
        sizes = []
        for k in range(20):
            model, theta, y_oracle = random_gaussian_model(np.random.default_rng(np.random.SeedSequence([7, k])))
            value, _ = log_posterior_hyper(theta, model, None, self.options)
            err = abs(value - y_oracle)
            worst = max(worst, err)
            sizes.append(model.n_latent)
        r.checks.append(self.cmp("max |log posterior - closed-form evidence|", worst, 1e-8))
        r.details = {"n_models": 20, "n_latent": sizes}
        return r

    def criterion_3(self) -> CriterionResult:
        r = CriterionResult(3)
        rng = np.random.default_rng(3)
        for kind, err in family_derivative_errors(rng, 1000).items():
            r.checks.append(self.cmp(f"{kind}: max relative derivative error", err, 1e-5))
        r.checks.append(self.cmp("log_conditional gradient: max relative error",
                                 log_conditional_gradient_error(rng, 20), 1e-5))
        return r

    def criterion_4(self) -> CriterionResult:
        r = CriterionResult(4)
        worst = 0.0
        for n in range(3, 201):
            Q = gmrf.rw2_precision(n).matrix
            worst = max(worst, np.abs(Q @ np.ones(n)).max(), np.abs(Q @ np.arange(1.0, n + 1)).max())
        # exact zero is the requirement; any positive value fails
        r.checks.append(Check("max |Q 1|, |Q (1..n)| over n = 3..200", worst, 0.0,
                              bool(worst == 0.0 and self.scale > 0)))
        for n in (5, 10, 50):
            Qs = gmrf.scale_precision(gmrf.rw2_precision(n)).toarray()
            gm = math.exp(np.mean(np.log(np.diag(np.linalg.pinv(Qs, rcond=1e-12, hermitian=True)))))
            r.checks.append(self.cmp(f"n={n}: |geometric mean variance - 1|", abs(gm - 1.0), 1e-10))
        return r

    def criterion_5(self) -> CriterionResult:
        r = CriterionResult(5)
        out = tiny_poisson_comparison(self.options)
        r.checks.append(self.cmp("|posterior mean - quadrature|", out["mean_error"], 1e-3))
        r.checks.append(self.cmp("|posterior variance - quadrature|", out["var_error"], 1e-3))
        r.checks.append(self.cmp("max relative grid-weight error", out["weight_error"], 0.05))
        r.details = {k: v for k, v in out.items() if not isinstance(v, np.ndarray)}
        return r

    def criterion_6(self) -> CriterionResult:
        r = CriterionResult(6)
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(10_000):
            t = float(rng.uniform(1e-3, 10.0))
            d = int(rng.integers(0, 2))
            eta = float(rng.uniform(-5, 3))
            a = np.array(families.weibull_surv_loglik((t, d), eta, 1.0))
            b = np.array(families.exponential_surv_loglik((t, d), eta))
            worst = max(worst, float(np.max(np.abs(a - b))))
        r.checks.append(self.cmp("max |weibull(alpha=1) - exponential| (value, derivatives)", worst, 1e-14))
        seed = self.reference_seed
        e = self.fitted(seed, "exponential_surv")
        w = self.fitted(seed, "weibull_surv")
        diffs = {n: abs(e.hyper[n].mean - w.hyper[n].mean) for n in e.hyper if n.startswith("gamma")}
        r.checks.append(self.cmp("max |gamma estimate difference|", max(diffs.values()), 1e-6))
        r.details = {"gamma_differences": diffs}
        return r

    def criterion_7(self) -> CriterionResult:
        from .report import curve_rows

        r = CriterionResult(7)
        res = self.fitted(self.reference_seed)
        rows = list(curve_rows(res, self.dataset(self.reference_seed), time_points=201))
        cif = {}
        surv = {}
        for curve, block, _, group, t, v, _, _ in rows:
            if curve == "cumulative_incidence":
                cif.setdefault(t, 0.0)
                cif[t] += v
            elif curve == "overall_survival":
                surv[t] = v
        dev = max(abs(cif[t] + surv[t] - 1.0) for t in surv)
        r.checks.append(self.cmp("max |sum_j F_j + S - 1| on the fitted model", dev, 2e-4))
        worst = 0.0
        for lam in (0.1, 1.0, 3.7):
            tg = np.linspace(0.0, 5.0, 401)
            F = families.cumulative_incidence([("exponential_surv", math.log(lam), 1.0)], tg)[0]
            worst = max(worst, float(np.max(np.abs(F - (1 - np.exp(-lam * tg))))))
        r.checks.append(self.cmp("single-cause exponential CIF vs 1 - exp(-lambda t)", worst, 1e-6))
        return r

    def criterion_8(self) -> CriterionResult:
        from .cli import main

        r = CriterionResult(8)
        n = self.cfg.check.determinism_individuals
        base_dir = self.workdir or Path(tempfile.mkdtemp(prefix="lgm-det-"))
        digests = []
        for run in (1, 2):
            d = base_dir / f"determinism_run{run}"
            d.mkdir(parents=True, exist_ok=True)
            conf = d / "run.toml"
            conf.write_text(DETERMINISM_CONFIG.format(n=n, seed=self.reference_seed), encoding="utf-8")
            for cmd in ("simulate", "fit"):
                with contextlib.redirect_stdout(io.StringIO()):
                    code = main([cmd, "--config", str(conf), "--out", str(d), "--threads", "1"])
                if code:
                    r.checks.append(Check(f"run {run}: {cmd} exit code", code, 0, False))
                    return r
            digests.append({f: _sha256(d / f) for f in DETERMINISTIC_FILES})
        mismatched = [f for f in DETERMINISTIC_FILES if digests[0][f] != digests[1][f]]
        r.checks.append(self.cmp("files whose checksums differ between runs", len(mismatched), 0.5))
        r.details = {"sha256": digests[0], "mismatched": mismatched}
        return r

    def run(self, ids=None):
        out = []
        for k in ids or self.cfg.check.criteria:
            t0 = time.perf_counter()
            res = getattr(self, f"criterion_{k}")()
            res.seconds = time.perf_counter() - t0
            out.append(res)
        return out


DETERMINISTIC_FILES = ("longitudinal.csv", "survival.csv", "truth.json",
                       "summary.json", "latent.csv", "hyper.csv", "curves.csv")

DETERMINISM_CONFIG = """\
[simulate]
n_individuals = {n}
seed = {seed}

[model]
preset = "count_competing_risks"
"""


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- oracles -----------------------------------------------------------------


def _records(ids, times, values, covs):
    return [LongitudinalRecord(int(i), float(t), float(v), c) for i, t, v, c in zip(ids, times, values, covs)]


def random_gaussian_model(rng):
    """A random fully Gaussian model and its closed-form log evidence.

    Returns (model, free theta, log prior + log evidence). The oracle
    builds the design and prior covariance by hand, independently of
    the model assembly code.
    """
    N = int(rng.integers(3, 9))
    G = int(rng.integers(2, 7))
    n1 = int(rng.integers(5, 31))
    second = bool(rng.random() < 0.5)
    n2 = int(rng.integers(3, 15)) if second else 0
    use_z = [c for c in ("z1", "z2") if rng.random() < 0.6]
    weighted = bool(rng.random() < 0.3)
    constrained = bool(rng.random() < 0.5)

    def covs(n):
        return [{"z1": float(a), "z2": float(b), "g": float(g)}
                for a, b, g in zip(rng.normal(size=n), rng.normal(size=n), rng.integers(1, G + 1, n))]

    ids1 = rng.integers(1, N + 1, n1)
    c1 = covs(n1)
    y1 = rng.normal(0.0, 2.0, n1)
    ids2 = rng.integers(1, N + 1, n2)
    c2 = covs(n2)
    y2 = rng.normal(1.0, 1.5, n2)
    surv = [SurvivalRecord(i, 1.0, 0, {}) for i in range(1, N + 1)]
    long1 = _records(ids1, np.zeros(n1), y1, c1)
    data = validate_joint_dataset(long1, surv, 1)
    markers = {"second": _records(ids2, np.zeros(n2), y2, c2)} if second else None

    b1 = BlockSpec("gaussian", ("intercept", *use_z),
                   (Attachment("a"), Attachment("b", index="g", weight="z1" if weighted else None)),
                   name="main")
    blocks = (b1,)
    links = ()
    if second:
        blocks += (BlockSpec("gaussian", ("intercept",), name="second"),)
        links = (CopyLink("a", "second"),)
    effects = {"a": EffectDecl("iid", constraint="sum_to_zero" if constrained else None),
               "b": EffectDecl("iid", size=G)}
    spec = ModelSpec(blocks, (), effects, links)
    model = assemble(spec, data, markers)
    layout = model.hyper_layout
    theta = rng.normal(0.0, 0.7, len(layout.free))
    full = layout.expand(theta)
    nat = layout.natural(full)

    # hand-built design: [fixed main | fixed second | a (N) | b (G)]
    kf1 = 1 + len(use_z)
    kf2 = 1 if second else 0
    p = kf1 + kf2 + N + G
    n = n1 + n2
    A = np.zeros((n, p))
    for r in range(n1):
        A[r, 0] = 1.0
        for j, c in enumerate(use_z):
            A[r, 1 + j] = c1[r][c]
        A[r, kf1 + kf2 + ids1[r] - 1] = 1.0
        A[r, kf1 + kf2 + N + int(c1[r]["g"]) - 1] = c1[r]["z1"] if weighted else 1.0
    gam = nat.get("gamma[second<-a]", 0.0)
    for r in range(n2):
        A[n1 + r, kf1] = 1.0
        A[n1 + r, kf1 + kf2 + ids2[r] - 1] = gam
    var = np.concatenate([np.full(kf1 + kf2, 1000.0), np.full(N, 1 / nat["tau[a]"]),
                          np.full(G, 1 / nat["tau[b]"])])
    Sigma = np.diag(var)
    if constrained:
        C = np.zeros((1, p))
        C[0, kf1 + kf2:kf1 + kf2 + N] = 1.0
        SC = Sigma @ C.T
        Sigma = Sigma - SC @ np.linalg.solve(C @ SC, SC.T)
    noise = np.concatenate([np.full(n1, 1 / nat["tau[main]"]),
                            np.full(n2, 1 / nat["tau[second]"]) if second else np.zeros(0)])
    cov = A @ Sigma @ A.T + np.diag(noise)
    y = np.concatenate([y1, y2])
    evidence = stats.multivariate_normal(np.zeros(n), cov).logpdf(y)
    return model, theta, layout.log_prior(full) + evidence


def family_derivative_errors(rng, n_points):
    """Max relative error (floor 1 in the denominator) of analytic d/deta and
    d2/deta2 against central differences, per family."""

    def rel(fd, an):
        return float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1.0)))

    out = {}
    cases = {
        "gaussian": lambda e, i: families.gaussian_loglik(ys[i], e, taus[i]),
        "poisson": lambda e, i: families.poisson_loglik(counts[i], e),
        "weibull_surv": lambda e, i: families.weibull_surv_loglik((ts[i], ds[i]), e, alphas[i]),
        "exponential_surv": lambda e, i: families.exponential_surv_loglik((ts[i], ds[i]), e),
    }
    ys = rng.normal(0, 3, n_points)
    taus = np.exp(rng.uniform(-2, 2, n_points))
    counts = rng.integers(0, 30, n_points)
    ts = np.exp(rng.uniform(-3, 2, n_points))
    ds = rng.integers(0, 2, n_points)
    alphas = np.exp(rng.uniform(-1, 1, n_points))
    etas = rng.uniform(-3, 3, n_points)
    for kind, f in cases.items():
        e1 = []
        e2 = []
        for i, eta in enumerate(etas):
            h = 1e-4
            v0, d1, d2 = f(eta, i)
            vp, g_p, _ = f(eta + h, i)
            vm, g_m, _ = f(eta - h, i)
            # first derivative from values, second from analytic first derivatives
            e1.append(((vp - vm) / (2 * h), d1))
            e2.append(((g_p - g_m) / (2 * h), d2))
        a1 = np.array(e1)
        a2 = np.array(e2)
        out[kind] = max(rel(a1[:, 0], a1[:, 1]), rel(a2[:, 0], a2[:, 1]))
    return out


def log_conditional_gradient_error(rng, n_points, n_individuals=30):
    """Relative max-norm error of the log_conditional gradient against
    central differences, on a small three-cause count model."""
    data = simulate_example5(SimConfig(n_individuals=n_individuals, seed=11))
    model = assemble(count_competing_risks_model(n_groups=10), data)
    full = model.hyper_layout.expand(np.array([1.0, 0.3, 0.3, -0.1, 0.2]))
    worst = 0.0
    h = 1e-6
    for _ in range(n_points):
        x = rng.normal(0, 0.3, model.n_latent)
        _, g, _ = log_conditional(x, full, model)
        fd = np.empty_like(g)
        for i in range(model.n_latent):
            xp = x.copy()
            xp[i] += h
            xm = x.copy()
            xm[i] -= h
            fd[i] = (log_conditional(xp, full, model)[0] - log_conditional(xm, full, model)[0]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1.0)))
    return worst


def tiny_poisson_data(n_obs=500, rate=3.0, seed=5):
    rng = np.random.default_rng(seed)
    y = rng.poisson(rate, n_obs)
    longs = [LongitudinalRecord(1, 0.0, float(v), {}) for v in y]
    data = validate_joint_dataset(longs, [SurvivalRecord(1, 1.0, 0, {})], 1)
    spec = ModelSpec(
        (BlockSpec("poisson", (), (Attachment("x", index="one"),)),), (),
        {"x": EffectDecl("iid", size=1, priors={"tau": gmrf.PriorSpec.pc_prec(1.0, 0.01)})},
    )
    return spec, data, y


def tiny_poisson_comparison(options: FitOptions | None = None):
    """Mixture marginal and grid weights vs adaptive quadrature for
    x ~ N(0, 1/tau), y_i ~ Poisson(exp(x)), sigma = tau^-1/2 with a PC prior."""
    spec, data, y = tiny_poisson_data()
    res = fit(spec, data, options or FitOptions())
    sy, n, lf = float(y.sum()), y.size, float(gammaln(y + 1.0).sum())

    def loglik(x):
        return sy * x - n * math.exp(x) - lf

    def log_prior_theta(th):
        return families.pc_prec_log_prior(math.exp(th), 1.0, 0.01) + th

    xhat = math.log(sy / n)

    def moments(th):
        tau = math.exp(th)
        x = xhat * n * math.exp(xhat) / (n * math.exp(xhat) + tau)
        for _ in range(100):
            step = (sy - n * math.exp(x) - tau * x) / (n * math.exp(x) + tau)
            x += step
            if abs(step) < 1e-15:
                break
        s_th = 1.0 / math.sqrt(n * math.exp(x) + tau)
        g = lambda u: loglik(u) + 0.5 * (th - math.log(2 * math.pi)) - 0.5 * tau * u * u
        c = g(x)
        f = lambda u: math.exp(g(u) - c)
        lo, hi = x - 30 * s_th, x + 30 * s_th
        opts = dict(epsabs=0.0, epsrel=1e-12, limit=200, points=[x])
        z = integrate.quad(f, lo, hi, **opts)[0]
        # centred moments are tiny, so they get an absolute floor
        mopts = dict(opts, epsabs=1e-15 * s_th)
        m1 = integrate.quad(lambda u: (u - x) * f(u), lo, hi, **mopts)[0] / z
        m2 = integrate.quad(lambda u: (u - x) ** 2 * f(u), lo, hi, **mopts)[0] / z
        return c + math.log(z), x + m1, m2 - m1 * m1 + (x + m1) ** 2

    # posterior of theta on a fine grid, then the latent moments
    th_grid = np.linspace(-12.0, 16.0, 1401)
    logz, m1, m2 = np.array([moments(t) for t in th_grid]).T
    lp = logz + np.array([log_prior_theta(t) for t in th_grid])
    w = np.exp(lp - lp.max())
    w /= integrate.trapezoid(w, th_grid)
    mean = integrate.trapezoid(w * m1, th_grid)
    var = integrate.trapezoid(w * m2, th_grid) - mean**2

    lat = res.latent
    x_mean, x_var = float(lat.mean[0]), float(lat.sd[0] ** 2)
    nodes = np.array([p.theta[0] for p in res.grid.points])
    node_lp = np.array([moments(t)[0] + log_prior_theta(t) for t in nodes])
    wt = np.exp(node_lp - node_lp.max())
    wt /= wt.sum()
    wg = res.grid.weights
    return {
        "mean_error": abs(x_mean - mean), "var_error": abs(x_var - var),
        "weight_error": float(np.max(np.abs(wg - wt) / wt)),
        "quadrature_mean": mean, "quadrature_var": var, "mixture_mean": x_mean, "mixture_var": x_var,
        "grid_size": len(nodes), "nodes": nodes, "weights": wg, "oracle_weights": wt,
    }


# -- entry points --------------------------------------------------------------


def run_check(cfg: RunConfig, workdir=None, legacy=False) -> dict:
    harness = Harness(cfg, workdir, legacy)
    results = harness.run()
    return {
        "passed": all(r.passed for r in results),
        "tolerance_scale": harness.scale,
        "seeds": list(cfg.check.seeds),
        "n_individuals": cfg.check.n_individuals,
        "criteria": [r.as_dict() for r in results],
    }


def format_table(verdict: dict) -> str:
    lines = []
    for c in verdict["criteria"]:
        mark = "PASS" if c["passed"] else "FAIL"
        lines.append(f"{mark}  [{c['id']}] {c['name']} ({c['seconds']:.1f} s)")
        for chk in c["checks"]:
            if not chk["passed"]:
                lines.append(f"        failed: {chk['name']} = {chk['value']} (tolerance {chk['tolerance']})")
    lines.append("overall: " + ("PASS" if verdict["passed"] else "FAIL"))
    return "\n".join(lines)
