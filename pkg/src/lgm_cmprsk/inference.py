"""Nested Laplace inference for stacked latent Gaussian models.

Inner loop: damped Newton on x | theta, y with linear constraints
handled by conditioning by kriging. Outer loop: Nelder-Mead on the
Laplace approximation of log pi(theta | y), a finite-difference
Hessian at the mode, and axis-wise exploration along its principal
directions. Latent marginals are Gaussian mixtures over the explored
points; hyperparameter marginals use split-normal fits along each axis.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from .errors import (
    BudgetExceededError,
    ConvergenceError,
    LgmError,
    NumericalError,
    StageError,
)
from . import _accel
from .families import family_arrays
from .stacker import (
    StackedModel,
    assemble,
    joint_prior_precision,
    prior_log_density,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
QUANTILES = (0.025, 0.5, 0.975)
ROUNDOFF = 1e-14  # relative precision below which Newton steps carry no information
MAX_HALVINGS = 40
EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class FitOptions:
    inner_tol: float = 1e-8
    max_newton: int = 50
    simplex_xatol: float = 1e-4
    simplex_fatol: float = 1e-6
    simplex_step: float = 1.0
    max_evals: int = 2000
    hessian_step: float = 1e-3
    grid_step: float = 1.0
    grid_threshold: float = 2.5
    max_axis_steps: int = 10
    threads: int = 1


@dataclass
class GaussianApprox:
    """Gaussian approximation of x | theta, y at its (constrained) mode."""

    mode: np.ndarray
    factor: object
    log_det_half: float
    converged: bool
    iterations: int
    log_conditional: float
    theta: np.ndarray
    gradient_max: float = 0.0
    trace: list = field(default_factory=list)
    _W: np.ndarray | None = field(default=None, repr=False)
    _S: np.ndarray | None = field(default=None, repr=False)
    _ctx: object = field(default=None, repr=False)
    _d2: np.ndarray | None = field(default=None, repr=False)

    @property
    def precision(self) -> sp.csr_array:
        """Q(theta) + A' D A at the mode."""
        return self._ctx.hessian(self._d2)

    def marginal_variances(self) -> np.ndarray:
        v = self.factor.diag_inverse()
        if self._W is not None:
            corr = np.einsum("ik,kl,il->i", self._W, np.linalg.inv(self._S), self._W)
            v = v - corr
        return np.maximum(v, 0.0)


class _ThetaContext:
    """theta-dependent pieces shared by every Newton iteration."""

    def __init__(self, model: StackedModel, theta_full):
        self.model = model
        self.theta = np.asarray(theta_full, dtype=float)
        self.Qp = joint_prior_precision(model, self.theta)
        self.Q = self.Qp.matrix
        self.absQ = abs(self.Q)
        self.A = model.design(self.theta)
        self.At = sp.csr_array(self.A.T)
        self.prior_const = _constraint_prior_correction(model, self.theta)

    def evaluate(self, x):
        m = self.model
        eta = self.A @ x
        ll = np.empty_like(eta)
        d1 = np.empty_like(eta)
        d2 = np.empty_like(eta)
        for rb in m.rows:
            s = slice(rb.start, rb.stop)
            hyp = None if rb.hyper is None else math.exp(self.theta[rb.hyper])
            ll[s], d1[s], d2[s] = family_arrays(
                rb.family, eta[s], y=rb.y, t=rb.t, d=rb.d, lfact=rb.lfact, hyper=hyp)
        Qx = self.Q @ x
        value = prior_log_density(m, x, self.Qp) + self.prior_const + float(np.sum(ll))
        grad = -Qx + self.At @ d1
        return value, grad, d2

    def hessian(self, d2):
        D = sp.diags_array(-d2)
        return sp.csr_array(self.Q + self.At @ (D @ self.A))

    def _plan(self):
        """Scatter map from (Q, per-row curvature) into the factor's storage."""
        an = self.model.analysis
        m = an.nnz_upper
        Qu = sp.coo_array(sp.triu(self.Q))
        self._base = np.bincount(an.positions(Qu.row, Qu.col), weights=Qu.data, minlength=m)
        A = self.A
        counts = np.diff(A.indptr)
        owner = np.repeat(np.arange(A.shape[0]), counts)
        slot = np.arange(A.nnz) - A.indptr[owner]
        pos, wts, rows = [], [], []
        for k in range(int(counts.max(initial=0))):
            e = np.flatnonzero(slot + k < counts[owner])
            f = e + k
            pos.append(an.positions(A.indices[e], A.indices[f]))
            wts.append(A.data[e] * A.data[f])
            rows.append(owner[e])
        self._pos = np.concatenate(pos) if pos else np.zeros(0, dtype=np.int64)
        self._wts = np.concatenate(wts) if wts else np.zeros(0)
        self._rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self._m = m

    def factorize(self, d2):
        an = self.model.analysis
        if not _accel.use_numba():
            return an.factorize(self.hessian(d2))
        if not hasattr(self, "_pos"):
            self._plan()
        data = self._base + np.bincount(self._pos, weights=-d2[self._rows] * self._wts, minlength=self._m)
        return an.factorize_upper(data)


def _constraint_prior_correction(model, theta_full):
    """Normaliser change from constraining proper (iid) effects to sum to zero."""
    out = 0.0
    for eff in model.effects.values():
        if eff.constrained and eff.template is not None and eff.template.rank_deficiency == 0:
            tau = math.exp(theta_full[eff.hyper[0]])
            n = eff.block.size
            out += 0.5 * LOG_2PI + 0.5 * math.log(n / tau)
    return out


def log_conditional(x, theta_full, model: StackedModel):
    """(value, gradient, per-row likelihood curvature) of log pi(x, y | theta)."""
    ctx = _ThetaContext(model, theta_full)
    return ctx.evaluate(np.asarray(x, dtype=float))


def _project(x, C):
    if C.shape[0] == 0:
        return x
    return x - C.T @ np.linalg.solve(C @ C.T, C @ x)


def find_mode(theta_full, model: StackedModel, x_init=None, tol=1e-8, max_iter=50,
              _ctx=None) -> GaussianApprox:
    """Damped Newton iterations for the mode of x | theta, y.

    Iteration stops when the projected gradient max-norm is below ``tol``,
    or when two successive Newton steps predict increases below the
    round-off level of the objective (no representable progress is left;
    ``gradient_max`` then records how far from ``tol`` the floor sits).
    """
    ctx = _ctx or _ThetaContext(model, theta_full)
    C = model.constraints
    k = C.shape[0]
    x = np.zeros(model.n_latent) if x_init is None else np.array(x_init, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError("x_init must be finite")
    x = _project(x, C)
    f, g, d2 = ctx.evaluate(x)
    trace = [f]
    CCt = C @ C.T if k else None
    steps = 0
    floor_hits = 0
    while True:
        fac = ctx.factorize(d2)
        W = S = None
        if k:
            W = fac.solve(C.T).reshape(model.n_latent, k)
            S = C @ W
            gp = g - C.T @ np.linalg.solve(CCt, C @ g)
        else:
            gp = g
        gmax = float(np.max(np.abs(gp))) if gp.size else 0.0
        if gmax < tol:
            break
        delta = fac.solve(g)
        if k:
            delta = delta - W @ np.linalg.solve(S, C @ delta)
        # round-off in f: relative to |f|, plus the cancellation error of x'Qx,
        # which dominates when stiff ties (precision 1e6) are present
        ax = np.abs(x)
        slack = ROUNDOFF * (1.0 + abs(f)) + EPS * float(ax @ (ctx.absQ @ ax))
        tiny = 0.5 * float(g @ delta) <= slack
        if tiny and floor_hits:
            break
        floor_hits += tiny
        if steps >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (max|grad| = {gmax:.3g})", last=x)
        s = 1.0
        for _ in range(MAX_HALVINGS):
            xn = x + s * delta
            try:
                fn, gn, d2n = ctx.evaluate(xn)
            except NumericalError:
                fn = -np.inf
            # values within round-off of f count as no decrease
            if fn >= f - slack:
                break
            s *= 0.5
        else:
            raise NumericalError(f"line search failed (max|grad| = {gmax:.3g})")
        steps += 1
        x, f, g, d2 = xn, fn, gn, d2n
        trace.append(f)
    return GaussianApprox(
        mode=x, factor=fac, log_det_half=0.5 * fac.logdet(), converged=True,
        iterations=steps, log_conditional=f, theta=np.array(ctx.theta), gradient_max=gmax,
        trace=trace, _W=W, _S=S, _ctx=ctx, _d2=d2,
    )


def log_posterior_hyper(theta_free, model: StackedModel, x_init=None, options: FitOptions = None):
    """Laplace approximation of log pi(theta | y) up to a constant.

    Returns (value, GaussianApprox).
    """
    opts = options or FitOptions()
    layout = model.hyper_layout
    full = layout.expand(theta_free)
    ap = find_mode(full, model, x_init, tol=opts.inner_tol, max_iter=opts.max_newton)
    k = model.constraints.shape[0]
    value = layout.log_prior(full) + ap.log_conditional
    value += 0.5 * (model.n_latent - k) * LOG_2PI - ap.log_det_half
    if k:
        value -= 0.5 * float(np.linalg.slogdet(ap._S)[1])
    return value, ap


class _Objective:
    """-log pi(theta | y) with warm starts; failures map to +inf."""

    def __init__(self, model, options, x0=None):
        self.model = model
        self.options = options
        self.x = x0
        self.best = (np.inf, None, None)
        self.evals = 0

    def __call__(self, theta):
        self.evals += 1
        try:
            v, ap = log_posterior_hyper(theta, self.model, self.x, self.options)
        except (NumericalError, OverflowError) as exc:
            log.debug("theta=%s failed: %s", theta, exc)
            return np.inf
        if not np.isfinite(v):
            return np.inf
        self.x = ap.mode
        if -v < self.best[0]:
            self.best = (-v, np.array(theta), ap)
        return -v


def optimize_hyper(model: StackedModel, theta_init=None, options: FitOptions = None):
    """Nelder-Mead maximisation of the hyperparameter posterior.

    Returns (theta_star, GaussianApprox at theta_star, n_evaluations).
    """
    opts = options or FitOptions()
    layout = model.hyper_layout
    t0 = layout.initial_free() if theta_init is None else np.asarray(theta_init, dtype=float)
    if not np.all(np.isfinite(t0)):
        raise NumericalError("theta_init must be finite")
    obj = _Objective(model, opts)
    d = t0.size
    if d == 0:
        v, ap = log_posterior_hyper(t0, model, None, opts)
        return t0, ap, 1
    if not np.isfinite(obj(t0)):
        raise NumericalError("log posterior is not finite at theta_init")
    simplex = np.vstack([t0] + [t0 + opts.simplex_step * e for e in np.eye(d)])
    res = minimize(obj, t0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": opts.simplex_xatol,
                            "fatol": opts.simplex_fatol, "maxfev": opts.max_evals,
                            "maxiter": 100 * opts.max_evals, "adaptive": False})
    best_val, best_theta, best_ap = obj.best
    if best_ap is None:
        raise NumericalError("no finite evaluation of the hyperparameter posterior")
    if obj.evals >= opts.max_evals and not res.success:
        raise BudgetExceededError(f"Nelder-Mead exceeded {opts.max_evals} evaluations",
                                  best=best_theta, best_value=-best_val)
    theta_star = np.array(res.x)
    if not np.array_equal(theta_star, best_theta):
        theta_star = best_theta
    v, ap = log_posterior_hyper(theta_star, model, best_ap.mode, opts)
    return theta_star, ap, obj.evals


@dataclass
class HyperGridPoint:
    theta: np.ndarray  # free parameters, internal scale
    log_post: float
    weight: float
    approx: GaussianApprox
    axis: int = -1
    z: float = 0.0


@dataclass
class HyperGrid:
    points: list
    theta_star: np.ndarray
    directions: np.ndarray  # theta = theta_star + directions @ z
    hessian: np.ndarray
    fallback: bool = False
    model: StackedModel | None = field(default=None, repr=False)

    @property
    def weights(self):
        return np.array([p.weight for p in self.points])


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def hyper_hessian(theta_star, model, x_star, options: FitOptions = None, f0=None):
    """Central finite-difference Hessian of -log pi(theta | y)."""
    opts = options or FitOptions()
    d = len(theta_star)
    h = opts.hessian_step
    if f0 is None:
        f0 = log_posterior_hyper(theta_star, model, x_star, opts)[0]
    offsets = []
    for i in range(d):
        offsets += [((i, 1),), ((i, -1),)]
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1, -1):
                for sj in (1, -1):
                    offsets.append(((i, si), (j, sj)))

    def ev(off):
        t = np.array(theta_star, dtype=float)
        for i, s in off:
            t[i] += s * h
        return -log_posterior_hyper(t, model, x_star, opts)[0]

    vals = dict(zip(offsets, _map(ev, offsets, opts.threads)))
    H = np.zeros((d, d))
    for i in range(d):
        H[i, i] = (vals[((i, 1),)] - 2.0 * (-f0) + vals[((i, -1),)]) / h**2
    for i in range(d):
        for j in range(i + 1, d):
            H[i, j] = H[j, i] = (vals[((i, 1), (j, 1))] - vals[((i, 1), (j, -1))]
                                 - vals[((i, -1), (j, 1))] + vals[((i, -1), (j, -1))]) / (4 * h * h)
    return H


def explore_grid(theta_star, model: StackedModel, x_star=None, options: FitOptions = None,
                 hessian=None) -> HyperGrid:
    """Axis-wise exploration of log pi(theta | y) around its mode.

    Points are placed at z = +-1, +-2, ... grid steps along each principal
    axis of the Hessian; stepping stops after the first point whose drop
    from the mode reaches the threshold (that point is kept).
    """
    opts = options or FitOptions()
    theta_star = np.asarray(theta_star, dtype=float)
    f0, ap0 = log_posterior_hyper(theta_star, model, x_star, opts)
    x0 = ap0.mode
    d = theta_star.size
    center = HyperGridPoint(theta_star.copy(), f0, 1.0, ap0)
    if d == 0:
        return HyperGrid([center], theta_star, np.zeros((0, 0)), np.zeros((0, 0)), model=model)
    H = hyper_hessian(theta_star, model, x0, opts, f0) if hessian is None else np.asarray(hessian)
    w, V = np.linalg.eigh(H)
    fallback = bool(np.any(w <= 0))
    if fallback:
        log.warning("hyperparameter Hessian not positive definite; using raw axes")
        B = np.eye(d)
    else:
        B = V / np.sqrt(w)

    def walk(task):
        k, sign = task
        out = []
        for m in range(1, opts.max_axis_steps + 1):
            z = sign * m * opts.grid_step
            t = theta_star + B[:, k] * z
            try:
                v, ap = log_posterior_hyper(t, model, x0, opts)
            except (NumericalError, OverflowError):
                break
            out.append(HyperGridPoint(t, v, 0.0, ap, k, z))
            if f0 - v >= opts.grid_threshold:
                break
        return out

    tasks = [(k, s) for k in range(d) for s in (1, -1)]
    pts = [center]
    for chunk in _map(walk, tasks, opts.threads):
        pts.extend(chunk)
    lp = np.array([p.log_post for p in pts])
    wts = np.exp(lp - lp.max())
    wts /= wts.sum()
    for p, wt in zip(pts, wts):
        p.weight = float(wt)
    return HyperGrid(pts, theta_star, B, H, fallback, model=model)


# -- marginal summaries --------------------------------------------------


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    prob_negative: float | None = None

    def as_dict(self):
        return {"mean": self.mean, "sd": self.sd, "q0.025": self.q025, "q0.5": self.q50,
                "q0.975": self.q975}


def _mixture_quantiles(w, m, s, probs, iters=200):
    """Quantiles of sum_k w_k N(m_ik, s_ik^2) for every row i, by bisection."""
    n = m.shape[0]
    lo = (m - 10 * s).min(axis=1)
    hi = (m + 10 * s).max(axis=1)
    out = np.empty((n, len(probs)))
    safe = np.where(s > 0, s, 1.0)
    for c, p in enumerate(probs):
        a, b = lo.copy(), hi.copy()
        for _ in range(iters):
            mid = 0.5 * (a + b)
            z = (mid[:, None] - m) / safe
            cdf = np.where(s > 0, ndtr(z), (mid[:, None] >= m).astype(float)) @ w
            below = cdf < p
            a = np.where(below, mid, a)
            b = np.where(below, b, mid)
            if np.all(b - a <= 1e-12 * (1.0 + np.abs(mid))):
                break
        out[:, c] = 0.5 * (a + b)
    return out


@dataclass
class LatentSummaries:
    names: list
    mean: np.ndarray
    sd: np.ndarray
    quantiles: np.ndarray  # (n, 3) at 2.5%, 50%, 97.5%

    def __getitem__(self, name) -> Summary:
        i = self.names.index(name)
        return Summary(float(self.mean[i]), float(self.sd[i]), *map(float, self.quantiles[i]))


def latent_marginals(grid: HyperGrid, model: StackedModel, coords=None) -> LatentSummaries:
    """Mixture-of-Gaussians marginals of latent coordinates over the grid."""
    if not grid.points:
        raise LgmError("empty grid")
    idx = np.arange(model.n_latent) if coords is None else np.asarray(coords)
    w = grid.weights
    means = np.column_stack([p.approx.mode[idx] for p in grid.points])
    vars_ = np.column_stack([p.approx.marginal_variances()[idx] for p in grid.points])
    sds = np.sqrt(vars_)
    mean = means @ w
    var = (vars_ + means**2) @ w - mean**2
    sd = np.sqrt(np.maximum(var, 0.0))
    if len(grid.points) == 1:
        q = means[:, :1] + sds[:, :1] * ndtri(np.array(QUANTILES))[None, :]
    else:
        q = _mixture_quantiles(w, means, sds, QUANTILES)
    names = model.latent_names()
    return LatentSummaries([names[i] for i in idx], mean, sd, q)


def _split_normal_scales(grid: HyperGrid, k):
    """Scales (negative side, positive side) in z units for principal axis k."""
    f0 = grid.points[0].log_post
    out = []
    flagged = False
    for sign in (-1, 1):
        pts = [p for p in grid.points if p.axis == k and np.sign(p.z) == sign]
        if not pts:
            out.append(1.0)
            flagged = True
            continue
        z2 = np.array([p.z**2 / 2.0 for p in pts])
        drop = np.array([f0 - p.log_post for p in pts])
        c = float(z2 @ drop / (z2 @ z2))
        if c <= 0:
            out.append(1.0)
            flagged = True
        else:
            out.append(1.0 / math.sqrt(c))
    return out, flagged


def _split_normal_pdf(x, s_neg, s_pos):
    norm = 2.0 / (math.sqrt(2 * math.pi) * (s_neg + s_pos))
    s = np.where(x < 0, s_neg, s_pos)
    return norm * np.exp(-0.5 * (x / s) ** 2)


def _internal_density(grid: HyperGrid, j, scales, n=4001):
    """Density of internal hyperparameter j on a regular grid."""
    comps = []
    for k, (sn, sp_) in enumerate(scales):
        b = grid.directions[j, k]
        if b == 0:
            continue
        lo, hi = (sn, sp_) if b > 0 else (sp_, sn)
        comps.append((abs(b) * lo, abs(b) * hi))
    center = grid.theta_star[j]
    if not comps:
        return None
    total = math.sqrt(sum(0.5 * (a * a + c * c) for a, c in comps))
    half = 10.0 * total
    x = np.linspace(-half, half, n)
    dx = x[1] - x[0]
    dens = None
    for a, c in comps:
        if max(a, c) < 0.5 * dx:
            continue
        p = _split_normal_pdf(x, a, c)
        p /= p.sum() * dx
        dens = p if dens is None else np.convolve(dens, p, mode="same") * dx
    if dens is None:
        return None
    dens = np.maximum(dens, 0.0)
    dens /= trapezoid(dens, x)
    return center + x, dens


def _summary_from_density(theta, dens, transform, decreasing, signed):
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(theta))])
    cdf /= cdf[-1]
    qs = np.interp(QUANTILES, cdf, theta)
    g = transform(theta)
    wts = dens * np.gradient(theta)
    wts /= wts.sum()
    mean = float(g @ wts)
    sd = math.sqrt(max(float(((g - mean) ** 2) @ wts), 0.0))
    gq = transform(qs)
    if decreasing:
        gq = transform(np.interp([1 - q for q in QUANTILES], cdf, theta))
    prob_neg = float(np.interp(0.0, g, cdf)) if signed else None
    return Summary(mean, sd, float(gq[0]), float(gq[1]), float(gq[2]), prob_neg)


def _point_prob_negative(c, sd):
    return float(ndtr(-c / sd)) if sd > 0 else float(c < 0)


def hyper_marginals(grid: HyperGrid):
    """Natural-scale summaries of every free hyperparameter.

    Precision hyperparameters are also reported as standard deviations
    (``sigma[...]``). Returns (summaries dict, diagnostics dict).
    """
    model = grid.model
    layout = model.hyper_layout
    free = layout.free
    d = len(free)
    scales = []
    coarse = []
    for k in range(d):
        s, flagged = _split_normal_scales(grid, k)
        scales.append(s)
        if flagged:
            coarse.append(k)
    out = {}
    single = len(grid.points) == 1
    for j, hidx in enumerate(free):
        hp = layout.params[hidx]
        signed = hp.transform != "log"
        targets = [(hp.name, hp.to_natural, False)]
        if hp.transform == "log" and hp.name.startswith("tau"):
            targets.append(("sigma" + hp.name[3:], lambda z: np.exp(-0.5 * np.asarray(z)), True))
        res = None if single else _internal_density(grid, j, scales)
        for name, g, decreasing in targets:
            if res is None:
                sd_int = math.sqrt(max(float(grid.directions[j] @ grid.directions[j]), 0.0)) if d else 0.0
                c = grid.theta_star[j]
                lo, hi = c - 1.959963984540054 * sd_int, c + 1.959963984540054 * sd_int
                if decreasing:
                    lo, hi = hi, lo
                eps = 1e-6
                deriv = abs(float(g(c + eps) - g(c - eps))) / (2 * eps)
                out[name] = Summary(float(g(c)), deriv * sd_int, float(g(lo)), float(g(c)), float(g(hi)),
                                    _point_prob_negative(c, sd_int) if signed else None)
            else:
                out[name] = _summary_from_density(res[0], res[1], g, decreasing, signed)
    diag = {"coarse_axes": coarse, "single_point": single, "fallback_axes": grid.fallback}
    return out, diag


# -- orchestration -------------------------------------------------------


@dataclass
class FitResult:
    model: StackedModel
    latent: LatentSummaries
    hyper: dict
    log_evidence: float
    grid: HyperGrid
    theta_star: np.ndarray
    diagnostics: dict
    options: FitOptions | None = None


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except LgmError as exc:
        raise StageError(name, exc) from exc


def fit(spec, data, options: FitOptions = None, theta_init=None, markers=None) -> FitResult:
    """assemble -> optimize_hyper -> explore_grid -> marginals."""
    opts = options or FitOptions()
    t_start = time.perf_counter()
    model = _stage("assemble", assemble, spec, data, markers)
    theta_star, ap, n_evals = _stage("optimize_hyper", optimize_hyper, model, theta_init, opts)
    grid = _stage("explore_grid", explore_grid, theta_star, model, ap.mode, opts)
    latent = _stage("latent_marginals", latent_marginals, grid, model)
    hyper, hdiag = _stage("hyper_marginals", hyper_marginals, grid)
    d = theta_star.size
    f0 = grid.points[0].log_post
    if d:
        sign, logdet = np.linalg.slogdet(grid.hessian)
        log_evidence = f0 + 0.5 * d * LOG_2PI - 0.5 * logdet if sign > 0 else float("nan")
    else:
        log_evidence = f0
    diagnostics = {
        "n_hyper_evaluations": n_evals,
        "grid_size": len(grid.points),
        "newton_iterations_at_mode": grid.points[0].approx.iterations,
        "gradient_max_at_mode": grid.points[0].approx.gradient_max,
        "n_latent": model.n_latent,
        "n_rows": model.n_rows,
        "n_hyper": model.n_hyper,
        "n_free_hyper": d,
        "wall_time_s": time.perf_counter() - t_start,
        **hdiag,
    }
    return FitResult(model, latent, hyper, float(log_evidence), grid, theta_star, diagnostics, opts)
