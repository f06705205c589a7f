"""Machine-readable fit outputs: summary.json, latent.csv, hyper.csv, curves.csv.

Everything written here is a deterministic function of the fit, so
repeated runs give byte-identical files. Wall-clock timing goes to a
separate ``timing.json``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import _accel
from .data import JointDataset
from .families import cumulative_incidence, overall_survival
from .inference import FitResult, Summary
from .stacker import linear_predictor

SCHEMA_VERSION = 1
SUMMARY_FIELDS = ("mean", "sd", "q0.025", "q0.5", "q0.975", "prob_negative")
DIAGNOSTIC_KEYS = (
    "n_hyper_evaluations", "grid_size", "newton_iterations_at_mode", "gradient_max_at_mode",
    "coarse_axes", "single_point", "fallback_axes",
)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _summary_dict(s: Summary) -> dict:
    return {"mean": _num(s.mean), "sd": _num(s.sd), "q0.025": _num(s.q025), "q0.5": _num(s.q50),
            "q0.975": _num(s.q975), "prob_negative": _num(s.prob_negative)}


def _fixed_summaries(res: FitResult) -> dict:
    out = {}
    for name in res.model.fixed_names:
        s = res.latent[name]
        z = s.mean / s.sd if s.sd > 0 else math.copysign(math.inf, -s.mean)
        out[name] = Summary(s.mean, s.sd, s.q025, s.q50, s.q975, _normal_cdf(-z))
    return out


def _normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def summary_dict(res: FitResult) -> dict:
    """The summary.json document; every key is always present."""
    m = res.model
    layout = m.hyper_layout
    full = layout.expand(res.theta_star)
    diag = res.diagnostics
    return {
        "schema_version": SCHEMA_VERSION,
        "backend": _accel.backend(),
        "model": {
            "blocks": list(m.block_names),
            "n_individuals": m.n_individuals,
            "n_causes": len(m.spec.cause_blocks),
            "n_latent": m.n_latent,
            "n_rows": m.n_rows,
            "n_hyper": m.n_hyper,
            "n_free_hyper": len(layout.free),
        },
        "hyperparameters": {k: _summary_dict(v) for k, v in res.hyper.items()},
        "fixed_effects": {k: _summary_dict(v) for k, v in _fixed_summaries(res).items()},
        "theta_mode": {h.name: {"internal": _num(z), "natural": _num(h.to_natural(z)), "fixed": h.fixed}
                       for h, z in zip(layout.params, full)},
        "log_evidence": _num(res.log_evidence),
        "diagnostics": {k: diag.get(k) for k in DIAGNOSTIC_KEYS},
        "options": asdict(res.options) if res.options is not None else None,
    }


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])


def latent_rows(res: FitResult):
    m = res.model
    lat = res.latent
    names = lat.names
    pos = 0
    for blk in m.latent:
        mids = None
        if blk.kind in ("iid", "rw2", "iid2d"):
            mids = m.effects[blk.name].midpoints
        for i in range(blk.size):
            k = pos + i
            cov = float(mids[i]) if mids is not None and blk.kind != "iid2d" else None
            yield (names[k], blk.name, i + 1, cov, lat.mean[k], lat.sd[k], *lat.quantiles[k])
        pos += blk.size


def write_latent_csv(path, res: FitResult):
    _write_csv(path, ("name", "block", "index", "covariate_value", "mean", "sd", "q0.025", "q0.5", "q0.975"),
               latent_rows(res))


def hyper_rows(res: FitResult):
    layout = res.model.hyper_layout
    for name, s in res.hyper.items():
        kind = "derived" if name.startswith("sigma[") else "hyperparameter"
        yield (name, kind, s.mean, s.sd, s.q025, s.q50, s.q975, s.prob_negative)
    for h in layout.params:
        if h.fixed:
            v = h.prior.params["value"]
            yield (h.name, "fixed", v, 0.0, v, v, v, None)
    for name, s in _fixed_summaries(res).items():
        yield (name, "fixed_effect", s.mean, s.sd, s.q025, s.q50, s.q975, s.prob_negative)


def write_hyper_csv(path, res: FitResult):
    _write_csv(path, ("name", "kind", "mean", "sd", "q0.025", "q0.5", "q0.975", "prob_negative"),
               hyper_rows(res))


# -- curves ----------------------------------------------------------------


def _groups(data: JointDataset, group_by):
    """(label, survival indices, longitudinal indices) per group."""
    n = data.n_individuals
    if not group_by:
        return [("all", np.arange(n), np.arange(len(data.longitudinal)))]
    vals = np.array([r.covariates.get(group_by, np.nan) for r in data.survival], dtype=float)
    if np.any(np.isnan(vals)):
        lv = {}
        for r in data.longitudinal:
            lv.setdefault(r.individual_id, r.covariates.get(group_by, np.nan))
        vals = np.array([lv.get(r.individual_id, np.nan) for r in data.survival], dtype=float)
    if np.any(np.isnan(vals)):
        raise KeyError(f"group_by covariate {group_by!r} not found")
    dense = np.array([data.id_index[r.individual_id] - 1 for r in data.longitudinal])
    out = []
    for v in np.unique(vals):
        sel = np.flatnonzero(vals == v)
        out.append((_fmt(v), sel, np.flatnonzero(np.isin(dense, sel))))
    return out


def _inverse_link(family, eta):
    return np.exp(eta) if family == "poisson" else eta


def curve_rows(res: FitResult, data: JointDataset, time_points=101, group_by=None):
    """Mean marker trajectories on each binned effect's grid and cumulative
    incidence / overall survival at the average cause-specific linear predictor."""
    m = res.model
    layout = m.hyper_layout
    full = layout.expand(res.theta_star)
    nat = layout.natural(full)
    lat = res.latent
    groups = _groups(data, group_by)
    n_long = len(m.spec.longitudinal_blocks)
    eta = linear_predictor(m, lat.mean, full)
    for b_i, bspec in enumerate(m.spec.longitudinal_blocks):
        bname = m.block_names[b_i]
        rb = m.row_block(bname)
        for att in bspec.effects:
            eff = m.effects[att.effect]
            if eff.midpoints is None or eff.spec.kind == "iid2d":
                continue
            sl = slice(eff.block.offset, eff.block.offset + eff.block.size)
            f_mean = lat.mean[sl]
            f_lo, f_hi = lat.quantiles[sl, 0], lat.quantiles[sl, 2]
            # everything but this effect, averaged over the group's rows
            rest = eta[rb.start:rb.stop] - m.A_fixed[rb.start:rb.stop][:, sl] @ f_mean
            for label, sidx, _ in groups:
                rows = np.isin(rb.individual, sidx)
                base = float(np.mean(rest[rows])) if rows.any() else 0.0
                for k, t in enumerate(eff.midpoints):
                    yield ("mean_trajectory", bname, att.effect, label, t,
                           _inverse_link(rb.family, base + f_mean[k]),
                           _inverse_link(rb.family, base + f_lo[k]),
                           _inverse_link(rb.family, base + f_hi[k]))
    if not m.spec.cause_blocks:
        return
    t_max = max(r.time for r in data.survival)
    t_grid = np.linspace(0.0, t_max, max(int(time_points), 3))
    cause_rows = m.rows[n_long:]
    for label, sidx, _ in groups:
        hazards = []
        for rb in cause_rows:
            e = float(np.mean(eta[rb.start:rb.stop][sidx]))
            alpha = 1.0
            if rb.hyper is not None:
                name = layout.params[rb.hyper].name
                alpha = res.hyper[name].mean if name in res.hyper else nat[name]
            hazards.append((rb.family, e, alpha))
        F = cumulative_incidence(hazards, t_grid)
        S = overall_survival(hazards, t_grid)
        for j, rb in enumerate(cause_rows):
            for t, v in zip(t_grid, F[j]):
                yield ("cumulative_incidence", rb.name, "", label, t, v, None, None)
        for t, v in zip(t_grid, S):
            yield ("overall_survival", "", "", label, t, v, None, None)


def write_curves_csv(path, res: FitResult, data: JointDataset, time_points=101, group_by=None):
    _write_csv(path, ("curve", "block", "effect", "group", "x", "value", "lower", "upper"),
               curve_rows(res, data, time_points, group_by))
