"""Assemble a stacked latent Gaussian model from a ModelSpec and a dataset.

Stacked rows are ordered [longitudinal blocks..., cause blocks...]; each
cause block holds one row per individual sharing the survival time. The
latent field is [fixed effects | structured effects | linear-predictor
representations]. The design is split into a theta-free part and one
sparse matrix per estimated copy scaling, so

    A(theta) = A_fixed + sum_s gamma_s * A_s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import gmrf
from .data import JointDataset, LongitudinalRecord
from .errors import ConfigError, DomainError
from .families import FAMILY_KINDS, SURVIVAL_KINDS
from .gmrf import EffectSpec, PriorSpec, SparsePrecision

LOG_2PI = math.log(2.0 * math.pi)

# precision tying a linear-predictor representation to its definition
TIE_PRECISION = 1e6


# -- specification types -------------------------------------------------


@dataclass(frozen=True)
class Attachment:
    """Use of a structured effect inside one block's linear predictor.

    ``index`` names the covariate holding the 1-based effect index
    ("id" is the dense individual index). ``groups`` bins a continuous
    index covariate into that many equal-width groups first. ``weight``
    names a covariate multiplying the contribution.
    """

    effect: str
    index: str = "id"
    weight: str | None = None
    groups: int | None = None


@dataclass(frozen=True)
class CopyLink:
    """Reuse of an effect (or of a block's linear predictor, ``lp:<block>``)
    in ``target_block``, scaled by a fixed constant or an estimated scalar.
    """

    source: str
    target_block: str
    scaling: str = "estimated"
    value: float = 1.0
    index: str = "id"
    weight: str | None = None
    prior: PriorSpec | None = None
    slope_prior: PriorSpec | None = None
    initial: float = 0.0

    @property
    def copies_linear_predictor(self) -> bool:
        return self.source.startswith("lp:")


@dataclass(frozen=True)
class EffectDecl:
    kind: str
    size: int | None = None
    priors: Mapping[str, PriorSpec] = field(default_factory=dict)
    scale_model: bool = True
    constraint: str | None = None
    initial: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class BlockSpec:
    family: str
    fixed: tuple[str, ...] = ("intercept",)
    effects: tuple[Attachment, ...] = ()
    name: str | None = None
    prior: PriorSpec | None = None
    initial: float | None = None


@dataclass(frozen=True)
class ModelSpec:
    longitudinal_blocks: tuple[BlockSpec, ...]
    cause_blocks: tuple[BlockSpec, ...]
    effects: Mapping[str, EffectDecl] = field(default_factory=dict)
    copy_links: tuple[CopyLink, ...] = ()
    fixed_effect_prior_precision: float = 0.001

    def block_names(self) -> list[str]:
        names = []
        for m, b in enumerate(self.longitudinal_blocks, start=1):
            names.append(b.name or ("long" if len(self.longitudinal_blocks) == 1 else f"long{m}"))
        for j, b in enumerate(self.cause_blocks, start=1):
            names.append(b.name or f"cause{j}")
        return names


# -- hyperparameters -----------------------------------------------------


DEFAULT_PREC_PRIOR = PriorSpec.pc_prec(1.0, 0.01)
DEFAULT_SHAPE_PRIOR = PriorSpec("gaussian_on_scaled_log", {"scale": 1.0, "tau0": 1.0})
DEFAULT_RHO_PRIOR = PriorSpec("normal", {"mean": 0.0, "prec": 0.2})
DEFAULT_COPY_PRIOR = PriorSpec("normal", {"mean": 0.0, "prec": 0.01})


@dataclass(frozen=True)
class HyperParam:
    """One hyperparameter; ``transform`` maps natural -> internal scale."""

    name: str
    role: str  # family | effect | copy
    transform: str  # log | fisher_z | identity
    prior: PriorSpec
    initial: float = 0.0  # internal scale

    @property
    def fixed(self) -> bool:
        return self.prior.kind == "fixed"

    def to_natural(self, z):
        if self.transform == "log":
            return np.exp(z)
        if self.transform == "fisher_z":
            return np.tanh(z)
        return z

    def to_internal(self, v):
        if self.transform == "log":
            return np.log(v)
        if self.transform == "fisher_z":
            return np.arctanh(v)
        return v

    def fixed_internal(self) -> float:
        return float(self.to_internal(self.prior.params["value"]))

    def log_prior(self, z: float) -> float:
        """Log prior density on the internal scale (Jacobian included)."""
        p, kind = self.prior.params, self.prior.kind
        if kind == "fixed":
            return 0.0
        if kind == "normal":
            return 0.5 * (math.log(p["prec"]) - LOG_2PI) - 0.5 * p["prec"] * (z - p.get("mean", 0.0)) ** 2
        if self.transform != "log":
            raise ConfigError(f"{self.name}: prior {kind} needs a log-transformed parameter")
        # written directly in z so extreme values give -inf instead of overflowing
        if kind == "pc_prec":
            lam = -math.log(p["alpha"]) / p["u"]
            if -0.5 * z > 700.0:
                return -math.inf
            return math.log(lam / 2.0) - 0.5 * z - lam * math.exp(-0.5 * z)
        if kind == "gaussian_on_scaled_log":
            sz = p["scale"] * z
            return 0.5 * (math.log(p["tau0"]) - LOG_2PI) - 0.5 * p["tau0"] * sz * sz + math.log(abs(p["scale"]))
        raise ConfigError(f"unknown prior kind {kind}")


@dataclass(frozen=True)
class HyperLayout:
    params: tuple[HyperParam, ...]

    def __len__(self):
        return len(self.params)

    @property
    def free(self) -> list[int]:
        return [k for k, h in enumerate(self.params) if not h.fixed]

    @property
    def names(self) -> list[str]:
        return [h.name for h in self.params]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def initial_free(self) -> np.ndarray:
        return np.array([self.params[k].initial for k in self.free], dtype=float)

    def expand(self, theta_free) -> np.ndarray:
        """Full internal vector with fixed entries filled in."""
        theta_free = np.asarray(theta_free, dtype=float)
        free = self.free
        if theta_free.shape != (len(free),):
            raise DomainError(f"theta has {theta_free.shape} entries, expected {len(free)} free")
        full = np.array([h.fixed_internal() if h.fixed else np.nan for h in self.params])
        full[free] = theta_free
        return full

    def natural(self, theta_full) -> dict[str, float]:
        return {h.name: float(h.to_natural(z)) for h, z in zip(self.params, theta_full)}

    def log_prior(self, theta_full) -> float:
        return float(sum(h.log_prior(z) for h, z in zip(self.params, theta_full)))


# -- assembled model -----------------------------------------------------


@dataclass(frozen=True)
class LatentBlock:
    name: str
    kind: str  # fixed | iid | iid2d | rw2 | lp
    offset: int
    size: int


@dataclass(frozen=True)
class RowBlock:
    name: str
    family: str
    start: int
    stop: int
    hyper: int | None  # index into the hyper layout (gaussian tau / weibull alpha)
    y: np.ndarray | None = None
    t: np.ndarray | None = None
    d: np.ndarray | None = None
    lfact: np.ndarray | None = None
    individual: np.ndarray | None = None  # dense individual index (0-based)


@dataclass
class _EffectRuntime:
    name: str
    spec: EffectSpec
    block: LatentBlock
    template: SparsePrecision | None
    hyper: list[int]
    midpoints: np.ndarray | None = None
    constrained: bool = False


@dataclass
class StackedModel:
    spec: ModelSpec
    block_names: list[str]
    rows: list[RowBlock]
    latent: list[LatentBlock]
    fixed_names: list[str]
    hyper_layout: HyperLayout
    A_fixed: sp.csr_array
    A_scaled: list[tuple[int, sp.csr_array]]
    effects: dict[str, _EffectRuntime]
    constraints: np.ndarray  # (k, n_latent)
    tie: list[tuple[LatentBlock, sp.csr_array]]  # (lp block, averaging map M)
    n_individuals: int
    original_ids: list[int]
    _pattern: sp.csr_array = field(repr=False, default=None)
    _parts: list = field(repr=False, default=None)
    _analysis: object = field(repr=False, default=None)

    @property
    def n_latent(self) -> int:
        return self.A_fixed.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A_fixed.shape[0]

    @property
    def n_hyper(self) -> int:
        return len(self.hyper_layout)

    def latent_block(self, name: str) -> LatentBlock:
        for b in self.latent:
            if b.name == name:
                return b
        raise KeyError(name)

    def row_block(self, name: str) -> RowBlock:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def latent_names(self) -> list[str]:
        out = []
        for b in self.latent:
            if b.kind == "fixed":
                out.extend(self.fixed_names)
            elif b.kind == "iid2d":
                for i in range(b.size // 2):
                    out += [f"{b.name}[{i + 1}].v", f"{b.name}[{i + 1}].w"]
            else:
                out.extend(f"{b.name}[{i + 1}]" for i in range(b.size))
        return out

    def design(self, theta_full) -> sp.csr_array:
        A = self.A_fixed
        for h, As in self.A_scaled:
            A = A + theta_full[h] * As
        return sp.csr_array(A)

    @property
    def analysis(self):
        if self._analysis is None:
            from .sparse_chol import CholeskyAnalysis

            self._analysis = CholeskyAnalysis(self._pattern)
        return self._analysis


# -- covariate lookup ----------------------------------------------------


def _long_value(rec: LongitudinalRecord, name, data: JointDataset):
    if name == "time":
        return rec.time
    if name == "id":
        return float(data.id_index[rec.individual_id])
    if name in ("one", "intercept"):
        return 1.0
    if name in rec.covariates:
        return rec.covariates[name]
    surv = data.survival_of(rec.individual_id)
    if name in surv.covariates:
        return surv.covariates[name]
    raise ConfigError(f"unknown covariate {name!r}")


def _surv_value(k, name, data: JointDataset):
    rec = data.survival[k]
    if name == "time":
        return rec.time
    if name == "id":
        return float(k + 1)
    if name in ("one", "intercept"):
        return 1.0
    if name in rec.covariates:
        return rec.covariates[name]
    raise ConfigError(f"unknown covariate {name!r}")


def _column(getter, n, name):
    return np.array([getter(i, name) for i in range(n)], dtype=float)


def _fixed_label(block, entry):
    if "=" in entry:
        cov, label = entry.split("=", 1)
        return cov.strip(), label.strip()
    return entry, f"{block}:{entry}"


# -- assembly ------------------------------------------------------------


def _check_cycles(spec: ModelSpec, names):
    graph = {n: set() for n in names}
    for c in spec.copy_links:
        if c.copies_linear_predictor:
            src = c.source[3:]
            if src not in graph:
                raise ConfigError(f"copy link source block {src!r} is unknown")
            graph[c.target_block].add(src)
    state = {}

    def visit(n):
        state[n] = 1
        for m in graph[n]:
            if state.get(m) == 1:
                raise ConfigError("cyclic copy links between linear predictors")
            if m not in state:
                visit(m)
        state[n] = 2

    for n in names:
        if n not in state:
            visit(n)


def _effect_hypers(name, decl: EffectDecl):
    pri = decl.priors
    ini = decl.initial
    if decl.kind in ("iid", "rw2"):
        return [HyperParam(f"tau[{name}]", "effect", "log", pri.get("tau", DEFAULT_PREC_PRIOR),
                           math.log(ini.get("tau", 1.0)))]
    if decl.kind == "iid2d":
        return [
            HyperParam(f"tau_v[{name}]", "effect", "log", pri.get("tau_v", DEFAULT_PREC_PRIOR),
                       math.log(ini.get("tau_v", 1.0))),
            HyperParam(f"tau_w[{name}]", "effect", "log", pri.get("tau_w", DEFAULT_PREC_PRIOR),
                       math.log(ini.get("tau_w", 1.0))),
            HyperParam(f"rho[{name}]", "effect", "fisher_z", pri.get("rho", DEFAULT_RHO_PRIOR),
                       math.atanh(ini.get("rho", 0.0))),
        ]
    raise ConfigError(f"effect {name}: unknown kind {decl.kind!r}")


def assemble(spec: ModelSpec, data: JointDataset,
             markers: Mapping[str, Sequence[LongitudinalRecord]] | None = None) -> StackedModel:
    """Build the stacked model.

    ``markers`` supplies extra longitudinal series for blocks beyond the
    first; block m (m >= 2) reads ``markers[block name]``.
    """
    if spec.cause_blocks and len(spec.cause_blocks) != data.n_causes:
        raise ConfigError(f"spec has {len(spec.cause_blocks)} cause blocks, data has {data.n_causes} causes")
    names = spec.block_names()
    if len(set(names)) != len(names):
        raise ConfigError("block names must be unique")
    for c in spec.copy_links:
        if c.target_block not in names:
            raise ConfigError(f"copy link target {c.target_block!r} is unknown")
        if not c.copies_linear_predictor and c.source not in spec.effects:
            raise ConfigError(f"copy link source {c.source!r} is not a declared effect")
        if c.scaling not in ("estimated", "fixed"):
            raise ConfigError(f"copy scaling must be 'estimated' or 'fixed', got {c.scaling!r}")
    _check_cycles(spec, names)
    N = data.n_individuals
    M = len(spec.longitudinal_blocks)

    # ---- rows -----------------------------------------------------------
    row_sources = []  # (name, blockspec, kind, n_rows, getter)
    for m, b in enumerate(spec.longitudinal_blocks):
        name = names[m]
        if b.family not in ("gaussian", "poisson"):
            raise ConfigError(f"longitudinal block {name}: family {b.family!r} not allowed")
        recs = data.longitudinal if m == 0 else (markers or {}).get(name)
        if recs is None:
            raise ConfigError(f"no longitudinal records for block {name}")
        for r in recs:
            if r.individual_id not in data.id_index:
                raise ConfigError(f"block {name}: id {r.individual_id} has no survival record")
        recs = list(recs)
        row_sources.append((name, b, "long", recs))
    for j, b in enumerate(spec.cause_blocks):
        if b.family not in SURVIVAL_KINDS:
            raise ConfigError(f"cause block {names[M + j]}: family {b.family!r} is not a survival family")
        row_sources.append((names[M + j], b, "cause", j + 1))

    def getter_for(kind, payload):
        if kind == "long":
            return (lambda i, nm: _long_value(payload[i], nm, data)), len(payload)
        return (lambda i, nm: _surv_value(i, nm, data)), N

    # ---- hyper layout (family, effects, copies) -------------------------
    hypers: list[HyperParam] = []
    block_hyper: dict[str, int | None] = {}
    for name, b, kind, payload in row_sources:
        if b.family == "gaussian":
            block_hyper[name] = len(hypers)
            hypers.append(HyperParam(f"tau[{name}]", "family", "log", b.prior or DEFAULT_PREC_PRIOR,
                                     math.log(b.initial if b.initial else 1.0)))
        elif b.family == "weibull_surv":
            block_hyper[name] = len(hypers)
            hypers.append(HyperParam(f"alpha[{name}]", "family", "log", b.prior or DEFAULT_SHAPE_PRIOR,
                                     math.log(b.initial if b.initial else 1.0)))
        else:
            block_hyper[name] = None
    effect_hyper: dict[str, list[int]] = {}
    for ename, decl in spec.effects.items():
        hs = _effect_hypers(ename, decl)
        effect_hyper[ename] = list(range(len(hypers), len(hypers) + len(hs)))
        hypers.extend(hs)
    copy_hyper: list[tuple[int | None, int | None]] = []
    for c in spec.copy_links:
        label = f"{c.target_block}<-{c.source}"
        slope = (not c.copies_linear_predictor) and spec.effects[c.source].kind == "iid2d"
        if c.scaling == "estimated":
            h0 = len(hypers)
            hypers.append(HyperParam(f"gamma[{label}]", "copy", "identity", c.prior or DEFAULT_COPY_PRIOR,
                                     float(c.initial)))
            h1 = None
            if slope:
                h1 = len(hypers)
                hypers.append(HyperParam(f"kappa[{label}]", "copy", "identity",
                                         c.slope_prior or c.prior or DEFAULT_COPY_PRIOR, 0.0))
            copy_hyper.append((h0, h1))
        else:
            copy_hyper.append((None, None))
    layout = HyperLayout(tuple(hypers))

    # ---- fixed effects --------------------------------------------------
    fixed_names: list[str] = []
    fixed_terms = []  # (block idx, covariate, label)
    for bi, (name, b, kind, payload) in enumerate(row_sources):
        for entry in b.fixed:
            cov, label = _fixed_label(name, entry)
            if label not in fixed_names:
                fixed_names.append(label)
            fixed_terms.append((bi, cov, label))
    nb = len(fixed_names)
    latent = [LatentBlock("beta", "fixed", 0, nb)] if nb else []
    offset = nb

    # ---- effect sizes (binning first) -----------------------------------
    uses: dict[str, list] = {e: [] for e in spec.effects}
    for bi, (name, b, kind, payload) in enumerate(row_sources):
        for att in b.effects:
            if att.effect not in spec.effects:
                raise ConfigError(f"block {name} attaches undeclared effect {att.effect!r}")
            uses[att.effect].append((bi, att.index, att.weight, att.groups, None))
    for ci, c in enumerate(spec.copy_links):
        if c.copies_linear_predictor:
            continue
        bi = names.index(c.target_block)
        uses[c.source].append((bi, c.index, c.weight, None, ci))

    index_values: dict[tuple, np.ndarray] = {}
    effects: dict[str, _EffectRuntime] = {}
    for ename, decl in spec.effects.items():
        use = uses[ename]
        groups = {u[3] for u in use if u[3] is not None}
        if len(groups) > 1:
            raise ConfigError(f"effect {ename}: inconsistent group counts {sorted(groups)}")
        mids = None
        raw = []
        for (bi, idx, w, g, ci) in use:
            getter, n = getter_for(row_sources[bi][2], row_sources[bi][3])
            raw.append(_column(getter, n, idx))
        if groups:
            g = groups.pop()
            allv = np.concatenate(raw) if raw else np.zeros(0)
            bins, mids = gmrf.bin_covariate(allv, g)
            pos = 0
            for k, v in enumerate(raw):
                raw[k] = bins[pos:pos + len(v)].astype(float)
                pos += len(v)
            size = g
        else:
            if decl.kind == "rw2" and any(np.any(v != np.round(v)) for v in raw):
                raise DomainError(f"rw2 effect {ename} is attached to an unbinned continuous "
                                  f"covariate; bin it first (bin_covariate / groups=...)")
            size = decl.size
            if size is None:
                idx_names = {u[1] for u in use}
                size = N if idx_names <= {"id"} else int(max((v.max() for v in raw), default=0))
        if decl.size is not None and decl.size != size:
            raise ConfigError(f"effect {ename}: declared size {decl.size} but indices need {size}")
        for v in raw:
            if v.size and (np.any(v < 1) or np.any(v > size) or np.any(v != np.round(v))):
                raise DomainError(f"effect {ename}: index values must be integers in 1..{size}")
        for u, v in zip(use, raw):
            index_values[(ename, u[0], u[4])] = v.astype(np.int64)
        espec = EffectSpec(decl.kind, int(size), dict(decl.priors), decl.scale_model)
        blk = LatentBlock(ename, decl.kind, offset, espec.dimension)
        latent.append(blk)
        offset += espec.dimension
        template = None
        constrained = False
        if decl.kind == "rw2":
            template = gmrf.rw2_precision(size)
            if decl.scale_model:
                template = gmrf.scale_precision(template)
            constrained = (decl.constraint or "sum_to_zero") == "sum_to_zero"
        elif decl.kind == "iid":
            template = gmrf.iid_precision(size, 1.0)
            constrained = decl.constraint == "sum_to_zero"
        effects[ename] = _EffectRuntime(ename, espec, blk, template, effect_hyper[ename], mids, constrained)

    lp_blocks: dict[str, LatentBlock] = {}
    for c in spec.copy_links:
        if c.copies_linear_predictor and c.source not in lp_blocks:
            blk = LatentBlock(c.source, "lp", offset, N)
            lp_blocks[c.source] = blk
            latent.append(blk)
            offset += N
    n_latent = offset

    # ---- design ----------------------------------------------------------
    starts = []
    pos = 0
    for name, b, kind, payload in row_sources:
        n = len(payload) if kind == "long" else N
        starts.append(pos)
        pos += n
    n_rows = pos
    trip_fixed = ([], [], [])
    trip_scaled: dict[int, tuple] = {}

    def add(rows, cols, vals, h=None):
        tgt = trip_fixed if h is None else trip_scaled.setdefault(h, ([], [], []))
        tgt[0].append(np.asarray(rows, dtype=np.int64))
        tgt[1].append(np.asarray(cols, dtype=np.int64))
        tgt[2].append(np.asarray(vals, dtype=float))

    for bi, cov, label in fixed_terms:
        name, b, kind, payload = row_sources[bi]
        getter, n = getter_for(kind, payload)
        vals = _column(getter, n, cov)
        add(starts[bi] + np.arange(n), np.full(n, fixed_names.index(label)), vals)

    def effect_terms(ename, bi, weight, ci, scale, h0, h1):
        name, b, kind, payload = row_sources[bi]
        getter, n = getter_for(kind, payload)
        eff = effects[ename]
        idx = index_values[(ename, bi, ci)] - 1
        w = _column(getter, n, weight) if weight else np.ones(n)
        rows = starts[bi] + np.arange(n)
        off = eff.block.offset
        if eff.spec.kind == "iid2d":
            t = _column(getter, n, "time")
            add(rows, off + 2 * idx, scale * w, h0)
            add(rows, off + 2 * idx + 1, scale * w * t, h1 if h0 is not None else None)
        else:
            add(rows, off + idx, scale * w, h0)

    for bi, (name, b, kind, payload) in enumerate(row_sources):
        for att in b.effects:
            effect_terms(att.effect, bi, att.weight, None, 1.0, None, None)
    for ci, c in enumerate(spec.copy_links):
        h0, h1 = copy_hyper[ci]
        scale = 1.0 if c.scaling == "estimated" else float(c.value)
        bi = names.index(c.target_block)
        if c.copies_linear_predictor:
            name, b, kind, payload = row_sources[bi]
            getter, n = getter_for(kind, payload)
            ids = _column(getter, n, "id").astype(np.int64) - 1
            w = _column(getter, n, c.weight) if c.weight else np.ones(n)
            add(starts[bi] + np.arange(n), lp_blocks[c.source].offset + ids, scale * w, h0)
        else:
            if h1 is None and spec.effects[c.source].kind == "iid2d" and h0 is not None:
                raise ConfigError("internal: iid2d copy without slope scaling")
            effect_terms(c.source, bi, c.weight, ci, scale, h0, h1)

    def build(tr):
        if not tr[0]:
            return sp.csr_array((n_rows, n_latent))
        A = sp.coo_array((np.concatenate(tr[2]), (np.concatenate(tr[0]), np.concatenate(tr[1]))),
                         shape=(n_rows, n_latent))
        A = sp.csr_array(A)
        A.sum_duplicates()
        A.sort_indices()
        return A

    A_fixed = build(trip_fixed)
    A_scaled = [(h, build(tr)) for h, tr in sorted(trip_scaled.items())]

    # ---- linear-predictor representations (tie maps) --------------------
    tie = []
    for src, blk in lp_blocks.items():
        sbi = names.index(src[3:])
        a, b_ = starts[sbi], starts[sbi] + (len(row_sources[sbi][3]) if row_sources[sbi][2] == "long" else N)
        for h, As in A_scaled:
            if As[a:b_].nnz:
                raise ConfigError(f"copied linear predictor {src} may not contain estimated scalings")
        getter, n = getter_for(row_sources[sbi][2], row_sources[sbi][3])
        ids = _column(getter, n, "id").astype(np.int64) - 1
        counts = np.bincount(ids, minlength=N).astype(float)
        if np.any(counts == 0):
            raise ConfigError(f"{src}: every individual needs at least one row to copy its linear predictor")
        avg = sp.csr_array((1.0 / counts[ids], (ids, np.arange(n))), shape=(N, n))
        Mmap = sp.csr_array(avg @ A_fixed[a:b_])
        tie.append((blk, Mmap))

    # ---- rows metadata -------------------------------------------------
    rows = []
    for bi, (name, b, kind, payload) in enumerate(row_sources):
        s = starts[bi]
        if kind == "long":
            y = np.array([r.value for r in payload], dtype=float)
            t = np.array([r.time for r in payload], dtype=float)
            ind = np.array([data.id_index[r.individual_id] - 1 for r in payload], dtype=np.int64)
            lfact = None
            if b.family == "poisson":
                from scipy.special import gammaln

                lfact = gammaln(y + 1.0)
            rows.append(RowBlock(name, b.family, s, s + len(payload), block_hyper[name], y=y, t=t,
                                 lfact=lfact, individual=ind))
        else:
            j = payload
            t = np.array([r.time for r in data.survival], dtype=float)
            d = np.array([float(r.cause == j) for r in data.survival])
            rows.append(RowBlock(name, b.family, s, s + N, block_hyper[name], t=t, d=d,
                                 individual=np.arange(N, dtype=np.int64)))

    # ---- constraints ---------------------------------------------------
    cons = []
    for eff in effects.values():
        if eff.constrained:
            c = np.zeros(n_latent)
            c[eff.block.offset:eff.block.offset + eff.block.size] = 1.0
            cons.append(c)
    C = np.array(cons).reshape(len(cons), n_latent)

    model = StackedModel(
        spec=spec, block_names=names, rows=rows, latent=latent, fixed_names=fixed_names,
        hyper_layout=layout, A_fixed=A_fixed, A_scaled=A_scaled, effects=effects,
        constraints=C, tie=tie, n_individuals=N, original_ids=data.original_ids,
    )
    model._parts = _unit_parts(model)
    model._pattern = _sparsity_pattern(model)
    return model


def _unit_parts(model: StackedModel):
    """Q(theta) = sum_m coef_m(theta) * U_m; yields (coef function, U)."""
    n = model.n_latent
    parts = []
    fp = model.spec.fixed_effect_prior_precision
    for blk in model.latent:
        sl = slice(blk.offset, blk.offset + blk.size)
        if blk.kind == "fixed":
            parts.append((lambda th, fp=fp: fp, _embed(sp.identity(blk.size, format="csr"), blk.offset, n)))
        elif blk.kind in ("iid", "rw2"):
            eff = model.effects[blk.name]
            h = eff.hyper[0]
            parts.append((lambda th, h=h: math.exp(th[h]), _embed(eff.template.matrix, blk.offset, n)))
        elif blk.kind == "iid2d":
            eff = model.effects[blk.name]
            hv, hw, hr = eff.hyper
            m = blk.size // 2
            E = lambda a, b: sp.kron(sp.identity(m, format="csr"),
                                     sp.csr_array(([1.0], ([a], [b])), shape=(2, 2)), format="csr")

            def entry(th, a, b, hv=hv, hw=hw, hr=hr):
                B = _iid2d_block(th, hv, hw, hr)
                return B[a, b]

            parts.append((lambda th, e=entry: e(th, 0, 0), _embed(E(0, 0), blk.offset, n)))
            parts.append((lambda th, e=entry: e(th, 1, 1), _embed(E(1, 1), blk.offset, n)))
            parts.append((lambda th, e=entry: e(th, 0, 1), _embed(E(0, 1) + E(1, 0), blk.offset, n)))
    for blk, Mmap in model.tie:
        # kappa * [M'M, -M'; -M, I] with the lp block in the last rows
        E = sp.csr_array(Mmap - _embed_rows(blk, n))
        parts.append((lambda th: TIE_PRECISION, sp.csr_array(E.T @ E)))
    return parts


def _embed_rows(blk, n):
    return sp.csr_array((np.ones(blk.size), (np.arange(blk.size), blk.offset + np.arange(blk.size))),
                        shape=(blk.size, n))


def _embed(Qb, offset, n):
    Qb = sp.coo_array(Qb)
    return sp.csr_array((Qb.data, (Qb.row + offset, Qb.col + offset)), shape=(n, n))


def _iid2d_block(theta_full, hv, hw, hr):
    tv, tw = math.exp(theta_full[hv]), math.exp(theta_full[hw])
    r = math.tanh(theta_full[hr])
    cov = r / math.sqrt(tv * tw)
    return gmrf.iid2d_block(tv, tw, cov)


def _sparsity_pattern(model: StackedModel) -> sp.csr_array:
    n = model.n_latent
    P = sp.csr_array((n, n))
    for _, U in model._parts:
        P = P + abs(U)
    A = abs(model.A_fixed)
    for _, As in model.A_scaled:
        A = A + abs(As)
    P = P + sp.csr_array(A.T @ A) + sp.identity(n, format="csr")
    P = sp.csr_array((P != 0).astype(float))
    return P


def joint_prior_precision(model: StackedModel, theta_full) -> SparsePrecision:
    """Prior precision Q(theta) of the whole latent field.

    ``log_det_constant`` is the normaliser of the factorised prior
    (effects times the linear-predictor ties), which is what the
    posterior computations use.
    """
    theta_full = np.asarray(theta_full, dtype=float)
    if theta_full.shape != (model.n_hyper,):
        raise DomainError(f"theta has shape {theta_full.shape}, expected ({model.n_hyper},)")
    Q = sp.csr_array((model.n_latent, model.n_latent))
    for coef, U in model._parts:
        Q = Q + coef(theta_full) * U
    Q = sp.csr_array(Q)
    Q.sort_indices()
    rank_def, logdet = _prior_constants(model, theta_full)
    return SparsePrecision(Q, rank_def, logdet)


def _prior_constants(model, theta_full):
    rank_def = 0
    logdet = 0.0
    fp = model.spec.fixed_effect_prior_precision
    for blk in model.latent:
        if blk.kind == "fixed":
            logdet += blk.size * math.log(fp)
        elif blk.kind in ("iid", "rw2"):
            eff = model.effects[blk.name]
            tau = math.exp(theta_full[eff.hyper[0]])
            n_eff = blk.size - eff.template.rank_deficiency
            logdet += eff.template.log_det_constant + n_eff * math.log(tau)
            rank_def += eff.template.rank_deficiency
        elif blk.kind == "iid2d":
            eff = model.effects[blk.name]
            B = _iid2d_block(theta_full, *eff.hyper)
            logdet += (blk.size // 2) * float(np.linalg.slogdet(B)[1])
        elif blk.kind == "lp":
            logdet += blk.size * math.log(TIE_PRECISION)
    return rank_def, logdet


def prior_log_density(model: StackedModel, x, Q: SparsePrecision) -> float:
    n_eff = model.n_latent - Q.rank_deficiency
    return 0.5 * Q.log_det_constant - 0.5 * n_eff * LOG_2PI - 0.5 * float(x @ (Q.matrix @ x))


def linear_predictor(model: StackedModel, x, theta_full=None) -> np.ndarray:
    """Per-row linear predictor A(theta) x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_latent,):
        raise DomainError(f"x has shape {x.shape}, expected ({model.n_latent},)")
    if model.A_scaled and theta_full is None:
        raise DomainError("model has estimated copy scalings; theta is required")
    eta = model.A_fixed @ x
    for h, As in model.A_scaled:
        eta = eta + theta_full[h] * (As @ x)
    return eta
