"""Longitudinal and competing-risks survival records, CSV I/O, validation.

Censoring is stored as ``cause == 0``; causes run 1..C.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

from .errors import DomainError, ParseError, SchemaError, ValidationError

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "poisson")


@dataclass(frozen=True)
class LongitudinalRecord:
    individual_id: int
    time: float
    value: float
    covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SurvivalRecord:
    individual_id: int
    time: float
    cause: int
    covariates: Mapping[str, float] = field(default_factory=dict)

    def indicator(self, j: int) -> int:
        """d_ij: 1 when this individual failed from cause ``j``."""
        return int(self.cause == j)


@dataclass(frozen=True)
class JointDataset:
    """Validated pair of longitudinal and survival records.

    ``id_index`` maps each original individual id to its dense index
    1..N (survival record order). Records keep their original ids so
    that re-validating a dataset is a no-op.
    """

    longitudinal: tuple[LongitudinalRecord, ...]
    survival: tuple[SurvivalRecord, ...]
    n_causes: int
    id_index: Mapping[int, int]

    @property
    def n_individuals(self) -> int:
        return len(self.survival)

    @property
    def original_ids(self) -> list[int]:
        return [r.individual_id for r in self.survival]

    def survival_of(self, individual_id: int) -> SurvivalRecord:
        return self.survival[self.id_index[individual_id] - 1]


def _parse_float(text, what, row):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse {what} {text!r} as a number", row=row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", row=row)
    return value


def _parse_int(text, what, row):
    value = _parse_float(text, what, row)
    if not value.is_integer():
        raise ParseError(f"{what} {text!r} is not an integer", row=row)
    return int(value)


def _read_rows(path, required):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(col, path)
        extra = [h for h in header if h not in required]
        rows = list(reader)
    return rows, extra


def load_longitudinal_csv(path, family: str = "gaussian") -> list[LongitudinalRecord]:
    """Read ``id,time,value[,covariate...]``; extra columns become covariates."""
    if family not in FAMILIES:
        raise DomainError(f"unknown longitudinal family {family!r}")
    rows, extra = _read_rows(path, ("id", "time", "value"))
    out = []
    for i, row in enumerate(rows, start=1):
        iid = _parse_int(row["id"], "id", i)
        if iid < 1:
            raise DomainError(f"id must be >= 1, got {iid}", row=i)
        t = _parse_float(row["time"], "time", i)
        if t < 0:
            raise DomainError(f"time must be >= 0, got {t}", row=i)
        if family == "poisson":
            v = _parse_int(row["value"], "value", i)
            if v < 0:
                raise ParseError(f"poisson value must be >= 0, got {v}", row=i)
        else:
            v = _parse_float(row["value"], "value", i)
        cov = {k: _parse_float(row[k], k, i) for k in extra}
        out.append(LongitudinalRecord(iid, t, v, MappingProxyType(cov)))
    return out


def load_survival_csv(path, n_causes: int) -> list[SurvivalRecord]:
    """Read ``id,time,cause[,covariate...]`` with cause in 0..n_causes."""
    if n_causes < 1:
        raise DomainError("n_causes must be >= 1")
    rows, extra = _read_rows(path, ("id", "time", "cause"))
    out = []
    for i, row in enumerate(rows, start=1):
        iid = _parse_int(row["id"], "id", i)
        if iid < 1:
            raise DomainError(f"id must be >= 1, got {iid}", row=i)
        t = _parse_float(row["time"], "time", i)
        if t <= 0:
            raise DomainError(f"survival time must be > 0, got {t}", row=i)
        c = _parse_int(row["cause"], "cause", i)
        if not 0 <= c <= n_causes:
            raise DomainError(f"cause {c} outside 0..{n_causes}", row=i)
        cov = {k: _parse_float(row[k], k, i) for k in extra}
        out.append(SurvivalRecord(iid, t, c, MappingProxyType(cov)))
    return out


def _fmt(x):
    if isinstance(x, int):
        return str(x)
    x = float(x)
    # counts print as integers; -0.0 keeps its sign
    whole = x.is_integer() and abs(x) < 1e15 and math.copysign(1.0, x) > 0
    return str(int(x)) if whole else repr(x)


def write_longitudinal_csv(path, records: Sequence[LongitudinalRecord]) -> None:
    keys = list(records[0].covariates) if records else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "value", *keys])
        for r in records:
            w.writerow([r.individual_id, repr(float(r.time)), _fmt(r.value),
                        *(_fmt(r.covariates[k]) for k in keys)])


def write_survival_csv(path, records: Sequence[SurvivalRecord]) -> None:
    keys = list(records[0].covariates) if records else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "time", "cause", *keys])
        for r in records:
            w.writerow([r.individual_id, repr(float(r.time)), r.cause,
                        *(_fmt(r.covariates[k]) for k in keys)])


def validate_joint_dataset(
    longitudinal: Sequence[LongitudinalRecord],
    survival: Sequence[SurvivalRecord],
    n_causes: int,
    on_late_observation: str = "error",
) -> JointDataset:
    """Check cross-record invariants and build the dense id index.

    ``on_late_observation`` is ``"error"`` (default) or ``"truncate"``;
    the latter drops longitudinal rows recorded after the event time.
    """
    if not longitudinal or not survival:
        raise ValidationError("longitudinal and survival records must be nonempty")
    if on_late_observation not in ("error", "truncate"):
        raise DomainError(f"on_late_observation must be 'error' or 'truncate'")
    index: dict[int, int] = {}
    for k, rec in enumerate(survival, start=1):
        if rec.individual_id in index:
            raise ValidationError(f"duplicate survival record for id {rec.individual_id}")
        if not 0 <= rec.cause <= n_causes:
            raise ValidationError(f"id {rec.individual_id}: cause {rec.cause} outside 0..{n_causes}")
        if rec.time <= 0:
            raise ValidationError(f"id {rec.individual_id}: survival time must be > 0")
        index[rec.individual_id] = k
    kept = []
    dropped = 0
    for rec in longitudinal:
        k = index.get(rec.individual_id)
        if k is None:
            raise ValidationError(f"longitudinal id {rec.individual_id} has no survival record")
        if rec.time < 0:
            raise ValidationError(f"id {rec.individual_id}: negative longitudinal time")
        if rec.time > survival[k - 1].time:
            if on_late_observation == "error":
                raise ValidationError(
                    f"id {rec.individual_id}: longitudinal time {rec.time} exceeds "
                    f"survival time {survival[k - 1].time}"
                )
            dropped += 1
            continue
        kept.append(rec)
    if dropped:
        log.warning("dropped %d longitudinal rows observed after the event time", dropped)
    if not kept:
        raise ValidationError("no longitudinal rows left after truncation")
    return JointDataset(tuple(kept), tuple(survival), int(n_causes), MappingProxyType(index))
