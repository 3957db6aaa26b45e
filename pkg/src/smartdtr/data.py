"""Longitudinal SMART data model.

Records are ordered ``X(1) < A(1) < X(2) < A(2) < Y``. Treatments are kept as
declared string levels; every other column is numeric with ``NaN`` marking a
missing cell.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "RuleError",
    "NodeSchema",
    "TrialDataset",
    "AllowableSetRule",
    "EmbeddedRegime",
    "SmartDesign",
    "load_csv",
    "write_csv",
    "complete_case_filter",
    "follows_regime",
    "allowable_set",
    "enumerate_embedded_regimes",
    "condition_mask",
]


class DataError(ValueError):
    """Raised when a dataset or file does not match its schema."""


class RuleError(ValueError):
    """Raised for inconsistent allowable-set rules or regimes."""


def _norm(value: Any) -> Any:
    """Normalise a condition/stratum value so 1, 1.0 and "1" compare sanely."""
    if isinstance(value, (bool, np.bool_)):
        return float(value)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    return str(value)


@dataclass(frozen=True)
class NodeSchema:
    """Column roles of a two-stage SMART.

    ``tailoring1`` holds Z(1) (a subset of the baseline columns, often empty).
    ``tailoring2`` holds Z(2) and may contain the stage-1 treatment column.
    ``domains`` lists the finite value sets of tailoring covariates; treatment
    columns default to their declared levels and the response to ``(1, 0)``.
    The declared order fixes the numbering of enumerated regimes.
    """

    baseline: tuple[str, ...]
    stage1_treatment: str
    stage1_levels: tuple[str, ...]
    timevarying: tuple[str, ...]
    stage2_treatment: str
    stage2_levels: tuple[str, ...]
    outcome: str
    outcome_range: tuple[float, float] = (0.0, 1.0)
    tailoring1: tuple[str, ...] = ()
    tailoring2: tuple[str, ...] = ()
    response: str | None = None
    absorbing: tuple[str, ...] = ()
    domains: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("baseline", "stage1_levels", "timevarying", "stage2_levels",
                     "tailoring1", "tailoring2", "absorbing"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "stage1_levels", tuple(str(v) for v in self.stage1_levels))
        object.__setattr__(self, "stage2_levels", tuple(str(v) for v in self.stage2_levels))
        object.__setattr__(self, "outcome_range", tuple(float(v) for v in self.outcome_range))
        object.__setattr__(self, "domains", {k: tuple(v) for k, v in dict(self.domains).items()})

        cols = self.columns
        if len(set(cols)) != len(cols):
            raise DataError(f"duplicate column names in schema: {cols}")
        a, b = self.outcome_range
        if not a < b:
            raise DataError(f"outcome range must satisfy a < b, got {self.outcome_range}")
        if not self.stage1_levels or not self.stage2_levels:
            raise DataError("treatment level sets must be nonempty")
        position = {c: i for i, c in enumerate(cols)}
        a1_pos = position[self.stage1_treatment]
        for c in self.tailoring1:
            if c not in position or position[c] >= a1_pos:
                raise DataError(f"stage-1 tailoring column {c!r} must be a baseline column")
        a2_pos = position[self.stage2_treatment]
        for c in self.tailoring2:
            if c not in position or position[c] >= a2_pos:
                raise DataError(f"stage-2 tailoring column {c!r} must precede {self.stage2_treatment!r}")
        for c in (self.response, *self.absorbing):
            if c is not None and c not in self.timevarying:
                raise DataError(f"column {c!r} must be a time-varying covariate")

    @property
    def columns(self) -> tuple[str, ...]:
        return (*self.baseline, self.stage1_treatment, *self.timevarying,
                self.stage2_treatment, self.outcome)

    @property
    def treatments(self) -> tuple[str, str]:
        return self.stage1_treatment, self.stage2_treatment

    def levels(self, stage: int) -> tuple[str, ...]:
        return self.stage1_levels if stage == 1 else self.stage2_levels

    def treatment(self, stage: int) -> str:
        return self.stage1_treatment if stage == 1 else self.stage2_treatment

    def domain(self, column: str) -> tuple:
        if column == self.stage1_treatment:
            return self.stage1_levels
        if column == self.stage2_treatment:
            return self.stage2_levels
        if column in self.domains:
            return tuple(_norm(v) for v in self.domains[column])
        if column == self.response or column in self.absorbing:
            return (1.0, 0.0)
        raise RuleError(f"tailoring column {column!r} has no finite domain declared")

    def history(self, stage: int) -> tuple[str, ...]:
        """Columns observed before the stage-``stage`` decision (or before Y for stage 3)."""
        if stage == 1:
            return self.baseline
        if stage == 2:
            return (*self.baseline, self.stage1_treatment, *self.timevarying)
        return (*self.baseline, self.stage1_treatment, *self.timevarying, self.stage2_treatment)

    def to_dict(self) -> dict:
        return {
            "baseline": list(self.baseline),
            "stage1_treatment": {"name": self.stage1_treatment, "levels": list(self.stage1_levels)},
            "timevarying": list(self.timevarying),
            "stage2_treatment": {"name": self.stage2_treatment, "levels": list(self.stage2_levels)},
            "outcome": {"name": self.outcome, "range": list(self.outcome_range)},
            "tailoring": {"stage1": list(self.tailoring1), "stage2": list(self.tailoring2)},
            "response": self.response,
            "absorbing": list(self.absorbing),
            "domains": {k: list(v) for k, v in self.domains.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeSchema":
        tail = d.get("tailoring", {})
        return cls(
            baseline=tuple(d.get("baseline", ())),
            stage1_treatment=d["stage1_treatment"]["name"],
            stage1_levels=tuple(d["stage1_treatment"]["levels"]),
            timevarying=tuple(d.get("timevarying", ())),
            stage2_treatment=d["stage2_treatment"]["name"],
            stage2_levels=tuple(d["stage2_treatment"]["levels"]),
            outcome=d["outcome"]["name"],
            outcome_range=tuple(d["outcome"].get("range", (0.0, 1.0))),
            tailoring1=tuple(tail.get("stage1", ())),
            tailoring2=tuple(tail.get("stage2", ())),
            response=d.get("response"),
            absorbing=tuple(d.get("absorbing", ())),
            domains=d.get("domains", {}),
        )


def condition_mask(frame: pd.DataFrame, when: Mapping[str, Any]) -> np.ndarray:
    """Rows of ``frame`` satisfying a conjunction of equality/membership tests.

    ``when`` maps column names to a value or a list of admissible values.
    An empty condition matches every row.
    """
    mask = np.ones(len(frame), dtype=bool)
    for col, target in when.items():
        if col not in frame.columns:
            raise RuleError(f"condition references unknown column {col!r}")
        values = frame[col].to_numpy()
        targets = target if isinstance(target, (list, tuple, set, frozenset)) else [target]
        targets = [_norm(t) for t in targets]
        if values.dtype == object:
            hit = frame[col].isin([str(t) for t in targets]).to_numpy()
        else:
            hit = np.isin(values.astype(float), [float(t) for t in targets])
        mask &= hit
    return mask


def _condition_matches(history: Mapping[str, Any], when: Mapping[str, Any]) -> bool:
    for col, target in when.items():
        if col not in history:
            raise RuleError(f"history lacks column {col!r} required by a rule")
        targets = target if isinstance(target, (list, tuple, set, frozenset)) else [target]
        if _norm(history[col]) not in {_norm(t) for t in targets}:
            return False
    return True


@dataclass(frozen=True)
class TrialDataset:
    """An immutable table of SMART records.

    Construction validates treatment levels and the absorbing-event rule for
    missing stage-2 treatments. Y may be missing until
    :func:`complete_case_filter` is applied.
    """

    schema: NodeSchema
    frame: pd.DataFrame

    def __post_init__(self):
        s = self.schema
        missing = [c for c in s.columns if c not in self.frame.columns]
        if missing:
            raise DataError(f"missing required column(s): {missing}")
        frame = self.frame.loc[:, list(s.columns)].reset_index(drop=True).copy()
        for stage in (1, 2):
            col = s.treatment(stage)
            raw = frame[col]
            present = raw.notna() & (raw.astype(str) != "")
            vals = raw.where(present, None).map(lambda v: None if v is None else _level_str(v))
            bad = ~vals[present].isin(s.levels(stage))
            if bad.any():
                row = int(vals[present][bad].index[0])
                raise DataError(f"unknown treatment level {vals[row]!r} in column {col!r} (row {row})")
            frame[col] = vals.astype(object)
        for col in s.columns:
            if col in s.treatments:
                continue
            try:
                frame[col] = pd.to_numeric(frame[col]).astype(float)
            except (TypeError, ValueError) as exc:
                raise DataError(f"non-numeric values in column {col!r}") from exc
        if frame[s.stage1_treatment].isna().any():
            row = int(np.flatnonzero(frame[s.stage1_treatment].isna().to_numpy())[0])
            raise DataError(f"stage-1 treatment missing (row {row})")
        voided = self._voided(frame)
        a2_missing = frame[s.stage2_treatment].isna().to_numpy()
        if (a2_missing & ~voided).any():
            row = int(np.flatnonzero(a2_missing & ~voided)[0])
            raise DataError(f"stage-2 treatment missing without an absorbing event (row {row})")
        if s.response is not None:
            r = frame[s.response].to_numpy()
            ok = np.isnan(r) | (r == 0) | (r == 1)
            if not ok.all():
                raise DataError(f"response indicator {s.response!r} must be binary")
            if np.isnan(r[~voided]).any():
                raise DataError(f"response indicator {s.response!r} missing without an absorbing event")
        frame.flags.allows_duplicate_labels = True
        object.__setattr__(self, "frame", frame)

    def _voided(self, frame: pd.DataFrame) -> np.ndarray:
        out = np.zeros(len(frame), dtype=bool)
        for c in self.schema.absorbing:
            out |= frame[c].to_numpy() == 1
        return out

    @property
    def n(self) -> int:
        return len(self.frame)

    def __len__(self) -> int:
        return self.n

    @property
    def missing_mask(self) -> pd.DataFrame:
        return self.frame.isna()

    @property
    def voided(self) -> np.ndarray:
        """True where an absorbing event before stage 2 voids A(2)."""
        return self._voided(self.frame)

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.schema.outcome].to_numpy(dtype=float)

    def treatment(self, stage: int) -> np.ndarray:
        return self.frame[self.schema.treatment(stage)].to_numpy()

    def subset(self, mask: np.ndarray) -> "TrialDataset":
        return TrialDataset(self.schema, self.frame.loc[np.asarray(mask)])

    def record(self, i: int) -> dict:
        return self.frame.iloc[i].to_dict()


def _level_str(v: Any) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def load_csv(path: str | Path, schema: NodeSchema, rules: Sequence["AllowableSetRule"] | None = None) -> TrialDataset:
    """Read an RFC-4180 CSV with a header row; empty fields are missing.

    Raises :class:`DataError` naming the offending row for malformed rows,
    unknown treatment levels and missing columns. When ``rules`` are given the
    observed treatments are also checked against the allowable sets.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s): {missing}")
        rows = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise DataError(f"{path}: malformed row {i} (expected {len(header)} fields, got {len(row)})")
            rows.append(row)
    raw = pd.DataFrame(rows, columns=header, dtype=object)
    frame = pd.DataFrame(index=raw.index)
    for col in schema.columns:
        cells = raw[col]
        if col in schema.treatments:
            frame[col] = cells.where(cells != "", None)
            continue
        parsed = np.empty(len(cells))
        for i, cell in enumerate(cells):
            if cell == "":
                parsed[i] = np.nan
                continue
            try:
                parsed[i] = float(cell)
            except ValueError:
                raise DataError(f"{path}: malformed row {i} (non-numeric {col}={cell!r})") from None
        frame[col] = parsed
    data = TrialDataset(schema, frame)
    if rules is not None:
        check_allowable(data, rules)
    return data


def write_csv(data: TrialDataset, path: str | Path) -> None:
    """Write ``data`` so that :func:`load_csv` reproduces values and mask exactly."""
    s = data.schema
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(s.columns)
        for row in data.frame.itertuples(index=False):
            out = []
            for col, v in zip(s.columns, row):
                if v is None or (not isinstance(v, str) and np.isnan(v)):
                    out.append("")
                elif col in s.treatments:
                    out.append(v)
                else:
                    out.append(repr(float(v)))
            w.writerow(out)


def complete_case_filter(data: TrialDataset) -> TrialDataset:
    """Drop records with a missing outcome."""
    keep = ~np.isnan(data.y)
    dropped = int((~keep).sum())
    if dropped:
        logger.info("complete-case filter dropped %d of %d records", dropped, data.n)
    if not keep.any():
        warnings.warn("every outcome is missing; complete-case dataset is empty", stacklevel=2)
    return data.subset(keep)


@dataclass(frozen=True)
class AllowableSetRule:
    """``allowed`` treatment levels at ``stage`` for histories matching ``when``."""

    stage: int
    when: Mapping[str, Any]
    allowed: tuple[str, ...]

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise RuleError(f"stage must be 1 or 2, got {self.stage}")
        allowed = tuple(str(a) for a in self.allowed)
        if not allowed:
            raise RuleError("allowed_levels must be nonempty")
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "when", dict(self.when))

    def to_dict(self) -> dict:
        return {"stage": self.stage, "when": dict(self.when), "allowed": list(self.allowed)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AllowableSetRule":
        return cls(stage=int(d["stage"]), when=d.get("when", {}), allowed=tuple(d["allowed"]))


def allowable_set(rules: Sequence[AllowableSetRule], history: Mapping[str, Any], stage: int) -> frozenset[str]:
    """The allowed treatment levels at ``stage`` given an accrued ``history``."""
    hits = [r for r in rules if r.stage == stage and _condition_matches(history, r.when)]
    if not hits:
        raise RuleError(f"no stage-{stage} allowable-set rule matches history {dict(history)}")
    if len(hits) > 1:
        raise RuleError(f"multiple stage-{stage} allowable-set rules match history {dict(history)}")
    return frozenset(hits[0].allowed)


def allowable_masks(rules: Sequence[AllowableSetRule], frame: pd.DataFrame, stage: int,
                    rows: np.ndarray | None = None) -> list[tuple[np.ndarray, tuple[str, ...]]]:
    """Vectorised rule matching: ``(mask, allowed)`` per stage rule.

    ``rows`` restricts the check that each row matches exactly one rule.
    """
    out = [(condition_mask(frame, r.when), r.allowed) for r in rules if r.stage == stage]
    count = np.zeros(len(frame), dtype=int)
    for m, _ in out:
        count += m
    check = np.ones(len(frame), dtype=bool) if rows is None else rows
    if (count[check] == 0).any():
        raise RuleError(f"no stage-{stage} allowable-set rule matches row {int(np.flatnonzero(check & (count == 0))[0])}")
    if (count[check] > 1).any():
        raise RuleError(f"multiple stage-{stage} rules match row {int(np.flatnonzero(check & (count > 1))[0])}")
    return out


def check_allowable(data: TrialDataset, rules: Sequence[AllowableSetRule]) -> None:
    """Raise :class:`DataError` if an observed treatment lies outside its allowable set."""
    frame = data.frame
    active = {1: np.ones(data.n, dtype=bool), 2: ~data.voided}
    for stage in (1, 2):
        a = data.treatment(stage)
        ok = np.zeros(data.n, dtype=bool)
        for mask, allowed in allowable_masks(rules, frame, stage, rows=active[stage]):
            ok |= mask & np.isin(a.astype(str), allowed)
        bad = active[stage] & ~ok
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"row {i}: stage-{stage} treatment {a[i]!r} outside its allowable set")


@dataclass(frozen=True)
class EmbeddedRegime:
    """A pair of decision rules over the tailoring variables.

    ``stage1`` maps tuples of Z(1) values to a stage-1 level and ``stage2``
    maps tuples of Z(2) values to a stage-2 level. Strata that are absent
    are unreachable under the regime.
    """

    id: str
    tailoring1: tuple[str, ...]
    tailoring2: tuple[str, ...]
    stage1: Mapping[tuple, str]
    stage2: Mapping[tuple, str]

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "tailoring1", tuple(self.tailoring1))
        object.__setattr__(self, "tailoring2", tuple(self.tailoring2))
        object.__setattr__(self, "stage1", {tuple(_norm(v) for v in k): str(a) for k, a in self.stage1.items()})
        object.__setattr__(self, "stage2", {tuple(_norm(v) for v in k): str(a) for k, a in self.stage2.items()})

    def decide(self, stage: int, history: Mapping[str, Any]) -> str | None:
        cols, table = (self.tailoring1, self.stage1) if stage == 1 else (self.tailoring2, self.stage2)
        return table.get(tuple(_norm(history[c]) for c in cols))

    def assign(self, frame: pd.DataFrame, stage: int) -> np.ndarray:
        """Regime-assigned level per row (``None`` where the stratum is unreachable)."""
        cols, table = (self.tailoring1, self.stage1) if stage == 1 else (self.tailoring2, self.stage2)
        out = np.full(len(frame), None, dtype=object)
        if not cols:
            if () in table:
                out[:] = table[()]
            return out
        for c in cols:
            if c not in frame.columns:
                raise RuleError(f"condition references unknown column {c!r}")
        is_obj = [frame[c].dtype == object for c in cols]
        lookup = {tuple(str(v) if o else v for v, o in zip(key, is_obj)): level
                  for key, level in table.items()}
        columns = [frame[c].astype(str).tolist() if o else frame[c].to_numpy(dtype=float).tolist()
                   for c, o in zip(cols, is_obj)]
        out[:] = [lookup.get(k) for k in zip(*columns)]
        return out

    def describe(self) -> str:
        def fmt(cols, table):
            parts = []
            for key, level in table.items():
                cond = ", ".join(f"{c}={_fmt_value(v)}" for c, v in zip(cols, key))
                parts.append(f"{level} if {cond}" if cond else level)
            return "; ".join(parts)
        return f"stage 1: {fmt(self.tailoring1, self.stage1)} | stage 2: {fmt(self.tailoring2, self.stage2)}"

    def to_dict(self) -> dict:
        def rows(cols, table):
            return [{"when": {c: _fmt_value(v) for c, v in zip(cols, key)}, "treat": level}
                    for key, level in table.items()]
        return {"id": self.id, "tailoring1": list(self.tailoring1), "tailoring2": list(self.tailoring2),
                "stage1": rows(self.tailoring1, self.stage1), "stage2": rows(self.tailoring2, self.stage2)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EmbeddedRegime":
        t1, t2 = tuple(d.get("tailoring1", ())), tuple(d.get("tailoring2", ()))
        s1 = {tuple(r["when"][c] for c in t1): r["treat"] for r in d["stage1"]}
        s2 = {tuple(r["when"][c] for c in t2): r["treat"] for r in d["stage2"]}
        return cls(d["id"], t1, t2, s1, s2)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EmbeddedRegime":
        return cls.from_dict(json.loads(text))


def _fmt_value(v: Any) -> Any:
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def follows_regime(data: TrialDataset | Mapping[str, Any], regime: EmbeddedRegime, through_stage: int,
                   schema: NodeSchema | None = None) -> np.ndarray | bool:
    """Whether observed treatments agree with ``regime`` up to ``through_stage``.

    Accepts a whole dataset (returns a boolean array) or one record mapping
    plus its ``schema`` (returns a bool). A stage voided by an absorbing event
    counts as followed.
    """
    if isinstance(data, TrialDataset):
        frame, schema = data.frame, data.schema
        ok = data.treatment(1).astype(str) == regime.assign(frame, 1).astype(str)
        if through_stage >= 2:
            a2 = regime.assign(frame, 2)
            ok2 = (data.treatment(2).astype(str) == a2.astype(str)) & (a2 != None)  # noqa: E711
            ok &= ok2 | data.voided
        return ok
    if schema is None:
        raise TypeError("schema is required when checking a single record")
    record = data
    if str(record[schema.stage1_treatment]) != regime.decide(1, record):
        return False
    if through_stage < 2:
        return True
    if any(_norm(record.get(c)) == 1.0 for c in schema.absorbing):
        return True
    a2 = record.get(schema.stage2_treatment)
    return a2 is not None and str(a2) == regime.decide(2, record)


def enumerate_embedded_regimes(rules: Sequence[AllowableSetRule], schema: NodeSchema) -> list[EmbeddedRegime]:
    """All regimes realisable by the trial's randomisation scheme.

    Stage-2 choices are only made on Z(2) strata reachable under the stage-1
    rule, so strata with a single allowed level add no branching and regimes
    differing only on unreachable strata cannot arise. Regimes are numbered
    ``"1".."D"`` with the stage-1 choice varying fastest and the last listed
    stage-2 stratum slowest.
    """
    t1, t2 = schema.tailoring1, schema.tailoring2
    z1_strata = list(itertools.product(*(schema.domain(c) for c in t1)))
    stage1_options = []
    for z1 in z1_strata:
        allowed = allowable_set(rules, dict(zip(t1, z1)), 1)
        stage1_options.append([lv for lv in schema.stage1_levels if lv in allowed])
    a1 = schema.stage1_treatment
    other2 = [c for c in t2 if c != a1]
    z2_domains = {c: schema.domain(c) for c in t2}

    found: dict[tuple, tuple] = {}
    for choice1 in itertools.product(*stage1_options):
        rule1 = dict(zip(z1_strata, choice1))
        reachable = []
        for z2 in itertools.product(*(z2_domains[c] for c in t2)):
            h = dict(zip(t2, z2))
            consistent = [z1 for z1 in z1_strata
                          if all(_norm(h[c]) == _norm(v) for c, v in zip(t1, z1) if c in h)]
            if a1 in h and not any(rule1[z1] == h[a1] for z1 in consistent):
                continue
            if not consistent:
                continue
            reachable.append(z2)
        pos = {c: i for i, c in enumerate(t2)}
        reachable.sort(key=lambda z: (tuple(z2_domains[c].index(z[pos[c]]) for c in other2),
                                      schema.stage1_levels.index(z[pos[a1]]) if a1 in pos else 0))
        options2 = []
        for z2 in reachable:
            history = dict(zip(t2, z2))
            allowed = allowable_set(rules, history, 2)
            options2.append([lv for lv in schema.stage2_levels if lv in allowed])
        for choice2 in itertools.product(*options2):
            rule2 = dict(zip(reachable, choice2))
            canon = (tuple(sorted(rule1.items())), tuple(sorted(rule2.items(), key=repr)))
            order = tuple(reversed(
                [schema.stage1_levels.index(c) for c in choice1]
                + [schema.stage2_levels.index(c) for c in choice2]))
            if canon not in found:
                found[canon] = (order, rule1, rule2)
    ordered = sorted(found.values(), key=lambda t: t[0])
    return [EmbeddedRegime(str(i + 1), t1, t2, r1, r2) for i, (_, r1, r2) in enumerate(ordered)]


@dataclass(frozen=True)
class KnownTable:
    """Design randomisation probabilities: ``(condition, {level: p})`` rows per stage."""

    stage1: tuple[tuple[Mapping[str, Any], Mapping[str, float]], ...]
    stage2: tuple[tuple[Mapping[str, Any], Mapping[str, float]], ...]

    def rows(self, stage: int):
        return self.stage1 if stage == 1 else self.stage2

    def to_dict(self) -> dict:
        return {f"stage{s}": [{"when": dict(w), "probs": dict(p)} for w, p in self.rows(s)] for s in (1, 2)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnownTable":
        def parse(rows):
            return tuple((dict(r.get("when", {})), {str(k): float(v) for k, v in r["probs"].items()}) for r in rows)
        return cls(parse(d.get("stage1", ())), parse(d.get("stage2", ())))


@dataclass(frozen=True)
class SmartDesign:
    """Schema, allowable-set rules and (optionally) the known randomisation law."""

    schema: NodeSchema
    rules: tuple[AllowableSetRule, ...]
    known: KnownTable | None = None

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def regimes(self) -> list[EmbeddedRegime]:
        return enumerate_embedded_regimes(self.rules, self.schema)

    def deterministic_rules(self) -> list[tuple[dict, str]]:
        """Stage-2 histories whose allowable set is a single level."""
        return [(dict(r.when), r.allowed[0]) for r in self.rules if r.stage == 2 and len(r.allowed) == 1]

    def to_dict(self) -> dict:
        out = {"schema": self.schema.to_dict(), "rules": [r.to_dict() for r in self.rules]}
        if self.known is not None:
            out["known_g"] = self.known.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "SmartDesign":
        known = KnownTable.from_dict(d["known_g"]) if d.get("known_g") else None
        return cls(NodeSchema.from_dict(d["schema"]),
                   tuple(AllowableSetRule.from_dict(r) for r in d["rules"]), known)


def regimes_from_iterable(items: Iterable[Mapping]) -> list[EmbeddedRegime]:
    return [EmbeddedRegime.from_dict(d) for d in items]
