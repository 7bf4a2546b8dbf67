"""Binary A-category outcomes, per-group rates, range/STD summaries and group fairness gaps.

Rates are computed from integer confusion counts with exact rational
arithmetic and converted to float once.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .cohort import DECLINE_TO_STATE, GradeScale

METRICS = ("TPR", "TNR", "Accuracy")


@dataclass(frozen=True)
class BinaryOutcome:
    predicted_positive: bool
    actual_positive: bool
    group: str


def binarize(predictions, cutoff: str = "A", pass_as_positive: bool = False) -> list[BinaryOutcome]:
    """Turn prediction records into binary outcomes at the letter cutoff.

    P/NP enrollments are dropped unless ``pass_as_positive``, in which case a
    true Pass counts as positive and the prediction is positive when Pass is
    the more likely outcome.
    """
    scale = GradeScale(tuple(predictions.letters))
    positive = scale.cutoff_letters(cutoff)
    m = scale.m
    out = []
    for r in predictions.records:
        if r.true_slot < m:
            pred = int(np.argmax(r.letter_probs)) in positive
            out.append(BinaryOutcome(pred, r.true_slot in positive, r.group))
        elif pass_as_positive:
            out.append(BinaryOutcome(bool(r.pnp_probs[0] > r.pnp_probs[1]), r.true_slot == m, r.group))
    return out


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    @staticmethod
    def _rate(num: int, den: int) -> float | None:
        return float(Fraction(num, den)) if den else None

    def exact(self, name: str) -> Fraction | None:
        """Rate as an exact fraction: tpr, tnr, fpr, fnr, accuracy or positive_rate."""
        num, den = {
            "tpr": (self.tp, self.tp + self.fn),
            "tnr": (self.tn, self.tn + self.fp),
            "fpr": (self.fp, self.tn + self.fp),
            "fnr": (self.fn, self.tp + self.fn),
            "accuracy": (self.tp + self.tn, self.support),
            "positive_rate": (self.tp + self.fp, self.support),
        }[name]
        return Fraction(num, den) if den else None

    @property
    def tpr(self) -> float | None:
        return self._rate(self.tp, self.tp + self.fn)

    @property
    def tnr(self) -> float | None:
        return self._rate(self.tn, self.tn + self.fp)

    @property
    def fpr(self) -> float | None:
        return self._rate(self.fp, self.tn + self.fp)

    @property
    def fnr(self) -> float | None:
        return self._rate(self.fn, self.tp + self.fn)

    @property
    def accuracy(self) -> float | None:
        return self._rate(self.tp + self.tn, self.support)

    @property
    def positive_rate(self) -> float | None:
        return self._rate(self.tp + self.fp, self.support)

    def metric(self, name: str) -> float | None:
        return {"TPR": self.tpr, "TNR": self.tnr, "Accuracy": self.accuracy, "FNR": self.fnr}[name]


def confusion(outcomes: Iterable[BinaryOutcome]) -> Confusion:
    tp = fn = tn = fp = 0
    for o in outcomes:
        if o.actual_positive:
            tp += o.predicted_positive
            fn += not o.predicted_positive
        else:
            fp += o.predicted_positive
            tn += not o.predicted_positive
    return Confusion(tp, fn, tn, fp)


def range_std(values: Sequence[float]) -> tuple[float, float | None]:
    """Max minus min and the sample (n - 1) standard deviation; STD is None for one value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    spread = float(v.max() - v.min())
    std = float(v.std(ddof=1)) if v.size > 1 else None
    return spread, std


@dataclass
class GroupReport:
    groups: tuple[str, ...]  # groups included in range/STD
    per_group: dict[str, Confusion]
    overall: Confusion
    summary: dict[str, tuple[float | None, float | None]]  # metric -> (range, std)
    flagged: dict[str, list[str]] = field(default_factory=dict)  # metric -> groups left out

    def value(self, group: str, metric: str) -> float | None:
        c = self.overall if group == "Overall" else self.per_group[group]
        return c.metric(metric)

    def rows(self, strategy: str = "", percent: bool = True) -> list[dict]:
        """Table rows: one per metric, columns = groups, Overall, Range, STD."""
        k = 100.0 if percent else 1.0
        out = []
        for metric in METRICS:
            row = {"metric": metric, "strategy": strategy}
            for g in self.groups:
                v = self.value(g, metric)
                row[g] = None if v is None else v * k
            ov = self.value("Overall", metric)
            row["Overall"] = None if ov is None else ov * k
            rng, std = self.summary[metric]
            row["Range"] = None if rng is None else rng * k
            row["STD"] = None if std is None else std * k
            out.append(row)
        return out


def group_report(
    outcomes: Sequence[BinaryOutcome],
    group_list: Sequence[str],
    exclude: Sequence[str] = (DECLINE_TO_STATE,),
) -> GroupReport:
    """Per-group confusion rates with range and n-1 STD over the included groups.

    Groups with no support, or an undefined rate for a metric, are flagged
    and left out of that metric's range/STD. The overall row covers every
    outcome, excluded groups included.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no outcomes to report")
    included = tuple(g for g in group_list if g not in exclude)
    by_group = {g: [] for g in group_list}
    for o in outcomes:
        by_group.setdefault(o.group, []).append(o)
    per_group = {g: confusion(v) for g, v in by_group.items()}
    summary = {}
    flagged = {}
    for metric in (*METRICS, "FNR"):
        vals, missing = [], []
        for g in included:
            v = per_group[g].metric(metric)
            (missing.append(g) if v is None else vals.append(v))
        if missing:
            flagged[metric] = missing
        summary[metric] = range_std(vals) if vals else (None, None)
    return GroupReport(included, per_group, confusion(outcomes), summary, flagged)


def fairness_criteria(outcomes: Sequence[BinaryOutcome], exclude: Sequence[str] = ()) -> dict:
    """Demographic parity, equal opportunity and equalized odds gaps (max minus min across groups).

    Gaps are taken between exact fractions and converted to float once.
    """
    by_group: dict[str, list[BinaryOutcome]] = {}
    for o in outcomes:
        if o.group not in exclude:
            by_group.setdefault(o.group, []).append(o)
    conf = {g: confusion(v) for g, v in by_group.items()}

    def gap(attr):
        vals = {g: c.exact(attr) for g, c in conf.items()}
        dropped = sorted(g for g, v in vals.items() if v is None)
        if dropped:
            warnings.warn(f"{attr}: undefined for {dropped}; excluded", stacklevel=3)
        defined = [v for v in vals.values() if v is not None]
        return (float(max(defined) - min(defined)) if len(defined) >= 2 else None), dropped

    parity, d0 = gap("positive_rate")
    tpr_gap, d1 = gap("tpr")
    fpr_gap, d2 = gap("fpr")
    if tpr_gap is None or fpr_gap is None:
        odds = tpr_gap if fpr_gap is None else fpr_gap
    else:
        odds = max(tpr_gap, fpr_gap)
    return {
        "demographic_parity_gap": parity,
        "equal_opportunity_gap": tpr_gap,
        "equalized_odds_gap": odds,
        "excluded": sorted(set(d0 + d1 + d2)),
    }


def _fmt(v):
    return "" if v is None else f"{v:.2f}"


def table_csv(reports: dict[str, GroupReport]) -> str:
    """Wide layout: rows metric x strategy; columns groups, Overall, Range, STD (percent)."""
    rows = []
    groups = None
    for metric in METRICS:
        for strategy, rep in reports.items():
            groups = groups or rep.groups
            row = next(r for r in rep.rows(strategy) if r["metric"] == metric)
            rows.append(row)
    cols = ["metric", "strategy", *(groups or ()), "Overall", "Range", "STD"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r["metric"], r["strategy"], *(_fmt(r.get(c)) for c in cols[2:])])
    return buf.getvalue()


def table_json(reports: dict[str, GroupReport], extra: dict | None = None) -> str:
    payload = {
        "metrics": list(METRICS),
        "strategies": {
            s: {
                "groups": list(rep.groups),
                "rows": rep.rows(s),
                "support": {g: c.support for g, c in rep.per_group.items()},
                "flagged": rep.flagged,
            }
            for s, rep in reports.items()
        },
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True, default=_nan_safe)


def _nan_safe(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    raise TypeError(type(v))


def tidy_csv(reports: dict[str, GroupReport], out_of_distribution: dict[str, set[str]] | None = None) -> str:
    """Long format (strategy, group, metric, value, ood) for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "group", "metric", "value", "support", "out_of_distribution"])
    ood = out_of_distribution or {}
    for s, rep in reports.items():
        for g in (*rep.groups, "Overall"):
            c = rep.overall if g == "Overall" else rep.per_group[g]
            for metric in (*METRICS, "FNR"):
                v = c.metric(metric)
                w.writerow([s, g, metric, "" if v is None else repr(v * 100), c.support, int(g in ood.get(s, ()))])
    return buf.getvalue()


def delta_csv(reports: dict[str, GroupReport], baseline: str = "default") -> str:
    """Signed per-group differences of every strategy against the baseline (percentage points)."""
    if baseline not in reports:
        return ""
    base = reports[baseline]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "strategy", *base.groups, "Overall"])
    for metric in METRICS:
        for s, rep in reports.items():
            if s == baseline:
                continue
            cells = []
            for g in (*base.groups, "Overall"):
                a, b = rep.value(g, metric), base.value(g, metric)
                cells.append("" if a is None or b is None else f"{(a - b) * 100:+.2f}")
            w.writerow([metric, s, *cells])
    return buf.getvalue()
