"""Welch t-tests with Bonferroni correction and planner comparison tables."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import InputError

METRICS = ("length_m", "cost_current", "cost_obstacle", "cost_slope", "cost_normalized")
PATH_COLUMNS = ("planner", "start", "goal") + METRICS + ("hops",)


def welch_t(a, b) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InputError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0.0:
        return (0.0 if diff == 0 else math.copysign(math.inf, diff)), math.inf
    t = diff / math.sqrt(se2)
    ra, rb = va / max(va, vb), vb / max(va, vb)  # rescaled so the squares cannot underflow
    df = (ra + rb) ** 2 / (ra ** 2 / (a.size - 1) + rb ** 2 / (b.size - 1))
    return float(t), float(df)


def welch_pvalue(a, b) -> float:
    t, df = welch_t(a, b)
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    return float(2.0 * sps.t.sf(abs(t), df))


def welch_bonferroni(a, b, m_comparisons: int) -> float:
    """Two-sided Welch p-value multiplied by ``m_comparisons`` and clamped to 1."""
    if m_comparisons < 1:
        raise InputError("m_comparisons must be at least 1")
    return min(1.0, welch_pvalue(a, b) * m_comparisons)


@dataclass
class PathRecord:
    planner: str
    start: tuple[int, int]
    goal: tuple[int, int]
    length_m: float
    cost_current: float
    cost_obstacle: float
    cost_slope: float
    cost_normalized: float
    hops: int

    def row(self) -> list[str]:
        return [self.planner, f"{self.start[0]}:{self.start[1]}", f"{self.goal[0]}:{self.goal[1]}",
                f"{self.length_m:.6f}", f"{self.cost_current:.6f}", f"{self.cost_obstacle:.6f}",
                f"{self.cost_slope:.6f}", f"{self.cost_normalized:.6f}", str(self.hops)]


def _parse_node(text: str) -> tuple[int, int]:
    r, c = text.split(":")
    return int(r), int(c)


def paths_to_csv(records: list[PathRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PATH_COLUMNS)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


def paths_from_csv(text: str) -> list[PathRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames[:len(PATH_COLUMNS)]) != PATH_COLUMNS:
        raise InputError(f"paths file must have columns {','.join(PATH_COLUMNS)}")
    out = []
    try:
        for row in reader:
            out.append(PathRecord(row["planner"], _parse_node(row["start"]), _parse_node(row["goal"]),
                                  *(float(row[m]) for m in METRICS), int(row["hops"])))
    except (ValueError, KeyError) as exc:
        raise InputError(f"malformed paths row: {exc}") from None
    return out


@dataclass
class PlannerSummary:
    planner: str
    n: int
    excluded: int
    means: dict[str, float]
    p_adjusted: dict[str, float | None] = field(default_factory=dict)


@dataclass
class ComparisonTable:
    reference: str
    m_comparisons: int
    rows: list[PlannerSummary]

    def __getitem__(self, planner: str) -> PlannerSummary:
        for r in self.rows:
            if r.planner == planner:
                return r
        raise KeyError(planner)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["planner", "n", "excluded"] + [f"mean_{m}" for m in METRICS]
                   + [f"p_{m}" for m in METRICS])
        for r in self.rows:
            ps = [("" if r.p_adjusted.get(m) is None else f"{r.p_adjusted[m]:.6g}") for m in METRICS]
            w.writerow([r.planner, r.n, r.excluded] + [f"{r.means[m]:.6f}" for m in METRICS] + ps)
        return buf.getvalue()

    def format(self) -> str:
        head = f"{'planner':<10}{'n':>7}{'excl':>6}" + "".join(f"{m:>17}" for m in METRICS)
        lines = [head]
        for r in self.rows:
            cells = []
            for m in METRICS:
                p = r.p_adjusted.get(m)
                mark = "*" if p is not None and p < 0.05 else " "
                cells.append(f"{r.means[m]:>16.3f}{mark}")
            lines.append(f"{r.planner:<10}{r.n:>7}{r.excluded:>6}" + "".join(cells))
        lines.append(f"* Bonferroni-adjusted Welch p < 0.05 vs {self.reference} "
                     f"(m = {self.m_comparisons})")
        return "\n".join(lines)


def build_table(records: list[PathRecord], reference: str = "swp",
                excluded: dict[str, int] | None = None,
                planners: list[str] | None = None) -> ComparisonTable:
    groups: dict[str, list[PathRecord]] = defaultdict(list)
    for rec in records:
        groups[rec.planner].append(rec)
    if planners is None:
        planners = list(dict.fromkeys(rec.planner for rec in records))
    if reference not in groups:
        raise InputError(f"no records for reference planner {reference!r}")
    others = [p for p in planners if p != reference]
    m = max(1, len(others) * len(METRICS))
    excluded = excluded or {}
    ref_vals = {k: [getattr(r, k) for r in groups[reference]] for k in METRICS}
    rows = []
    for p in planners:
        recs = groups.get(p, [])
        means = {k: (float(np.mean([getattr(r, k) for r in recs])) if recs else math.nan)
                 for k in METRICS}
        pvals: dict[str, float | None] = {}
        for k in METRICS:
            if p == reference or len(recs) < 2 or len(ref_vals[k]) < 2:
                pvals[k] = None
            else:
                pvals[k] = welch_bonferroni([getattr(r, k) for r in recs], ref_vals[k], m)
        rows.append(PlannerSummary(p, len(recs), excluded.get(p, 0), means, pvals))
    return ComparisonTable(reference, m, rows)


def mean_ci(values, level: float = 0.99) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    mu = float(v.mean())
    if v.size < 2:
        return mu, math.nan, math.nan
    half = float(sps.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size))
    return mu, mu - half, mu + half


def trend_rows(records: list[PathRecord], spacing: float, metric: str = "cost_normalized",
               level: float = 0.99) -> list[list[str]]:
    """Mean ``metric`` per planner over pairs whose straight-line separation >= each threshold."""
    def sep(r):
        return spacing * math.hypot(r.start[0] - r.goal[0], r.start[1] - r.goal[1])

    thresholds = sorted({round(sep(r), 6) for r in records})
    planners = list(dict.fromkeys(r.planner for r in records))
    rows = [["planner", "min_length_m", "n", f"mean_{metric}", "ci_low", "ci_high"]]
    by_planner = {p: [(sep(r), getattr(r, metric)) for r in records if r.planner == p]
                  for p in planners}
    for p in planners:
        data = np.array(by_planner[p], dtype=float).reshape(-1, 2)
        for th in thresholds:
            sel = data[data[:, 0] >= th - 1e-9, 1]
            if sel.size == 0:
                continue
            mu, lo, hi = mean_ci(sel, level)
            rows.append([p, f"{th:.6f}", str(sel.size), f"{mu:.6f}", f"{lo:.6f}", f"{hi:.6f}"])
    return rows
