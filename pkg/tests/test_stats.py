import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from spikewave.errors import InputError
from spikewave.stats import (PathRecord, build_table, mean_ci, paths_from_csv, paths_to_csv,
                             trend_rows, welch_bonferroni, welch_pvalue, welch_t)

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30)


def test_examples():
    a = [1, 2, 3, 4, 5]
    assert welch_bonferroni(a, a, 1) == 1.0
    assert welch_bonferroni(a, [11, 12, 13, 14, 15], 1) < 0.001
    assert welch_pvalue([3, 3, 3], [3, 3]) == 1.0
    assert welch_pvalue([3, 3, 3], [4, 4]) == 0.0
    with pytest.raises(InputError):
        welch_t([1], [1, 2])
    with pytest.raises(InputError):
        welch_bonferroni(a, a, 0)


@pytest.mark.filterwarnings("ignore:Precision loss:RuntimeWarning")
@settings(max_examples=150, deadline=None)
@given(samples, samples)
def test_matches_scipy_welch(a, b):
    if np.var(a) == 0 and np.var(b) == 0:
        return
    ref = sps.ttest_ind(a, b, equal_var=False)
    if not math.isfinite(ref.pvalue):
        return
    t, _ = welch_t(a, b)
    assert t == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
    assert welch_pvalue(a, b) == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(samples, samples)
def test_bonferroni_scaling(a, b):
    p1 = welch_bonferroni(a, b, 1)
    p5 = welch_bonferroni(a, b, 5)
    assert p5 == min(1.0, 5 * p1)
    assert 0.0 <= p5 <= 1.0


def rec(planner, s, g, length, cost, hops=3):
    return PathRecord(planner, s, g, length, cost / 3, cost / 4, cost / 5, cost, hops)


def test_paths_csv_round_trip():
    recs = [rec("swp", (0, 0), (3, 4), 21.3, 9.0), rec("astar", (2, 1), (0, 5), 18.25, 12.0)]
    text = paths_to_csv(recs)
    assert text.splitlines()[0] == ("planner,start,goal,length_m,cost_current,cost_obstacle,"
                                    "cost_slope,cost_normalized,hops")
    assert text.splitlines()[1].startswith("swp,0:0,3:4,21.300000,")
    back = paths_from_csv(text)
    assert paths_to_csv(back) == text
    with pytest.raises(InputError):
        paths_from_csv("a,b\n1,2\n")
    with pytest.raises(InputError):
        paths_from_csv(text.replace("21.300000", "long"))


def test_build_table():
    rng = np.random.default_rng(0)
    recs = [rec("swp", (0, 0), (0, i), 10 + rng.random(), 5 + rng.random()) for i in range(20)]
    recs += [rec("rrtstar", (0, 0), (0, i), 12 + rng.random(), 8 + rng.random()) for i in range(20)]
    recs += [rec("naive", (0, 0), (0, 1), 9.0, 30.0)]
    t = build_table(recs, excluded={"naive": 19}, planners=["swp", "rrtstar", "naive"])
    assert t.m_comparisons == 10
    assert t["rrtstar"].p_adjusted["cost_normalized"] < 0.05
    assert t["naive"].p_adjusted["length_m"] is None       # n = 1
    assert t["naive"].excluded == 19
    assert t["swp"].p_adjusted["length_m"] is None
    assert "Bonferroni" in t.format()
    lines = t.to_csv().splitlines()
    assert lines[0].startswith("planner,n,excluded,mean_length_m")
    assert len(lines) == 4
    with pytest.raises(InputError):
        build_table(recs[20:40])


def test_mean_ci_matches_scipy():
    x = np.random.default_rng(1).normal(3, 2, 40)
    mu, lo, hi = mean_ci(x, 0.99)
    ref = sps.t.interval(0.99, len(x) - 1, loc=x.mean(), scale=sps.sem(x))
    assert (lo, hi) == pytest.approx(ref, rel=1e-12)
    assert mu == pytest.approx(x.mean())


def test_trend_rows():
    recs = [rec("swp", (0, 0), (0, 3), 15.3, 4.0), rec("swp", (0, 0), (0, 5), 25.5, 8.0),
            rec("swp", (0, 0), (4, 4), 28.8, 6.0)]
    rows = trend_rows(recs, 1.0)
    assert rows[0] == ["planner", "min_length_m", "n", "mean_cost_normalized", "ci_low", "ci_high"]
    assert [r[1] for r in rows[1:]] == ["3.000000", "5.000000", "5.656854"]
    assert [r[2] for r in rows[1:]] == ["3", "2", "1"]
    assert rows[2][3] == "7.000000"
