import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikewave import swp
from spikewave.envsim import Segment, TraversalRecord
from spikewave.eprop import (CostObservation, apply_traversal_update, costmap_mse,
                             eprop_update, layers_mse, mark_intraversable, normalize_cost)
from spikewave.errors import InputError, InvariantError
from spikewave.lattice import (CostLayerSet, DelayField, GridSpec, NormalizationParams,
                               combine_layers)

from conftest import random_field

NORMS = {"current": NormalizationParams(2.0, 6.0), "obstacle": NormalizationParams(0.0, 1.0),
         "slope": NormalizationParams(0.0, 0.5)}


def test_normalize_examples():
    p = NormalizationParams(2.0, 6.0)
    assert normalize_cost(2.0, p) == 1
    assert normalize_cost(106.0, p) == 10
    assert normalize_cost(-50.0, p) == 1
    assert normalize_cost(4.0, p) == 6   # 5.5 rounds up
    with pytest.raises(InputError):
        normalize_cost(float("inf"), p)


def test_observation_validation():
    with pytest.raises(InputError):
        CostObservation((0, 0), "obstacle", 1.5)
    with pytest.raises(InputError):
        CostObservation((0, 0), "current", float("nan"))


def test_update_examples():
    g = GridSpec(3, 3)
    f = DelayField.uniform(g)
    eprop_update(f, (1, 1), 10, 1.0, 0.5)
    assert np.all(f.incoming((1, 1)) == 5.5)
    assert np.all(f.incoming((0, 0))[g.edge_mask[0, 0]] == 1.0)
    before = f.values.copy()
    eprop_update(f, (1, 1), 5.5, 1.0)
    np.testing.assert_array_equal(f.values, before)

    f = DelayField.uniform(g)
    for k in range(1, 21):
        eprop_update(f, (0, 0), 10, 1.0, 0.5)
        gap = abs(f.values[0, 0, 0] - 10)
        assert gap == pytest.approx(9 * 0.5 ** k, rel=1e-12)
    assert gap < 1e-5

    with pytest.raises(InputError):
        eprop_update(f, (0, 0), 11, 1.0)
    mask = np.ones((3, 3), bool)
    mask[2, 2] = False
    with pytest.raises(InputError):
        eprop_update(DelayField.uniform(GridSpec(3, 3, traversable=mask)), (2, 2), 5, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(1, 10), st.integers(1, 10), st.floats(0, 1), st.floats(0.01, 1))
def test_contraction_and_bounds(d, m, e, delta):
    g = GridSpec(2, 2)
    f = DelayField.uniform(g, d)
    eprop_update(f, (0, 0), m, e, delta)
    new = f.values[0, 0, 0]
    assert abs(new - m) == pytest.approx((1 - delta * e) * abs(d - m), abs=1e-12)
    assert 1.0 <= new <= 10.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 10), st.integers(1, 10), st.integers(0, 1000), st.integers(0, 1000))
def test_update_monotone_in_eligibility(d, m, e1, e2):
    if d == m or e1 == e2:
        return
    lo, hi = sorted((e1 / 1000, e2 / 1000))
    a, b = DelayField.uniform(GridSpec(2, 2), d), DelayField.uniform(GridSpec(2, 2), d)
    eprop_update(a, (0, 0), m, lo)
    eprop_update(b, (0, 0), m, hi)
    assert abs(b.values[0, 0, 0] - d) > abs(a.values[0, 0, 0] - d)


def test_fifty_passes_converge(rng):
    g = GridSpec(4, 4)
    f = DelayField.uniform(g)
    target = {n: int(rng.integers(1, 11)) for n in g.nodes()}
    for _ in range(50):
        for n, m in target.items():
            eprop_update(f, n, m, float(rng.uniform(0.3, 1.0)))
    gap = max(np.nanmax(np.abs(f.incoming(n) - m)) for n, m in target.items())
    assert gap < 0.01


def test_mark_intraversable_idempotent():
    g = GridSpec(3, 3)
    f = DelayField.uniform(g)
    mark_intraversable(f, (1, 1))
    assert np.all(f.incoming((1, 1)) == 10.0)
    others = f.values.copy()
    others[1, 1] = np.nan
    assert np.all(others[~np.isnan(others)] == 1.0)
    snap = f.values.copy()
    mark_intraversable(f, (1, 1))
    np.testing.assert_array_equal(f.values, snap)


def test_marked_node_avoided():
    g = GridSpec(3, 3)
    layers = CostLayerSet.fresh(g)
    mark_intraversable(layers["intraversable"], (1, 1))
    path = swp.plan(combine_layers(layers, ["current", "intraversable"]), (1, 0), (1, 2))
    assert (1, 1) not in path
    assert len(path) == 3


def _obs(node, **raw):
    return {k: CostObservation(node, k, v) for k, v in raw.items()}


def test_traversal_update_by_hand():
    g = GridSpec(3, 2)
    layers = CostLayerSet.fresh(g, NORMS)
    combined = combine_layers(layers, ["current"])
    wave = swp.propagate(combined, (0, 0), (0, 2))
    assert swp.extract_path(wave) == [(0, 0), (0, 1), (0, 2)]
    rec = TraversalRecord([
        Segment((0, 0), (0, 1), _obs((0, 1), current=6.0, obstacle=0.0, slope=0.25), True),
        Segment((0, 1), (0, 2), _obs((0, 2), current=4.0, obstacle=1.0, slope=0.0), True),
    ], True)
    apply_traversal_update(layers, rec, wave)
    e1 = (1 - 1 / 25) ** 2    # node (0,1) spiked two steps before the goal
    mid, end = layers["current"].incoming((0, 1)), layers["current"].incoming((0, 2))
    np.testing.assert_allclose(mid[~np.isnan(mid)], 1 + 0.5 * e1 * 9)
    np.testing.assert_allclose(end[~np.isnan(end)], 1 + 0.5 * 1.0 * 5)   # m = round(5.5) = 6
    ob = layers["obstacle"].incoming((0, 2))
    np.testing.assert_allclose(ob[~np.isnan(ob)], 5.5)
    sl = layers["slope"].incoming((0, 1))
    np.testing.assert_allclose(sl[~np.isnan(sl)], 1 + 0.5 * e1 * 5)       # m = round(5.5) = 6
    start = layers["current"].incoming((0, 0))
    assert np.all(start[~np.isnan(start)] == 1.0)


def test_traversal_update_edge_cases():
    g = GridSpec(3, 2)
    layers = CostLayerSet.fresh(g, NORMS)
    wave = swp.propagate(combine_layers(layers, ["current"]), (0, 0), (0, 2))
    snap = layers.copy()
    apply_traversal_update(layers, TraversalRecord([], False), wave)
    assert layers_mse(layers, snap) == 0.0
    # observations that map to the current delay (1) change nothing
    rec = TraversalRecord([Segment((0, 0), (0, 1), _obs((0, 1), current=2.0, obstacle=0.0,
                                                        slope=0.0), True)], True)
    apply_traversal_update(layers, rec, wave)
    assert layers_mse(layers, snap) == 0.0
    # failure marks the destination and stops there
    rec = TraversalRecord([Segment((0, 0), (0, 1), _obs((0, 1), current=6.0, obstacle=0.0,
                                                        slope=0.0), False)], False)
    apply_traversal_update(layers, rec, wave)
    marked = layers["intraversable"].incoming((0, 1))
    assert np.all(marked[~np.isnan(marked)] == 10.0)
    assert layers["current"] == snap["current"]
    # records that leave the planned path are rejected
    off = TraversalRecord([Segment((0, 0), (1, 0), _obs((1, 0), current=2.0), True)], True)
    with pytest.raises(InputError):
        apply_traversal_update(layers, off, wave)


def test_unspiked_node_is_invariant_violation():
    g = GridSpec(3, 2)
    layers = CostLayerSet.fresh(g, NORMS)
    wave = swp.propagate(combine_layers(layers, ["current"]), (0, 0), (0, 2))
    fake = swp.WaveResult(g, (0, 0), (0, 2), wave.goal_arrival, wave.spike_times,
                          wave.parent_dir)
    object.__setattr__(fake, "spiked", lambda n: n != (0, 1))
    rec = TraversalRecord([Segment((0, 0), (0, 1), _obs((0, 1), current=3.0), True)], True)
    with pytest.raises(InvariantError):
        apply_traversal_update(layers, rec, fake)


def test_mse(rng):
    g = GridSpec(4, 4)
    a = random_field(rng, g)
    assert costmap_mse(a, a) == 0.0
    b = DelayField.uniform(g, 1.0)
    c = DelayField.uniform(g, 4.0)
    assert costmap_mse(b, c) == 9.0
    d = random_field(rng, g)
    brute = []
    for r in range(4):
        for col in range(4):
            for k in range(8):
                if g.edge_mask[r, col, k]:
                    brute.append((a.values[r, col, k] - d.values[r, col, k]) ** 2)
    assert costmap_mse(a, d) == pytest.approx(sum(brute) / len(brute), rel=1e-12)
    with pytest.raises(InputError):
        costmap_mse(a, DelayField.uniform(GridSpec(3, 4)))
