from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imitatio.coupling import PreconditionError
from imitatio.samplers import SampleBatch
from imitatio.stats import (
    cross_algorithm_report,
    empirical_window_distribution,
    gof_invariant,
    tv_distance,
)


def batch(rows, window=(0, 1), n_states=2):
    return SampleBatch(tuple(window), np.array(rows, dtype=np.int32).reshape(len(rows), len(window)), n_states, "test", 0)


def test_empirical_counts():
    p = empirical_window_distribution(batch([(1, 1), (1, 1), (2, 2), (1, 2)]))
    assert p == {(1, 1): Fraction(1, 2), (1, 2): Fraction(1, 4), (2, 1): 0, (2, 2): Fraction(1, 4)}
    assert sum(p.values()) == 1


def test_empirical_point_mass_and_single_site():
    assert empirical_window_distribution(batch([(2, 1)]))[(2, 1)] == 1
    p = empirical_window_distribution(batch([(1,), (2,), (2,)], window=(0,)))
    assert p == {(1,): Fraction(1, 3), (2,): Fraction(2, 3)}


def test_empirical_empty():
    with pytest.raises(ValueError):
        empirical_window_distribution(SampleBatch((0,), np.empty((0, 1), dtype=np.int32), 2, "x", 0))


def test_tv_examples():
    p = {(1,): 0.5, (2,): 0.5}
    assert tv_distance(p, p) == 0
    assert tv_distance({(1,): 1.0, (2,): 0.0}, {(1,): 0.0, (2,): 1.0}) == 1
    assert tv_distance(p, {(1,): 0.75, (2,): 0.25}) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        tv_distance(p, {(1,): 1.0})


dists = st.lists(st.integers(0, 20), min_size=4, max_size=4).filter(sum).map(
    lambda c: {(i,): Fraction(x, sum(c)) for i, x in enumerate(c)}
)


@settings(max_examples=200)
@given(dists, dists, dists)
def test_tv_is_a_metric(p, q, r):
    assert tv_distance(p, q) == tv_distance(q, p)
    assert 0 <= tv_distance(p, q) <= 1
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-15
    assert (tv_distance(p, q) == 0) == (p == q)


def test_gof_calibration():
    rng = np.random.default_rng(1)
    passes = 0
    for _ in range(200):
        rows = rng.choice([1, 2, 3], size=2000, p=[0.2, 0.3, 0.5])
        passes += gof_invariant(batch(rows[:, None], window=(0,), n_states=3), 0, [0.2, 0.3, 0.5]).passed
    # expected about 198 passes; allow for binomial spread
    assert passes >= 192


def test_gof_point_mass_fails():
    r = gof_invariant(batch(np.ones((10_000, 1)), window=(0,)), 0, [0.5, 0.5])
    assert not r.passed and r.dof == 1


def test_gof_errors():
    b = batch([(1,)] * 6, window=(0,))
    with pytest.raises(ValueError):
        gof_invariant(b, 0, [0.5, 0.5])
    with pytest.raises(ValueError):
        gof_invariant(b, 3, [0.5, 0.5])


def test_gof_excluded_state_fails():
    b = batch([(1,)] * 50 + [(2,)] * 50, window=(0,))
    assert not gof_invariant(b, 0, [1.0, 0.0]).passed


def test_cross_report_underpowered(kunique):
    rep = cross_algorithm_report(kunique, [0, 1], 10, 3)
    assert not rep.passed
    power = [t for t in rep.tests if t.name == "power"]
    assert power and "underpowered" in power[0].note
    assert len(rep.tv_estimates) == 10
    doc = rep.to_dict()
    assert set(doc["metadata"]["seeds"]) == {"cftp", "eps50", "eps500", "doeblin", "forward"}


def test_cross_report_preconditions(kperiodic, kidentity):
    for k in (kperiodic, kidentity):
        with pytest.raises(PreconditionError):
            cross_algorithm_report(k, [0, 1], 100, 1)


def test_cross_report_deterministic(kunique):
    a = cross_algorithm_report(kunique, [0, 1], 300, 5).to_json()
    b = cross_algorithm_report(kunique, [0, 1], 300, 5).to_json()
    assert a == b
