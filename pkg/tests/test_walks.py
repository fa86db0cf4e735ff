import pytest

from conftest import FixedSource, load_kernel
from imitatio.rng import DISTANCE, RandomSource
from imitatio.walks import (
    StepCapExceeded,
    joint_coalescence,
    s_hat_tail_estimate,
    von_schelling_simulate,
    walk_step,
    walk_to_threshold,
)


@pytest.mark.parametrize("pos,k,nxt", [(5, 3, 2), (0, 1, -1), (-2, 4, -6)])
def test_walk_step(pos, k, nxt):
    assert walk_step(pos, FixedSource({pos: k})) == nxt


def test_walk_to_threshold_examples():
    traj, land = walk_to_threshold(0, -3, FixedSource({0: 2, -2: 2}))
    assert traj.positions == [0, -2, -4] and land.steps == 2 and land.site == -4
    _, land = walk_to_threshold(1, 0, FixedSource({1: 1}))
    assert (land.steps, land.site) == (1, 0)
    _, land = walk_to_threshold(0, -1, FixedSource({0: 5}))
    assert (land.steps, land.site) == (1, -5)


def test_walk_to_threshold_cap():
    with pytest.raises(StepCapExceeded):
        walk_to_threshold(0, -100, FixedSource({}), step_cap=10)
    with pytest.raises(ValueError):
        walk_to_threshold(0, 0, FixedSource({}))


def test_joint_coalescence_examples():
    rep = joint_coalescence([0, 1], None, FixedSource({1: 1}))
    assert rep.s_lambda == 0 and rep.pairwise == {(0, 1): 0}
    rep = joint_coalescence([5], 10, FixedSource({}))
    assert rep.s_lambda == 5 and rep.pairwise == {}
    rep = joint_coalescence([0, 1], None, FixedSource({1: 2, 0: 1, -1: 1}))
    assert rep.s_lambda == -1 and rep.consumed_sites == [1, 0]


def test_joint_coalescence_horizon():
    # walks 0 and 1 step by 2 forever and never meet
    rep = joint_coalescence([0, 1], 10, FixedSource({}, default_k=2))
    assert rep.s_lambda is None and rep.pairwise[(0, 1)] is None
    assert rep.s_hat == 0 and len(rep.classes) == 2


def test_joint_coalescence_s_lambda_is_min_pairwise(kunique):
    for r in range(200):
        rep = joint_coalescence([0, 2, 3, 7], None, RandomSource(kunique.decrements, 9, r))
        assert rep.s_lambda == min(rep.pairwise.values()) == rep.s_hat


def test_von_schelling_examples(kunique):
    # u = 0.3 gives k = 1 under the K_unique law
    src = FixedSource({}, {(DISTANCE, 1): 0.3, (DISTANCE, 2): 0.3})
    assert von_schelling_simulate(kunique, 1, 10, src) == 1
    assert von_schelling_simulate(kunique, 2, 10, src) == 2
    with pytest.raises(ValueError):
        von_schelling_simulate(kunique, 0, 10, src)


def test_von_schelling_hits_for_k_unique(kunique):
    hits = sum(von_schelling_simulate(kunique, 1, 100_000, RandomSource(kunique.decrements, 4, r)) is not None for r in range(10_000))
    assert hits == 10_000


def test_von_schelling_heavy_tail_misses():
    k = load_kernel("powerlaw_1.2")
    hits = sum(von_schelling_simulate(k, 1, 2000, RandomSource(k.decrements, 4, r)) is not None for r in range(200))
    assert hits < 0.9 * 200


def test_s_hat_tail_estimate(kunique):
    rng = RandomSource(kunique.decrements, 2)
    far = s_hat_tail_estimate(kunique, [0, 1], -200, 400, 2000, rng)
    assert far.probability == 0.0 and far.ci_high < 0.005 and far.heuristic
    near = s_hat_tail_estimate(kunique, [0, 1], 0, 400, 2000, rng)
    # coalescing strictly below 0 happens unless the top walk steps onto 0 first
    assert 0.3 < near.probability < 0.7
    with pytest.raises(ValueError):
        s_hat_tail_estimate(kunique, [0, 1], -5, 10, 0, rng)
