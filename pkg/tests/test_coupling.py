import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_certificate_depth
from imitatio.coupling import (
    PreconditionError,
    apply_coupling,
    compose_coupling,
    doeblin_certificate,
    star_coupling,
)
from imitatio.kernel import ImitationKernel, binary_kernel
from imitatio.structure import Verdict, uniqueness_verdict, word_matrix


def test_apply_coupling_examples():
    half = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert apply_coupling(half, 1, 0.3) == 1
    assert apply_coupling(half, 1, 0.7) == 2
    det = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert {apply_coupling(det, 1, u) for u in np.linspace(0, 0.999, 30)} == {2}
    assert {apply_coupling(np.eye(2), 2, u) for u in np.linspace(0, 0.999, 30)} == {2}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=5).filter(lambda r: sum(r) > 0.1))
def test_apply_coupling_interval_lengths(row):
    row = np.asarray(row) / sum(row)
    m = np.vstack([row, row])
    grid = (np.arange(4000) + 0.5) / 4000
    counts = np.bincount([apply_coupling(m, 1, u) - 1 for u in grid], minlength=len(row))
    np.testing.assert_allclose(counts / len(grid), row, atol=5e-4)
    # zero-probability states are never produced
    assert all(counts[j] == 0 for j in range(len(row)) if row[j] == 0)


def test_compose_coupling_examples(kunique):
    for us in itertools.product([0.1, 0.9], repeat=2):
        assert compose_coupling(kunique, (2, 2), 1, us) == 1
        assert compose_coupling(kunique, (1, 2), 1, us) == 2
    m = kunique.matrix(1)
    assert compose_coupling(kunique, (1,), 2, [0.4]) == apply_coupling(m, 2, 0.4)
    with pytest.raises(ValueError):
        compose_coupling(kunique, (1, 2), 1, [0.5])


def test_compose_coupling_law_matches_word_matrix():
    k = ImitationKernel.build(3, [(1, 0.5, [[0.2, 0.5, 0.3], [0, 0.4, 0.6], [0.7, 0.3, 0]]), (2, 0.5, [[0.1, 0, 0.9], [1, 0, 0], [0.3, 0.3, 0.4]])])
    word = (2, 1, 1)
    rng = np.random.default_rng(0)
    n = 40_000
    for g in (1, 2, 3):
        out = np.bincount([compose_coupling(k, word, g, rng.random(3)) - 1 for _ in range(n)], minlength=3)
        np.testing.assert_allclose(out / n, word_matrix(k, word)[g - 1], atol=0.012)


def test_certificate_k_unique(kunique):
    c = doeblin_certificate(kunique)
    assert c.target == 1 and c.n0_bar == 2
    assert c.words == ((1, 1), (2,))
    assert c.epsilon == 1.0 and c.rho_bar == pytest.approx(0.75)
    np.testing.assert_allclose(c.q_bar, [[1 / 3, 2 / 3], [2 / 3, 1 / 3]])
    assert c.epsilon_star == pytest.approx(1 / 3)


def test_certificate_single_state():
    k = ImitationKernel.build(1, [(3, 0.6, [[1.0]]), (5, 0.4, [[1.0]])])
    c = doeblin_certificate(k)
    assert c.n0_bar == 3 and c.epsilon == 1.0 and c.epsilon_star == 1.0


def test_certificate_refuses_non_unique(kperiodic, kidentity):
    for k in (kperiodic, kidentity):
        with pytest.raises(PreconditionError):
            doeblin_certificate(k)


def test_star_coupling_examples(kunique):
    c = doeblin_certificate(kunique)
    assert star_coupling(c, 1, 0.2) == 1 and star_coupling(c, 2, 0.2) == 1
    assert star_coupling(c, 1, 0.9) == 2
    single = doeblin_certificate(ImitationKernel.build(1, [(1, 1.0, [[1.0]])]))
    assert all(star_coupling(single, 1, u) == 1 for u in np.linspace(0, 0.999, 20))


def unique_binaries():
    for r in range(1, 4):
        for lags in itertools.combinations(range(1, 5), r):
            if np.gcd.reduce(lags) != 1:
                continue
            for mats in itertools.product("IJ", repeat=r):
                k = binary_kernel(dict(zip(lags, mats)))
                if uniqueness_verdict(k).verdict is Verdict.UNIQUE:
                    yield k


def test_certificate_soundness_and_minimality():
    kernels = list(unique_binaries())
    kernels.append(ImitationKernel.build(3, [(1, 0.5, [[0, 1, 0], [0, 0, 1], [1, 0, 0]]), (2, 0.5, [[0.5, 0.5, 0], [0, 1, 0], [0, 0, 1]])]))
    for k in kernels:
        c = doeblin_certificate(k)
        depth, targets = brute_certificate_depth(k)
        assert c.n0_bar == depth and c.target - 1 in targets
        assert all(sum(w) == c.n0_bar for w in c.words)
        for i, w in enumerate(c.words):
            assert word_matrix(k, w)[i, c.target - 1] >= c.epsilon > 0
        assert 0 < c.rho_bar <= 1 + 1e-12
        np.testing.assert_allclose(c.q_bar.sum(axis=1), 1.0)
        assert c.epsilon_star == pytest.approx(c.q_bar[:, c.target - 1].min())
        # agreement: below epsilon_star every state maps to the target
        for g in range(1, k.n_states + 1):
            assert star_coupling(c, g, c.epsilon_star * 0.999) == c.target


def test_certificate_depth_cap(kunique):
    k = ImitationKernel.build(3, [(1, 1.0, [[0, 1, 0], [0, 0, 1], [1, 0, 0]])])
    # a pure rotation is periodic; the verdict gate fires first
    with pytest.raises(PreconditionError):
        doeblin_certificate(k)
    with pytest.raises(PreconditionError):
        doeblin_certificate(binary_kernel({1: "I", 2: "J", 3: "I"}), depth_cap=1)
