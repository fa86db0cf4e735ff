"""Averaged matrix ``sum_k theta_k P_(k)`` and its invariant distributions."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .kernel import ImitationKernel
from .structure import decompose_graph, support_graph

DENSE_LIMIT = 2000
POWER_TOL = 1e-13
POWER_MAX_ITER = 1_000_000


class InvariantError(ValueError):
    pass


def p_hat(kernel: ImitationKernel) -> np.ndarray:
    out = np.zeros((kernel.n_states, kernel.n_states))
    for e in kernel.support:
        out += e.theta * e.matrix
    if kernel.tail is not None:
        out += kernel.tail.mass * kernel.tail.matrix
    return out / out.sum(axis=1, keepdims=True)


def _solve_irreducible(p: np.ndarray) -> np.ndarray:
    """Stationary vector of an irreducible stochastic matrix."""
    n = p.shape[0]
    if n == 1:
        return np.ones(1)
    if n > DENSE_LIMIT:
        lam = np.full(n, 1.0 / n)
        for _ in range(POWER_MAX_ITER):
            nxt = lam @ p
            nxt /= nxt.sum()
            if np.max(np.abs(nxt - lam)) < POWER_TOL:
                return nxt
            lam = nxt
        raise InvariantError("power iteration did not converge")
    # lambda (P - I) = 0 with one balance equation swapped for normalization
    a = (p - np.eye(n)).T
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    lam = np.linalg.solve(a, rhs)
    for _ in range(3):
        resid = lam @ p - lam
        if np.max(np.abs(resid)) < 1e-15:
            break
        # one step of iterative refinement on the same system
        r = rhs - a @ lam
        lam = lam + np.linalg.solve(a, r)
    lam = np.clip(lam, 0.0, None)
    return lam / lam.sum()


def invariant_distribution(
    matrix: np.ndarray, weights: Sequence[float] | None = None
) -> np.ndarray:
    """Invariant distribution of ``matrix``.

    With a single closed class the result is unique and ``weights`` is
    ignored. Otherwise ``weights`` (one per closed class, ordered by smallest
    member) selects the mixture of per-class invariant laws.
    """
    p = np.asarray(matrix, dtype=float)
    dec = decompose_graph(support_graph([p]))
    if not dec.essentially_irreducible:
        if weights is None:
            raise InvariantError(
                f"{len(dec.closed)} closed classes: mixture weights are required"
            )
        if len(weights) != len(dec.closed):
            raise InvariantError(
                f"expected {len(dec.closed)} mixture weights, got {len(weights)}"
            )
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise InvariantError("mixture weights must be nonnegative and sum to 1")
    else:
        w = np.ones(1)
    lam = np.zeros(p.shape[0])
    for weight, cls in zip(w, dec.closed):
        idx = np.asarray(cls) - 1
        sub = p[np.ix_(idx, idx)]
        sub = sub / sub.sum(axis=1, keepdims=True)
        lam[idx] += weight * _solve_irreducible(sub)
    return lam


def residual(lam: np.ndarray, matrix: np.ndarray) -> float:
    return float(np.max(np.abs(lam @ matrix - lam)))
