"""Inverse-CDF coupling functions and the equal-depth regeneration certificate."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .kernel import POSITIVE, ImitationKernel, cumulative_rows
from .structure import Verdict, uniqueness_verdict, word_matrix


class PreconditionError(ValueError):
    """The kernel does not satisfy what the requested operation needs."""


def apply_coupling(matrix: np.ndarray, state: int, u: float) -> int:
    """Smallest ``j`` (1-based) with ``sum_{h <= j} matrix[state, h] > u``."""
    row = cumulative_rows(np.asarray(matrix)[state - 1 : state])[0]
    return bisect.bisect_right(row, u) + 1


def compose_coupling(kernel: ImitationKernel, word: Sequence[int], state: int, us: Sequence[float]) -> int:
    """Push ``state`` from the bottom of ``word`` to its top.

    The deepest letter acts first with the last uniform, matching
    ``word_matrix``.
    """
    if len(us) != len(word):
        raise ValueError(f"need {len(word)} uniforms, got {len(us)}")
    g = state
    for a, u in zip(reversed(word), reversed(us)):
        g = bisect.bisect_right(kernel.coupling_table(a)[g - 1], u) + 1
    return g


@dataclass(frozen=True, eq=False)
class DoeblinCertificate:
    """Equal-depth words driving every state into ``target``.

    ``words[i]`` is the witness for state ``i + 1``; ``q_bar`` mixes the
    distinct witnesses with their path probabilities.
    """

    target: int
    n0_bar: int
    words: tuple[tuple[int, ...], ...]
    epsilon: float
    rho_bar: float
    q_bar: np.ndarray
    epsilon_star: float

    @property
    def distinct_words(self) -> tuple[tuple[int, ...], ...]:
        return tuple(dict.fromkeys(self.words))

    @cached_property
    def star_order(self) -> list[int]:
        """0-based state order used by ``star_coupling``: target first."""
        n = self.q_bar.shape[0]
        t = self.target - 1
        return [t] + [s for s in range(n) if s != t]

    @cached_property
    def star_table(self) -> list[list[float]]:
        return cumulative_rows(self.q_bar[:, self.star_order])

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "n0_bar": self.n0_bar,
            "words": [list(w) for w in self.words],
            "epsilon": self.epsilon,
            "rho_bar": self.rho_bar,
            "q_bar": self.q_bar.tolist(),
            "epsilon_star": self.epsilon_star,
        }


def star_coupling(cert: DoeblinCertificate, state: int, u: float) -> int:
    j = bisect.bisect_right(cert.star_table[state - 1], u)
    return cert.star_order[j] + 1


def _letters(kernel: ImitationKernel, cap: int) -> list[tuple[int, np.ndarray]]:
    out = [(e.k, e.matrix) for e in kernel.support if e.k <= cap]
    if kernel.tail is not None:
        out += [(k, kernel.tail.matrix) for k in range(kernel.tail.start, cap + 1)]
    return out


def _path_probability(kernel: ImitationKernel, word: Sequence[int]) -> float:
    return float(np.prod([kernel.theta(a) for a in word]))


def _assemble(kernel: ImitationKernel, target: int, depth: int, words: list[tuple[int, ...]]) -> DoeblinCertificate:
    t = target - 1
    eps = min(float(word_matrix(kernel, w)[i, t]) for i, w in enumerate(words))
    distinct = list(dict.fromkeys(words))
    weights = [_path_probability(kernel, w) for w in distinct]
    rho = float(sum(weights))
    q = sum(wt * word_matrix(kernel, w) for wt, w in zip(weights, distinct)) / rho
    q = q / q.sum(axis=1, keepdims=True)
    q.setflags(write=False)
    return DoeblinCertificate(
        target=target,
        n0_bar=depth,
        words=tuple(words),
        epsilon=eps,
        rho_bar=rho,
        q_bar=q,
        epsilon_star=float(q[:, t].min()),
    )


def doeblin_certificate(kernel: ImitationKernel, depth_cap: int | None = None) -> DoeblinCertificate:
    """Smallest common depth at which every state reaches one target state.

    ``reach[n][i, j]`` says some word of depth ``n`` has
    ``P_word(i, j) > 0``; it is built by splitting off the deepest letter.
    Among targets feasible at the smallest depth, the one with the largest
    agreement threshold wins (ties: lowest label).
    """
    report = uniqueness_verdict(kernel)
    if report.verdict is not Verdict.UNIQUE:
        raise PreconditionError(f"certificate needs a Unique kernel, verdict is {report.verdict.value}")
    n = kernel.n_states
    max_k = max(kernel.ks) if kernel.ks else 0
    if kernel.tail is not None:
        max_k = max(max_k, kernel.tail.start + 1)
    cap = depth_cap if depth_cap is not None else 10 * n * n * max_k
    letters = _letters(kernel, cap)
    supports = [(k, (m > POSITIVE).astype(np.int64)) for k, m in letters]
    reach = [np.eye(n, dtype=bool)]
    for depth in range(1, cap + 1):
        acc = np.zeros((n, n), dtype=bool)
        for k, s in supports:
            if k > depth:
                break
            acc |= (s @ reach[depth - k].astype(np.int64)) > 0
        reach.append(acc)
        feasible = [t for t in range(n) if acc[:, t].all()]
        if feasible:
            break
    else:
        raise PreconditionError(f"no common-depth witness words up to depth {cap}")

    def witness(i: int, depth: int, t: int) -> tuple[int, ...]:
        word: list[int] = []
        while depth > 0:
            for k, s in supports:
                if k > depth:
                    continue
                xs = np.flatnonzero(s[i] & reach[depth - k][:, t])
                if len(xs):
                    word.append(k)
                    i, depth = int(xs[0]), depth - k
                    break
        # letters were collected deepest first
        return tuple(reversed(word))

    best = None
    for t in feasible:
        cert = _assemble(kernel, t + 1, depth, [witness(i, depth, t) for i in range(n)])
        if best is None or cert.epsilon_star > best.epsilon_star:
            best = cert
    return best
