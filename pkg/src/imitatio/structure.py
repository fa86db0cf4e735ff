"""Structure of the lag-to-matrix map: classes, periods, uniqueness verdict."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .kernel import POSITIVE, ImitationKernel, SupportEntry, TailSpec, support_gcd


class Verdict(str, enum.Enum):
    UNIQUE = "Unique"
    NON_UNIQUE_PERIODIC = "NonUniquePeriodic"
    NON_UNIQUE_MULTIPLE_CLASSES = "NonUniqueMultipleClasses"


class StructureError(ValueError):
    pass


def _check_word(kernel: ImitationKernel, word: Sequence[int]) -> None:
    if len(word) == 0:
        raise StructureError("empty word")
    for a in word:
        if not kernel.in_support(a):
            raise StructureError(f"letter {a} is not in the support")


def word_depth(word: Sequence[int], kernel: ImitationKernel | None = None) -> int:
    if kernel is not None:
        _check_word(kernel, word)
    elif len(word) == 0 or any(a < 1 for a in word):
        raise StructureError(f"invalid word {tuple(word)}")
    return sum(word)


def word_matrix(kernel: ImitationKernel, word: Sequence[int]) -> np.ndarray:
    """``P_(a_n) ... P_(a_1)``: bottom value to top value along the word."""
    _check_word(kernel, word)
    out = np.eye(kernel.n_states)
    for a in word:
        out = kernel.matrix(a) @ out
    return out


def support_graph(matrices: Sequence[np.ndarray]) -> np.ndarray:
    adj = np.zeros(matrices[0].shape, dtype=bool)
    for m in matrices:
        adj |= np.asarray(m) > POSITIVE
    return adj


@dataclass(frozen=True)
class Decomposition:
    """Closed classes and transient states, 1-based, each sorted."""

    closed: tuple[tuple[int, ...], ...]
    transient: tuple[int, ...]

    @property
    def essentially_irreducible(self) -> bool:
        return len(self.closed) == 1

    @property
    def recurrent(self) -> tuple[int, ...]:
        return tuple(sorted(s for c in self.closed for s in c))


def decompose_graph(adj: np.ndarray) -> Decomposition:
    n_comp, labels = connected_components(csr_matrix(adj.astype(np.int8)), directed=True, connection="strong")
    leaves = np.ones(n_comp, dtype=bool)
    src, dst = np.nonzero(adj)
    for i, j in zip(src, dst):
        if labels[i] != labels[j]:
            leaves[labels[i]] = False
    closed, transient = [], []
    for c in range(n_comp):
        members = tuple(int(s) + 1 for s in np.flatnonzero(labels == c))
        if leaves[c]:
            closed.append(members)
        else:
            transient.extend(members)
    closed.sort()
    return Decomposition(tuple(closed), tuple(sorted(transient)))


def communicating_decomposition(kernel: ImitationKernel) -> Decomposition:
    return decompose_graph(support_graph(kernel.matrices()))


def alphabet_gcd(kernel: ImitationKernel) -> int:
    return support_gcd(kernel)


def reduce_kernel(kernel: ImitationKernel) -> ImitationKernel:
    """Rescale lags by their gcd ``d``: lag ``l`` carries ``theta[l*d]`` and ``P_(l*d)``."""
    d = alphabet_gcd(kernel)
    if d == 1:
        raise StructureError("reduce_kernel requires a lag gcd greater than 1")
    entries = tuple(SupportEntry(e.k // d, e.theta, e.matrix) for e in kernel.support)
    # a tail always contains consecutive lags, so d > 1 implies no tail
    assert kernel.tail is None
    return ImitationKernel(kernel.n_states, entries, None, kernel.labels)


def restrict_states(kernel: ImitationKernel, states: Sequence[int]) -> ImitationKernel:
    idx = np.asarray(sorted(states)) - 1

    def sub(m):
        r = np.array(m[np.ix_(idx, idx)])
        r = r / r.sum(axis=1, keepdims=True)
        r.setflags(write=False)
        return r

    entries = tuple(SupportEntry(e.k, e.theta, sub(e.matrix)) for e in kernel.support)
    tail = None
    if kernel.tail is not None:
        t = kernel.tail
        tail = TailSpec(t.family, t.start, t.param, t.mass, sub(t.matrix))
    labels = None
    if kernel.labels is not None:
        labels = tuple(kernel.labels[i] for i in idx)
    else:
        labels = tuple(str(i + 1) for i in idx)
    return ImitationKernel(len(idx), entries, tail, labels)


def restrict_to_recurrent(kernel: ImitationKernel) -> ImitationKernel:
    """Drop transient states; closed classes keep their rows stochastic."""
    dec = communicating_decomposition(kernel)
    if not dec.transient:
        return kernel
    return restrict_states(kernel, dec.recurrent)


def _weighted_arcs(kernel: ImitationKernel) -> list[tuple[int, int, int]]:
    arcs = []
    for k, m in kernel.representative_lags():
        for i, j in zip(*np.nonzero(np.asarray(m) > POSITIVE)):
            arcs.append((int(i), int(j), k))
    return arcs


def chain_period_and_partition(kernel: ImitationKernel) -> tuple[int, list[list[int]]]:
    """Common period of an essentially irreducible kernel and its cyclic classes.

    Potentials ``ell`` from a depth-first traversal of the weighted support
    graph; the period is the gcd of ``ell(u) + w - ell(v)`` over all arcs.
    Returned classes are 1-based and restricted to the closed class.
    """
    dec = communicating_decomposition(kernel)
    if not dec.essentially_irreducible:
        raise StructureError("kernel is not essentially irreducible")
    if alphabet_gcd(kernel) != 1:
        raise StructureError("reduce the kernel first: lag gcd exceeds 1")
    members = set(s - 1 for s in dec.closed[0])
    arcs = [(i, j, w) for i, j, w in _weighted_arcs(kernel) if i in members and j in members]
    out_arcs: dict[int, list[tuple[int, int]]] = {}
    for i, j, w in arcs:
        out_arcs.setdefault(i, []).append((j, w))
    root = min(members)
    ell = {root: 0}
    stack = [root]
    while stack:
        u = stack.pop()
        for v, w in out_arcs.get(u, ()):
            if v not in ell:
                ell[v] = ell[u] + w
                stack.append(v)
    period = reduce(math.gcd, (abs(ell[u] + w - ell[v]) for u, v, w in arcs), 0)
    partition = [[] for _ in range(period)]
    for v in sorted(members):
        partition[ell[v] % period].append(v + 1)
    return period, partition


@dataclass
class StructureReport:
    n_states: int
    d_A: int
    closed_classes: list[list[int]]
    transient: list[int]
    essential_irreducible: bool
    chain_period: int | None
    periodic_partition: list[list[int]] | None
    verdict: Verdict
    stages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "d_A": self.d_A,
            "closed_classes": self.closed_classes,
            "transient": self.transient,
            "essential_irreducible": self.essential_irreducible,
            "chain_period": self.chain_period,
            "periodic_partition": self.periodic_partition,
            "verdict": self.verdict.value,
            "stages": self.stages,
        }


def uniqueness_verdict(kernel: ImitationKernel) -> StructureReport:
    dec = communicating_decomposition(kernel)
    d = alphabet_gcd(kernel)
    stages = [f"decomposition: {len(dec.closed)} closed class(es), {len(dec.transient)} transient state(s)"]
    report = StructureReport(
        n_states=kernel.n_states,
        d_A=d,
        closed_classes=[list(c) for c in dec.closed],
        transient=list(dec.transient),
        essential_irreducible=dec.essentially_irreducible,
        chain_period=None,
        periodic_partition=None,
        verdict=Verdict.NON_UNIQUE_MULTIPLE_CLASSES,
        stages=stages,
    )
    if not dec.essentially_irreducible:
        stages.append("verdict: more than one closed class")
        return report
    work = kernel
    relabel = list(range(1, kernel.n_states + 1))
    if dec.transient:
        work = restrict_states(kernel, dec.closed[0])
        relabel = list(dec.closed[0])
        stages.append(f"restricted to closed class {list(dec.closed[0])}")
    if d > 1:
        work = reduce_kernel(work)
        stages.append(f"reduced lags by gcd {d}")
    period, partition = chain_period_and_partition(work)
    report.chain_period = period
    report.periodic_partition = [[relabel[s - 1] for s in part] for part in partition]
    report.verdict = Verdict.UNIQUE if period == 1 else Verdict.NON_UNIQUE_PERIODIC
    stages.append(f"chain period {period}")
    return report
