"""Imitation kernels: decrement law, per-lag stochastic matrices, parsing.

States are exposed 1-based (``1..n_states``); matrices are plain numpy
arrays indexed 0-based.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np
from scipy import special

ROW_TOL = 1e-9
MASS_TOL = 1e-9
POSITIVE = 1e-12

GEOMETRIC = "geometric"
POWERLAW = "powerlaw"

# Power-law tails keep at most this many explicit cumulative entries; beyond
# it the inverse CDF is found by bisection on the Hurwitz zeta function.
_POWERLAW_CACHE_MAX = 1 << 16
_POWERLAW_CACHE_QUANTILE = 1e-12


class KernelSpecError(ValueError):
    """Raised when a kernel document or kernel fails validation."""

    def __init__(self, message: str, violations: Sequence[str] = ()):
        super().__init__(message)
        self.violations = list(violations)


def identity2() -> np.ndarray:
    return np.eye(2)


def swap2() -> np.ndarray:
    return np.array([[0.0, 1.0], [1.0, 0.0]])


def _matrix_violations(matrix: np.ndarray, n_states: int, where: str) -> list[str]:
    out = []
    if matrix.ndim != 2 or matrix.shape != (n_states, n_states):
        return [f"{where}: matrix shape {matrix.shape} != ({n_states}, {n_states})"]
    if not np.all(np.isfinite(matrix)):
        out.append(f"{where}: non-finite entry")
        return out
    if np.any(matrix < 0):
        out.append(f"{where}: negative entry")
    sums = matrix.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > ROW_TOL:
            out.append(f"{where}: row {i + 1} sums to {float(s):.12g}")
    return out


def _normalized(matrix: np.ndarray) -> np.ndarray:
    m = np.array(matrix, dtype=float)
    m = m / m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class SupportEntry:
    k: int
    theta: float
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class TailSpec:
    """Parametric tail: every lag ``k >= start`` uses ``matrix``.

    Geometric: ``theta[start + j] = mass * (1 - param) * param**j``.
    Power law: ``theta[k]`` proportional to ``k**-param`` for ``k >= start``,
    scaled so the tail carries ``mass``.
    """

    family: str
    start: int
    param: float
    mass: float
    matrix: np.ndarray

    def violations(self, n_states: int) -> list[str]:
        out = []
        if self.family not in (GEOMETRIC, POWERLAW):
            out.append(f"tail: unknown family {self.family!r}")
        if not isinstance(self.start, (int, np.integer)) or self.start < 1:
            out.append(f"tail: start must be a positive integer, got {self.start!r}")
        if not (0.0 < self.mass < 1.0):
            out.append(f"tail: mass must lie in (0, 1), got {self.mass!r}")
        if self.family == GEOMETRIC and not (0.0 < self.param < 1.0):
            out.append(f"tail: geometric ratio must lie in (0, 1), got {self.param!r}")
        if self.family == POWERLAW and not self.param > 1.0:
            out.append(f"tail: power-law exponent must exceed 1, got {self.param!r}")
        out.extend(_matrix_violations(np.asarray(self.matrix, dtype=float), n_states, "tail"))
        return out

    @cached_property
    def _zeta_start(self) -> float:
        return float(special.zeta(self.param, self.start))

    def theta(self, k: int) -> float:
        if k < self.start:
            return 0.0
        j = k - self.start
        if self.family == GEOMETRIC:
            return self.mass * (1.0 - self.param) * self.param**j
        return self.mass * float(k) ** (-self.param) / self._zeta_start

    def remaining(self, k: int) -> float:
        """Tail mass carried by lags ``>= k``."""
        if k <= self.start:
            return self.mass
        j = k - self.start
        if self.family == GEOMETRIC:
            return self.mass * self.param**j
        return self.mass * float(special.zeta(self.param, float(k))) / self._zeta_start


class DecrementLaw:
    """Inverse-CDF sampler for the decrement distribution theta.

    Finite lags come first in increasing order, the tail (if any) is
    appended. ``sample(u)`` returns the smallest lag whose cumulative mass
    exceeds ``u``.
    """

    def __init__(self, ks: Sequence[int], thetas: Sequence[float], tail: TailSpec | None):
        self.ks = np.asarray(ks, dtype=np.int64)
        self.thetas = np.asarray(thetas, dtype=float)
        self.tail = tail
        cum = np.cumsum(self.thetas)
        if tail is None and len(cum):
            # no tail: the last lag absorbs rounding so that u < 1 always lands
            cum[-1] = np.inf
        self._cum = cum
        self._finite_mass = float(self.thetas.sum())
        self._ks_list = [int(k) for k in self.ks]
        self._cum_list = cum.tolist()
        self._pl_cache: list[float] | None = None

    # -- tail inversion ----------------------------------------------------
    def _tail_sample(self, v: float, rest: float) -> int:
        """Lag for residual ``v`` in ``[0, mass)``; ``rest`` = mass - v."""
        tail = self.tail
        if tail.family == GEOMETRIC:
            p = tail.param
            # smallest j with mass * p**(j+1) < rest
            ratio = rest / tail.mass
            if ratio >= 1.0:
                return tail.start
            if ratio <= 0.0:
                ratio = np.nextafter(0.0, 1.0)
            j = max(int(math.floor(math.log(ratio) / math.log(p))), 0)
            while j > 0 and tail.mass * p ** j < rest:
                j -= 1
            while not tail.mass * p ** (j + 1) < rest:
                j += 1
            return tail.start + j
        return self._powerlaw_sample(v, rest)

    def _powerlaw_cache(self) -> list[float]:
        if self._pl_cache is None:
            tail = self.tail
            cum, acc, k = [], 0.0, tail.start
            target = tail.mass * (1.0 - _POWERLAW_CACHE_QUANTILE)
            while acc < target and len(cum) < _POWERLAW_CACHE_MAX:
                acc += tail.theta(k)
                cum.append(acc)
                k += 1
            self._pl_cache = cum
        return self._pl_cache

    def _powerlaw_sample(self, v: float, rest: float) -> int:
        tail = self.tail
        cache = self._powerlaw_cache()
        if v < cache[-1]:
            return tail.start + bisect.bisect_right(cache, v)
        # smallest k with remaining(k + 1) < rest; remaining is decreasing in k
        lo = tail.start + len(cache) - 1
        hi = max(lo + 1, 2 * lo)
        while not tail.remaining(hi + 1) < rest:
            lo, hi = hi, 2 * hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tail.remaining(mid + 1) < rest:
                hi = mid
            else:
                lo = mid
        return hi

    # -- public ------------------------------------------------------------
    def sample(self, u: float) -> int:
        i = bisect.bisect_right(self._cum_list, u)
        if i < len(self._ks_list):
            return self._ks_list[i]
        v = min(max(u - self._finite_mass, 0.0), self.tail.mass)
        return self._tail_sample(v, max(1.0 - u, 0.0))

    def sample_many(self, us: np.ndarray) -> list[int]:
        idx = np.searchsorted(self._cum, us, side="right")
        n = len(self._ks_list)
        if self.tail is None:
            return self.ks[idx].tolist()
        out = self.ks[np.minimum(idx, max(n - 1, 0))].tolist() if n else [0] * len(us)
        for pos in np.flatnonzero(idx >= n):
            out[pos] = self.sample(float(us[pos]))
        return out

    def mass(self, k: int) -> float:
        i = bisect.bisect_left(self._ks_list, k)
        if i < len(self._ks_list) and self._ks_list[i] == k:
            return float(self.thetas[i])
        return self.tail.theta(k) if self.tail is not None else 0.0

    def remaining(self, k: int) -> float:
        """Sum of theta over lags ``>= k``."""
        finite = float(self.thetas[self.ks >= k].sum())
        return finite + (self.tail.remaining(k) if self.tail is not None else 0.0)


@dataclass(frozen=True, eq=False)
class ImitationKernel:
    """Finite-alphabet imitation kernel.

    ``support`` holds the finitely many explicit lags; ``tail`` optionally
    covers every lag from ``tail.start`` on with one shared matrix.
    """

    n_states: int
    support: tuple[SupportEntry, ...]
    tail: TailSpec | None = None
    labels: tuple[str, ...] | None = None
    _matrix_by_k: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_matrix_by_k", {e.k: e.matrix for e in self.support})

    @classmethod
    def build(
        cls,
        n_states: int,
        support: Iterable[tuple[int, float, Sequence[Sequence[float]]]],
        tail: TailSpec | dict | None = None,
        labels: Sequence[str] | None = None,
    ) -> "ImitationKernel":
        """Validate, sort by lag and row-normalize; raise on any violation."""
        entries = [SupportEntry(int(k), float(t), np.asarray(m, dtype=float)) for k, t, m in support]
        entries.sort(key=lambda e: e.k)
        if isinstance(tail, dict):
            tail = TailSpec(
                family=tail["family"],
                start=int(tail["start"]),
                param=float(tail["param"]),
                mass=float(tail["mass"]),
                matrix=np.asarray(tail["matrix"], dtype=float),
            )
        raw = cls(n_states, tuple(entries), tail, tuple(labels) if labels is not None else None)
        problems = validate_kernel(raw)
        if problems:
            raise KernelSpecError("invalid kernel: " + "; ".join(problems), problems)
        entries = [SupportEntry(e.k, e.theta, _normalized(e.matrix)) for e in entries]
        if tail is not None:
            tail = TailSpec(tail.family, tail.start, tail.param, tail.mass, _normalized(tail.matrix))
        return cls(n_states, tuple(entries), tail, raw.labels)

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(e.k for e in self.support)

    @property
    def thetas(self) -> tuple[float, ...]:
        return tuple(e.theta for e in self.support)

    def matrix(self, k: int) -> np.ndarray:
        m = self._matrix_by_k.get(k)
        if m is not None:
            return m
        if self.tail is not None and k >= self.tail.start:
            return self.tail.matrix
        raise KeyError(f"lag {k} is not in the support")

    def in_support(self, k: int) -> bool:
        return k in self._matrix_by_k or (self.tail is not None and k >= self.tail.start)

    def theta(self, k: int) -> float:
        return self.decrements.mass(k)

    def matrices(self) -> list[np.ndarray]:
        """Distinct support matrices; the tail matrix is listed once."""
        out = [e.matrix for e in self.support]
        if self.tail is not None:
            out.append(self.tail.matrix)
        return out

    def representative_lags(self) -> list[tuple[int, np.ndarray]]:
        """Lags used in gcd computations: finite lags plus ``start`` and ``start + 1``."""
        out = [(e.k, e.matrix) for e in self.support]
        if self.tail is not None:
            out += [(self.tail.start, self.tail.matrix), (self.tail.start + 1, self.tail.matrix)]
        return out

    @cached_property
    def decrements(self) -> DecrementLaw:
        return DecrementLaw(self.ks, self.thetas, self.tail)

    @cached_property
    def _tables(self) -> tuple[dict, list | None]:
        finite = {e.k: cumulative_rows(e.matrix) for e in self.support}
        tail = cumulative_rows(self.tail.matrix) if self.tail is not None else None
        return finite, tail

    def coupling_table(self, k: int) -> list[list[float]]:
        """Cumulative rows of ``P_(k)`` as Python lists (inverse-CDF lookups)."""
        finite, tail = self._tables
        table = finite.get(k)
        return table if table is not None else tail

    def label(self, state: int) -> str:
        if self.labels is None:
            return str(state)
        return self.labels[state - 1]

    def to_dict(self) -> dict:
        doc = {
            "states": self.n_states,
            "support": [
                {"k": e.k, "theta": e.theta, "matrix": e.matrix.tolist()} for e in self.support
            ],
        }
        if self.labels is not None:
            doc["labels"] = list(self.labels)
        if self.tail is not None:
            doc["tail"] = {
                "family": self.tail.family,
                "start": self.tail.start,
                "param": self.tail.param,
                "mass": self.tail.mass,
                "matrix": self.tail.matrix.tolist(),
            }
        return doc


def cumulative_rows(matrix: np.ndarray) -> list[list[float]]:
    cum = np.cumsum(np.asarray(matrix, dtype=float), axis=1)
    # guard against rounding: the last positive column closes the row
    rows = []
    for i, row in enumerate(cum):
        row = row.tolist()
        last = int(np.flatnonzero(matrix[i] > 0)[-1])
        for j in range(last, len(row)):
            row[j] = math.inf
        rows.append(row)
    return rows


def validate_kernel(kernel: ImitationKernel) -> list[str]:
    """Return a list of human-readable violations; empty when the kernel is valid."""
    out: list[str] = []
    n = kernel.n_states
    if not isinstance(n, (int, np.integer)) or n < 1:
        return [f"states must be a positive integer, got {n!r}"]
    if kernel.labels is not None:
        if len(kernel.labels) != n:
            out.append(f"labels: expected {n} labels, got {len(kernel.labels)}")
        elif len(set(kernel.labels)) != n:
            out.append("labels: duplicate label")
    if not kernel.support and kernel.tail is None:
        out.append("support: empty support and no tail")
    seen: set[int] = set()
    for e in kernel.support:
        where = f"support k={e.k}"
        if e.k < 1:
            out.append(f"{where}: lag must be >= 1")
        if e.k in seen:
            out.append(f"{where}: duplicate lag")
        seen.add(e.k)
        if not (e.theta > 0):
            out.append(f"{where}: theta must be positive, got {e.theta!r}")
        out.extend(_matrix_violations(np.asarray(e.matrix, dtype=float), n, where))
    total = sum(e.theta for e in kernel.support)
    if kernel.tail is not None:
        out.extend(kernel.tail.violations(n))
        if seen and kernel.tail.start <= max(seen):
            out.append(f"tail: start {kernel.tail.start} must exceed the largest finite lag {max(seen)}")
        total += kernel.tail.mass
    if abs(total - 1.0) > MASS_TOL:
        out.append(f"theta: total mass {float(total):.12g} != 1")
    return out


def parse_kernel_spec(text: str) -> ImitationKernel:
    """Parse a JSON kernel document into a validated kernel."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KernelSpecError(f"malformed kernel document: {exc}", [str(exc)]) from exc
    return kernel_from_dict(doc)


def kernel_from_dict(doc: dict) -> ImitationKernel:
    if not isinstance(doc, dict):
        raise KernelSpecError("malformed kernel document: top level must be an object")
    try:
        states = doc["states"]
        support = [(int(e["k"]), float(e["theta"]), e["matrix"]) for e in doc.get("support", [])]
        tail = doc.get("tail")
        if tail is not None:
            tail = TailSpec(
                family=str(tail["family"]),
                start=int(tail["start"]),
                param=float(tail["param"]),
                mass=float(tail["mass"]),
                matrix=np.asarray(tail["matrix"], dtype=float),
            )
        labels = doc.get("labels")
        if labels is not None:
            labels = [str(x) for x in labels]
    except (KeyError, TypeError, ValueError) as exc:
        raise KernelSpecError(f"malformed kernel document: {exc!r}", [repr(exc)]) from exc
    if not isinstance(states, int) or isinstance(states, bool):
        raise KernelSpecError("malformed kernel document: states must be an integer")
    for k, _, m in support:
        arr = np.asarray(m, dtype=float) if _is_rectangular(m) else None
        if arr is None:
            raise KernelSpecError(f"malformed kernel document: matrix for k={k} is not rectangular")
    return ImitationKernel.build(states, support, tail, labels)


def _is_rectangular(m) -> bool:
    try:
        arr = np.asarray(m, dtype=float)
    except (ValueError, TypeError):
        return False
    return arr.ndim == 2


def binary_kernel(assignment: dict[int, str], thetas: dict[int, float] | None = None) -> ImitationKernel:
    """Two-state kernel with each lag mapped to ``"I"`` (copy) or ``"J"`` (flip).

    Weights default to uniform over the given lags.
    """
    ks = sorted(assignment)
    if thetas is None:
        thetas = {k: 1.0 / len(ks) for k in ks}
    mats = {"I": identity2(), "J": swap2()}
    return ImitationKernel.build(2, [(k, thetas[k], mats[assignment[k]]) for k in ks])


def k_unique() -> ImitationKernel:
    """``P_(1) = I``, ``P_(2) = J``, equal weights."""
    return binary_kernel({1: "I", 2: "J"})


def k_periodic() -> ImitationKernel:
    """``P_(1) = J``, ``P_(2) = I``, equal weights; period two."""
    return binary_kernel({1: "J", 2: "I"})


def k_identity() -> ImitationKernel:
    """All lags copy: two closed classes."""
    return binary_kernel({1: "I", 2: "I"})


class CoalescenceVerdict(str, enum.Enum):
    PROVEN = "ProvenCoalescent"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class CoalescenceResult:
    verdict: CoalescenceVerdict
    tail_square_sum: float
    reason: str


def support_gcd(kernel: ImitationKernel) -> int:
    return reduce(math.gcd, (k for k, _ in kernel.representative_lags()), 0)


def tail_square_sum(kernel: ImitationKernel, terms: int = 200_000) -> float:
    """``sum_k (sum_{n >= k} theta_n)**2``; ``inf`` when it diverges."""
    law = kernel.decrements
    tail = kernel.tail
    last = int(law.ks[-1]) if len(law.ks) else 0
    if tail is None:
        return sum(law.remaining(k) ** 2 for k in range(1, last + 1))
    head = sum(law.remaining(k) ** 2 for k in range(1, tail.start))
    if tail.family == GEOMETRIC:
        return head + tail.mass**2 / (1.0 - tail.param**2)
    alpha = tail.param
    if alpha <= 1.5:
        return math.inf
    ks = np.arange(tail.start, tail.start + terms, dtype=float)
    rem = tail.mass * special.zeta(alpha, ks) / tail._zeta_start
    partial = float(np.sum(rem**2))
    # remainder: zeta(a, k) ~ k**(1-a)/(a-1), so rem(k)**2 ~ c * k**(2-2a)
    kmax = tail.start + terms
    c = (tail.mass / tail._zeta_start / (alpha - 1.0)) ** 2
    remainder = c * kmax ** (3.0 - 2.0 * alpha) / (2.0 * alpha - 3.0)
    return head + partial + remainder


def coalescence_verdict(kernel: ImitationKernel) -> CoalescenceResult:
    """Sufficient check for coalescence of theta (square-summable tail masses)."""
    value = tail_square_sum(kernel)
    if support_gcd(kernel) != 1:
        return CoalescenceResult(CoalescenceVerdict.UNKNOWN, value, "gcd of lags exceeds 1")
    if kernel.tail is None:
        return CoalescenceResult(CoalescenceVerdict.PROVEN, value, "finite support")
    if kernel.tail.family == GEOMETRIC:
        return CoalescenceResult(CoalescenceVerdict.PROVEN, value, "geometric tail")
    if kernel.tail.param > 1.5:
        return CoalescenceResult(
            CoalescenceVerdict.PROVEN, value, "power-law tail with exponent > 1.5"
        )
    return CoalescenceResult(
        CoalescenceVerdict.UNKNOWN, value, "power-law tail with exponent <= 1.5: sum diverges"
    )


def sample_decrement(kernel: ImitationKernel, u: float) -> int:
    return kernel.decrements.sample(u)
