"""Backward random walks, landing indices and coalescence of walk families."""

from __future__ import annotations

import heapq
import math
import os
from dataclasses import dataclass, field
from typing import Iterable

from .kernel import ImitationKernel
from .rng import DISTANCE, RandomSource

DEFAULT_STEP_CAP = 10**8


def default_step_cap() -> int:
    value = os.environ.get("IMITATIO_STEP_CAP")
    return int(value) if value else DEFAULT_STEP_CAP


class StepCapExceeded(RuntimeError):
    """A walk used more steps than allowed; usually a very heavy tail."""


@dataclass
class WalkTrajectory:
    start: int
    positions: list[int]
    decrements: list[int]


@dataclass(frozen=True)
class WalkLanding:
    steps: int
    site: int


@dataclass
class CoalescenceReport:
    """Pairwise coalescence points of walks started from ``window``.

    ``None`` stands for a pair (or the whole window) that did not merge
    within the horizon.
    """

    window: tuple[int, ...]
    pairwise: dict[tuple[int, int], int | None]
    s_lambda: int | None
    s_hat: int
    classes: list[list[int]]
    steps: int
    consumed_sites: list[int] = field(default_factory=list, repr=False)


def walk_step(position: int, rng: RandomSource) -> int:
    return position - rng.decrement(position)


def walk_to_threshold(
    start: int, threshold: int, rng: RandomSource, step_cap: int | None = None
) -> tuple[WalkTrajectory, WalkLanding]:
    if threshold >= start:
        raise ValueError("threshold must lie strictly below the start site")
    cap = default_step_cap() if step_cap is None else step_cap
    positions, decs = [start], []
    pos = start
    while pos > threshold:
        if len(decs) >= cap:
            raise StepCapExceeded(f"walk from {start} exceeded {cap} steps")
        k = rng.decrement(pos)
        decs.append(k)
        pos -= k
        positions.append(pos)
    return WalkTrajectory(start, positions, decs), WalkLanding(len(decs), pos)


def joint_coalescence(
    window: Iterable[int],
    horizon: int | None,
    rng: RandomSource,
    step_cap: int | None = None,
) -> CoalescenceReport:
    """Run walks from every window site, always moving the rightmost one.

    Walks meeting on a site merge. Stops when a single walk is left or when
    every walk is below ``min(window) - horizon`` (``horizon=None``: no
    limit, only ``step_cap``).
    """
    sites = sorted(set(window))
    if not sites:
        raise ValueError("window must be nonempty")
    cap = default_step_cap() if step_cap is None else step_cap
    floor = -math.inf if horizon is None else sites[0] - horizon
    groups = {s: [s] for s in sites}
    heap = [-s for s in sites]
    heapq.heapify(heap)
    pairwise: dict[tuple[int, int], int | None] = {
        (m, n): None for i, m in enumerate(sites) for n in sites[i + 1 :]
    }
    consumed = []
    steps = 0
    last_merge = None
    while len(groups) > 1:
        top = -heap[0]
        if top < floor:
            break
        if steps >= cap:
            raise StepCapExceeded(f"joint walks exceeded {cap} steps")
        heapq.heappop(heap)
        members = groups.pop(top)
        consumed.append(top)
        nxt = top - rng.decrement(top)
        steps += 1
        other = groups.get(nxt)
        if other is None:
            groups[nxt] = members
            heapq.heappush(heap, -nxt)
        else:
            for a in members:
                for b in other:
                    pairwise[(min(a, b), max(a, b))] = nxt
            other.extend(members)
            last_merge = nxt
    classes = sorted(sorted(g) for g in groups.values())
    if len(sites) == 1:
        s_lambda = sites[0]
    elif len(groups) == 1:
        s_lambda = last_merge
    else:
        s_lambda = None
    finite = [v for v in pairwise.values() if v is not None]
    s_hat = min(finite) if finite else sites[0]
    return CoalescenceReport(tuple(sites), pairwise, s_lambda, s_hat, classes, steps, consumed)


def von_schelling_simulate(
    kernel: ImitationKernel, start_distance: int, horizon: int, rng: RandomSource
) -> int | None:
    """Distance between two walks under the rightmost-moves rule.

    Returns the first step at which the distance is zero, ``None`` if that
    does not happen within ``horizon`` steps. Draws come from the
    ``DISTANCE`` stream indexed by step number.
    """
    if start_distance < 1:
        raise ValueError("start distance must be >= 1")
    law = kernel.decrements
    d = start_distance
    for step in range(1, horizon + 1):
        d = abs(d - law.sample(rng.uniform(DISTANCE, step)))
        if d == 0:
            return step
    return None


@dataclass(frozen=True)
class TailEstimate:
    probability: float
    ci_low: float
    ci_high: float
    replicas: int
    horizon: int
    heuristic: bool = True


def _wilson(hits: int, n: int, z: float = 2.576) -> tuple[float, float]:
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def s_hat_tail_estimate(
    kernel: ImitationKernel,
    window: Iterable[int],
    threshold: int,
    horizon: int,
    replicas: int,
    rng: RandomSource,
) -> TailEstimate:
    """Monte Carlo lower estimate of ``P(some pairwise coalescence point < threshold)``.

    Only coalescences seen within ``horizon`` count, so this is a heuristic
    proxy for the approximation error of thresholded sampling.
    """
    sites = sorted(set(window))
    if threshold >= sites[0] + 1:
        raise ValueError("threshold must not exceed the window minimum")
    if replicas <= 0:
        raise ValueError("empty sample: replicas must be positive")
    hits = 0
    for r in range(replicas):
        src = RandomSource(kernel.decrements, rng.seed, r, rng.substream)
        rep = joint_coalescence(sites, horizon, src)
        if any(v is not None and v < threshold for v in rep.pairwise.values()):
            hits += 1
    lo, hi = _wilson(hits, replicas)
    return TailEstimate(hits / replicas, lo, hi, replicas, horizon)
