"""Forward boundary simulation and the three backward-walk samplers.

All samplers read ``K_n`` and ``U_n`` from a site-memoized
:class:`~imitatio.rng.RandomSource`, so a site's randomness is the same no
matter which walk reaches it first. Invariant draws use the ``INVARIANT``
stream at the landing site and regeneration draws the ``STAR`` stream at the
segment top.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
import weakref
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .coupling import DoeblinCertificate, PreconditionError, doeblin_certificate
from .invariant import invariant_distribution, p_hat
from .kernel import CoalescenceVerdict, ImitationKernel, coalescence_verdict, support_gcd
from .rng import BOUNDARY, COUPLING, INVARIANT, STAR, RandomSource
from .structure import StructureReport, Verdict, reduce_kernel, uniqueness_verdict
from .walks import StepCapExceeded, default_step_cap, joint_coalescence, s_hat_tail_estimate

ALGORITHMS = ("cftp", "eps", "doeblin", "forward", "periodic")


def _distribution_table(dist: Sequence[float]) -> list[float]:
    dist = np.asarray(dist, dtype=float)
    cum = np.cumsum(dist).tolist()
    last = int(np.flatnonzero(dist > 0)[-1])
    for j in range(last, len(cum)):
        cum[j] = math.inf
    return cum


# -- boundary conditions -----------------------------------------------------


@dataclass(frozen=True)
class Constant:
    state: int

    def value(self, site: int, rng: RandomSource) -> int:
        return self.state - 1


@dataclass(frozen=True, eq=False)
class IidFrom:
    distribution: Sequence[float]

    def __post_init__(self):
        object.__setattr__(self, "_table", _distribution_table(self.distribution))

    def value(self, site: int, rng: RandomSource) -> int:
        return bisect.bisect_right(self._table, rng.uniform(BOUNDARY, site))


@dataclass(frozen=True)
class Alternating:
    """``w_k = pattern[(k + phase) mod len(pattern)]``."""

    pattern: tuple[int, ...]
    phase: int = 0

    def value(self, site: int, rng: RandomSource) -> int:
        return self.pattern[(site + self.phase) % len(self.pattern)] - 1


@dataclass(frozen=True)
class Explicit:
    values: Mapping[int, int]
    fill: int

    def value(self, site: int, rng: RandomSource) -> int:
        return self.values.get(site, self.fill) - 1


Boundary = Constant | IidFrom | Alternating | Explicit


# -- results -------------------------------------------------------------------


@dataclass
class Replicate:
    window: tuple[int, ...]
    values: tuple[int, ...]
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.window, self.values))


@dataclass
class SampleBatch:
    """Window values (1-based states), one row per replicate."""

    window: tuple[int, ...]
    values: np.ndarray
    n_states: int
    algorithm: str
    seed: int
    diagnostics: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["replica", "site", "state"])
        for r, row in enumerate(self.values.tolist()):
            for site, state in zip(self.window, row):
                writer.writerow([r, site, state])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def diagnostics_document(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "window": list(self.window),
            "replicas": len(self.values),
            **self.extra,
            "per_replicate": self.diagnostics,
        }

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics_document(), indent=2, sort_keys=True)


# -- kernel preparation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelAnalysis:
    report: StructureReport
    invariant: np.ndarray | None
    coalescent: bool
    d: int


_ANALYSES: "weakref.WeakKeyDictionary[ImitationKernel, KernelAnalysis]" = weakref.WeakKeyDictionary()


def kernel_analysis(kernel: ImitationKernel) -> KernelAnalysis:
    cached = _ANALYSES.get(kernel)
    if cached is not None:
        return cached
    report = uniqueness_verdict(kernel)
    lam = invariant_distribution(p_hat(kernel)) if report.essential_irreducible else None
    d = support_gcd(kernel)
    reduced = reduce_kernel(kernel) if d > 1 else kernel
    coalescent = coalescence_verdict(reduced).verdict is CoalescenceVerdict.PROVEN
    out = KernelAnalysis(report, lam, coalescent, d)
    _ANALYSES[kernel] = out
    return out


def _invariant_table(kernel: ImitationKernel, invariant: Sequence[float] | None) -> list[float]:
    if invariant is None:
        lam = kernel_analysis(kernel).invariant
        if lam is None:
            raise PreconditionError(
                "kernel has several closed classes: pass an explicit invariant distribution"
            )
        invariant = lam
    if len(invariant) != kernel.n_states:
        raise ValueError("invariant distribution has the wrong length")
    return _distribution_table(invariant)


def _window(window: Iterable[int]) -> tuple[int, ...]:
    sites = tuple(sorted(set(int(n) for n in window)))
    if not sites:
        raise ValueError("window must be nonempty")
    return sites


def _propagate(kernel: ImitationKernel, rng: RandomSource, sites: Iterable[int], val: dict[int, int]) -> None:
    """Fill ``val`` for ``sites`` (increasing) by ``X_x = f_(K_x)(X_{x-K_x}, U_x)``."""
    table = kernel.coupling_table
    dec = rng.decrement
    unif = rng.uniform
    for x in sites:
        k = dec(x)
        val[x] = bisect.bisect_right(table(k)[val[x - k]], unif(COUPLING, x))


# -- forward oracle ----------------------------------------------------------------


def forward_simulate(
    kernel: ImitationKernel,
    boundary: Boundary,
    start: int,
    window: Iterable[int],
    rng: RandomSource,
) -> dict[int, int]:
    """Grow the process forward from boundary ``boundary`` fixed at sites ``<= start``.

    Returns 1-based states for every site in ``(start, max(window)]``.
    """
    sites = _window(window)
    top = sites[-1]
    if top <= start:
        raise ValueError("the window must extend beyond the boundary start")
    table = kernel.coupling_table
    dec = rng.decrement
    unif = rng.uniform
    bvalue = boundary.value
    val: dict[int, int] = {}
    for n in range(start + 1, top + 1):
        k = dec(n)
        src = n - k
        g = val[src] if src > start else bvalue(src, rng)
        val[n] = bisect.bisect_right(table(k)[g], unif(COUPLING, n))
    return {n: g + 1 for n, g in val.items()}


# -- coupling from the past ---------------------------------------------------------


def cftp_sample(
    kernel: ImitationKernel,
    window: Iterable[int],
    rng: RandomSource,
    invariant: Sequence[float] | None = None,
    step_cap: int | None = None,
) -> Replicate:
    """Exact sample on ``window``: walk back until all walks merge, draw the
    invariant law there and push values forward along the walk tree.

    Lags with gcd ``d > 1`` are handled per residue class of the window
    modulo ``d``; those classes never share a site.
    """
    sites = _window(window)
    info = kernel_analysis(kernel)
    if not info.coalescent:
        raise PreconditionError(
            "coalescence of the lag law is not proven: use the thresholded sampler (eps)"
        )
    lam = _invariant_table(kernel, invariant)
    cap = default_step_cap() if step_cap is None else step_cap
    groups: dict[int, list[int]] = {}
    for n in sites:
        groups.setdefault(n % info.d, []).append(n)
    val: dict[int, int] = {}
    visited: list[int] = []
    steps = 0
    merge_sites = []
    for group in groups.values():
        rep = joint_coalescence(group, None, rng, step_cap=cap - steps)
        steps += rep.steps
        s = rep.s_lambda
        merge_sites.append(s)
        val[s] = bisect.bisect_right(lam, rng.uniform(INVARIANT, s))
        visited.extend(rep.consumed_sites)
    visited.sort()
    _propagate(kernel, rng, visited, val)
    return Replicate(
        sites,
        tuple(val[n] + 1 for n in sites),
        {"algorithm": "cftp", "s_lambda": min(merge_sites), "steps": steps},
    )


# -- thresholded sampling -----------------------------------------------------------


def eps_perfect_sample(
    kernel: ImitationKernel,
    window: Iterable[int],
    threshold: int,
    rng: RandomSource,
    invariant: Sequence[float] | None = None,
    step_cap: int | None = None,
) -> Replicate:
    """Walk every window site down to ``threshold``, draw independent invariant
    values at the distinct landing sites and push them forward.

    The diagnostics flag ``merged`` is true when all walks share one landing
    site, i.e. every pair coalesced above the threshold.
    """
    sites = _window(window)
    if threshold >= sites[0]:
        raise ValueError("threshold must lie below the window")
    lam = _invariant_table(kernel, invariant)
    cap = default_step_cap() if step_cap is None else step_cap
    dec = rng.decrement
    visited: set[int] = set()
    landings: set[int] = set()
    steps = 0
    for n in reversed(sites):
        pos = n
        while pos > threshold and pos not in visited:
            if steps >= cap:
                raise StepCapExceeded(f"walks exceeded {cap} steps")
            visited.add(pos)
            pos -= dec(pos)
            steps += 1
        if pos <= threshold:
            landings.add(pos)
    val = {m: bisect.bisect_right(lam, rng.uniform(INVARIANT, m)) for m in landings}
    _propagate(kernel, rng, sorted(visited), val)
    return Replicate(
        sites,
        tuple(val[n] + 1 for n in sites),
        {
            "algorithm": "eps",
            "threshold": threshold,
            "landing_sites": len(landings),
            "merged": len(landings) == 1,
            "steps": steps,
        },
    )


# -- regeneration on certificate words ---------------------------------------------

_LEAF = object()


def _word_trie(cert: DoeblinCertificate) -> dict:
    root: dict = {}
    for word in cert.distinct_words:
        node = root
        for a in word[:-1]:
            node = node.setdefault(a, {})
        node[word[-1]] = _LEAF
    return root


_TRIES: "weakref.WeakKeyDictionary[DoeblinCertificate, dict]" = weakref.WeakKeyDictionary()


def doeblin_sample(
    kernel: ImitationKernel,
    window: Iterable[int],
    cert: DoeblinCertificate,
    rng: RandomSource,
    step_cap: int | None = None,
) -> Replicate:
    """Exact sample via regeneration on certificate words.

    The rightmost active walk moves. While it is more than ``n0_bar`` above
    every other active walk, a candidate segment may start at its current
    site; the candidate follows the word trie and is accepted when a full
    certificate word is read. Each accepted segment gets its own ``U*``;
    ``U* < epsilon_star`` fixes the segment top to the target state and ends
    the walk. A failed candidate is abandoned and a new one can only start
    at a site reached afterwards, so each candidate start depends on sites
    above it alone. With lag gcd ``d > 1`` each residue class of the window
    modulo ``d`` is handled separately.
    """
    sites = _window(window)
    cap = default_step_cap() if step_cap is None else step_cap
    trie = _TRIES.get(cert)
    if trie is None:
        trie = _TRIES[cert] = _word_trie(cert)
    n0 = cert.n0_bar
    eps_star = cert.epsilon_star
    target = cert.target - 1
    dec = rng.decrement

    nxt: dict[int, int] = {}
    segments: dict[int, tuple[int, float]] = {}
    stopped: set[int] = set()
    steps = 0
    # walks in different residue classes modulo the lag gcd never meet; their
    # processes are independent, so each class runs on its own
    d = kernel_analysis(kernel).d
    for residue in sorted({n % d for n in sites}):
        active = [n for n in sites if n % d == residue]
        while active:
            m = active.pop()
            below = active[-1] if active else -math.inf
            pos = m
            node = None
            top = pos
            while True:
                if node is None and pos - below > n0:
                    node, top = trie, pos
                if steps >= cap:
                    raise StepCapExceeded(f"walks exceeded {cap} steps")
                k = dec(pos)
                steps += 1
                new = pos - k
                nxt[pos] = new
                if node is not None:
                    child = node.get(k)
                    if child is _LEAF:
                        ustar = rng.uniform(STAR, top)
                        segments[top] = (new, ustar)
                        node = None
                        if ustar < eps_star:
                            stopped.add(top)
                            break
                    else:
                        node = child
                pos = new
                if pos <= below:
                    i = bisect.bisect_left(active, pos)
                    if i == len(active) or active[i] != pos:
                        active.insert(i, pos)
                    break

    table = kernel.coupling_table
    unif = rng.uniform
    star_table, star_order = cert.star_table, cert.star_order
    val: dict[int, int] = {}
    for n in sites:
        chain = []
        y = n
        while y not in val:
            if y in stopped:
                val[y] = target
                break
            chain.append(y)
            seg = segments.get(y)
            y = seg[0] if seg is not None else nxt[y]
        for z in reversed(chain):
            seg = segments.get(z)
            if seg is not None:
                val[z] = star_order[bisect.bisect_right(star_table[val[seg[0]]], seg[1])]
            else:
                k = dec(z)
                val[z] = bisect.bisect_right(table(k)[val[z - k]], unif(COUPLING, z))
    return Replicate(
        sites,
        tuple(val[n] + 1 for n in sites),
        {
            "algorithm": "doeblin",
            "steps": steps,
            "segments": len(segments),
            "deepest_regeneration": min(stopped),
        },
    )


# -- periodic kernels ----------------------------------------------------------------


def stationary_sample_periodic(
    kernel: ImitationKernel,
    window: Iterable[int],
    rng: RandomSource,
    threshold: int | None = None,
) -> Replicate:
    """Sample the unique stationary law of an irreducible periodic kernel."""
    info = kernel_analysis(kernel)
    if info.report.verdict is not Verdict.NON_UNIQUE_PERIODIC:
        raise PreconditionError(
            f"periodic sampler needs a NonUniquePeriodic kernel, verdict is {info.report.verdict.value}"
        )
    if info.coalescent and threshold is None:
        return cftp_sample(kernel, window, rng, info.invariant)
    if threshold is None:
        raise PreconditionError("coalescence not proven: a threshold is required")
    return eps_perfect_sample(kernel, window, threshold, rng, info.invariant)


# -- batches -------------------------------------------------------------------------


def sample_batch(
    kernel: ImitationKernel,
    window: Iterable[int],
    algorithm: str,
    replicas: int,
    seed: int,
    *,
    threshold: int | None = None,
    invariant: Sequence[float] | None = None,
    cert: DoeblinCertificate | None = None,
    boundary: Boundary | None = None,
    start: int | None = None,
    step_cap: int | None = None,
    error_replicas: int = 1000,
) -> SampleBatch:
    """Run ``replicas`` independent replicates; replica ``r`` uses ``RandomSource(seed, r)``.

    For ``eps`` the batch also carries a heuristic bound on the total
    variation error, estimated from ``error_replicas`` independent joint walk
    families (substream 1, so the samples themselves are unaffected).
    """
    sites = _window(window)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    law = kernel.decrements
    extra: dict = {}
    if algorithm == "cftp":
        run = lambda rng: cftp_sample(kernel, sites, rng, invariant, step_cap)  # noqa: E731
    elif algorithm == "eps":
        if threshold is None:
            raise ValueError("the eps sampler needs a threshold")
        run = lambda rng: eps_perfect_sample(kernel, sites, threshold, rng, invariant, step_cap)  # noqa: E731
        extra["threshold"] = threshold
        if error_replicas > 0:
            est = s_hat_tail_estimate(
                kernel, sites, threshold, 2 * (sites[0] - threshold), error_replicas,
                RandomSource(law, seed, 0, substream=1),
            )
            extra["error_estimate"] = {
                "p_s_hat_below_threshold": est.probability,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "replicas": est.replicas,
                "horizon": est.horizon,
                "heuristic": True,
            }
    elif algorithm == "doeblin":
        cert = cert if cert is not None else doeblin_certificate(kernel)
        run = lambda rng: doeblin_sample(kernel, sites, cert, rng, step_cap)  # noqa: E731
        extra["certificate"] = cert.to_dict()
    elif algorithm == "forward":
        if boundary is None or start is None:
            raise ValueError("the forward oracle needs a boundary and a start site")

        def run(rng):
            out = forward_simulate(kernel, boundary, start, sites, rng)
            return Replicate(sites, tuple(out[n] for n in sites), {"algorithm": "forward", "start": start})

        extra["start"] = start
    elif algorithm == "periodic":
        run = lambda rng: stationary_sample_periodic(kernel, sites, rng, threshold)  # noqa: E731
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    values = np.empty((replicas, len(sites)), dtype=np.int32)
    diags = []
    for r in range(replicas):
        rep = run(RandomSource(law, seed, r))
        values[r] = rep.values
        rep.diagnostics["seed"] = seed
        rep.diagnostics["replica"] = r
        diags.append(rep.diagnostics)
    return SampleBatch(sites, values, kernel.n_states, algorithm, seed, diags, extra)
