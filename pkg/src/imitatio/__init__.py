"""Imitation processes with long memory: structure, invariant laws and exact sampling."""

from .coupling import DoeblinCertificate, PreconditionError, apply_coupling, doeblin_certificate, star_coupling
from .invariant import invariant_distribution, p_hat
from .kernel import (
    CoalescenceVerdict,
    ImitationKernel,
    KernelSpecError,
    coalescence_verdict,
    k_identity,
    k_periodic,
    k_unique,
    parse_kernel_spec,
)
from .rng import RandomSource
from .samplers import (
    Alternating,
    Constant,
    Explicit,
    IidFrom,
    SampleBatch,
    cftp_sample,
    doeblin_sample,
    eps_perfect_sample,
    forward_simulate,
    sample_batch,
    stationary_sample_periodic,
)
from .stats import cross_algorithm_report, empirical_window_distribution, gof_invariant, tv_distance
from .structure import Verdict, uniqueness_verdict, word_matrix

__version__ = "0.1.0"

__all__ = [
    "Alternating",
    "CoalescenceVerdict",
    "Constant",
    "DoeblinCertificate",
    "Explicit",
    "IidFrom",
    "ImitationKernel",
    "KernelSpecError",
    "PreconditionError",
    "RandomSource",
    "SampleBatch",
    "Verdict",
    "apply_coupling",
    "cftp_sample",
    "coalescence_verdict",
    "cross_algorithm_report",
    "doeblin_certificate",
    "doeblin_sample",
    "empirical_window_distribution",
    "eps_perfect_sample",
    "forward_simulate",
    "gof_invariant",
    "invariant_distribution",
    "k_identity",
    "k_periodic",
    "k_unique",
    "p_hat",
    "parse_kernel_spec",
    "sample_batch",
    "star_coupling",
    "stationary_sample_periodic",
    "tv_distance",
    "uniqueness_verdict",
    "word_matrix",
]
