"""Stability-weighted decoding engine for masked diffusion sequence models."""

from .core import (
    EPS,
    MASK,
    DecodePolicy,
    DecodeTrace,
    InternalError,
    InvalidArgumentError,
    MaskSchedule,
    ProbTable,
    SequenceState,
    StepRecord,
    TraceParseError,
    TransportError,
    derive_seed,
    entropy,
    kl_divergence,
    new_fully_masked,
    splitmix64,
    state_from_tokens,
)
from .decoder import (
    DecodeAbortedError,
    DecodeOutcome,
    decode,
    read_trace,
    replay_trace,
    traces_equal,
    write_trace,
)
from .denoiser import (
    ExactMarkovDenoiser,
    ExternalDenoiser,
    MarkovModel,
    PerturbationProfile,
    PerturbedDenoiser,
    exact_marginals,
    external_marginals,
    open_endpoint,
    perturbed_marginals,
)
from .scoring import (
    HistoryCache,
    ScoreVector,
    base_scores,
    score_confidence,
    score_margin,
    score_neg_entropy,
    swd_modulate,
    temporal_instability,
)
from .selection import (
    SelectionResult,
    apply_block_constraint,
    select_eb,
    select_random_schedule,
    select_threshold,
    select_topk,
)

__version__ = "0.1.0"
