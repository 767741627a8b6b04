"""Ground-truth synthetic latency models.

The engine charges these for iterations, swaps, and recomputations; the
same models generate the profiling samples the decision regressors are
fitted against. Defaults put the swap/recompute crossover at 4000 tokens.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .preemption import RecomputeModel, SwapModel


@dataclass(frozen=True)
class IterationCost:
    """Batch latency grows linearly with processed tokens."""

    base_ms: float = 5.0
    per_token_ms: float = 0.01

    def __post_init__(self) -> None:
        if self.base_ms < 0:
            raise ValueError("base_ms must be >= 0")
        if self.per_token_ms <= 0:
            raise ValueError("per_token_ms must be > 0")


@dataclass(frozen=True)
class TruthCosts:
    swap_true: SwapModel
    recompute_true: RecomputeModel

    @staticmethod
    def default() -> "TruthCosts":
        return TruthCosts(
            swap_true=SwapModel(gamma_s=0.002, delta_s=8.0),
            recompute_true=RecomputeModel(alpha_r=1e-6, beta_r=2.0, kappa_r=0.0, eps_r=0.0),
        )


@dataclass(frozen=True)
class ProfileRow:
    seq_len: int
    swap_ms: float
    recompute_ms: float


def iteration_latency(model: IterationCost, batch_tokens: int) -> float:
    """Milliseconds to process one batch."""
    if batch_tokens < 0:
        raise ValueError("batch_tokens must be >= 0")
    return model.base_ms + model.per_token_ms * batch_tokens


def swap_latency(truth: TruthCosts, seq_len: int) -> float:
    """Round-trip swap cost in milliseconds; the engine splits it 50/50
    between eviction and resume."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    return truth.swap_true.predict(seq_len)


def recompute_latency(truth: TruthCosts, seq_len: int) -> float:
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    return truth.recompute_true.predict(seq_len)


def sample_profile(
    truth: TruthCosts,
    s_values: Sequence[int],
    noise_sigma_rel: float,
    rng: np.random.Generator,
) -> List[ProfileRow]:
    """Evaluate the truth models at each length, with multiplicative
    Gaussian noise of the given relative sigma."""
    if len(s_values) == 0:
        raise ValueError("s_values must be non-empty")
    if noise_sigma_rel < 0:
        raise ValueError("noise_sigma_rel must be >= 0")
    rows: List[ProfileRow] = []
    for s in s_values:
        swap_ms = swap_latency(truth, s)
        rec_ms = recompute_latency(truth, s)
        if noise_sigma_rel > 0:
            swap_ms *= 1.0 + float(rng.normal(0.0, noise_sigma_rel))
            rec_ms *= 1.0 + float(rng.normal(0.0, noise_sigma_rel))
        rows.append(ProfileRow(seq_len=int(s), swap_ms=swap_ms, recompute_ms=rec_ms))
    return rows
