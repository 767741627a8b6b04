"""Synthetic output-length predictor and confidence-based padding.

The predictor inverts a configurable error model around the oracle length
(predicted = true - error) and reports the enclosing bin plus a deviation
direction. Padding is a one-sided Hoeffding bound over the bin width,
optionally driven by an arrival-rate-adaptive confidence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np


class Direction(Enum):
    UNDER = "under"
    OVER = "over"


@dataclass
class PredictorConfig:
    bin_width: int = 50
    direction_accuracy: float = 1.0
    error_dist: str = "zero"          # zero | uniform | normal
    error_scale: float = 0.0
    fixed_padding: Optional[int] = None  # sweep knob: bypasses the bound
    seed: int = 0

    def __post_init__(self) -> None:
        if self.bin_width < 1:
            raise ValueError("bin_width must be >= 1")
        if not 0.0 <= self.direction_accuracy <= 1.0:
            raise ValueError("direction_accuracy must be in [0, 1]")
        if self.error_dist not in ("zero", "uniform", "normal"):
            raise ValueError(f"unknown error_dist {self.error_dist!r}")
        if self.error_scale < 0:
            raise ValueError("error_scale must be >= 0")
        if self.fixed_padding is not None and self.fixed_padding < 0:
            raise ValueError("fixed_padding must be >= 0")


@dataclass
class ConfidencePolicy:
    alpha: float = 8.0
    beta: float = 100.0
    clamp_lo: float = 0.5
    clamp_hi: float = 0.99

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 < self.clamp_lo < self.clamp_hi < 1.0:
            raise ValueError("clamps must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class LengthEstimate:
    predicted_len: int
    range_lo: int
    range_hi: int
    direction: Direction
    confidence: float
    padding: int
    estimated_len: int


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _sample_error(cfg: PredictorConfig, rng: np.random.Generator) -> int:
    if cfg.error_dist == "zero":
        return 0
    if cfg.error_dist == "uniform":
        s = int(cfg.error_scale)
        return int(rng.integers(-s, s + 1)) if s > 0 else 0
    return _round_half_up(float(rng.normal(0.0, cfg.error_scale)))


def predict(
    true_output_len: int, cfg: PredictorConfig, rng: np.random.Generator
) -> Tuple[int, Tuple[int, int], Direction]:
    """Simulate one prediction: value, enclosing bin, deviation direction."""
    if true_output_len < 1:
        raise ValueError("true_output_len must be >= 1")
    error = _sample_error(cfg, rng)
    predicted = max(1, true_output_len - error)
    w = cfg.bin_width
    k = (predicted + w - 1) // w  # bins are ((k-1)*w, k*w]
    lo, hi = (k - 1) * w + 1, k * w
    direction = Direction.UNDER if true_output_len >= predicted else Direction.OVER
    if cfg.direction_accuracy < 1.0 and rng.random() < 1.0 - cfg.direction_accuracy:
        direction = Direction.OVER if direction is Direction.UNDER else Direction.UNDER
    return predicted, (lo, hi), direction


def adaptive_confidence(policy: ConfidencePolicy, arrival_rate: float) -> float:
    """Confidence that relaxes as load grows: clamp(alpha / (1 + beta*rate))."""
    if arrival_rate < 0:
        raise ValueError("arrival_rate must be >= 0")
    raw = policy.alpha / (1.0 + policy.beta * arrival_rate)
    return min(policy.clamp_hi, max(policy.clamp_lo, raw))


def hoeffding_padding(range_width: int, confidence: float) -> int:
    """Tokens to add so P(truth exceeds estimate) <= 1 - confidence, given the
    deviation is bounded by range_width; capped at range_width since larger
    padding is provably wasted."""
    if range_width < 0:
        raise ValueError("range_width must be >= 0")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    raw = range_width * math.sqrt(-math.log(1.0 - confidence) / 2.0)
    return min(range_width, _round_half_up(raw))


def apply_padding(predicted_len: int, padding: int, direction: Direction) -> int:
    """Pad toward the reported deviation side, never below one token."""
    if padding < 0:
        raise ValueError("padding must be >= 0")
    if direction is Direction.UNDER:
        return predicted_len + padding
    return max(1, predicted_len - padding)


def make_estimate(
    true_output_len: int,
    cfg: PredictorConfig,
    confidence: float,
    rng: np.random.Generator,
) -> LengthEstimate:
    """Full prediction pipeline for one request."""
    predicted, (lo, hi), direction = predict(true_output_len, cfg, rng)
    if cfg.fixed_padding is not None:
        padding = cfg.fixed_padding
    else:
        padding = hoeffding_padding(hi - lo, confidence)
    estimated = apply_padding(predicted, padding, direction)
    return LengthEstimate(
        predicted_len=predicted,
        range_lo=lo,
        range_hi=hi,
        direction=direction,
        confidence=confidence,
        padding=padding,
        estimated_len=estimated,
    )
