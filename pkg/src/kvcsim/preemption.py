"""Preemption support: bucketed victim ordering and fitted latency models
for the swap-versus-recompute decision.

Victims are ranked by TBT-SLO bucket descending (loose deadlines first),
remaining-token bucket descending (most work left first), raw KVC
occupancy ascending, then request id. The latency models are least-squares
fits whose crossover (the sweet spot) decides the eviction strategy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .core import US_PER_S, Strategy


@dataclass(frozen=True)
class BucketConfig:
    # TBT-SLO edges in microseconds; values beyond the ends fall into open
    # bottom/top buckets.
    slo_edges_us: Tuple[int, ...] = (
        int(0.05 * US_PER_S),
        int(0.2 * US_PER_S),
        int(0.5 * US_PER_S),
        int(2.0 * US_PER_S),
    )
    token_step: int = 128

    def __post_init__(self) -> None:
        if list(self.slo_edges_us) != sorted(set(self.slo_edges_us)):
            raise ValueError("slo_edges_us must be strictly increasing")
        if self.token_step < 1:
            raise ValueError("token_step must be >= 1")


@dataclass(frozen=True)
class VictimInfo:
    req_id: int
    slo_tbt_us: int
    remaining_tokens: int
    occupancy_tokens: int


def _slo_bucket(slo_tbt_us: int, cfg: BucketConfig) -> int:
    idx = 0
    for edge in cfg.slo_edges_us:
        if slo_tbt_us >= edge:
            idx += 1
    return idx


def victim_key(
    slo_tbt_us: int,
    remaining_tokens: int,
    occupancy_tokens: int,
    req_id: int,
    cfg: BucketConfig,
) -> Tuple[int, int, int, int]:
    """Sort key; the minimal key is the first victim."""
    slo_b = _slo_bucket(slo_tbt_us, cfg)
    rem_b = max(0, remaining_tokens) // cfg.token_step
    return (-slo_b, -rem_b, occupancy_tokens, req_id)


def order_victims(candidates: Iterable[VictimInfo], cfg: BucketConfig) -> List[VictimInfo]:
    """Total preemption order; first element is preempted first."""
    return sorted(
        candidates,
        key=lambda v: victim_key(
            v.slo_tbt_us, v.remaining_tokens, v.occupancy_tokens, v.req_id, cfg
        ),
    )


# ---------------------------------------------------------------------------
# latency models


@dataclass(frozen=True)
class SwapModel:
    """L_s(S) = gamma_s * S + delta_s, milliseconds."""

    gamma_s: float
    delta_s: float

    def __post_init__(self) -> None:
        if self.gamma_s <= 0:
            raise ValueError("gamma_s must be > 0")
        if self.delta_s < 0:
            raise ValueError("delta_s must be >= 0")

    def predict(self, seq_len: float) -> float:
        return self.gamma_s * seq_len + self.delta_s


@dataclass(frozen=True)
class RecomputeModel:
    """L_r(S) = alpha_r * S^beta_r + kappa_r * S + eps_r, milliseconds."""

    alpha_r: float
    beta_r: float
    kappa_r: float
    eps_r: float

    def __post_init__(self) -> None:
        if self.alpha_r < 0:
            raise ValueError("alpha_r must be >= 0")
        if self.beta_r <= 1:
            raise ValueError("beta_r must be > 1")
        if self.predict(1) <= 0:
            raise ValueError("model must predict positive latency for S >= 1")

    def predict(self, seq_len: float) -> float:
        return self.alpha_r * seq_len**self.beta_r + self.kappa_r * seq_len + self.eps_r


@dataclass(frozen=True)
class SweetSpot:
    s_star: int


def fit_swap(samples: Sequence[Tuple[float, float]]) -> SwapModel:
    """Ordinary least squares line over (seq_len, latency_ms) samples."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    s = np.asarray([p[0] for p in samples], dtype=float)
    y = np.asarray([p[1] for p in samples], dtype=float)
    if np.unique(s).size < 2:
        raise ValueError("samples are degenerate: constant seq_len")
    design = np.column_stack([s, np.ones_like(s)])
    (gamma, delta), *_ = np.linalg.lstsq(design, y, rcond=None)
    if gamma <= 0:
        raise ValueError(f"fitted swap slope {gamma:.3g} is not positive")
    return SwapModel(gamma_s=float(gamma), delta_s=float(max(0.0, delta)))


_BETA_GRID = [round(1.2 + 0.01 * k, 2) for k in range(181)]  # 1.20 .. 3.00


def fit_recompute(samples: Sequence[Tuple[float, float]]) -> RecomputeModel:
    """Grid search the exponent, solving the linear coefficients per
    candidate by relative-error-weighted least squares; return the
    minimum-residual model."""
    if len(samples) < 8:
        raise ValueError("need at least 8 samples")
    s = np.asarray([p[0] for p in samples], dtype=float)
    y = np.asarray([p[1] for p in samples], dtype=float)
    if np.unique(s).size < 2:
        raise ValueError("samples are degenerate: constant seq_len")
    if np.any(y <= 0):
        raise ValueError("latencies must be positive")
    weights = 1.0 / y  # multiplicative noise becomes homoscedastic
    best = None
    best_resid = np.inf
    for beta in _BETA_GRID:
        design = np.column_stack([s**beta, s, np.ones_like(s)])
        coeffs, *_ = np.linalg.lstsq(design * weights[:, None], np.ones_like(y), rcond=None)
        alpha, kappa, eps = (float(c) for c in coeffs)
        if alpha < 0 or alpha + kappa + eps <= 0:
            continue
        pred = design @ np.array([alpha, kappa, eps])
        if np.any(pred <= 0):
            continue
        resid = float(np.sum(((pred - y) * weights) ** 2))
        if resid < best_resid:
            best_resid = resid
            best = (alpha, beta, kappa, eps)
    if best is None:
        raise ValueError("no admissible fit found on the exponent grid")
    alpha, beta, kappa, eps = best
    return RecomputeModel(alpha_r=alpha, beta_r=beta, kappa_r=kappa, eps_r=eps)


def sweet_spot(
    rec: RecomputeModel, swp: SwapModel, s_max: int = 1_000_000
) -> SweetSpot:
    """Largest sequence length where recompute is still no slower than swap,
    found by integer bisection to +-1 token."""
    def diff(s: float) -> float:
        return rec.predict(s) - swp.predict(s)

    lo, hi = 1, s_max
    if diff(lo) > 0:
        raise ValueError("no crossover: swap dominates over the whole range")
    if diff(hi) <= 0:
        raise ValueError("no crossover: recompute dominates over the whole range")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if diff(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return SweetSpot(s_star=lo)


def choose_strategy(seq_len: int, spot: SweetSpot) -> Strategy:
    """Swap strictly above the sweet spot, recompute at or below it."""
    return Strategy.SWAP if seq_len > spot.s_star else Strategy.RECOMPUTE
