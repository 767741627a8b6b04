"""Domain types shared by every simulator module: requests, runtime
bookkeeping, lifecycle transitions, and SLO arithmetic.

Simulated time is integer microseconds so that replays are bit-exact;
all public durations and timestamps carry a ``_us`` suffix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional

if TYPE_CHECKING:
    from .estimation import LengthEstimate

US_PER_MS = 1_000
US_PER_S = 1_000_000


def to_us(ms_value: float) -> int:
    """Convert milliseconds to integer microseconds, rounding half up."""
    return math.floor(ms_value * US_PER_MS + 0.5)


class Lifecycle(Enum):
    WAITING = "waiting"
    RUNNING = "running"
    PREEMPTED = "preempted"
    COMPLETED = "completed"


class Strategy(Enum):
    SWAP = "swap"
    RECOMPUTE = "recompute"


_LEGAL_TRANSITIONS = {
    (Lifecycle.WAITING, Lifecycle.RUNNING),
    (Lifecycle.RUNNING, Lifecycle.PREEMPTED),
    (Lifecycle.RUNNING, Lifecycle.COMPLETED),
    (Lifecycle.PREEMPTED, Lifecycle.RUNNING),
}


@dataclass
class Request:
    """One serving request; ``true_output_len`` is oracle-only and must not
    be read by policy code (policies see :class:`ReqView` snapshots)."""

    id: int
    arrival_us: int
    prompt_len: int
    true_output_len: int
    slo_ttft_us: int
    slo_tbt_us: int
    state: Lifecycle = Lifecycle.WAITING

    def __post_init__(self) -> None:
        if self.arrival_us < 0:
            raise ValueError(f"request {self.id}: arrival_us < 0")
        if self.prompt_len < 1:
            raise ValueError(f"request {self.id}: prompt_len must be >= 1")
        if self.true_output_len < 1:
            raise ValueError(f"request {self.id}: true_output_len must be >= 1")
        if self.slo_ttft_us <= 0:
            raise ValueError(f"request {self.id}: slo_ttft_us must be > 0")
        if self.slo_tbt_us <= 0:
            raise ValueError(f"request {self.id}: slo_tbt_us must be > 0")


@dataclass
class RequestRuntime:
    """Mutable per-request bookkeeping owned by the engine loop."""

    generated: int = 0
    allocated_kvc: int = 0
    used_kvc: int = 0
    first_token_at_us: Optional[int] = None
    last_token_at_us: Optional[int] = None
    max_tbt_us: int = 0
    preemption_count: int = 0
    preemption_time_us: int = 0
    estimate: Optional["LengthEstimate"] = None
    # engine plumbing
    kv_need: int = 0                 # KV tokens that must exist before next emit
    prefill_done: int = 0
    ready_at_us: int = 0             # resume barrier after a preemption charge
    preempt_started_us: int = 0
    swap_out_done_us: int = 0
    last_strategy: Optional[Strategy] = None
    first_start_us: Optional[int] = None
    completion_us: Optional[int] = None
    token_times_us: List[int] = field(default_factory=list)


def remaining_ttft(req: Request, rt: RequestRuntime, now_us: int) -> int:
    """Signed time left to the TTFT deadline; negative means violated."""
    if rt.first_token_at_us is not None:
        raise ValueError(
            f"request {req.id} already emitted its first token; TTFT slack undefined"
        )
    return req.slo_ttft_us - (now_us - req.arrival_us)


def remaining_tbt(req: Request, rt: RequestRuntime, now_us: int) -> int:
    """Signed time left before the next token breaches the TBT deadline."""
    if rt.last_token_at_us is None:
        raise ValueError(f"request {req.id} has no emitted token; TBT slack undefined")
    return req.slo_tbt_us - (now_us - rt.last_token_at_us)


def transition(
    req: Request,
    rt: RequestRuntime,
    new_state: Lifecycle,
    strategy: Optional[Strategy] = None,
) -> Request:
    """Apply a lifecycle transition, rejecting illegal ones."""
    if (req.state, new_state) not in _LEGAL_TRANSITIONS:
        raise ValueError(
            f"request {req.id}: illegal transition {req.state.value} -> {new_state.value}"
        )
    if new_state is Lifecycle.PREEMPTED:
        if strategy is None:
            raise ValueError(f"request {req.id}: preemption requires a strategy")
        rt.preemption_count += 1
        rt.last_strategy = strategy
    req.state = new_state
    return req
