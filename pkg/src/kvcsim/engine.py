"""Discrete-event serving loop.

Time advances one batch iteration at a time; iteration length, swap cost,
and recompute cost all come from the analytic models, never from hardware.
The engine owns every piece of mutable state.  Each iteration it snapshots
the live requests, asks the policy planner for a BatchPlan, applies the plan
atomically, then advances the clock and emits tokens.

Preemption charges:
- swap: the round-trip cost splits evenly; the out half runs from the
  preemption instant, the in half after readmission.  The KVC region is
  released at the preemption instant.
- recompute: KV is rebuilt at readmission and charged once as a resume
  barrier from the cost model, not through the token budget.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    US_PER_S,
    Lifecycle,
    Request,
    RequestRuntime,
    Strategy,
    remaining_tbt,
    remaining_ttft,
    to_us,
    transition,
)
from .costmodel import (
    IterationCost,
    TruthCosts,
    iteration_latency,
    recompute_latency,
    swap_latency,
)
from .estimation import (
    ConfidencePolicy,
    PredictorConfig,
    adaptive_confidence,
    make_estimate,
)
from .kvc import BlockPool, Grant
from .scheduler import (
    PlannerInputs,
    PlanMember,
    ReqView,
    SchedulerConfig,
    _cached_sweet_spot,
    plan_batch,
)
from .preemption import choose_strategy

_NO_PROGRESS_LIMIT = 1_000_000


@dataclass
class EngineConfig:
    capacity_tokens: int = 16_384
    reserved_blocks: int = 8
    allow_stacking: bool = False
    sched: SchedulerConfig = field(default_factory=SchedulerConfig)
    iter_cost: IterationCost = field(default_factory=IterationCost)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    confidence: ConfidencePolicy = field(default_factory=ConfidencePolicy)
    fixed_confidence: Optional[float] = None
    truth: TruthCosts = field(default_factory=TruthCosts.default)
    horizon_factor: int = 10
    validate_every: int = 0  # pool invariant checks every k iterations
    record_events: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.capacity_tokens < 1:
            raise ValueError("capacity_tokens must be >= 1")
        if self.horizon_factor < 1:
            raise ValueError("horizon_factor must be >= 1")
        if self.fixed_confidence is not None and not 0.0 < self.fixed_confidence < 1.0:
            raise ValueError("fixed_confidence must be in (0, 1)")
        if self.validate_every < 0:
            raise ValueError("validate_every must be >= 0")


@dataclass
class MetricsReport:
    policy: str
    seed: int
    num_requests: int
    completed: int
    makespan_us: int
    ttft_us: Dict[str, float]
    tbt_us: Dict[str, float]
    ttft_attainment: float
    tbt_attainment: float
    normalized_us_per_token: Dict[str, float]
    preemption_total: int
    preempted_requests: int
    preemption_time_us: Dict[str, float]
    throughput_rps: float
    throughput_tps: float
    kvc_utilization_mean: float
    kvc_fragmentation_mean: float
    waiting_us_mean: float
    execution_us_mean: float
    preemption_us_mean: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _pct(values: Sequence[float]) -> Dict[str, float]:
    if not values:
        return {"p50": 0.0, "p90": 0.0, "p99": 0.0, "max": 0.0, "mean": 0.0}
    arr = np.asarray(values, dtype=float)
    return {
        "p50": float(np.percentile(arr, 50)),
        "p90": float(np.percentile(arr, 90)),
        "p99": float(np.percentile(arr, 99)),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
    }


def compute_metrics(
    *,
    requests: Dict[int, Request],
    runtimes: Dict[int, RequestRuntime],
    policy: str,
    seed: int,
    makespan_us: int,
    capacity_tokens: int,
    samples: Sequence[Tuple[int, int]],
) -> MetricsReport:
    """Aggregate per-request outcomes.

    Latency percentiles cover completed requests; attainment fractions use
    every request, so anything that never finished counts as a violation.
    Utilization samples are (footprint, used) pairs taken once per iteration.
    """
    n = len(requests)
    done = [rid for rid, r in requests.items() if r.state is Lifecycle.COMPLETED]

    ttfts, gaps_all, normalized = [], [], []
    waiting, execution, preempt_decomp = [], [], []
    ttft_ok = tbt_ok = 0
    for rid, req in requests.items():
        rt = runtimes[rid]
        gaps = [b - a for a, b in zip(rt.token_times_us, rt.token_times_us[1:])]
        if rt.first_token_at_us is not None:
            if rt.first_token_at_us - req.arrival_us <= req.slo_ttft_us:
                ttft_ok += 1
        if req.state is Lifecycle.COMPLETED:
            if all(g <= req.slo_tbt_us for g in gaps):
                tbt_ok += 1
            ttfts.append(rt.first_token_at_us - req.arrival_us)
            gaps_all.extend(gaps)
            normalized.append(
                (rt.completion_us - req.arrival_us) / req.true_output_len
            )
            waiting.append(rt.first_start_us - req.arrival_us)
            preempt_decomp.append(rt.preemption_time_us)
            execution.append(
                rt.completion_us - rt.first_start_us - rt.preemption_time_us
            )

    preempted = [rt for rt in runtimes.values() if rt.preemption_count > 0]
    total_preempt = sum(rt.preemption_count for rt in runtimes.values())
    preempt_times = [rt.preemption_time_us for rt in preempted]

    makespan_s = makespan_us / US_PER_S if makespan_us > 0 else 0.0
    generated_total = sum(rt.generated for rt in runtimes.values())

    if samples:
        util = float(np.mean([fp / capacity_tokens for fp, _ in samples]))
        frag = float(np.mean([(fp - used) / capacity_tokens for fp, used in samples]))
    else:
        util = frag = 0.0

    def mean(xs: Sequence[float]) -> float:
        return float(np.mean(xs)) if xs else 0.0

    return MetricsReport(
        policy=policy,
        seed=seed,
        num_requests=n,
        completed=len(done),
        makespan_us=makespan_us,
        ttft_us=_pct(ttfts),
        tbt_us=_pct(gaps_all),
        ttft_attainment=ttft_ok / n if n else 0.0,
        tbt_attainment=tbt_ok / n if n else 0.0,
        normalized_us_per_token=_pct(normalized),
        preemption_total=total_preempt,
        preempted_requests=len(preempted),
        preemption_time_us=_pct(preempt_times),
        throughput_rps=len(done) / makespan_s if makespan_s else 0.0,
        throughput_tps=generated_total / makespan_s if makespan_s else 0.0,
        kvc_utilization_mean=util,
        kvc_fragmentation_mean=frag,
        waiting_us_mean=mean(waiting),
        execution_us_mean=mean(execution),
        preemption_us_mean=mean(preempt_decomp),
    )


def write_events_jsonl(events: Sequence[dict], path: str) -> None:
    """One JSON object per line, keys sorted, so replays diff byte-for-byte."""
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


class Engine:
    """Drives one trace under one policy until completion or the horizon."""

    def __init__(self, requests: Sequence[Request], cfg: EngineConfig):
        ids = [r.id for r in requests]
        if len(set(ids)) != len(ids):
            raise ValueError("request ids must be unique")
        self.cfg = cfg
        self.requests: Dict[int, Request] = {r.id: r for r in requests}
        self.runtimes: Dict[int, RequestRuntime] = {
            r.id: RequestRuntime(kv_need=r.prompt_len) for r in requests
        }
        self.pool = BlockPool(
            capacity=cfg.capacity_tokens,
            block_size=cfg.sched.small_block_b,
            reserved_blocks=cfg.reserved_blocks,
            buffer_b=cfg.sched.buffer_b,
            allow_stacking=cfg.allow_stacking,
        )
        ordered = sorted(requests, key=lambda r: (r.arrival_us, r.id))
        self._pending = deque(ordered)
        self._live: Dict[int, Request] = {}
        self.events: List[dict] = []
        self._samples: List[Tuple[int, int]] = []
        self._claims: Dict[int, int] = {}  # provider -> waiter
        self._iters = 0
        self._stalled = False
        self._generated_total = 0

        if ordered:
            self._first_arrival_us = ordered[0].arrival_us
            last = ordered[-1].arrival_us
            span = last - self._first_arrival_us
            self._horizon_us = last + cfg.horizon_factor * max(span, US_PER_S)
            rate = (len(ordered) - 1) / (span / US_PER_S) if span > 0 else 0.0
        else:
            self._first_arrival_us = 0
            self._horizon_us = 0
            rate = 0.0
        self.now_us = self._first_arrival_us

        if cfg.fixed_confidence is not None:
            self._confidence = cfg.fixed_confidence
        else:
            self._confidence = adaptive_confidence(cfg.confidence, rate)
        self._est_rng = np.random.default_rng([cfg.seed, 3])
        self._t_i_max_us = to_us(
            iteration_latency(cfg.iter_cost, cfg.sched.token_budget)
        )
        self.report: Optional[MetricsReport] = None

    # -- snapshots ---------------------------------------------------------

    def _effective_alloc(self, rid: int) -> int:
        if not self.pool.holds(rid):
            return 0
        granted = self.pool.granted_of(rid)
        guests = self.pool.guests_of(rid)
        if guests:
            return min(granted, min(self.pool.offset_of(g) for g in guests))
        return granted

    def _view(self, req: Request) -> ReqView:
        rt = self.runtimes[req.id]
        est = rt.estimate
        assert est is not None
        rem_ttft = (
            remaining_ttft(req, rt, self.now_us)
            if rt.first_token_at_us is None else None
        )
        rem_tbt = (
            remaining_tbt(req, rt, self.now_us)
            if rt.last_token_at_us is not None else None
        )
        is_guest = self.pool.holds(req.id) and self.pool.host_of(req.id) is not None
        return ReqView(
            req_id=req.id,
            arrival_us=req.arrival_us,
            state=req.state,
            kv_need=rt.kv_need,
            generated=rt.generated,
            estimated_total=est.estimated_len,
            predicted_total=est.predicted_len,
            allocated=self._effective_alloc(req.id),
            used=rt.used_kvc,
            slo_ttft_us=req.slo_ttft_us,
            slo_tbt_us=req.slo_tbt_us,
            remaining_ttft_us=rem_ttft,
            remaining_tbt_us=rem_tbt,
            ready=(req.state is not Lifecycle.RUNNING)
            or self.now_us >= rt.ready_at_us,
            prefill_done=rt.prefill_done,
            preemption_count=rt.preemption_count,
            is_guest=is_guest,
            tbt_blown=rt.max_tbt_us > req.slo_tbt_us,
        )

    def _snapshot(self) -> PlannerInputs:
        waiting, running = [], []
        for req in self._live.values():
            if req.state is Lifecycle.RUNNING:
                running.append(self._view(req))
            else:
                waiting.append(self._view(req))
        return PlannerInputs(
            waiting=waiting,
            running=running,
            pool=self.pool,
            t_i_max_us=self._t_i_max_us,
            iter_cost=self.cfg.iter_cost,
            swap_model=self.cfg.truth.swap_true,
            recompute_model=self.cfg.truth.recompute_true,
        )

    # -- events ------------------------------------------------------------

    def _event(self, **kw) -> None:
        if self.cfg.record_events:
            self.events.append(kw)

    # -- lifecycle mechanics -------------------------------------------------

    def _admit_arrivals(self) -> None:
        while self._pending and self._pending[0].arrival_us <= self.now_us:
            req = self._pending.popleft()
            rt = self.runtimes[req.id]
            rt.estimate = make_estimate(
                req.true_output_len, self.cfg.predictor, self._confidence,
                self._est_rng,
            )
            self._live[req.id] = req
            self._event(ev="arrive", t=req.arrival_us, req=req.id)

    def _pick_strategy(self, rid: int) -> Strategy:
        spot = _cached_sweet_spot(self.cfg.truth.swap_true,
                                  self.cfg.truth.recompute_true)
        return choose_strategy(max(1, self.runtimes[rid].used_kvc), spot)

    def _preempt(self, rid: int, strategy: Strategy, now_us: int,
                 cause: str = "plan") -> None:
        req = self.requests[rid]
        if req.state is not Lifecycle.RUNNING:
            return
        rt = self.runtimes[rid]
        transition(req, rt, Lifecycle.PREEMPTED, strategy)
        restored = max(1, rt.used_kvc)
        rt.preempt_started_us = now_us
        rt.prefill_done = rt.used_kvc
        rt.kv_need = max(rt.kv_need, rt.used_kvc)
        if strategy is Strategy.SWAP:
            half = to_us(swap_latency(self.cfg.truth, restored) / 2.0)
            rt.swap_out_done_us = now_us + half
        else:
            rt.swap_out_done_us = 0
        if self.pool.holds(rid):
            self.pool.release(rid)
        rt.used_kvc = 0
        rt.allocated_kvc = 0
        self._claims.pop(rid, None)
        for provider in [p for p, w in self._claims.items() if w == rid]:
            del self._claims[provider]
        self._event(ev="preempt", t=now_us, req=rid,
                    strategy=strategy.value, kv=restored, cause=cause)

    def _readmit(self, rid: int) -> None:
        req = self.requests[rid]
        rt = self.runtimes[rid]
        transition(req, rt, Lifecycle.RUNNING)
        restored = max(1, rt.prefill_done)
        if rt.last_strategy is Strategy.SWAP:
            half = to_us(swap_latency(self.cfg.truth, restored) / 2.0)
            rt.ready_at_us = max(self.now_us, rt.swap_out_done_us) + half
        else:
            rt.ready_at_us = self.now_us + to_us(
                recompute_latency(self.cfg.truth, restored)
            )
        rt.preemption_time_us += rt.ready_at_us - rt.preempt_started_us
        rt.used_kvc = min(rt.prefill_done, self.pool.granted_of(rid))
        self.pool.set_used(rid, rt.used_kvc)
        self._event(ev="readmit", t=self.now_us, req=rid,
                    ready_at=rt.ready_at_us)

    def _complete(self, rid: int, now_us: int) -> None:
        req = self.requests[rid]
        rt = self.runtimes[rid]
        transition(req, rt, Lifecycle.COMPLETED)
        rt.completion_us = now_us
        if self.pool.holds(rid):
            self.pool.release(rid)
        del self._live[rid]
        self._event(ev="complete", t=now_us, req=rid)
        for provider in [p for p, w in self._claims.items() if w == rid]:
            del self._claims[provider]
        waiter = self._claims.pop(rid, None)
        if waiter is not None and waiter in self._live:
            self._fulfill_claim(waiter)

    def _fulfill_claim(self, waiter: int) -> None:
        req = self.requests[waiter]
        if req.state is not Lifecycle.RUNNING or not self.pool.holds(waiter):
            return
        rt = self.runtimes[waiter]
        est = rt.estimate
        assert est is not None
        target = max(rt.used_kvc, rt.kv_need) + max(
            0, est.estimated_len - rt.generated
        )
        residual = target - self.pool.granted_of(waiter)
        if residual > 0:
            res = self.pool.grow(waiter, residual)
            if isinstance(res, Grant):
                rt.allocated_kvc = self.pool.granted_of(waiter)

    # -- plan application ----------------------------------------------------

    def _apply_plan(self, plan) -> Tuple[List[PlanMember], int]:
        now = self.now_us
        for rid, strategy in plan.preempt:
            self._preempt(rid, strategy, now)

        failed: set[int] = set()
        acted: List[int] = []
        for a in plan.actions:
            if a.req_id in failed or a.req_id not in self._live:
                continue
            ok = False
            try:
                if a.kind == "allocate":
                    ok = isinstance(self.pool.allocate(a.req_id, a.tokens), Grant)
                elif a.kind == "grow":
                    ok = isinstance(self.pool.grow(a.req_id, a.tokens), Grant)
                elif a.kind == "reserve":
                    ok = isinstance(
                        self.pool.draw_reserved(a.req_id, a.blocks), Grant
                    )
                elif a.kind == "embed":
                    ok = isinstance(
                        self.pool.embed(a.req_id, a.tokens, a.quote), Grant
                    )
                else:
                    raise ValueError(f"unknown plan action {a.kind!r}")
            except ValueError as exc:
                if a.kind not in ("allocate", "grow", "reserve", "embed"):
                    raise
                ok = False
                del exc
            if ok:
                acted.append(a.req_id)
                self.runtimes[a.req_id].allocated_kvc = self.pool.granted_of(
                    a.req_id
                )
                continue
            # a guest with no room left moves to its own region when the free
            # pool covers it (blocks are paged, nothing copies); eviction is
            # the last resort
            if (
                a.kind == "grow"
                and self.pool.holds(a.req_id)
                and self.pool.host_of(a.req_id) is not None
                and self.requests[a.req_id].state is Lifecycle.RUNNING
            ):
                if isinstance(self.pool.promote_guest(a.req_id), Grant):
                    if isinstance(self.pool.grow(a.req_id, a.tokens), Grant):
                        acted.append(a.req_id)
                        self.runtimes[a.req_id].allocated_kvc = (
                            self.pool.granted_of(a.req_id)
                        )
                        continue
                    failed.add(a.req_id)  # stalls; the next plan grows it
                    continue
                self._preempt(a.req_id, self._pick_strategy(a.req_id), now,
                              cause="squeeze")
            failed.add(a.req_id)

        for rid in dict.fromkeys(acted):
            if self.requests[rid].state is Lifecycle.PREEMPTED:
                self._readmit(rid)

        surviving: List[PlanMember] = []
        batch_tokens = 0
        seen: set[int] = set()
        for m in plan.members:
            if m.req_id in failed or m.req_id in seen:
                continue
            seen.add(m.req_id)
            req = self._live.get(m.req_id)
            if req is None:
                continue
            rt = self.runtimes[m.req_id]
            if req.state is Lifecycle.WAITING:
                if (
                    not self.pool.holds(m.req_id)
                    or self.pool.granted_of(m.req_id) < rt.prefill_done + m.tokens
                ):
                    continue
                transition(req, rt, Lifecycle.RUNNING)
                if rt.first_start_us is None:
                    rt.first_start_us = now
                    self._event(ev="admit", t=now, req=m.req_id)
            elif req.state is not Lifecycle.RUNNING:
                continue
            if rt.ready_at_us > now:
                continue
            if rt.prefill_done >= rt.kv_need:
                if self._effective_alloc(m.req_id) < rt.used_kvc + 1:
                    continue  # stalled decode: no headroom this iteration
            elif self.pool.granted_of(m.req_id) < rt.prefill_done + m.tokens:
                continue
            surviving.append(m)
            batch_tokens += m.tokens

        for waiter, provider in plan.claims:
            if waiter in self._live and provider in self._live:
                self._claims.setdefault(provider, waiter)
        return surviving, batch_tokens

    # -- emission ------------------------------------------------------------

    def _token(self, rid: int, t_us: int) -> None:
        rt = self.runtimes[rid]
        rt.generated += 1
        self._generated_total += 1
        if rt.first_token_at_us is None:
            rt.first_token_at_us = t_us
        else:
            assert rt.last_token_at_us is not None
            gap = t_us - rt.last_token_at_us
            rt.max_tbt_us = max(rt.max_tbt_us, gap)
        rt.last_token_at_us = t_us
        rt.token_times_us.append(t_us)

    def _emit(self, members: Sequence[PlanMember], iter_end_us: int) -> None:
        completions: List[int] = []
        for m in members:
            req = self.requests[m.req_id]
            rt = self.runtimes[m.req_id]
            if rt.prefill_done < rt.kv_need:
                rt.prefill_done += m.tokens
                rt.used_kvc = rt.prefill_done
                self.pool.set_used(m.req_id, rt.used_kvc)
                if rt.prefill_done >= rt.kv_need and rt.generated == 0:
                    self._token(m.req_id, iter_end_us)
            else:
                rt.used_kvc += 1
                self.pool.set_used(m.req_id, rt.used_kvc)
                self._token(m.req_id, iter_end_us)
            if rt.generated >= req.true_output_len:
                completions.append(m.req_id)
        for rid in completions:
            self._complete(rid, iter_end_us)

    def _resolve_collisions(self, now_us: int) -> None:
        # a host writing into a guest's region evicts the guest first
        for host_id in list(self.pool.owners()):
            if not self.pool.holds(host_id):
                continue
            guests = self.pool.guests_of(host_id)
            if not guests:
                continue
            host_req = self.requests.get(host_id)
            if host_req is None or host_req.state is not Lifecycle.RUNNING:
                continue
            used = self.pool.used_of(host_id)
            for gid in sorted(guests, key=lambda g: self.pool.offset_of(g)):
                if used >= self.pool.offset_of(gid):
                    if isinstance(self.pool.promote_guest(gid), Grant):
                        continue
                    if self.requests[gid].state is Lifecycle.RUNNING:
                        self._preempt(gid, self._pick_strategy(gid), now_us,
                                      cause="collision")

    def _next_event_us(self) -> Optional[int]:
        cands: List[int] = []
        if self._pending:
            cands.append(self._pending[0].arrival_us)
        for rid, req in self._live.items():
            if req.state is Lifecycle.RUNNING:
                ready = self.runtimes[rid].ready_at_us
                if ready > self.now_us:
                    cands.append(ready)
        return min(cands) if cands else None

    # -- main loop -----------------------------------------------------------

    def step(self) -> bool:
        """Run one scheduling round.  Returns False when nothing remains."""
        if not self._live and not self._pending:
            return False
        if self.now_us > self._horizon_us:
            return False
        if not self._live:
            self.now_us = max(self.now_us, self._pending[0].arrival_us)
        self._admit_arrivals()

        plan = plan_batch(self._snapshot(), self.cfg.sched)
        members, batch_tokens = self._apply_plan(plan)

        if not members and not plan.actions and not plan.preempt:
            nxt = self._next_event_us()
            if nxt is None:
                self._stalled = True
                return False
            self.now_us = nxt
            return True

        iter_len_us = to_us(iteration_latency(self.cfg.iter_cost, batch_tokens))
        iter_end_us = self.now_us + iter_len_us
        self._t_i_max_us = iter_len_us
        self._event(
            ev="iter", t=self.now_us, end=iter_end_us, tokens=batch_tokens,
            members=[[m.req_id, m.tokens] for m in members],
        )
        self._emit(members, iter_end_us)
        self._resolve_collisions(iter_end_us)
        self._samples.append((self.pool.footprint_tokens, self.pool.used_tokens))
        self._iters += 1
        if self.cfg.validate_every and self._iters % self.cfg.validate_every == 0:
            self.pool.check_invariants()
        self.now_us = iter_end_us
        return True

    def run(self) -> MetricsReport:
        streak = 0
        last_mark = None
        while True:
            mark = (
                self.now_us, self._generated_total, len(self._live),
                len(self._pending), self.pool.footprint_tokens,
            )
            if mark == last_mark:
                streak += 1
                if streak > _NO_PROGRESS_LIMIT:
                    raise RuntimeError(
                        f"no progress after {streak} rounds at t={self.now_us}"
                    )
            else:
                streak = 0
            last_mark = mark
            if not self.step():
                break
        makespan = max(0, self.now_us - self._first_arrival_us)
        self.report = compute_metrics(
            requests=self.requests,
            runtimes=self.runtimes,
            policy=self.cfg.sched.policy,
            seed=self.cfg.seed,
            makespan_us=makespan,
            capacity_tokens=self.cfg.capacity_tokens,
            samples=self._samples,
        )
        return self.report


def calibrate_slo_baselines(
    requests: Sequence[Request], cfg: EngineConfig
) -> Tuple[int, int]:
    """Median per-chunk TTFT and median token gap under the block baseline,
    which ignores SLOs entirely, so targets derived from it are well defined."""
    reqs = copy.deepcopy(list(requests))
    cal_cfg = dataclasses.replace(
        cfg,
        sched=dataclasses.replace(cfg.sched, policy="vllm_block"),
        record_events=False,
    )
    eng = Engine(reqs, cal_cfg)
    eng.run()
    chunk = cfg.sched.token_budget
    ttfts, gaps = [], []
    for rid, req in eng.requests.items():
        rt = eng.runtimes[rid]
        if req.state is not Lifecycle.COMPLETED:
            continue
        factor = max(1, -(-req.prompt_len // chunk))
        ttfts.append((rt.first_token_at_us - req.arrival_us) / factor)
        gaps.extend(b - a for a, b in zip(rt.token_times_us, rt.token_times_us[1:]))
    if not ttfts or not gaps:
        raise ValueError("calibration run completed no requests")
    return int(np.median(ttfts)), int(np.median(gaps))
