"""Batch formation and KVC granting.

The planner sees an immutable snapshot of every live request (ReqView), asks
the block pool what is feasible, and emits a BatchPlan: who runs this
iteration, who gets preempted, and which allocations to apply in order.  The
engine applies the plan; the planner never mutates pool state except through
the dry-run arithmetic on its local free-token counter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .core import Lifecycle, Strategy
from .costmodel import IterationCost, iteration_latency
from .kvc import BlockPool, EmbedQuote
from .preemption import (
    BucketConfig,
    RecomputeModel,
    SwapModel,
    SweetSpot,
    VictimInfo,
    choose_strategy,
    order_victims,
    sweet_spot,
)

POLICIES = ("cacheopt", "vllm_block", "rlp", "s3", "sarathi_chunked")
VICTIM_RULES = ("slo", "fcfs")


@dataclass
class SchedulerConfig:
    policy: str = "cacheopt"
    small_block_b: int = 8
    epsilon_us: int = 1_000
    token_budget: int = 2048
    preallocate_m: int = 2
    buffer_b: int = 8
    victim_rule: str = "slo"
    invert_amortization: bool = False
    decode_runway_iters: int = 6
    vllm_block_tokens: int = 32
    s3_bucket_tokens: int = 50
    rlp_padding: int = 100
    buckets: BucketConfig = field(default_factory=BucketConfig)

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.victim_rule not in VICTIM_RULES:
            raise ValueError(f"unknown victim rule {self.victim_rule!r}")
        if self.token_budget < 1:
            raise ValueError("token_budget must be >= 1")
        if self.preallocate_m < 0:
            raise ValueError("preallocate_m must be >= 0")
        if self.decode_runway_iters < 0:
            raise ValueError("decode_runway_iters must be >= 0")
        for name in ("small_block_b", "buffer_b", "vllm_block_tokens",
                     "s3_bucket_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rlp_padding < 0:
            raise ValueError("rlp_padding must be >= 0")
        if self.epsilon_us < 0:
            raise ValueError("epsilon_us must be >= 0")


@dataclass(frozen=True)
class ReqView:
    """Immutable per-request snapshot handed to the planner.

    allocated is the effective ceiling: for a host carrying guests it is the
    lowest guest offset, not the full grant.  remaining_* are signed slacks
    computed at the snapshot instant; None when the phase does not apply.
    """
    req_id: int
    arrival_us: int
    state: Lifecycle
    kv_need: int
    generated: int
    estimated_total: int
    predicted_total: int
    allocated: int
    used: int
    slo_ttft_us: int
    slo_tbt_us: int
    remaining_ttft_us: Optional[int]
    remaining_tbt_us: Optional[int]
    ready: bool = True
    prefill_done: int = 0
    preemption_count: int = 0
    is_guest: bool = False
    tbt_blown: bool = False


def est_remaining(v: ReqView) -> int:
    return max(0, v.estimated_total - v.generated)


def target_alloc(v: ReqView) -> int:
    """KV tokens needed through estimated completion."""
    return max(v.used, v.kv_need) + est_remaining(v)


def rt_us(v: ReqView) -> int:
    """Remaining time to the next deadline (signed)."""
    if v.remaining_ttft_us is not None:
        return v.remaining_ttft_us
    assert v.remaining_tbt_us is not None
    return v.remaining_tbt_us


def is_returned(v: ReqView) -> bool:
    """Running but unable to write the next token into its region."""
    return v.state is Lifecycle.RUNNING and v.allocated < v.used + 1


@dataclass
class CriticalSets:
    n_w: list[ReqView]        # waiting, deadline inside the iteration horizon
    n_r: list[ReqView]        # returned, deadline inside the horizon
    n_w_prime: list[ReqView]  # waiting with slack, or past saving
    n_r_prime: list[ReqView]  # returned with slack, or past saving


def classify_critical(waiting: Sequence[ReqView], running: Sequence[ReqView],
                      t_i_max_us: int, epsilon_us: int) -> CriticalSets:
    """Critical means the deadline falls inside the coming iteration.  A
    deadline that already passed by more than epsilon is unsalvageable:
    treating it as critical would let a backlog of lost requests preempt
    healthy ones every iteration, so it queues with the non-critical set."""
    sets = CriticalSets([], [], [], [])
    for v in waiting:
        rt = rt_us(v)
        if rt >= -epsilon_us and rt - t_i_max_us < epsilon_us:
            sets.n_w.append(v)
        else:
            sets.n_w_prime.append(v)
    for v in running:
        if not is_returned(v):
            continue
        assert v.remaining_tbt_us is not None
        rt = v.remaining_tbt_us
        if rt >= -epsilon_us and rt - t_i_max_us < epsilon_us:
            sets.n_r.append(v)
        else:
            sets.n_r_prime.append(v)
    def queue_key(v: ReqView) -> tuple:
        rt = rt_us(v)
        if rt < 0:
            # a blown deadline cannot be saved; it queues behind every
            # salvageable one, oldest first
            return (1, v.arrival_us, v.req_id)
        return (0, rt, v.req_id)

    sets.n_w.sort(key=lambda v: (rt_us(v), v.req_id))
    sets.n_w_prime.sort(key=queue_key)
    sets.n_r.sort(key=lambda v: (rt_us(v), v.req_id))
    sets.n_r_prime.sort(key=queue_key)
    return sets


def _critical_waiting_need(v: ReqView, small_block_b: int) -> int:
    return max(0, v.kv_need + small_block_b - v.allocated)


def basic_demand(sets: CriticalSets, small_block_b: int) -> int:
    """Tokens required so every critical request can run this iteration."""
    need = sum(_critical_waiting_need(v, small_block_b) for v in sets.n_w)
    need += small_block_b * len(sets.n_r)
    return need


def ensure_capacity(pool_free: int, d_kvc: int) -> int:
    """Tokens that must be reclaimed before the critical grants fit."""
    return max(0, d_kvc - pool_free)


def fill_token_budget(sets: CriticalSets, waiting_ordered: Sequence[ReqView],
                      token_budget: int,
                      consumed_tokens: int) -> tuple[list[ReqView], bool]:
    """Admit non-critical prefills in order until the budget is exhausted.

    consumed_tokens covers the decode members and critical prefills already
    in the batch.  Admission stops at the first prompt that does not fit so
    urgent requests are never overtaken by shorter ones.
    """
    del sets  # criticals are accounted inside consumed_tokens
    selected: list[ReqView] = []
    used = consumed_tokens
    for v in waiting_ordered:
        chunk = v.kv_need - v.prefill_done
        if used + chunk > token_budget:
            break
        used += chunk
        selected.append(v)
    return selected, consumed_tokens > token_budget


@dataclass(frozen=True)
class AllocDemand:
    req_id: int
    m_tokens: int
    rt_us: int
    prompt_len: int


def allocate_remaining(demands: Sequence[AllocDemand], a_prime: int,
                       invert: bool = False) -> dict[int, int]:
    """Split A' tokens across competing demands.

    When everything fits each request gets its full demand.  Otherwise the
    pool is amortized by weight RT_i * s^p_i (inverted on request): exact
    integer floors plus largest-remainder distribution, so the grants always
    sum to a_prime.
    """
    if a_prime < 0:
        raise ValueError("a_prime must be >= 0")
    live = [d for d in demands if d.m_tokens > 0]
    if not live:
        return {}
    total_m = sum(d.m_tokens for d in live)
    if total_m <= a_prime:
        return {d.req_id: d.m_tokens for d in live}

    def weight(d: AllocDemand) -> Fraction:
        rt = max(1, d.rt_us)
        prompt = max(1, d.prompt_len)
        w = Fraction(rt * prompt)
        return 1 / w if invert else w

    weights = {d.req_id: weight(d) for d in live}
    wsum = sum(weights.values())
    shares = {rid: Fraction(a_prime) * w / wsum for rid, w in weights.items()}
    grants = {rid: int(s) for rid, s in shares.items()}  # Fraction floors
    leftover = a_prime - sum(grants.values())
    order = sorted(shares, key=lambda rid: (-(shares[rid] - grants[rid]), rid))
    for rid in order[:leftover]:
        grants[rid] += 1
    return grants


@dataclass(frozen=True)
class PairCandidate:
    req_id: int
    est_remaining_iters: int
    release_gain: int


def pair_release(residual_tokens: int, runway_iters: int,
                 candidates: Sequence[PairCandidate]) -> Optional[int]:
    """Pick a request expected to finish, and free enough, before the waiter
    exhausts its own allocation.  Soonest finisher wins, ties by id."""
    best: Optional[PairCandidate] = None
    for c in candidates:
        if c.est_remaining_iters > runway_iters:
            continue
        if c.release_gain < residual_tokens:
            continue
        if best is None or (c.est_remaining_iters, c.req_id) < (
                best.est_remaining_iters, best.req_id):
            best = c
    return best.req_id if best else None


def proactive_include(running: Sequence[ReqView], m: int) -> list[ReqView]:
    """Running requests within m iterations of their estimated end that are
    still short of their target allocation."""
    out = [
        v for v in running
        if not is_returned(v)
        and v.allocated < target_alloc(v)
        and est_remaining(v) <= m
    ]
    out.sort(key=lambda v: (est_remaining(v), v.req_id))
    return out


def s3_demand(predicted: int, bucket_tokens: int, preempt_count: int) -> int:
    buckets = max(1, math.ceil(max(1, predicted) / bucket_tokens))
    return buckets * bucket_tokens * (2 ** preempt_count)


def rlp_demand(predicted_remaining: int, padding: int) -> int:
    return max(1, predicted_remaining) + padding


# ---------------------------------------------------------------------------
# plans


@dataclass
class PlanAction:
    """One pool mutation, applied in list order.

    kind: "allocate" (fresh grant of tokens), "grow" (extend by tokens),
    "embed" (fresh grant placed inside quote.host), "reserve" (draw blocks).
    """
    kind: str
    req_id: int
    tokens: int = 0
    blocks: int = 0
    quote: Optional[EmbedQuote] = None


@dataclass(frozen=True)
class PlanMember:
    req_id: int
    tokens: int  # compute tokens this iteration: prompt chunk or 1 decode


@dataclass
class BatchPlan:
    members: list[PlanMember] = field(default_factory=list)
    batch_tokens: int = 0
    preempt: list[tuple[int, Strategy]] = field(default_factory=list)
    actions: list[PlanAction] = field(default_factory=list)
    claims: list[tuple[int, int]] = field(default_factory=list)  # waiter, provider
    deferred: list[int] = field(default_factory=list)
    overflow: bool = False


@dataclass
class PlannerInputs:
    """Everything a planner may consult, snapshotted at iteration start."""
    waiting: list[ReqView]        # WAITING plus preempted awaiting readmission
    running: list[ReqView]
    pool: BlockPool
    t_i_max_us: int
    iter_cost: IterationCost
    swap_model: SwapModel
    recompute_model: RecomputeModel


class _FreeTracker:
    """Dry-run mirror of the pool's free counter during planning."""

    def __init__(self, pool: BlockPool):
        self.pool = pool
        self.free = pool.free_tokens
        self.reserved_blocks = pool.reserved_blocks_current

    def fp(self, tokens: int) -> int:
        bs = self.pool.block_size
        return ((tokens + bs - 1) // bs) * bs

    def alloc_cost(self, v: ReqView, grant: int) -> int:
        if v.is_guest:
            return 0
        held = self.pool.granted_of(v.req_id) if self.pool.holds(v.req_id) else 0
        return self.fp(held + grant) - self.fp(held)


def _strategy_for(v: ReqView, inp: PlannerInputs) -> Strategy:
    spot = _cached_sweet_spot(inp.swap_model, inp.recompute_model)
    return choose_strategy(max(1, v.used), spot)


def _survives_eviction(v: ReqView, strategy: Strategy,
                       inp: PlannerInputs) -> bool:
    """True when the victim's slack covers its restore charge plus the
    requeue delay, so the eviction costs no SLO.  The victim re-enters
    behind the current ready queue; every waiter ahead of it is at least
    one more iteration of delay."""
    s = max(1, v.used)
    if strategy is Strategy.SWAP:
        charge_ms = inp.swap_model.predict(s)
    else:
        charge_ms = inp.recompute_model.predict(s)
    queued = sum(1 for w in inp.waiting if w.ready)
    charge_us = int(charge_ms * 1000 + 0.5) + inp.t_i_max_us * (1 + queued)
    return rt_us(v) > charge_us


_SPOT_CACHE: dict[tuple, SweetSpot] = {}


def _cached_sweet_spot(swap: SwapModel, rec: RecomputeModel) -> SweetSpot:
    key = (swap.gamma_s, swap.delta_s, rec.alpha_r, rec.beta_r, rec.kappa_r,
           rec.eps_r)
    if key not in _SPOT_CACHE:
        try:
            _SPOT_CACHE[key] = sweet_spot(rec, swap)
        except ValueError:
            # one model dominates everywhere; encode as all-swap or all-recompute
            if rec.predict(1) > swap.predict(1):
                _SPOT_CACHE[key] = SweetSpot(s_star=0)
            else:
                _SPOT_CACHE[key] = SweetSpot(s_star=1 << 62)
    return _SPOT_CACHE[key]


def _victim_order(cands: list[ReqView], cfg: SchedulerConfig) -> list[ReqView]:
    if cfg.victim_rule == "fcfs":
        return sorted(cands, key=lambda v: (-v.arrival_us, v.req_id))
    infos = [
        VictimInfo(req_id=v.req_id, slo_tbt_us=v.slo_tbt_us,
                   remaining_tokens=est_remaining(v), occupancy_tokens=v.used)
        for v in cands
    ]
    by_id = {v.req_id: v for v in cands}
    return [by_id[i.req_id] for i in order_victims(infos, cfg.buckets)]


def plan_cacheopt(inp: PlannerInputs, cfg: SchedulerConfig) -> BatchPlan:
    plan = BatchPlan()
    tracker = _FreeTracker(inp.pool)
    pool = inp.pool
    B = cfg.small_block_b

    ready_waiting = [v for v in inp.waiting if v.ready]
    running = list(inp.running)
    sets = classify_critical(ready_waiting, [v for v in running if v.ready],
                             inp.t_i_max_us, cfg.epsilon_us)

    granted_members: list[PlanMember] = []
    embedded: set[int] = set()
    removed: set[int] = set()  # preempted this plan

    # hosts must be past prefill: a decode host writes at most one token per
    # iteration, which is what the embed feasibility slack assumes
    host_triples = [
        (v.req_id, pool.granted_of(v.req_id), v.used)
        for v in running
        if not v.is_guest and pool.holds(v.req_id)
        and v.state is Lifecycle.RUNNING and v.prefill_done >= v.kv_need
    ]

    def try_embed(v: ReqView) -> bool:
        if v.allocated > 0 or v.preemption_count > 0:
            return False
        triples = [t for t in host_triples if t[0] not in removed]
        # a trimmed overprediction is a cheap bet for an owner (growing costs
        # a block) but a squeeze for a guest: size guests by the raw predict
        out = max(est_remaining(v), v.predicted_total - v.generated, 1)
        quote = pool.find_embedding_host(triples, v.kv_need, out)
        if quote is None:
            return False
        plan.actions.append(PlanAction("embed", v.req_id,
                                       tokens=v.kv_need + out,
                                       quote=quote))
        embedded.add(v.req_id)
        # one guest per host per iteration: quotes are computed against the
        # current pool state, a second embed on the same host would misplace
        host_triples[:] = [t for t in host_triples if t[0] != quote.host]
        return True

    # critical waiting: embedding costs no pool tokens, try it first
    pending_nw: list[ReqView] = []
    for v in sets.n_w:
        if try_embed(v):
            granted_members.append(PlanMember(v.req_id, v.kv_need - v.prefill_done))
        else:
            pending_nw.append(v)

    # demand for the rest of the critical sets, in exact consumption terms
    def nw_cost(v: ReqView) -> int:
        return tracker.alloc_cost(v, _critical_waiting_need(v, B))

    def nr_cost(v: ReqView) -> int:
        return tracker.alloc_cost(v, B)

    demand = sum(nw_cost(v) for v in pending_nw)
    demand += sum(nr_cost(v) for v in sets.n_r if not v.is_guest)
    shortfall = ensure_capacity(tracker.free, demand)

    if shortfall > 0:
        # the global reserve exists to absorb exactly this burst
        shortfall -= min(shortfall, tracker.reserved_blocks * pool.block_size)

    if shortfall > 0:
        critical_ids = {v.req_id for v in pending_nw} | {v.req_id for v in sets.n_r}
        cands = [
            v for v in running
            if not v.is_guest and v.req_id not in critical_ids
            and pool.holds(v.req_id) and pool.net_release_gain(v.req_id) > 0
        ]
        if cfg.victim_rule == "slo":
            # a mid-prefill eviction looks free (its deadline is far off) but
            # the readmit lands right back in the same overloaded queue that
            # caused the shortfall; only decode holders carry real weight
            cands = [v for v in cands if v.prefill_done >= v.kv_need]
        for victim in _victim_order(cands, cfg):
            if shortfall <= 0:
                break
            strategy = _strategy_for(victim, inp)
            if cfg.victim_rule == "slo" and not _survives_eviction(
                    victim, strategy, inp):
                # evicting a victim that cannot return inside its own
                # deadline converts one miss into two; stall instead
                continue
            gain = pool.net_release_gain(victim.req_id)
            plan.preempt.append((victim.req_id, strategy))
            removed.add(victim.req_id)
            tracker.free += gain
            shortfall -= gain
        if shortfall > 0:
            # still short: defer the least urgent critical waiters
            for v in sorted(pending_nw, key=lambda v: (-rt_us(v), v.req_id)):
                if shortfall <= 0:
                    break
                shortfall -= nw_cost(v)
                pending_nw.remove(v)
                plan.deferred.append(v.req_id)

    running = [v for v in running if v.req_id not in removed]

    # continuation before admission: a stalled decode blows a gap nothing can
    # repair and squats on its allocation until it moves again, so returned
    # decodes drink from the free pool first; critical admissions keep the
    # reserve as their emergency lane
    stalled_nr: list[int] = []
    for v in sets.n_r:
        if v.req_id in removed:
            continue
        cost = nr_cost(v)
        if v.is_guest:
            # bounded by the host gap; fall back to preempting the guest later
            plan.actions.append(PlanAction("grow", v.req_id, tokens=B))
        elif cost <= tracker.free:
            plan.actions.append(PlanAction("grow", v.req_id, tokens=B))
            tracker.free -= cost
        else:
            blocks = (B + pool.block_size - 1) // pool.block_size
            if tracker.reserved_blocks >= blocks:
                plan.actions.append(PlanAction("reserve", v.req_id, blocks=blocks))
                tracker.reserved_blocks -= blocks
            else:
                stalled_nr.append(v.req_id)

    # returned decodes with slack continue on the same terms; waiting for
    # them to turn critical costs a guaranteed one-iteration stall, and the
    # weighted round would starve any whose deadline already passed
    resumed: set[int] = set()
    for v in sets.n_r_prime:
        if v.req_id in removed:
            continue
        if v.is_guest:
            # bounded by the host gap; the engine promotes on a miss
            plan.actions.append(PlanAction("grow", v.req_id, tokens=B))
            resumed.add(v.req_id)
            continue
        cost = tracker.alloc_cost(v, B)
        if cost <= tracker.free:
            plan.actions.append(PlanAction("grow", v.req_id, tokens=B))
            tracker.free -= cost
            resumed.add(v.req_id)

    # grant the critical admissions, falling back to the reserve
    for v in pending_nw:
        need = _critical_waiting_need(v, B)
        cost = tracker.alloc_cost(v, need)
        if cost <= tracker.free:
            kind = "grow" if pool.holds(v.req_id) else "allocate"
            plan.actions.append(PlanAction(kind, v.req_id, tokens=need))
            tracker.free -= cost
        elif not v.is_guest:
            blocks = (need + pool.block_size - 1) // pool.block_size
            if blocks <= tracker.reserved_blocks:
                plan.actions.append(PlanAction("reserve", v.req_id,
                                               blocks=blocks))
                tracker.reserved_blocks -= blocks
            else:
                plan.deferred.append(v.req_id)
                continue
        else:
            plan.deferred.append(v.req_id)
            continue
        chunk = v.kv_need - v.prefill_done
        if chunk > 0:  # readmissions carry no prefill compute
            granted_members.append(PlanMember(v.req_id, chunk))

    # decode members: every running request that can emit this iteration
    decode_tokens = 0
    for v in running:
        if not v.ready or v.state is not Lifecycle.RUNNING:
            continue
        if v.prefill_done < v.kv_need:
            continue  # mid-prefill continuation handled below
        if is_returned(v):
            if v.req_id in stalled_nr:
                continue
            in_critical = any(x.req_id == v.req_id for x in sets.n_r)
            if not in_critical and v.req_id not in resumed:
                continue  # no refill this plan; try again next one
        plan.members.append(PlanMember(v.req_id, 1))
        decode_tokens += 1

    plan.members.extend(granted_members)
    consumed = decode_tokens + sum(m.tokens for m in granted_members)

    # fill the compute budget with non-critical prefills
    selected, overflow = fill_token_budget(sets, sets.n_w_prime,
                                           cfg.token_budget, consumed)
    plan.overflow = overflow

    # remaining-KVC round: admitted prefills, calm returned, near-finishers
    participants: list[tuple[ReqView, int]] = []
    member_ready: list[ReqView] = []
    for v in selected:
        if try_embed(v):
            member_ready.append(v)
            continue
        # floor at kv_need+1 so a request past its estimate can still start
        need = max(target_alloc(v), v.kv_need + 1) - v.allocated
        if need <= 0:
            member_ready.append(v)
        else:
            participants.append((v, need))
    for v in sets.n_r_prime:
        if v.req_id in removed or v.is_guest or v.req_id not in resumed:
            continue
        residual = max(0, target_alloc(v) - v.allocated - B)
        if residual > 0:
            participants.append((v, residual))
    for v in proactive_include(running, cfg.preallocate_m):
        if v.req_id in removed or v.is_guest:
            continue
        if any(p.req_id == v.req_id for p, _ in participants):
            continue
        participants.append((v, target_alloc(v) - v.allocated))
    # pre-exhaust top-up: a decode request within m tokens of its wall gets
    # another small block now instead of returning and waiting for one
    for v in running:
        if (v.req_id in removed or v.is_guest or not v.ready
                or v.state is not Lifecycle.RUNNING
                or v.prefill_done < v.kv_need or is_returned(v)):
            continue
        if v.allocated - v.used > cfg.preallocate_m:
            continue
        if any(p.req_id == v.req_id for p, _ in participants):
            continue
        participants.append(
            (v, max(target_alloc(v), v.used + 1 + B) - v.allocated)
        )

    bs = pool.block_size

    def amortize(parts: list[tuple[ReqView, int]],
                 supply: int) -> tuple[dict[int, int], int]:
        demands = [
            AllocDemand(v.req_id, m, max(1, rt_us(v)), max(1, v.kv_need))
            for v, m in parts
        ]
        grants = allocate_remaining(demands, supply, cfg.invert_amortization)
        total = sum(d.m_tokens for d in demands)
        if total > supply and grants:
            # amortized: floor grants to whole blocks, then hand the leftover
            # blocks back out in the same largest-remainder order
            floored = {rid: (g // bs) * bs for rid, g in grants.items()}
            leftover_blocks = (supply - sum(floored.values())) // bs
            order = sorted(grants,
                           key=lambda rid: (-(grants[rid] - floored[rid]), rid))
            for rid in order[:leftover_blocks]:
                floored[rid] += bs
            grants = floored
        return grants, total

    # admissions may not drain the pool below what the current decode set
    # will consume over the next few iterations; a stalled decode blows a
    # gap that no later grant can repair, while a deferred admission only
    # shifts its prefill by one plan
    n_decodes = sum(
        1 for v in running
        if v.state is Lifecycle.RUNNING and not v.is_guest
        and v.req_id not in removed and v.prefill_done >= v.kv_need
    )
    runway = cfg.decode_runway_iters * n_decodes
    inflight = [(v, m) for v, m in participants
                if v.state is Lifecycle.RUNNING]
    admitting = [(v, m) for v, m in participants
                 if v.state is not Lifecycle.RUNNING]
    flight_supply = (tracker.free // bs) * bs
    grants, flight_total = amortize(inflight, flight_supply)
    spent = sum(grants.values())
    admit_supply = (max(0, tracker.free - spent - runway) // bs) * bs
    admit_grants, admit_total = amortize(admitting, admit_supply)
    grants.update(admit_grants)
    sated = flight_total <= flight_supply and admit_total <= admit_supply

    view_by_id = {v.req_id: v for v, _ in participants}
    fulfilled_running = [
        v for v in running
        if not v.is_guest and not is_returned(v)
        and v.allocated >= target_alloc(v) and v.req_id not in removed
    ]
    claimed_providers: set[int] = set()

    for v, need in participants:
        grant = grants.get(v.req_id, 0)
        if v.state is Lifecycle.WAITING or v.state is Lifecycle.PREEMPTED:
            # a partial grant that cannot start prefill is useless: skip it
            if v.allocated + grant < v.kv_need + 1:
                continue
            kind = "grow" if pool.holds(v.req_id) else "allocate"
            plan.actions.append(PlanAction(kind, v.req_id, tokens=grant))
            tracker.free -= tracker.alloc_cost(v, grant)
            member_ready.append(v)
        else:
            if grant > 0:
                plan.actions.append(PlanAction("grow", v.req_id, tokens=grant))
                tracker.free -= tracker.alloc_cost(v, grant)
                if is_returned(v) and v.allocated + grant >= v.used + 1:
                    plan.members.append(PlanMember(v.req_id, 1))
        if grant < need:
            # underprovisioned: claim a release from a finishing request
            runway = (v.allocated + grant) - v.used
            cands = [
                PairCandidate(p.req_id, est_remaining(p),
                              pool.net_release_gain(p.req_id))
                for p in fulfilled_running
                if p.req_id not in claimed_providers
            ]
            provider = pair_release(need - grant, max(0, runway), cands)
            if provider is not None:
                plan.claims.append((v.req_id, provider))
                claimed_providers.add(provider)

    for v in member_ready:
        if v.state is Lifecycle.WAITING:
            plan.members.append(PlanMember(v.req_id, v.kv_need - v.prefill_done))

    # case 2: spare pool after everyone got their demand; pull more waiting in
    if sated:
        admitted = {v.req_id for v in selected} | embedded
        extras = [v for v in sets.n_w_prime if v.req_id not in admitted]
        member_tbts = [
            x.slo_tbt_us for x in running
            if x.remaining_tbt_us is not None and not is_returned(x)
            and not x.tbt_blown and x.remaining_tbt_us >= 0
        ]
        tbt_floor = min(member_tbts) if member_tbts else None
        batch_now = sum(m.tokens for m in plan.members)
        for v in extras:
            need = max(0, target_alloc(v) - v.allocated)
            cost = tracker.alloc_cost(v, need)
            if need == 0 or cost > tracker.free - runway:
                continue
            if tbt_floor is not None:
                projected = iteration_latency(inp.iter_cost, batch_now + v.kv_need)
                if projected * 1000 > tbt_floor:
                    break
            kind = "grow" if pool.holds(v.req_id) else "allocate"
            plan.actions.append(PlanAction(kind, v.req_id, tokens=need))
            tracker.free -= cost

    plan.batch_tokens = sum(m.tokens for m in plan.members)
    if plan.batch_tokens > cfg.token_budget:
        plan.overflow = True
    return plan


# ---------------------------------------------------------------------------
# baselines


def _fcfs_admission_order(waiting: Sequence[ReqView]) -> list[ReqView]:
    """Preempted requests go first, then fresh arrivals, FCFS within each."""
    pre = [v for v in waiting if v.state is Lifecycle.PREEMPTED]
    fresh = [v for v in waiting if v.state is not Lifecycle.PREEMPTED]
    pre.sort(key=lambda v: (v.arrival_us, v.req_id))
    fresh.sort(key=lambda v: (v.arrival_us, v.req_id))
    return pre + fresh


def plan_vllm_block(inp: PlannerInputs, cfg: SchedulerConfig,
                    chunked: bool = False) -> BatchPlan:
    plan = BatchPlan()
    tracker = _FreeTracker(inp.pool)
    pool = inp.pool
    step = cfg.vllm_block_tokens
    removed: set[int] = set()

    def round_up(n: int) -> int:
        return ((n + step - 1) // step) * step

    running = [v for v in inp.running if v.ready]
    budget = cfg.token_budget

    # grow exhausted decodes one fixed block, evicting the newest arrival
    # (recompute) whenever the pool cannot cover the growth
    for v in sorted(running, key=lambda x: (x.arrival_us, x.req_id)):
        if not is_returned(v) or v.req_id in removed:
            continue
        while True:
            cost = tracker.alloc_cost(v, step)
            if cost <= tracker.free:
                plan.actions.append(PlanAction("grow", v.req_id, tokens=step))
                tracker.free -= cost
                break
            cands = [x for x in running
                     if x.req_id not in removed and pool.holds(x.req_id)]
            if not cands:
                break
            victim = max(cands, key=lambda x: (x.arrival_us, x.req_id))
            plan.preempt.append((victim.req_id, Strategy.RECOMPUTE))
            removed.add(victim.req_id)
            tracker.free += pool.net_release_gain(victim.req_id)
            if victim.req_id == v.req_id:
                break

    # decode and prefill-continuation members
    for v in running:
        if v.req_id in removed or v.state is not Lifecycle.RUNNING:
            continue
        if v.prefill_done < v.kv_need:
            if not chunked:
                continue
            chunk = min(v.kv_need - v.prefill_done, budget)
            if chunk > 0:
                plan.members.append(PlanMember(v.req_id, chunk))
                budget -= chunk
            continue
        grown = any(a.req_id == v.req_id and a.kind == "grow"
                    for a in plan.actions)
        if is_returned(v) and not grown:
            continue
        if budget >= 1:
            plan.members.append(PlanMember(v.req_id, 1))
            budget -= 1

    # admissions: strict FCFS, preempted requests before any fresh ones
    for v in _fcfs_admission_order(inp.waiting):
        chunk = v.kv_need - v.prefill_done
        alloc = round_up(v.kv_need + 1)
        cost = tracker.fp(alloc)
        if cost > tracker.free:
            break
        if chunk > 0:
            if chunked:
                chunk = min(chunk, budget)
                if chunk < 1:
                    break
            elif budget < chunk:
                break
            plan.members.append(PlanMember(v.req_id, chunk))
            budget -= chunk
        plan.actions.append(PlanAction("allocate", v.req_id, tokens=alloc))
        tracker.free -= cost

    plan.batch_tokens = sum(m.tokens for m in plan.members)
    plan.overflow = plan.batch_tokens > cfg.token_budget
    return plan


def plan_rlp(inp: PlannerInputs, cfg: SchedulerConfig) -> BatchPlan:
    plan = BatchPlan()
    tracker = _FreeTracker(inp.pool)
    running = [v for v in inp.running if v.ready]
    budget = cfg.token_budget

    # underprovisioned requests evict themselves and recompute later
    for v in running:
        if is_returned(v):
            plan.preempt.append((v.req_id, Strategy.RECOMPUTE))

    removed = {rid for rid, _ in plan.preempt}
    for v in running:
        if v.req_id in removed or v.state is not Lifecycle.RUNNING:
            continue
        if v.prefill_done < v.kv_need:
            continue
        if budget >= 1:
            plan.members.append(PlanMember(v.req_id, 1))
            budget -= 1

    # admit shortest-predicted bucket first, FCFS inside a bucket
    order = sorted(
        [v for v in inp.waiting if v.ready],
        key=lambda v: (max(1, v.predicted_total - v.generated) // 50,
                       v.arrival_us, v.req_id),
    )
    for v in order:
        chunk = v.kv_need - v.prefill_done
        remaining = max(1, v.predicted_total - v.generated)
        alloc = v.kv_need + rlp_demand(remaining, cfg.rlp_padding) - v.allocated
        cost = tracker.alloc_cost(v, alloc)
        if cost > tracker.free:
            break
        if chunk > 0:
            if budget < chunk:
                break
            plan.members.append(PlanMember(v.req_id, chunk))
            budget -= chunk
        kind = "grow" if inp.pool.holds(v.req_id) else "allocate"
        plan.actions.append(PlanAction(kind, v.req_id, tokens=alloc))
        tracker.free -= cost

    plan.batch_tokens = sum(m.tokens for m in plan.members)
    plan.overflow = plan.batch_tokens > cfg.token_budget
    return plan


def plan_s3(inp: PlannerInputs, cfg: SchedulerConfig) -> BatchPlan:
    plan = BatchPlan()
    tracker = _FreeTracker(inp.pool)
    running = [v for v in inp.running if v.ready]
    budget = cfg.token_budget

    for v in running:
        if is_returned(v):
            plan.preempt.append((v.req_id, Strategy.SWAP))

    removed = {rid for rid, _ in plan.preempt}
    for v in running:
        if v.req_id in removed or v.state is not Lifecycle.RUNNING:
            continue
        if v.prefill_done < v.kv_need:
            continue
        if budget >= 1:
            plan.members.append(PlanMember(v.req_id, 1))
            budget -= 1

    for v in _fcfs_admission_order([v for v in inp.waiting if v.ready]):
        chunk = v.kv_need - v.prefill_done
        out_demand = s3_demand(v.predicted_total, cfg.s3_bucket_tokens,
                               v.preemption_count)
        alloc = max(0, v.kv_need + out_demand - v.allocated)
        cost = tracker.alloc_cost(v, alloc)
        if cost > tracker.free:
            break
        if chunk > 0:
            if budget < chunk:
                break
            plan.members.append(PlanMember(v.req_id, chunk))
            budget -= chunk
        kind = "grow" if inp.pool.holds(v.req_id) else "allocate"
        plan.actions.append(PlanAction(kind, v.req_id, tokens=alloc))
        tracker.free -= cost

    plan.batch_tokens = sum(m.tokens for m in plan.members)
    plan.overflow = plan.batch_tokens > cfg.token_budget
    return plan


def plan_batch(inp: PlannerInputs, cfg: SchedulerConfig) -> BatchPlan:
    if cfg.policy == "cacheopt":
        return plan_cacheopt(inp, cfg)
    if cfg.policy == "vllm_block":
        return plan_vllm_block(inp, cfg, chunked=False)
    if cfg.policy == "sarathi_chunked":
        return plan_vllm_block(inp, cfg, chunked=True)
    if cfg.policy == "rlp":
        return plan_rlp(inp, cfg)
    if cfg.policy == "s3":
        return plan_s3(inp, cfg)
    raise ValueError(f"unknown policy {cfg.policy!r}")
