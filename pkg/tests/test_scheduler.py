"""Batch-formation and KVC-granting tests for the pure scheduling ops."""
from fractions import Fraction

import numpy as np
import pytest

from kvcsim.core import Lifecycle
from kvcsim.scheduler import (
    AllocDemand,
    CriticalSets,
    PairCandidate,
    ReqView,
    SchedulerConfig,
    allocate_remaining,
    basic_demand,
    classify_critical,
    ensure_capacity,
    fill_token_budget,
    pair_release,
    proactive_include,
    rlp_demand,
    s3_demand,
)

MS = 1_000


def view(req_id=1, state=Lifecycle.WAITING, kv_need=10, generated=0,
         estimated_total=20, predicted_total=20, allocated=0, used=0,
         remaining_ttft_us=None, remaining_tbt_us=None, slo_tbt_us=200 * MS,
         arrival_us=0, ready=True):
    return ReqView(
        req_id=req_id, arrival_us=arrival_us, state=state, kv_need=kv_need,
        generated=generated, estimated_total=estimated_total,
        predicted_total=predicted_total, allocated=allocated, used=used,
        slo_ttft_us=500 * MS, slo_tbt_us=slo_tbt_us,
        remaining_ttft_us=remaining_ttft_us, remaining_tbt_us=remaining_tbt_us,
        ready=ready,
    )


# ---------------------------------------------------------------------------
# criticality


def test_waiting_critical_iff_slack_below_epsilon():
    tight = view(req_id=1, remaining_ttft_us=10 * MS)
    loose = view(req_id=2, remaining_ttft_us=1000 * MS)
    sets = classify_critical([tight, loose], [], t_i_max_us=50 * MS,
                             epsilon_us=1 * MS)
    assert [v.req_id for v in sets.n_w] == [1]
    assert [v.req_id for v in sets.n_w_prime] == [2]


def test_blown_deadlines_are_not_critical():
    # a deadline missed by more than epsilon cannot be met by any schedule;
    # keeping it critical would preempt healthy requests for nothing
    hopeless = view(req_id=1, remaining_ttft_us=-5 * MS)
    barely = view(req_id=2, remaining_ttft_us=-500)
    blown_tbt = view(req_id=3, state=Lifecycle.RUNNING, allocated=20, used=20,
                     generated=5, remaining_tbt_us=-5 * MS)
    sets = classify_critical([hopeless, barely], [blown_tbt],
                             t_i_max_us=50 * MS, epsilon_us=1 * MS)
    assert [v.req_id for v in sets.n_w] == [2]
    assert [v.req_id for v in sets.n_w_prime] == [1]
    assert sets.n_r == []
    assert [v.req_id for v in sets.n_r_prime] == [3]


def test_returned_with_spare_allocation_never_critical():
    spare = view(req_id=3, state=Lifecycle.RUNNING, allocated=40, used=20,
                 generated=5, remaining_tbt_us=1 * MS)
    sets = classify_critical([], [spare], t_i_max_us=50 * MS, epsilon_us=1 * MS)
    assert sets.n_r == []
    assert sets.n_r_prime == []


def test_returned_exhausted_critical_by_tbt():
    exhausted = view(req_id=4, state=Lifecycle.RUNNING, allocated=20, used=20,
                     generated=5, remaining_tbt_us=10 * MS)
    calm = view(req_id=5, state=Lifecycle.RUNNING, allocated=20, used=20,
                generated=5, remaining_tbt_us=2000 * MS)
    sets = classify_critical([], [exhausted, calm], t_i_max_us=50 * MS,
                             epsilon_us=1 * MS)
    assert [v.req_id for v in sets.n_r] == [4]
    assert [v.req_id for v in sets.n_r_prime] == [5]


# ---------------------------------------------------------------------------
# demand arithmetic


def test_basic_demand_worked_example():
    n_w = [view(req_id=1, kv_need=40), view(req_id=2, kv_need=60)]
    n_r = [view(req_id=i, state=Lifecycle.RUNNING, allocated=8, used=8)
           for i in (3, 4, 5)]
    sets = CriticalSets(n_w=n_w, n_r=n_r, n_w_prime=[], n_r_prime=[])
    assert basic_demand(sets, small_block_b=8) == 140


def test_basic_demand_empty_and_nr_only():
    assert basic_demand(CriticalSets([], [], [], []), 8) == 0
    n_r = [view(req_id=i, state=Lifecycle.RUNNING, allocated=8, used=8)
           for i in range(5)]
    assert basic_demand(CriticalSets([], n_r, [], []), 8) == 40


def test_basic_demand_discounts_partial_allocations():
    n_w = [view(req_id=1, kv_need=40, allocated=30)]
    sets = CriticalSets(n_w=n_w, n_r=[], n_w_prime=[], n_r_prime=[])
    assert basic_demand(sets, small_block_b=8) == 18


def test_ensure_capacity():
    assert ensure_capacity(pool_free=100, d_kvc=140) == 40
    assert ensure_capacity(pool_free=200, d_kvc=140) == 0


# ---------------------------------------------------------------------------
# token budget


def test_fill_token_budget_admits_within_budget():
    q = [view(req_id=1, kv_need=40, remaining_ttft_us=50 * MS),
         view(req_id=2, kv_need=25, remaining_ttft_us=80 * MS)]
    sets = CriticalSets([], [], q, [])
    selected, overflow = fill_token_budget(sets, q, token_budget=100,
                                           consumed_tokens=30)
    assert [v.req_id for v in selected] == [1, 2]
    assert not overflow


def test_fill_token_budget_stops_at_first_nonfitting():
    q = [view(req_id=1, kv_need=60, remaining_ttft_us=50 * MS),
         view(req_id=2, kv_need=20, remaining_ttft_us=80 * MS)]
    sets = CriticalSets([], [], q, [])
    selected, overflow = fill_token_budget(sets, q, token_budget=100,
                                           consumed_tokens=50)
    assert selected == []
    assert not overflow


def test_fill_token_budget_overflow_flag():
    sets = CriticalSets([], [], [], [])
    selected, overflow = fill_token_budget(sets, [], token_budget=100,
                                           consumed_tokens=130)
    assert selected == []
    assert overflow


# ---------------------------------------------------------------------------
# remaining-KVC amortization


def test_allocate_remaining_grants_demand_when_it_fits():
    demands = [AllocDemand(1, 30, 100, 30), AllocDemand(2, 40, 100, 10)]
    grants = allocate_remaining(demands, a_prime=100)
    assert grants == {1: 30, 2: 40}


def test_allocate_remaining_symmetric_split():
    demands = [AllocDemand(1, 200, 100, 20), AllocDemand(2, 200, 100, 20)]
    grants = allocate_remaining(demands, a_prime=100)
    assert grants == {1: 50, 2: 50}


def test_allocate_remaining_worked_example():
    # RT=[2,1], s^p=[30,10], A'=70 -> weights 6/7 and 1/7 -> [60, 10]
    demands = [AllocDemand(1, 100, 2, 30), AllocDemand(2, 100, 1, 10)]
    grants = allocate_remaining(demands, a_prime=70)
    assert grants == {1: 60, 2: 10}


def test_allocate_remaining_sums_exactly_and_matches_rational_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        demands = [
            AllocDemand(i, int(rng.integers(1, 500)),
                        int(rng.integers(1, 10_000_000)),
                        int(rng.integers(1, 3000)))
            for i in range(n)
        ]
        total_m = sum(d.m_tokens for d in demands)
        if total_m == 0:
            continue
        a_prime = int(rng.integers(0, total_m))  # force the amortizing case
        grants = allocate_remaining(demands, a_prime=a_prime)
        assert sum(grants.values()) == a_prime
        # rational-arithmetic oracle
        wsum = sum(Fraction(d.rt_us) * d.prompt_len for d in demands)
        shares = {
            d.req_id: Fraction(a_prime) * (Fraction(d.rt_us) * d.prompt_len) / wsum
            for d in demands
        }
        floors = {i: int(s) for i, s in shares.items()}
        leftover = a_prime - sum(floors.values())
        order = sorted(shares, key=lambda i: (-(shares[i] - floors[i]), i))
        for i in order[:leftover]:
            floors[i] += 1
        assert grants == floors


def test_allocate_remaining_rt_scaling_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        demands = [
            AllocDemand(i, int(rng.integers(1, 300)),
                        int(rng.integers(1, 1_000_000)), int(rng.integers(1, 500)))
            for i in range(n)
        ]
        a_prime = max(0, sum(d.m_tokens for d in demands) - 17)
        base = allocate_remaining(demands, a_prime=a_prime)
        scaled = [
            AllocDemand(d.req_id, d.m_tokens, d.rt_us * 7, d.prompt_len)
            for d in demands
        ]
        assert allocate_remaining(scaled, a_prime=a_prime) == base


def test_allocate_remaining_clamps_nonpositive_rt():
    demands = [AllocDemand(1, 100, -50, 30), AllocDemand(2, 100, 100, 30)]
    grants = allocate_remaining(demands, a_prime=50)
    assert sum(grants.values()) == 50
    assert grants[2] > grants[1]


# ---------------------------------------------------------------------------
# pair release and proactive inclusion


def test_pair_release_worked_example():
    cands = [PairCandidate(req_id=9, est_remaining_iters=10, release_gain=200)]
    assert pair_release(residual_tokens=150, runway_iters=12, candidates=cands) == 9


def test_pair_release_insufficient_gain():
    cands = [PairCandidate(req_id=9, est_remaining_iters=10, release_gain=100)]
    assert pair_release(150, 12, cands) is None


def test_pair_release_too_late():
    cands = [PairCandidate(req_id=9, est_remaining_iters=15, release_gain=300)]
    assert pair_release(150, 12, cands) is None


def test_pair_release_prefers_soonest_then_id():
    cands = [
        PairCandidate(req_id=9, est_remaining_iters=10, release_gain=200),
        PairCandidate(req_id=3, est_remaining_iters=4, release_gain=200),
        PairCandidate(req_id=5, est_remaining_iters=4, release_gain=200),
    ]
    assert pair_release(150, 12, cands) == 3


def test_pair_release_empty():
    assert pair_release(150, 12, []) is None


def test_proactive_include_boundary():
    soon = view(req_id=1, state=Lifecycle.RUNNING, kv_need=10, generated=18,
                estimated_total=20, allocated=29, used=28)
    later = view(req_id=2, state=Lifecycle.RUNNING, kv_need=10, generated=17,
                 estimated_total=20, allocated=29, used=27)
    fulfilled = view(req_id=3, state=Lifecycle.RUNNING, kv_need=10, generated=18,
                     estimated_total=20, allocated=30, used=28)
    out = proactive_include([soon, later, fulfilled], m=2)
    assert [v.req_id for v in out] == [1]


# ---------------------------------------------------------------------------
# baseline grant arithmetic


def test_s3_demand_bucket_and_doubling():
    assert s3_demand(130, bucket_tokens=50, preempt_count=0) == 150
    assert s3_demand(130, bucket_tokens=50, preempt_count=1) == 300
    assert s3_demand(50, bucket_tokens=50, preempt_count=0) == 50


def test_rlp_demand_adds_fixed_padding():
    assert rlp_demand(60, padding=100) == 160
    assert rlp_demand(0, padding=100) == 101  # at least one output token


def test_scheduler_config_validation():
    with pytest.raises(ValueError):
        SchedulerConfig(token_budget=0)
    with pytest.raises(ValueError):
        SchedulerConfig(preallocate_m=-1)
    with pytest.raises(ValueError):
        SchedulerConfig(policy="unknown")
    with pytest.raises(ValueError):
        SchedulerConfig(victim_rule="random")
