"""Domain-type and lifecycle tests."""
import pytest

from kvcsim.core import (
    Lifecycle,
    Request,
    RequestRuntime,
    Strategy,
    remaining_tbt,
    remaining_ttft,
    to_us,
    transition,
)

MS = 1_000


def make_req(arrival_us=0, prompt_len=10, true_output_len=5,
             slo_ttft_us=500 * MS, slo_tbt_us=200 * MS):
    return Request(
        id=1,
        arrival_us=arrival_us,
        prompt_len=prompt_len,
        true_output_len=true_output_len,
        slo_ttft_us=slo_ttft_us,
        slo_tbt_us=slo_tbt_us,
    )


# ---------------------------------------------------------------------------
# construction invariants


def test_request_rejects_bad_fields():
    with pytest.raises(ValueError):
        make_req(prompt_len=0)
    with pytest.raises(ValueError):
        make_req(true_output_len=0)
    with pytest.raises(ValueError):
        make_req(slo_ttft_us=0)
    with pytest.raises(ValueError):
        make_req(slo_tbt_us=-1)


def test_to_us_rounds_half_up():
    assert to_us(0.0015) == 2
    assert to_us(8.2) == 8200
    assert to_us(0.0) == 0


# ---------------------------------------------------------------------------
# remaining_ttft / remaining_tbt


def test_remaining_ttft_direct():
    req = make_req(arrival_us=0, slo_ttft_us=500 * MS)
    rt = RequestRuntime()
    assert remaining_ttft(req, rt, now_us=100 * MS) == 400 * MS


def test_remaining_ttft_boundary():
    req = make_req(arrival_us=0, slo_ttft_us=500 * MS)
    assert remaining_ttft(req, RequestRuntime(), now_us=500 * MS) == 0


def test_remaining_ttft_negative():
    req = make_req(arrival_us=200 * MS, slo_ttft_us=300 * MS)
    assert remaining_ttft(req, RequestRuntime(), now_us=600 * MS) == -100 * MS


def test_remaining_ttft_rejects_after_first_token():
    req = make_req()
    rt = RequestRuntime(first_token_at_us=10)
    with pytest.raises(ValueError):
        remaining_ttft(req, rt, now_us=20)


def test_remaining_tbt_direct():
    req = make_req(slo_tbt_us=200 * MS)
    rt = RequestRuntime(first_token_at_us=1000 * MS, last_token_at_us=1000 * MS)
    assert remaining_tbt(req, rt, now_us=1100 * MS) == 100 * MS
    assert remaining_tbt(req, rt, now_us=1200 * MS) == 0


def test_remaining_tbt_negative():
    req = make_req(slo_tbt_us=50 * MS)
    rt = RequestRuntime(first_token_at_us=0, last_token_at_us=0)
    assert remaining_tbt(req, rt, now_us=80 * MS) == -30 * MS


def test_remaining_tbt_rejects_before_first_token():
    req = make_req()
    with pytest.raises(ValueError):
        remaining_tbt(req, RequestRuntime(), now_us=10)


# ---------------------------------------------------------------------------
# lifecycle transitions


def test_legal_transitions():
    req = make_req()
    rt = RequestRuntime()
    transition(req, rt, Lifecycle.RUNNING)
    assert req.state is Lifecycle.RUNNING
    transition(req, rt, Lifecycle.PREEMPTED, strategy=Strategy.SWAP)
    assert req.state is Lifecycle.PREEMPTED
    assert rt.preemption_count == 1
    transition(req, rt, Lifecycle.RUNNING)
    transition(req, rt, Lifecycle.COMPLETED)
    assert req.state is Lifecycle.COMPLETED


def test_illegal_transition_names_both_states():
    req = make_req()
    rt = RequestRuntime()
    transition(req, rt, Lifecycle.RUNNING)
    transition(req, rt, Lifecycle.COMPLETED)
    with pytest.raises(ValueError) as exc:
        transition(req, rt, Lifecycle.RUNNING)
    assert "completed" in str(exc.value).lower()
    assert "running" in str(exc.value).lower()


def test_waiting_cannot_complete_directly():
    req = make_req()
    with pytest.raises(ValueError):
        transition(req, RequestRuntime(), Lifecycle.COMPLETED)


def test_preempt_requires_strategy():
    req = make_req()
    rt = RequestRuntime()
    transition(req, rt, Lifecycle.RUNNING)
    with pytest.raises(ValueError):
        transition(req, rt, Lifecycle.PREEMPTED)
