"""Trace synthesis and ingest.

Synthetic traces use Poisson arrivals and lognormal token lengths whose mean
and coefficient of variation are matched to published dataset statistics,
then clipped to the dataset's observed bounds.  Clipping (rather than
resampling) keeps the realized mean close to the target when the bounds sit
near the body of the distribution.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .core import US_PER_S, Request

_PLACEHOLDER_SLO_US = 3_600 * US_PER_S  # replaced by assign_slos


@dataclass(frozen=True)
class TraceSpec:
    arrival_rate: float  # requests per second
    num_requests: int
    input_mean: float
    input_min: int
    input_max: int
    output_mean: float
    output_min: int
    output_max: int
    length_cv: float = 1.0

    def __post_init__(self) -> None:
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be > 0")
        if self.num_requests < 1:
            raise ValueError("num_requests must be >= 1")
        for side in ("input", "output"):
            lo = getattr(self, f"{side}_min")
            hi = getattr(self, f"{side}_max")
            mean = getattr(self, f"{side}_mean")
            if not 1 <= lo <= hi:
                raise ValueError(f"{side} bounds must satisfy 1 <= min <= max")
            if not lo <= mean <= hi:
                raise ValueError(f"{side}_mean must lie within its bounds")
        if self.length_cv <= 0:
            raise ValueError("length_cv must be > 0")

    def sized(self, num_requests: int, arrival_rate: float | None = None) -> "TraceSpec":
        """Copy with a different request count (and optionally rate)."""
        return dataclasses.replace(
            self, num_requests=num_requests,
            arrival_rate=self.arrival_rate if arrival_rate is None else arrival_rate,
        )


PRESETS = {
    "alpaca": TraceSpec(
        arrival_rate=32.0, num_requests=1000,
        input_mean=19.31, input_min=9, input_max=2470,
        output_mean=58.41, output_min=13, output_max=292,
    ),
    "sharegpt": TraceSpec(
        arrival_rate=28.0, num_requests=1000,
        input_mean=161.31, input_min=16, input_max=3200,
        output_mean=337.99, output_min=19, output_max=991,
    ),
    "bookcorpus": TraceSpec(
        arrival_rate=1.2, num_requests=1000,
        input_mean=1952.11, input_min=18, input_max=8192,
        output_mean=681.2, output_min=32, output_max=1041,
    ),
}


def _lognormal_params(mean: float, cv: float) -> tuple[float, float]:
    sigma2 = math.log(1.0 + cv * cv)
    mu = math.log(mean) - sigma2 / 2.0
    return mu, math.sqrt(sigma2)


def generate(spec: TraceSpec, seed: int) -> List[Request]:
    """Synthesize a trace; SLOs start at a placeholder an hour wide."""
    n = spec.num_requests
    arr_rng = np.random.default_rng([seed, 0])
    in_rng = np.random.default_rng([seed, 1])
    out_rng = np.random.default_rng([seed, 2])

    gaps_s = arr_rng.exponential(1.0 / spec.arrival_rate, size=n)
    arrivals_us = np.floor(np.cumsum(gaps_s) * US_PER_S + 0.5).astype(np.int64)

    mu_in, sig_in = _lognormal_params(spec.input_mean, spec.length_cv)
    mu_out, sig_out = _lognormal_params(spec.output_mean, spec.length_cv)
    prompts = np.clip(np.rint(in_rng.lognormal(mu_in, sig_in, size=n)),
                      spec.input_min, spec.input_max).astype(np.int64)
    outputs = np.clip(np.rint(out_rng.lognormal(mu_out, sig_out, size=n)),
                      spec.output_min, spec.output_max).astype(np.int64)

    return [
        Request(
            id=i, arrival_us=int(arrivals_us[i]), prompt_len=int(prompts[i]),
            true_output_len=int(outputs[i]),
            slo_ttft_us=_PLACEHOLDER_SLO_US, slo_tbt_us=_PLACEHOLDER_SLO_US,
        )
        for i in range(n)
    ]


_CSV_HEADER = ["arrival_us", "prompt_len", "output_len"]


def ingest_csv(path: str) -> List[Request]:
    """Load a trace from CSV with columns arrival_us,prompt_len,output_len.

    Arrivals must be non-decreasing; every violation is reported with its
    1-based line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [h.strip() for h in header] != _CSV_HEADER:
            raise ValueError(
                f"{path}: bad header {header!r}, expected {','.join(_CSV_HEADER)}"
            )
        reqs: List[Request] = []
        prev_arrival = -1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path} line {lineno}: expected 3 fields")
            try:
                arrival, prompt, output = (int(x) for x in row)
            except ValueError:
                raise ValueError(
                    f"{path} line {lineno}: non-integer field in {row!r}"
                ) from None
            if arrival < prev_arrival:
                raise ValueError(
                    f"{path} line {lineno}: arrival {arrival} before previous "
                    f"{prev_arrival}"
                )
            prev_arrival = arrival
            try:
                reqs.append(Request(
                    id=len(reqs), arrival_us=arrival, prompt_len=prompt,
                    true_output_len=output,
                    slo_ttft_us=_PLACEHOLDER_SLO_US,
                    slo_tbt_us=_PLACEHOLDER_SLO_US,
                ))
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return reqs


@dataclass(frozen=True)
class SloPolicy:
    """Per-request SLOs drawn around calibrated baselines.

    TTFT targets scale with the number of prefill chunks the prompt needs,
    so long prompts are not penalized for work no scheduler can avoid."""
    scale_lo: float = 0.5
    scale_hi: float = 2.5
    chunk_budget: int = 2048

    def __post_init__(self) -> None:
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ValueError("need 0 < scale_lo <= scale_hi")
        if self.chunk_budget < 1:
            raise ValueError("chunk_budget must be >= 1")

    def chunk_factor(self, prompt_len: int) -> int:
        return max(1, math.ceil(prompt_len / self.chunk_budget))


def assign_slos(requests: Sequence[Request], baseline_ttft_us: int,
                baseline_tbt_us: int, policy: SloPolicy, seed: int) -> None:
    """Set slo_ttft_us and slo_tbt_us in place with independent scale draws."""
    if baseline_ttft_us <= 0 or baseline_tbt_us <= 0:
        raise ValueError("baselines must be > 0")
    ttft_rng = np.random.default_rng([seed, 10])
    tbt_rng = np.random.default_rng([seed, 11])
    n = len(requests)
    u_ttft = ttft_rng.uniform(policy.scale_lo, policy.scale_hi, size=n)
    u_tbt = tbt_rng.uniform(policy.scale_lo, policy.scale_hi, size=n)
    for i, req in enumerate(requests):
        factor = policy.chunk_factor(req.prompt_len)
        req.slo_ttft_us = max(1, int(round(baseline_ttft_us * u_ttft[i] * factor)))
        req.slo_tbt_us = max(1, int(round(baseline_tbt_us * u_tbt[i])))
