"""Operator surface.

Subcommands: run one simulation, compare policies on a shared workload,
sweep a single knob, fit cost regressors from profile samples, and emit a
synthetic profile.  All output is machine-first (JSON/CSV); every command
honors --seed, and reruns with the same seed produce identical bytes.

Run-config files are JSON.  Sections map one-to-one onto the library's
config dataclasses; unknown keys and invariant violations are reported per
field with exit code 2.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Request
from .costmodel import IterationCost, TruthCosts, sample_profile
from .engine import (
    Engine,
    EngineConfig,
    MetricsReport,
    calibrate_slo_baselines,
    write_events_jsonl,
)
from .estimation import ConfidencePolicy, PredictorConfig
from .preemption import (
    BucketConfig,
    RecomputeModel,
    SwapModel,
    fit_recompute,
    fit_swap,
    sweet_spot,
)
from .scheduler import POLICIES, SchedulerConfig
from .workload import PRESETS, SloPolicy, assign_slos, generate, ingest_csv

SWEEP_AXES = ("fixed_padding", "arrival_rate", "confidence", "block_size",
              "reserved_blocks", "m")


class ConfigError(Exception):
    def __init__(self, errors: Sequence[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class WorkloadSection:
    preset: str = "alpaca"
    num_requests: int = 200
    arrival_rate: Optional[float] = None  # None keeps the preset rate
    trace_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.trace_path is None:
            if self.preset not in PRESETS:
                raise ValueError(
                    f"unknown preset {self.preset!r}, expected one of "
                    f"{sorted(PRESETS)}"
                )
            if self.num_requests < 1:
                raise ValueError("num_requests must be >= 1")
            if self.arrival_rate is not None and self.arrival_rate <= 0:
                raise ValueError("arrival_rate must be > 0")


@dataclass(frozen=True)
class PoolSection:
    capacity_tokens: int = 16_384
    block_size: int = 8
    reserved_blocks: int = 8
    allow_stacking: bool = False

    def __post_init__(self) -> None:
        if self.capacity_tokens < 1:
            raise ValueError("capacity_tokens must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.reserved_blocks < 0:
            raise ValueError("reserved_blocks must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    workload: WorkloadSection
    slo: SloPolicy
    engine: EngineConfig
    out_dir: str


def _make(cls, data: dict, section: str, errors: List[str]):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key in names:
            kwargs[key] = value
        else:
            errors.append(f"{section}: unknown key {key!r}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: {exc}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config {path}: invalid JSON ({exc})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"config {path}: top level must be an object"])

    known = {"workload", "slo", "scheduler", "predictor", "confidence",
             "cost", "pool", "fixed_confidence", "horizon_factor",
             "validate_every", "seed", "out_dir"}
    errors: List[str] = [f"config: unknown key {k!r}" for k in data
                         if k not in known]

    def section(name: str) -> dict:
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            errors.append(f"{name}: must be an object")
            return {}
        return dict(raw)

    workload = _make(WorkloadSection, section("workload"), "workload", errors)
    if workload and workload.trace_path is not None:
        if not Path(workload.trace_path).is_file():
            errors.append(
                f"workload.trace_path: {workload.trace_path} does not exist"
            )
    slo = _make(SloPolicy, section("slo"), "slo", errors)

    sched_data = section("scheduler")
    if isinstance(sched_data.get("buckets"), dict):
        bucket_data = dict(sched_data["buckets"])
        if isinstance(bucket_data.get("slo_edges_us"), list):
            bucket_data["slo_edges_us"] = tuple(bucket_data["slo_edges_us"])
        buckets = _make(BucketConfig, bucket_data,
                        "scheduler.buckets", errors)
        sched_data["buckets"] = buckets if buckets else BucketConfig()
    sched = _make(SchedulerConfig, sched_data, "scheduler", errors)

    predictor = _make(PredictorConfig, section("predictor"), "predictor",
                      errors)
    confidence = _make(ConfidencePolicy, section("confidence"), "confidence",
                       errors)

    cost_data = section("cost")
    truth = TruthCosts.default()
    if isinstance(cost_data.get("swap"), dict):
        swap = _make(SwapModel, cost_data.pop("swap"), "cost.swap", errors)
        if swap:
            truth = dataclasses.replace(truth, swap_true=swap)
    if isinstance(cost_data.get("recompute"), dict):
        rec = _make(RecomputeModel, cost_data.pop("recompute"),
                    "cost.recompute", errors)
        if rec:
            truth = dataclasses.replace(truth, recompute_true=rec)
    iter_cost = _make(IterationCost, cost_data, "cost", errors)

    pool = _make(PoolSection, section("pool"), "pool", errors)

    if errors or None in (workload, slo, sched, predictor, confidence,
                          iter_cost, pool):
        raise ConfigError(errors or ["config: invalid"])

    if "block_size" in section("pool"):
        sched = dataclasses.replace(sched, small_block_b=pool.block_size)
    try:
        engine = EngineConfig(
            capacity_tokens=pool.capacity_tokens,
            reserved_blocks=pool.reserved_blocks,
            allow_stacking=pool.allow_stacking,
            sched=sched,
            iter_cost=iter_cost,
            predictor=predictor,
            confidence=confidence,
            fixed_confidence=data.get("fixed_confidence"),
            truth=truth,
            horizon_factor=data.get("horizon_factor", 10),
            validate_every=data.get("validate_every", 0),
            seed=data.get("seed", 0),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"config: {exc}"]) from None
    return RunConfig(workload=workload, slo=slo, engine=engine,
                     out_dir=str(data.get("out_dir", "out")))


def serialize_run_config(rcfg: RunConfig) -> dict:
    eng = rcfg.engine
    return {
        "workload": dataclasses.asdict(rcfg.workload),
        "slo": dataclasses.asdict(rcfg.slo),
        "scheduler": dataclasses.asdict(eng.sched),
        "predictor": dataclasses.asdict(eng.predictor),
        "confidence": dataclasses.asdict(eng.confidence),
        "cost": {
            **dataclasses.asdict(eng.iter_cost),
            "swap": dataclasses.asdict(eng.truth.swap_true),
            "recompute": dataclasses.asdict(eng.truth.recompute_true),
        },
        "pool": {
            "capacity_tokens": eng.capacity_tokens,
            "block_size": eng.sched.small_block_b,
            "reserved_blocks": eng.reserved_blocks,
            "allow_stacking": eng.allow_stacking,
        },
        "fixed_confidence": eng.fixed_confidence,
        "horizon_factor": eng.horizon_factor,
        "validate_every": eng.validate_every,
        "seed": eng.seed,
        "out_dir": rcfg.out_dir,
    }


def build_requests(rcfg: RunConfig) -> List[Request]:
    """Realize the workload and stamp SLOs from calibrated baselines."""
    w = rcfg.workload
    if w.trace_path is not None:
        reqs = ingest_csv(w.trace_path)
    else:
        spec = PRESETS[w.preset].sized(w.num_requests, w.arrival_rate)
        reqs = generate(spec, rcfg.engine.seed)
    ttft_base, tbt_base = calibrate_slo_baselines(reqs, rcfg.engine)
    assign_slos(reqs, ttft_base, tbt_base, rcfg.slo, rcfg.engine.seed)
    return reqs


def _flatten(report: MetricsReport) -> Dict[str, object]:
    row: Dict[str, object] = {}
    for key, value in report.to_dict().items():
        if isinstance(value, dict):
            for sub, v in value.items():
                row[f"{key}_{sub}"] = v
        else:
            row[key] = value
    return row


def _write_csv(path: Path, rows: Sequence[Dict[str, object]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _apply_overrides(rcfg: RunConfig, args) -> RunConfig:
    eng = rcfg.engine
    if getattr(args, "seed", None) is not None:
        eng = dataclasses.replace(eng, seed=args.seed)
    policy = getattr(args, "policy_single", None)
    if policy is not None:
        if policy not in POLICIES:
            raise ConfigError(
                [f"unknown policy {policy!r}, valid: {', '.join(POLICIES)}"]
            )
        eng = dataclasses.replace(
            eng, sched=dataclasses.replace(eng.sched, policy=policy)
        )
    out_dir = args.out if args.out is not None else rcfg.out_dir
    return dataclasses.replace(rcfg, engine=eng, out_dir=out_dir)


# -- subcommands -------------------------------------------------------------


def cmd_run(args) -> int:
    rcfg = _apply_overrides(load_run_config(args.config), args)
    reqs = build_requests(rcfg)
    cfg = dataclasses.replace(rcfg.engine, record_events=args.trace_events)
    eng = Engine(reqs, cfg)
    report = eng.run()
    out = Path(rcfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    _write_csv(out / "metrics.csv", [_flatten(report)])
    if args.trace_events:
        write_events_jsonl(eng.events, str(out / "events.jsonl"))
    print(f"policy={report.policy} completed={report.completed}"
          f"/{report.num_requests} preemptions={report.preemption_total}")
    print(f"wrote {out / 'metrics.json'}")
    return 0


def cmd_compare(args) -> int:
    policies = args.policy or []
    if len(policies) < 2:
        raise ConfigError(["compare: need at least two --policy flags"])
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ConfigError(
            [f"unknown policy {p!r}, valid: {', '.join(POLICIES)}"
             for p in unknown]
        )
    rcfg = _apply_overrides(load_run_config(args.config), args)
    base_reqs = build_requests(rcfg)
    rows = []
    for policy in policies:
        cfg = dataclasses.replace(
            rcfg.engine,
            sched=dataclasses.replace(rcfg.engine.sched, policy=policy),
            record_events=False,
        )
        report = Engine(copy.deepcopy(base_reqs), cfg).run()
        rows.append(_flatten(report))
        print(f"{policy}: completed={report.completed} "
              f"ttft_att={report.ttft_attainment:.3f} "
              f"tbt_att={report.tbt_attainment:.3f} "
              f"preemptions={report.preemption_total}")
    out = Path(rcfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "compare.csv", rows)
    print(f"wrote {out / 'compare.csv'}")
    return 0


def _parse_numbers(raw: str, label: str) -> List[str]:
    vals = [v.strip() for v in raw.split(",") if v.strip()]
    if not vals:
        raise ConfigError([f"{label}: no values given"])
    return vals


def _sweep_variant(rcfg: RunConfig, axis: str, value: str) -> RunConfig:
    eng = rcfg.engine
    try:
        if axis == "fixed_padding":
            eng = dataclasses.replace(eng, predictor=dataclasses.replace(
                eng.predictor, fixed_padding=int(value)))
        elif axis == "arrival_rate":
            if rcfg.workload.trace_path is not None:
                raise ConfigError(
                    ["sweep: arrival_rate needs a synthetic workload"])
            rcfg = dataclasses.replace(rcfg, workload=dataclasses.replace(
                rcfg.workload, arrival_rate=float(value)))
        elif axis == "confidence":
            eng = dataclasses.replace(eng, fixed_confidence=float(value))
        elif axis == "block_size":
            eng = dataclasses.replace(eng, sched=dataclasses.replace(
                eng.sched, small_block_b=int(value)))
        elif axis == "reserved_blocks":
            eng = dataclasses.replace(eng, reserved_blocks=int(value))
        elif axis == "m":
            eng = dataclasses.replace(eng, sched=dataclasses.replace(
                eng.sched, preallocate_m=int(value)))
        else:
            raise ConfigError(
                [f"sweep: unknown axis {axis!r}, valid: "
                 f"{', '.join(SWEEP_AXES)}"])
    except ValueError as exc:
        raise ConfigError([f"sweep: bad value {value!r} for {axis} ({exc})"])
    return dataclasses.replace(rcfg, engine=eng)


def _sweep_one(task) -> Dict[str, object]:
    rcfg, axis, value, seed = task
    rcfg = dataclasses.replace(
        rcfg, engine=dataclasses.replace(rcfg.engine, seed=seed,
                                         record_events=False)
    )
    reqs = build_requests(rcfg)
    report = Engine(reqs, rcfg.engine).run()
    return {"axis": axis, "value": value, "seed": seed, **_flatten(report)}


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(
            [f"sweep: unknown axis {args.axis!r}, valid: "
             f"{', '.join(SWEEP_AXES)}"])
    values = _parse_numbers(args.values, "sweep --values")
    seeds = [int(s) for s in _parse_numbers(args.seeds, "sweep --seeds")]
    rcfg = _apply_overrides(load_run_config(args.config), args)
    tasks = [
        (_sweep_variant(rcfg, args.axis, v), args.axis, v, s)
        for v in values for s in seeds
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    out = Path(rcfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_fit(args) -> int:
    swap_samples, rec_samples = [], []
    try:
        with open(args.samples, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["seq_len", "latency_ms", "kind"]:
                raise ConfigError(
                    [f"fit: bad header {reader.fieldnames}, expected "
                     f"seq_len,latency_ms,kind"])
            for i, row in enumerate(reader, start=2):
                try:
                    pair = (float(row["seq_len"]), float(row["latency_ms"]))
                except (TypeError, ValueError):
                    raise ConfigError(
                        [f"fit: line {i}: non-numeric sample {row!r}"])
                if row["kind"] == "swap":
                    swap_samples.append(pair)
                elif row["kind"] == "recompute":
                    rec_samples.append(pair)
                else:
                    raise ConfigError(
                        [f"fit: line {i}: kind must be swap or recompute"])
    except OSError as exc:
        raise ConfigError([f"fit: {exc}"])
    missing = [name for name, rows in
               (("swap", swap_samples), ("recompute", rec_samples)) if not rows]
    if missing:
        raise ConfigError([f"fit: no {name} samples in {args.samples}"
                           for name in missing])
    try:
        swap = fit_swap(swap_samples)
        rec = fit_recompute(rec_samples)
    except ValueError as exc:
        raise ConfigError([f"fit: {exc}"])
    spot = sweet_spot(rec, swap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coeffs = {
        "swap": dataclasses.asdict(swap),
        "recompute": dataclasses.asdict(rec),
        "sweet_spot": spot.s_star,
    }
    (out / "coefficients.json").write_text(
        json.dumps(coeffs, sort_keys=True, indent=2) + "\n"
    )
    print(f"sweet_spot={spot.s_star} tokens")
    print(f"wrote {out / 'coefficients.json'}")
    return 0


def cmd_profile(args) -> int:
    truth = TruthCosts.default()
    if args.config is not None:
        truth = load_run_config(args.config).engine.truth
    s_values = np.unique(
        np.geomspace(args.min_len, args.max_len, args.points)
        .round().astype(int)
    )
    rng = np.random.default_rng([args.seed or 0, 20])
    rows = sample_profile(truth, [int(s) for s in s_values],
                          args.noise, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "profile.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq_len", "latency_ms", "kind"])
        for row in rows:
            writer.writerow([row.seq_len, repr(row.swap_ms), "swap"])
            writer.writerow([row.seq_len, repr(row.recompute_ms), "recompute"])
    print(f"wrote {out / 'profile.csv'} ({len(rows)} lengths)")
    return 0


# -- entry -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvcsim",
        description="KV-cache-constrained serving simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="run config JSON")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override config seed")

    p_run = sub.add_parser("run", help="simulate one policy")
    common(p_run)
    p_run.add_argument("--policy", dest="policy_single", default=None,
                       help="override config policy")
    p_run.add_argument("--trace-events", action="store_true",
                       help="also write events.jsonl")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several policies on one "
                                           "workload")
    common(p_cmp)
    p_cmp.add_argument("--policy", action="append",
                       help="policy name (repeat, >= 2)")
    p_cmp.set_defaults(func=cmd_compare)

    p_swp = sub.add_parser("sweep", help="vary one knob across seeds")
    common(p_swp)
    p_swp.add_argument("--axis", required=True,
                       help=f"one of {', '.join(SWEEP_AXES)}")
    p_swp.add_argument("--values", required=True,
                       help="comma-separated values")
    p_swp.add_argument("--seeds", default="0", help="comma-separated seeds")
    p_swp.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for (value, seed) pairs")
    p_swp.set_defaults(func=cmd_sweep)

    p_fit = sub.add_parser("fit", help="fit cost models from samples CSV")
    p_fit.add_argument("--samples", required=True,
                       help="CSV: seq_len,latency_ms,kind")
    p_fit.add_argument("--out", default="out", help="output directory")
    p_fit.set_defaults(func=cmd_fit)

    p_prof = sub.add_parser("profile", help="emit synthetic cost samples")
    p_prof.add_argument("--config", default=None,
                        help="take cost coefficients from this config")
    p_prof.add_argument("--out", default="out", help="output directory")
    p_prof.add_argument("--seed", type=int, default=0)
    p_prof.add_argument("--points", type=int, default=40)
    p_prof.add_argument("--min-len", dest="min_len", type=int, default=16)
    p_prof.add_argument("--max-len", dest="max_len", type=int, default=65_536)
    p_prof.add_argument("--noise", type=float, default=0.0,
                        help="relative noise sigma")
    p_prof.set_defaults(func=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(msg, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
