"""Command-line surface: config loading, subcommands, output files."""
import csv
import json

import pytest

from kvcsim.cli import load_run_config, main, serialize_run_config


def base_config(tmp_path, **overrides):
    cfg = {
        "workload": {"preset": "alpaca", "num_requests": 20, "arrival_rate": 32.0},
        "scheduler": {"policy": "cacheopt"},
        "pool": {"capacity_tokens": 4096, "reserved_blocks": 8},
        "seed": 0,
    }
    cfg.update(overrides)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_metrics_files(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(p), "--out", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["policy"] == "cacheopt"
    assert report["num_requests"] == 20
    assert report["completed"] > 0
    rows = read_csv_rows(out / "metrics.csv")
    assert len(rows) == 1
    assert float(rows[0]["ttft_us_p50"]) > 0
    assert not (out / "events.jsonl").exists()


def test_run_trace_events_flag(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(p), "--out", str(out),
                 "--trace-events"]) == 0
    lines = (out / "events.jsonl").read_text().splitlines()
    assert lines
    first = lines[0]
    obj = json.loads(first)
    assert json.dumps(obj, sort_keys=True, separators=(",", ":")) == first


def test_run_same_seed_byte_identical(tmp_path):
    p = base_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(p), "--out", str(out),
                     "--trace-events"]) == 0
        outs.append(out)
    for fname in ("metrics.json", "events.jsonl"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_run_seed_flag_overrides_config(tmp_path):
    p = base_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["run", "--config", str(p), "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(p), "--out", str(out_b),
                 "--seed", "7"]) == 0
    rep_a = json.loads((out_a / "metrics.json").read_text())
    rep_b = json.loads((out_b / "metrics.json").read_text())
    assert rep_a["seed"] == 0
    assert rep_b["seed"] == 7
    assert rep_a["ttft_us"] != rep_b["ttft_us"]


def test_missing_trace_path_exit_2(tmp_path, capsys):
    p = base_config(tmp_path, workload={"trace_path": "no_such_trace.csv"})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "no_such_trace.csv" in capsys.readouterr().err


def test_ingested_trace_runs(tmp_path):
    trace = tmp_path / "trace.csv"
    trace.write_text(
        "arrival_us,prompt_len,output_len\n"
        "0,10,3\n1000,12,4\n2000,8,2\n"
    )
    p = base_config(tmp_path, workload={"trace_path": str(trace)})
    out = tmp_path / "out"
    assert main(["run", "--config", str(p), "--out", str(out)]) == 0
    report = json.loads((out / "metrics.json").read_text())
    assert report["num_requests"] == 3
    assert report["completed"] == 3


def test_invalid_field_reported_with_section(tmp_path, capsys):
    p = base_config(tmp_path, scheduler={"policy": "cacheopt",
                                         "token_budget": -5})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "scheduler" in err
    assert "token_budget" in err


def test_unknown_keys_rejected(tmp_path, capsys):
    p = base_config(tmp_path, schedulerz={"policy": "cacheopt"})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "schedulerz" in capsys.readouterr().err

    p2 = base_config(tmp_path, scheduler={"polcy": "cacheopt"})
    assert main(["run", "--config", str(p2), "--out", str(tmp_path / "o")]) == 2
    assert "polcy" in capsys.readouterr().err


def test_config_roundtrip(tmp_path):
    p = base_config(
        tmp_path,
        predictor={"error_dist": "uniform", "error_scale": 40.0},
        confidence={"alpha": 4.0},
        fixed_confidence=0.8,
        cost={"base_ms": 4.0, "swap": {"gamma_s": 0.003, "delta_s": 5.0}},
        slo={"scale_lo": 0.7},
    )
    rcfg = load_run_config(str(p))
    again = tmp_path / "again.json"
    again.write_text(json.dumps(serialize_run_config(rcfg)))
    assert load_run_config(str(again)) == rcfg
    assert rcfg.engine.predictor.error_scale == 40.0
    assert rcfg.engine.fixed_confidence == 0.8
    assert rcfg.engine.truth.swap_true.gamma_s == 0.003
    assert rcfg.engine.iter_cost.base_ms == 4.0
    assert rcfg.slo.scale_lo == 0.7


def test_pool_block_size_feeds_scheduler(tmp_path):
    p = base_config(tmp_path, pool={"capacity_tokens": 4096, "block_size": 16})
    rcfg = load_run_config(str(p))
    assert rcfg.engine.sched.small_block_b == 16


def test_compare_two_policies(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["compare", "--config", str(p), "--out", str(out),
                 "--policy", "cacheopt", "--policy", "vllm_block"]) == 0
    rows = read_csv_rows(out / "compare.csv")
    assert [r["policy"] for r in rows] == ["cacheopt", "vllm_block"]
    assert rows[0]["num_requests"] == rows[1]["num_requests"] == "20"


def test_compare_same_policy_identical_rows(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["compare", "--config", str(p), "--out", str(out),
                 "--policy", "vllm_block", "--policy", "vllm_block"]) == 0
    rows = read_csv_rows(out / "compare.csv")
    assert rows[0] == rows[1]


def test_compare_unknown_policy_lists_names(tmp_path, capsys):
    p = base_config(tmp_path)
    rc = main(["compare", "--config", str(p), "--out", str(tmp_path / "o"),
               "--policy", "cacheopt", "--policy", "bogus"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "bogus" in err
    assert "vllm_block" in err and "sarathi_chunked" in err


def test_compare_needs_two_policies(tmp_path, capsys):
    p = base_config(tmp_path)
    rc = main(["compare", "--config", str(p), "--out", str(tmp_path / "o"),
               "--policy", "cacheopt"])
    assert rc == 2


def test_sweep_long_csv(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(p), "--out", str(out),
                 "--axis", "fixed_padding", "--values", "0,50",
                 "--seeds", "0,1"]) == 0
    rows = read_csv_rows(out / "sweep.csv")
    assert len(rows) == 4
    assert {(r["value"], r["seed"]) for r in rows} == {
        ("0", "0"), ("0", "1"), ("50", "0"), ("50", "1"),
    }
    for col in ("waiting_us_mean", "execution_us_mean", "preemption_us_mean"):
        assert all(col in r for r in rows)


def test_sweep_single_value(tmp_path):
    p = base_config(tmp_path)
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(p), "--out", str(out),
                 "--axis", "reserved_blocks", "--values", "4"]) == 0
    assert len(read_csv_rows(out / "sweep.csv")) == 1


def test_sweep_rejects_empty_values(tmp_path, capsys):
    p = base_config(tmp_path)
    rc = main(["sweep", "--config", str(p), "--out", str(tmp_path / "o"),
               "--axis", "fixed_padding", "--values", ""])
    assert rc == 2


def test_sweep_rejects_unknown_axis(tmp_path, capsys):
    p = base_config(tmp_path)
    rc = main(["sweep", "--config", str(p), "--out", str(tmp_path / "o"),
               "--axis", "nonsense", "--values", "1"])
    assert rc == 2
    assert "arrival_rate" in capsys.readouterr().err


def test_profile_then_fit_pipeline(tmp_path):
    prof_dir = tmp_path / "prof"
    assert main(["profile", "--out", str(prof_dir)]) == 0
    fit_dir = tmp_path / "fit"
    assert main(["fit", "--samples", str(prof_dir / "profile.csv"),
                 "--out", str(fit_dir)]) == 0
    coeffs = json.loads((fit_dir / "coefficients.json").read_text())
    assert coeffs["swap"]["gamma_s"] == pytest.approx(0.002, rel=1e-9)
    assert coeffs["swap"]["delta_s"] == pytest.approx(8.0, rel=1e-9)
    assert coeffs["recompute"]["alpha_r"] == pytest.approx(1e-6, rel=0.01)
    assert abs(coeffs["recompute"]["beta_r"] - 2.0) <= 0.02
    assert abs(coeffs["sweet_spot"] - 4000) <= 1


def test_fit_needs_both_kinds(tmp_path, capsys):
    samples = tmp_path / "samples.csv"
    samples.write_text(
        "seq_len,latency_ms,kind\n100,8.2,swap\n200,8.4,swap\n"
    )
    rc = main(["fit", "--samples", str(samples), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "recompute" in capsys.readouterr().err
