import json

import pytest

from vlaforge import profiler
from vlaforge.errors import DomainError, FormatError, IntegrityError
from vlaforge.profiler import (
    ThroughputRecord,
    format_table,
    parse_duration,
    profile_report,
    report_from_event_log,
    samples_per_second,
    scaling_efficiency,
)

# published single-node sweep: per-GPU batch scaling on one 8-GPU node
SINGLE_NODE = [
    ThroughputRecord(gpus=8, per_gpu_batch=2, time_per_100k="19:32:17", gpu_util="74%"),
    ThroughputRecord(gpus=8, per_gpu_batch=4, time_per_100k="24:35:59", gpu_util="89%"),
    ThroughputRecord(gpus=8, per_gpu_batch=8, time_per_100k="31:25:38", gpu_util="92%"),
    ThroughputRecord(gpus=8, per_gpu_batch=16, time_per_100k="49:15:53", gpu_util="91%"),
    ThroughputRecord(gpus=8, per_gpu_batch=24, time_per_100k="66:47:02", gpu_util="96%"),
]
SINGLE_NODE_SAMPLES_PER_S = [22.7, 36.1, 56.6, 72.2, 79.9]

# published multi-node sweep: fixed per-GPU batch 8, growing GPU count
MULTI_NODE = [
    ThroughputRecord(gpus=8, per_gpu_batch=8, time_per_100k="20:25:48"),
    ThroughputRecord(gpus=16, per_gpu_batch=8, time_per_100k="23:36:00"),
    ThroughputRecord(gpus=32, per_gpu_batch=8, time_per_100k="24:58:45"),
    ThroughputRecord(gpus=64, per_gpu_batch=8, time_per_100k="25:40:59"),
    ThroughputRecord(gpus=128, per_gpu_batch=8, time_per_100k="25:35:26"),
    ThroughputRecord(gpus=256, per_gpu_batch=8, time_per_100k="25:51:41"),
]
MULTI_NODE_SAMPLES_PER_S = [87.0, 150.7, 284.7, 553.8, 1111.5, 2200.0]
MULTI_NODE_EFFICIENCY = [100.0, 86.7, 81.9, 79.6, 79.9, 79.1]


def test_parse_duration_values():
    assert parse_duration("19:32:17") == 70337
    assert parse_duration("66:47:02") == 240422
    assert parse_duration("00:00:00") == 0
    assert parse_duration("100:00:01") == 360001


@pytest.mark.parametrize("bad", ["19:61:00", "19:00:61", "1:2:3", "x", "10:00", ""])
def test_parse_duration_rejects(bad):
    with pytest.raises(FormatError):
        parse_duration(bad)


def test_samples_per_second_examples():
    assert samples_per_second(128, 1.774) == pytest.approx(72.2, abs=0.05)
    assert samples_per_second(64, 0.735) == pytest.approx(87.07, abs=0.01)
    assert samples_per_second(2048, 0.931) == pytest.approx(2199.8, abs=0.1)


def test_samples_per_second_domain():
    with pytest.raises(DomainError):
        samples_per_second(64, 0.0)
    with pytest.raises(DomainError):
        samples_per_second(0, 1.0)


def test_samples_per_second_homogeneous():
    base = samples_per_second(64, 0.7)
    assert samples_per_second(128, 0.7) == pytest.approx(2 * base, rel=1e-15)


def test_scaling_efficiency_examples():
    assert scaling_efficiency(150.7, 16, 87.0, 8) == pytest.approx(86.6, abs=0.05)
    assert scaling_efficiency(2200.0, 256, 87.0, 8) == pytest.approx(79.0, abs=0.05)
    assert scaling_efficiency(87.0, 8, 87.0, 8) == 100.0


def test_scaling_efficiency_domain():
    with pytest.raises(DomainError):
        scaling_efficiency(100.0, 4, 87.0, 8)
    with pytest.raises(DomainError):
        scaling_efficiency(-1.0, 16, 87.0, 8)


def test_single_node_table_reproduced():
    report = profile_report(SINGLE_NODE)
    got = [r["samples_per_s"] for r in report["rows"]]
    for value, published in zip(got, SINGLE_NODE_SAMPLES_PER_S):
        assert value == pytest.approx(published, abs=0.1)
    assert all("scaling_eff_pct" not in r for r in report["rows"])  # same gpus
    assert [r["global_batch"] for r in report["rows"]] == [16, 32, 64, 128, 192]


def test_multi_node_table_reproduced():
    report = profile_report(MULTI_NODE)
    got_tp = [r["samples_per_s"] for r in report["rows"]]
    got_eff = [r["scaling_eff_pct"] for r in report["rows"]]
    for value, published in zip(got_tp, MULTI_NODE_SAMPLES_PER_S):
        # published rounding tolerance: +-0.1 samples/s per hundred
        assert value == pytest.approx(published, abs=max(0.1, published * 1e-3))
    for value, published in zip(got_eff, MULTI_NODE_EFFICIENCY):
        assert value == pytest.approx(published, abs=0.5)
    assert report["rows"][0]["scaling_eff_pct"] == 100.0


def test_inconsistent_global_batch_named():
    bad = ThroughputRecord(gpus=8, per_gpu_batch=8, time_per_100k="20:00:00",
                           global_batch=100)
    with pytest.raises(IntegrityError, match="gpus=8"):
        profile_report([bad])


def test_explicit_consistent_global_batch_ok():
    rec = ThroughputRecord(gpus=8, per_gpu_batch=8, time_per_100k="20:00:00",
                           global_batch=64)
    assert profile_report([rec])["rows"][0]["global_batch"] == 64


def test_event_log_report(tmp_path):
    path = tmp_path / "events.jsonl"
    with open(path, "w") as f:
        for step in range(10):
            f.write(json.dumps({"step": step, "lr": 0.1, "action_loss": 1.0,
                                "wall_ms": 500.0, "global_batch": 32}) + "\n")
    report = report_from_event_log(path)
    row = report["rows"][0]
    assert row["sec_per_step"] == pytest.approx(0.5)
    assert row["samples_per_s"] == pytest.approx(64.0)
    assert row["steps"] == 10


def test_event_log_mixed_batch_rejected(tmp_path):
    path = tmp_path / "events.jsonl"
    with open(path, "w") as f:
        f.write(json.dumps({"step": 0, "wall_ms": 1.0, "global_batch": 8}) + "\n")
        f.write(json.dumps({"step": 1, "wall_ms": 1.0, "global_batch": 16}) + "\n")
    with pytest.raises(IntegrityError):
        report_from_event_log(path)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "runs.csv"
    path.write_text(
        "gpus,per_gpu_batch,time_per_100k,gpu_util\n"
        "8,2,19:32:17,74%\n8,4,24:35:59,\n"
    )
    records = profiler.read_records_csv(path)
    assert records[0].gpu_util == "74%"
    assert records[1].gpu_util is None
    report = profile_report(records)
    assert report["rows"][0]["samples_per_s"] == pytest.approx(22.7, abs=0.1)


def test_format_table_aligned():
    text = format_table(profile_report(MULTI_NODE))
    lines = text.splitlines()
    assert len(lines) == 2 + len(MULTI_NODE)
    assert "samples_per_s" in lines[0]
    assert "scaling_eff_pct" in lines[0]
    widths = {len(l) for l in lines}
    assert len(widths) == 1  # every row padded to the same width
