"""Training-efficiency arithmetic: wall-time parsing, sample throughput,
multi-node scaling efficiency, and report tables.

Pure log/record consumption; this module never launches anything. Sample
throughput is global_batch / seconds_per_step with seconds_per_step taken
from the time per 100K optimization steps; scaling efficiency compares
measured throughput against linear extrapolation from the smallest-GPU row.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DomainError, FormatError, IntegrityError

STEPS_PER_WINDOW = 100_000

_DURATION = re.compile(r"^(\d+):([0-5]\d):([0-5]\d)$")


def parse_duration(text: str) -> int:
    """'H+:MM:SS' -> seconds. Minutes/seconds must be < 60."""
    m = _DURATION.match(text.strip())
    if not m:
        raise FormatError(f"bad duration {text!r} (want H+:MM:SS)")
    h, mm, ss = (int(g) for g in m.groups())
    return 3600 * h + 60 * mm + ss


def samples_per_second(global_batch: int, sec_per_step: float) -> float:
    if sec_per_step <= 0:
        raise DomainError(f"sec_per_step must be positive, got {sec_per_step}")
    if global_batch <= 0:
        raise DomainError(f"global_batch must be positive, got {global_batch}")
    return global_batch / sec_per_step


def scaling_efficiency(
    throughput: float, gpus: int, throughput_base: float, gpus_base: int
) -> float:
    """Percentage of ideal linear scaling from the baseline row."""
    if gpus_base <= 0 or gpus < gpus_base:
        raise DomainError("need gpus >= gpus_base > 0")
    if throughput_base <= 0 or throughput <= 0:
        raise DomainError("throughputs must be positive")
    ideal = throughput_base * gpus / gpus_base
    # ratio first: the baseline against itself is exactly 100.0
    return 100.0 * (throughput / ideal)


@dataclass(frozen=True)
class ThroughputRecord:
    gpus: int
    per_gpu_batch: int
    time_per_100k: str
    global_batch: Optional[int] = None  # derived when omitted
    gpu_util: Optional[str] = None  # pass-through, never measured here

    def resolved_global_batch(self) -> int:
        derived = self.gpus * self.per_gpu_batch
        if self.global_batch is not None and self.global_batch != derived:
            raise IntegrityError(
                f"row (gpus={self.gpus}, per_gpu_batch={self.per_gpu_batch}): "
                f"global_batch {self.global_batch} != {derived}"
            )
        return derived

    def sec_per_step(self) -> float:
        return parse_duration(self.time_per_100k) / STEPS_PER_WINDOW


def profile_report(records: Sequence[ThroughputRecord]) -> dict:
    """Derived columns for a table of runs. When GPU count varies across rows,
    adds scaling efficiency relative to the smallest-GPU row."""
    if not records:
        raise DomainError("no records")
    rows = []
    for rec in records:
        gb = rec.resolved_global_batch()
        sps = rec.sec_per_step()
        rows.append(
            {
                "gpus": rec.gpus,
                "per_gpu_batch": rec.per_gpu_batch,
                "global_batch": gb,
                "time_per_100k": rec.time_per_100k,
                "sec_per_step": sps,
                "samples_per_s": samples_per_second(gb, sps),
                **({"gpu_util": rec.gpu_util} if rec.gpu_util is not None else {}),
            }
        )
    gpu_counts = {r["gpus"] for r in rows}
    if len(gpu_counts) > 1:
        base = min(rows, key=lambda r: r["gpus"])
        for r in rows:
            r["scaling_eff_pct"] = scaling_efficiency(
                r["samples_per_s"], r["gpus"], base["samples_per_s"], base["gpus"]
            )
    return {"rows": rows}


def report_from_event_log(path) -> dict:
    """One-row report from a trainer JSONL event log: seconds per step is the
    mean wall_ms (all step-attributed time included)."""
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    steps = [r for r in records if "wall_ms" in r]
    if not steps:
        raise FormatError(f"no step records in {path}")
    batches = {r["global_batch"] for r in steps}
    if len(batches) != 1:
        raise IntegrityError(f"mixed global_batch values in {path}: {sorted(batches)}")
    sec_per_step = sum(r["wall_ms"] for r in steps) / len(steps) / 1e3
    global_batch = batches.pop()
    return {
        "rows": [
            {
                "steps": len(steps),
                "global_batch": global_batch,
                "sec_per_step": sec_per_step,
                "samples_per_s": samples_per_second(global_batch, sec_per_step),
            }
        ]
    }


def read_records_csv(path) -> list[ThroughputRecord]:
    """CSV columns: gpus, per_gpu_batch, time_per_100k [, global_batch, gpu_util]."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                ThroughputRecord(
                    gpus=int(row["gpus"]),
                    per_gpu_batch=int(row["per_gpu_batch"]),
                    time_per_100k=row["time_per_100k"],
                    global_batch=int(row["global_batch"]) if row.get("global_batch") else None,
                    gpu_util=row.get("gpu_util") or None,
                )
            )
    return out


def format_table(report: dict) -> str:
    rows = report["rows"]
    columns = list(rows[0].keys())
    rendered = [
        {
            c: (f"{v:.3f}" if isinstance(v, float) and c == "sec_per_step"
                else f"{v:.1f}" if isinstance(v, float) else str(v))
            for c, v in row.items()
        }
        for row in rows
    ]
    widths = {
        c: max(len(c), *(len(r.get(c, "")) for r in rendered)) for c in columns
    }
    header = "  ".join(c.rjust(widths[c]) for c in columns)
    lines = [header, "  ".join("-" * widths[c] for c in columns)]
    for r in rendered:
        lines.append("  ".join(r.get(c, "").rjust(widths[c]) for c in columns))
    return "\n".join(lines)
