"""Config-driven command surface: gen-data, stats, train, cotrain, serve,
eval, profile. Artifacts land under runs/<run_name>/."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import codec, config as cfgmod, data, envs, mpack, profiler, trainer
from .client import Client
from .errors import VlaForgeError
from .harness import PolicyPredictor, evaluate
from .policy import registry_compose
from .server import ServeOptions, resolve_port, serve_blocking


def _load(args) -> dict:
    return cfgmod.load_config(args.config, args.override or [])


def _store_paths(resolved: dict) -> dict[str, Path]:
    root = Path(resolved["datasets"]["root"])
    return {
        row[0]: root / row[0]
        for row in resolved["datasets"]["vla_data"]["data_mix"]
    }


def _open_stores(resolved: dict):
    stores = {}
    stats = {}
    for name, path in _store_paths(resolved).items():
        store = data.open_store(path)
        stores[name] = store
        stats_path = path / "dataset_statistics.json"
        if stats_path.exists():
            stats[name] = codec.read_statistics_json(stats_path)[""]
        else:
            stats[name] = data.store_statistics(store)
    return stores, stats


def cmd_gen_data(args) -> int:
    resolved = _load(args)
    root = Path(resolved["datasets"]["root"])
    task_seed = cfgmod.purpose_seed(resolved["seed"], "task_placement")
    for entry in resolved["datasets"]["gen"]:
        env_id = entry["env"]
        n = envs.generate_oracle_store(
            root / env_id, env_id, entry["tasks"], entry["episodes_per_task"],
            seed=task_seed, max_steps=entry.get("max_steps", 60),
            noise_scale=entry.get("noise_scale", 0.0),
        )
        print(f"wrote {n} episodes to {root / env_id}")
    return 0


def cmd_stats(args) -> int:
    resolved = _load(args)
    for name, path in _store_paths(resolved).items():
        store = data.open_store(path)
        stats = data.store_statistics(store)
        codec.write_statistics_json(path / "dataset_statistics.json", {name: stats})
        print(f"{name}: dims={stats.dims} rows={stats.sample_count} "
              f"-> {path / 'dataset_statistics.json'}")
    return 0


def _build_training(resolved):
    stores, stats = _open_stores(resolved)
    spec = cfgmod.mixture_spec(resolved)
    k = resolved["model"]["k"]

    def sampler(step, batch_size, draw_offset=0):
        return data.sample_batch(stores, stats, spec, batch_size, k, step,
                                 draw_offset)

    policy_cfg = cfgmod.policy_config(resolved)
    policy_cfg = trainer.fit_fast_merges(
        policy_cfg, sampler(0, 256, 0), budget=resolved["model"]["fast_merge_budget"]
    )
    resolved = dict(resolved)
    resolved["model"] = {**resolved["model"],
                         "fast_merges": [list(m) for m in policy_cfg.fast_merges]}
    policy = registry_compose(policy_cfg)
    return resolved, policy, sampler, stats


def cmd_train(args) -> int:
    resolved = _load(args)
    resolved, policy, sampler, stats = _build_training(resolved)
    tcfg = cfgmod.trainer_config(resolved)
    out = cfgmod.run_dir(resolved)
    pkg = trainer.train_sft(policy, sampler, tcfg, resolved, stats, out)
    print(f"final checkpoint: {pkg.path}")
    return 0


def cmd_cotrain(args) -> int:
    resolved = _load(args)
    resolved, policy, sampler, stats = _build_training(resolved)

    def aux_sampler(step, batch_size):
        # distinct key space from the VLA draws
        return [s.obs for s in sampler(step + 1_000_000, batch_size)]

    tcfg = cfgmod.trainer_config(resolved)
    out = cfgmod.run_dir(resolved)
    pkg = trainer.train_cotrain(policy, sampler, aux_sampler, tcfg, resolved,
                                stats, out)
    print(f"final checkpoint: {pkg.path}")
    return 0


def cmd_serve(args) -> int:
    loaded = trainer.load_checkpoint(args.checkpoint)
    resolved = cfgmod.validate_config(loaded.config_doc)
    options = ServeOptions(
        host=resolved["serve"]["host"],
        port=resolve_port(resolved["serve"]["port"], args.port),
        queue_depth=resolved["serve"]["queue_depth"],
    )
    serve_blocking(loaded.policy, options)
    return 0


def _eval_stats(loaded):
    stats_map = loaded.stats_by_name
    if len(stats_map) != 1:
        raise VlaForgeError(
            f"evaluation needs exactly one dataset statistics entry, "
            f"found {sorted(stats_map)}"
        )
    return next(iter(stats_map.values()))


def cmd_eval(args) -> int:
    loaded = trainer.load_checkpoint(args.checkpoint)
    resolved = cfgmod.validate_config(loaded.config_doc)
    if args.config:
        resolved = cfgmod.load_config(args.config, args.override or [])
    suite = cfgmod.suite_entries(resolved)
    adapter = cfgmod.adapter_config(resolved)
    stats = _eval_stats(loaded)
    eval_seed = cfgmod.purpose_seed(resolved["seed"], "evaluation")
    if args.addr:
        predictor = Client(args.addr)
    else:
        predictor = PolicyPredictor(loaded.policy)
    recorder = None
    trace_records = []
    if args.record_trace:
        from . import wire

        def recorder(obs, seed, chunk):
            trace_records.append({
                "image": wire.encode_image_map(obs.views),
                "lang": obs.instruction,
                "state": [float(x) for x in obs.state] if obs.state is not None else None,
                "seed": int(seed),
                "normalized_actions": [[float(v) for v in row] for row in chunk.values],
            })
    report = evaluate(predictor, suite, adapter, stats, seed=eval_seed,
                      recorder=recorder)
    out = cfgmod.run_dir(resolved)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "eval_report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=2))
    print(f"mean success: {report.mean_success_pct:.1f}% over {report.trials} trials")
    print(f"report: {report_path}")
    if args.record_trace:
        Path(args.record_trace).write_bytes(mpack.packb({"records": trace_records}))
        print(f"trace: {args.record_trace} ({len(trace_records)} queries)")
    if args.addr:
        predictor.close()
    return 0


def cmd_profile(args) -> int:
    if args.event_log:
        report = profiler.report_from_event_log(args.event_log)
    else:
        report = profiler.profile_report(profiler.read_records_csv(args.csv))
    print(profiler.format_table(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2))
        print(f"json: {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlaforge")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", required=True)
        p.add_argument("--override", action="append", metavar="KEY.PATH=VALUE")
        return p

    with_config(sub.add_parser("gen-data")).set_defaults(fn=cmd_gen_data)
    with_config(sub.add_parser("stats")).set_defaults(fn=cmd_stats)
    with_config(sub.add_parser("train")).set_defaults(fn=cmd_train)
    with_config(sub.add_parser("cotrain")).set_defaults(fn=cmd_cotrain)

    p = sub.add_parser("serve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-c", "--config", default=None,
                   help="override the checkpoint's embedded config")
    p.add_argument("--override", action="append", metavar="KEY.PATH=VALUE")
    p.add_argument("--addr", default=None, help="ws://host:port policy server")
    p.add_argument("--in-process", action="store_true",
                   help="evaluate without a server (default when --addr absent)")
    p.add_argument("--record-trace", default=None,
                   help="write per-query observation/action trace (msgpack)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("profile")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--event-log")
    p.add_argument("--json", default=None)
    p.set_defaults(fn=cmd_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except VlaForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
