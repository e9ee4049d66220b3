"""Build the server-side fixtures the foreign-client tests replay against:
a small checkpoint package and a native evaluation trace recorded through the
in-process harness. Run from the frontend/ directory:

    python3 scripts/make_fixtures.py
"""

import pathlib
import sys

from vlaforge import config as cfgmod, data, envs, mpack, trainer, wire
from vlaforge.harness import AdapterConfig, PolicyPredictor, SuiteEntry, evaluate
from vlaforge.policy import registry_compose

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
TASK_SEED = 1
EVAL_SEED = 99


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    store_dir = OUT / "point_reach"
    envs.generate_oracle_store(store_dir, "point_reach", 3, 2, seed=TASK_SEED,
                               noise_scale=0.0)
    store = data.open_store(store_dir)
    stats = {"point_reach": data.store_statistics(store)}

    resolved = cfgmod.validate_config(
        {"model": {"head_id": "oft", "k": 8, "d": 16, "hidden": 16}, "seed": 5}
    )
    policy = registry_compose(cfgmod.policy_config(resolved))
    pkg = trainer.save_checkpoint(policy, resolved, stats, 0, OUT / "checkpoint")

    suite = [SuiteEntry("point_reach", 2, 1, max_steps=12, task_seed=TASK_SEED)]
    records = []

    def recorder(obs, seed, chunk):
        records.append({
            "image": wire.encode_image_map(obs.views),
            "lang": obs.instruction,
            "state": [float(x) for x in obs.state] if obs.state is not None else None,
            "seed": int(seed),
            "normalized_actions": [[float(v) for v in row] for row in chunk.values],
        })

    loaded = trainer.load_checkpoint(pkg.path)
    evaluate(PolicyPredictor(loaded.policy), suite, AdapterConfig(),
             stats["point_reach"], seed=EVAL_SEED, recorder=recorder)
    (OUT / "native_trace.bin").write_bytes(mpack.packb({"records": records}))
    print(f"checkpoint: {pkg.path}")
    print(f"trace: {OUT / 'native_trace.bin'} ({len(records)} queries)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
