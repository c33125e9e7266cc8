#!/usr/bin/env python3
"""End-to-end experiment: generate a dataset, train every model, evaluate.

Drives the `gridcast` CLI exactly as a user would. Outputs land under
--workdir (default ./runs/pipeline): dataset, checkpoints, loss curves,
metric CSVs, and sample prediction images.
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

SCENARIO = {
    "scenario": "multi_vehicle_straight",
    "grid": {"width": 32, "height": 32, "resolution": 0.66},
    "variant": "four",
    "sensor": {"beams": 180},
    "n_sequences": 200,
    "seed": 42,
}

STAGE1 = {"epochs": 30, "batch_size": 16, "lr": 1e-3, "widths": [4, 8]}
STAGE2 = {**STAGE1, "epochs": 10, "lr": 1e-4}


def run(argv):
    print("+", " ".join(str(a) for a in argv))
    subprocess.run([str(a) for a in argv], check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    (work / "scenario.json").write_text(json.dumps(SCENARIO, indent=2))
    (work / "stage1.json").write_text(json.dumps(STAGE1, indent=2))
    (work / "stage2.json").write_text(json.dumps(STAGE2, indent=2))

    dataset = work / "data" / "dataset.bin"
    ckpt = work / "ckpt"
    run(["gridcast", "gen", "--config", work / "scenario.json",
         "--out", work / "data", "--seed", args.seed])

    common = ["--dataset", dataset, "--out", ckpt, "--seed", args.seed]
    run(["gridcast", "train", "--model", "semantics",
         "--config", work / "stage1.json", *common])
    for model in ("prednet", "double-prong"):
        run(["gridcast", "train", "--model", model,
             "--config", work / "stage1.json", *common])
    run(["gridcast", "train", "--model", "ours",
         "--config", work / "stage1.json",
         "--semantics", ckpt / "semantics_stage1.gckp", *common])

    for model, extra in (("prednet", []), ("double-prong", []),
                         ("ours", ["--semantics", ckpt / "semantics_stage1.gckp"])):
        stem = model.replace("-", "_")
        run(["gridcast", "train", "--model", model, "--stage", "2",
             "--config", work / "stage2.json",
             "--init", ckpt / f"{stem}_stage1.gckp", *extra, *common])

    run(["gridcast", "eval", "oracle",
         ckpt / "prednet_stage2.gckp", ckpt / "double_prong_stage2.gckp",
         ckpt / "ours_stage2.gckp",
         "--dataset", dataset, "--out", work / "metrics", "--seed", args.seed])

    run(["gridcast", "predict", "--checkpoint", ckpt / "ours_stage2.gckp",
         "--dataset", dataset, "--index", "0", "--out", work / "predictions"])

    print(f"\ndone; metrics in {work / 'metrics'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
