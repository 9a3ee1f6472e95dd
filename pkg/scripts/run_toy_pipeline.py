#!/usr/bin/env python3
"""End-to-end toy experiment: generate data, run all four stages, evaluate.

Equivalent to:  make_toy_data.py --out DIR  +  embedkit train  +  embedkit eval.
"""

import argparse
import subprocess
import sys
from pathlib import Path

from embedkit.evaluation import metric_records
from embedkit.pipeline import RunManifest, Trainer, evaluate_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    subprocess.run([sys.executable, str(Path(__file__).parent / "make_toy_data.py"),
                    "--out", str(out / "data"), "--seed", str(args.seed)], check=True)

    manifest = RunManifest.from_yaml(out / "data" / "manifest.yaml")
    manifest.output_dir = str(out / "run")
    ckpt = Trainer(manifest).run()
    print(f"final checkpoint: {ckpt}")

    metrics = evaluate_checkpoint(ckpt, out / "data" / "heldout.jsonl", ks=(1, 5, 10, 20))
    for rec in metric_records(metrics, "heldout"):
        print(rec)


if __name__ == "__main__":
    main()
