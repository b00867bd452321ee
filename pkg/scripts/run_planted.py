"""AFA vs the lambda=0 baseline on the planted-token dataset, several seeds.

    python scripts/run_planted.py --seeds 0,1,2,3,4 --out runs/planted_compare.json
"""
import argparse
import json

import numpy as np

from afa.config import TrainConfig
from afa.corpus import gen_planted
from afa.evaluation import PLANTED_DEFAULTS, planted_trial


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--epochs", type=int, default=PLANTED_DEFAULTS["epochs"])
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        train, vocab = gen_planted(2000, 12, 2, 1, 195, seed=1000 + seed)
        test, _ = gen_planted(500, 12, 2, 1, 195, seed=2000 + seed)
        cfg = TrainConfig(**{**PLANTED_DEFAULTS, "epochs": args.epochs}, seed=seed)
        for name, lam in (("afa", cfg.lam), ("baseline", 0.0)):
            r = planted_trial(cfg.replace(lam=lam), train, test, len(vocab))
            r["model"] = name
            rows.append(r)
            print(f"{name:>8} seed {seed}: acc {r['accuracy']:.3f} mass {r['signal_mass']:.3f} "
                  f"top1 {r['top1_rate']:.3f} drop {r['drop']:.3f} ({r['seconds']:.0f}s)", flush=True)

    for name in ("afa", "baseline"):
        sub = [r for r in rows if r["model"] == name]
        print(f"{name:>8} mean: " + " ".join(
            f"{k} {np.mean([r[k] for r in sub]):.3f}" for k in ("accuracy", "signal_mass", "top1_rate", "drop")))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
