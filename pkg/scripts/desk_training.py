"""Train all four recommenders on the 200x100 block dataset and compare
test Recall@20 against the shuffled-ranking baseline.

    python3 scripts/desk_training.py [--seed 0] [--epochs 200]
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from topo_rec.evaluation import random_baseline, split
from topo_rec.models import MODEL_KINDS, TrainConfig, train
from topo_rec.synthetic import block_interactions


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()
    graph = block_interactions(seed=args.seed)
    parts = split(graph, np.random.default_rng(args.seed))
    base = random_baseline(parts, k=20, shuffles=100, seed=args.seed)
    print(f"{graph!r}  train/val/test={parts.sizes()}  random recall@20={base:.4f}")
    cfg = replace(TrainConfig(), max_epochs=args.epochs, seed=args.seed)
    for kind in MODEL_KINDS:
        t0 = time.perf_counter()
        model = train(kind, parts, cfg)
        m = model.evaluate(parts)
        print(f"{kind:9s} recall@20={m['recall']:.4f} ({m['recall'] / base:.2f}x)  ndcg@20={m['ndcg']:.4f}  "
              f"epochs={model.epochs_run:3d}  {time.perf_counter() - t0:6.1f}s")


if __name__ == "__main__":
    main()
