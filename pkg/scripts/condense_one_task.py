"""Condense a single task of an SBM stream and show what each phase did.

    python scripts/condense_one_task.py --task 1 --budget 20 --unlabelled 0.4
"""

import argparse

import numpy as np

from pumacgl.condense import CondenseConfig, condense_puma, propagated_features
from pumacgl.fit import TrainConfig
from pumacgl.memory import MemoryBank, update_memory
from pumacgl.stream import SbmConfig, generate_sbm, split_stream


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--task", type=int, default=0)
    ap.add_argument("--budget", type=int, default=20)
    ap.add_argument("--unlabelled", type=float, default=0.0)
    ap.add_argument("--threshold", type=float, default=0.8)
    args = ap.parse_args()

    stream = split_stream(generate_sbm(SbmConfig(seed=args.seed)), 2, seed=args.seed,
                          unlabelled_ratio=args.unlabelled)
    ccfg = CondenseConfig(pl_threshold=args.threshold, seed=args.seed)
    tcfg = TrainConfig(seed=args.seed)
    bank = MemoryBank()
    for k in range(args.task):
        bank = update_memory(bank, condense_puma(stream[k], bank, ccfg, args.budget, tcfg))

    task = stream[args.task]
    cond = condense_puma(task, bank, ccfg, args.budget, tcfg)
    trace = np.asarray(cond.trace)
    n1 = ccfg.iters_per_encoder * ccfg.encoders_phase1
    print(f"task {task.task_id} classes {task.classes}: budget {cond.budget}, per class {cond.meta['budgets']}")
    print(f"phase 1 matching loss {trace[0]:.4g} -> {trace[n1 - 1]:.4g}")
    if cond.meta["pseudo_labels"]:
        print(f"{cond.meta['pseudo_labels']} pseudo labels accepted at threshold {args.threshold}")
        print(f"phase 2 matching loss {trace[n1]:.4g} -> {trace[-1]:.4g}")
    else:
        print("no pseudo labels accepted; phase 2 skipped")

    F = propagated_features(task, ccfg).F.astype(np.float64)
    g = task.incoming
    for c in task.classes:
        mu = F[g.train_mask & (g.labels == c)].mean(axis=0)
        gap = np.linalg.norm(cond.features[cond.labels == c].mean(axis=0) - mu) / np.linalg.norm(mu)
        print(f"class {c}: condensed mean is {gap:.1%} from the propagated class mean")


if __name__ == "__main__":
    main()
