"""Leakage probe of every model at random parameters, no training involved.

Baselines should report a positive shift, leak-free variants a shift of 0.
"""

import argparse

import torch

from leakfree_kt.data import generate_synthetic
from leakfree_kt.evaluation import leakage_probe
from leakfree_kt.expansion import plan_windows
from leakfree_kt.models import MODEL_IDS, ModelConfig, build_model

def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--settings", type=int, default=10, help="random parameter draws per model")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    ds = generate_synthetic(40, 30, 8, 3, seed=a.seed, questions_per_student=20)
    for mid in MODEL_IDS:
        worst = 0.0
        for s in range(a.settings):
            model = build_model(ModelConfig(mid, d=16, hidden=16, dropout=0.0, seed=a.seed + s),
                                len(ds.question_ids), ds.mapping.num_kcs)
            with torch.no_grad():
                gen = torch.Generator().manual_seed(a.seed + s)
                for p in model.parameters():
                    p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)
            ws = plan_windows(ds.logs, ds.mapping, model.labeling, 20, mid != "dkt-fuse").windows
            worst = max(worst, leakage_probe(model, ws, samples=200, seed=s).max_shift)
        print(f"{mid:9s} max_shift {worst:.2e} {'leak_free' if worst <= 1e-6 else 'leaking'}")

if __name__ == "__main__":
    main()
