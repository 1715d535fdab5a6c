"""Desk-scale bouncing-sprite run: train, then compare against the last-input baseline.

Usage:
    python scripts/desk_experiment.py --steps 5000 --eval-every 1000 ridge.lambda=0.1

Defaults match the acceptance run. Extra ``key=value`` arguments override the model config.
"""
import argparse
import time

import numpy as np

from ile.data import SpriteConfig, generate_dataset
from ile.metrics import evaluate
from ile.model import AdamState, IleConfig, IleModel, fit

DEFAULTS = {
    "grid.h": "8",
    "grid.w": "8",
    "seq.len": "12",
    "cond.len": "4",
    "gamma.mode": "none",
    "state.dim": "32",
    "ridge.lambda": "0.01",
    "batch": "16",
}


def datasets(train_count=500, test_count=100, train_seed=1, test_seed=2, max_speed=2, jitter=1 / 64):
    train_cfg = SpriteConfig(8, 8, 2, 12, count=train_count, seed=train_seed, max_speed=max_speed, jitter=jitter)
    test_cfg = SpriteConfig(8, 8, 2, 12, count=test_count, seed=test_seed, max_speed=max_speed, jitter=jitter)
    train = np.stack([s.frames for s in generate_dataset(train_cfg)]).reshape(train_count, 12, 64)
    test_seqs = generate_dataset(test_cfg)
    return train, test_seqs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--eval-every", type=int, default=1000)
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_args()

    mapping = dict(DEFAULTS)
    mapping.update(dict(o.split("=", 1) for o in args.overrides))
    cfg = IleConfig.from_mapping(mapping)
    train, test_seqs = datasets()
    test = np.stack([s.frames for s in test_seqs])
    bounce = [i for i, s in enumerate(test_seqs) if s.bounces(cfg.cond_len, cfg.cond_len + 5)]

    model = IleModel.init(cfg)
    opt = AdamState.init(model)
    t0 = time.time()
    done = 0
    while done < args.steps:
        chunk = min(args.eval_every, args.steps - done)
        fit(model, opt, train, cfg, chunk)
        done += chunk
        rep = evaluate(model, test, cfg.cond_len, 5, cfg)
        sub = evaluate(model, test[bounce], cfg.cond_len, 5, cfg)
        print(
            f"step {opt.step:6d} {time.time() - t0:6.0f}s "
            f"psnr h1 {rep.model_psnr[0]:.2f}/{rep.baseline_psnr[0]:.2f} "
            f"h5 {rep.model_psnr[4]:.2f}/{rep.baseline_psnr[4]:.2f} "
            f"bounce({len(bounce)}) h5 {sub.model_psnr[4]:.2f}/{sub.baseline_psnr[4]:.2f}",
            flush=True,
        )
    print(rep.to_csv())


if __name__ == "__main__":
    main()
