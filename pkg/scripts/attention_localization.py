"""Does temporal attention peak on the bursts?

Trains CANet for several seeds and compares the informative component's
mean temporal attention on burst frames against the rest of each window.
Optionally writes the attention maps of one test window per seed.
"""

import argparse
from pathlib import Path

from canet.data import SyntheticSpec
from canet.experiments import burst_attention_contrast, synthetic_run
from canet.models import export_attention, forward
from canet.train import TrainConfig


def main():
    p = argparse.ArgumentParser(description="temporal attention on burst vs non-burst frames")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--export", type=Path, default=None, help="directory for per-seed attention CSV/PPM files")
    args = p.parse_args()

    hits = 0
    for seed in range(args.seeds):
        run = synthetic_run(SyntheticSpec(seed=seed), TrainConfig(seed=seed, epochs=args.epochs))
        c = burst_attention_contrast(run)
        hits += c.localized
        print(f"seed {seed}: acc {run.test_accuracy:.3f}  burst {c.burst_mean:.5f}  rest {c.rest_mean:.5f}  "
              f"({c.windows} windows) {'localized' if c.localized else 'not localized'}", flush=True)
        if args.export is not None:
            args.export.mkdir(parents=True, exist_ok=True)
            _, attn = forward(run.params, run.test[0])
            for which in ("temporal", "component"):
                export_attention(attn, args.export / f"seed{seed}_{which}.csv", "csv", which)
    print(f"localized in {hits}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
