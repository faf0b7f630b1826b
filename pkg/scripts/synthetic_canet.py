"""Train CANet on the two-class synthetic data and report test accuracy.

    python scripts/synthetic_canet.py --seed 0 --amplitude 3
    python scripts/synthetic_canet.py --amplitude 0   # chance-level control
"""

import argparse
import json

from canet.data import SyntheticSpec
from canet.experiments import synthetic_run
from canet.train import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    args = p.parse_args()

    spec = SyntheticSpec(seed=args.seed, amplitude=args.amplitude, noise_std=args.noise)
    config = TrainConfig(seed=args.seed, epochs=args.epochs)

    def progress(rec, _params):
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  test acc {rec.test_accuracy:.4f}", flush=True)

    run = synthetic_run(spec, config, callback=progress)
    print(json.dumps({"test_accuracy": run.test_accuracy, "seconds": round(run.seconds, 1),
                      "train_windows": len(run.train), "test_windows": len(run.test)}))


if __name__ == "__main__":
    main()
