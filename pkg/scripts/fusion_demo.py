"""Late fusion of three or more independently seeded CANets by majority vote."""

import argparse

from canet.data import SyntheticSpec, make_windows, split_by_segment, synthesize_segments
from canet.experiments import TEST_FRACTION, accuracy
from canet.fusion import late_fuse_evaluate
from canet.train import TrainConfig, fit


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--models", type=int, default=3)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--amplitude", type=float, default=1.0, help="weaker signal leaves room for fusion to help")
    args = p.parse_args()

    segments = synthesize_segments(SyntheticSpec(amplitude=args.amplitude))
    train_segs, test_segs = split_by_segment(segments, TEST_FRACTION, 0)
    train, test = make_windows(train_segs), make_windows(test_segs)

    models = []
    for seed in range(args.models):
        params, _ = fit(TrainConfig(seed=seed, epochs=args.epochs), train)
        models.append(params)
        print(f"model {seed}: test acc {accuracy(params, test):.4f}", flush=True)
    fused = late_fuse_evaluate(models, test)
    print(f"majority vote of {args.models}: test acc {fused.accuracy:.4f}  macro F1 {fused.macro_f1:.4f}")


if __name__ == "__main__":
    main()
