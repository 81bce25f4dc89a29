"""Overfit the bundled 50-sentence corpus and report training-token accuracy per mode.

    python scripts/overfit_synthetic.py --lr 1e-4 --epochs 200 --seed 0
"""
import argparse
from dataclasses import replace

from deftlab.experiments import OVERFIT, overfit, synthetic_examples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, default=OVERFIT.lr)
    ap.add_argument("--epochs", type=int, default=OVERFIT.epochs)
    ap.add_argument("--seed", type=int, default=OVERFIT.seed)
    ap.add_argument("--modes", default="finetune,frozen")
    ap.add_argument("--trace", action="store_true", help="print the per-epoch loss/dev trace")
    args = ap.parse_args()

    config = replace(OVERFIT, lr=args.lr, epochs=args.epochs, seed=args.seed)
    print("mode\taccuracy\tfirst_epoch_099\tseconds")
    for mode in args.modes.split(","):
        vocab, examples = synthetic_examples(mode)
        run = overfit(mode, config, examples, vocab)
        print(f"{mode}\t{run.accuracy:.4f}\t{run.first_epoch_99}\t{run.seconds:.1f}")
        if args.trace:
            for epoch, loss, metric in run.result.trace:
                print(f"  {epoch}\t{loss:.4f}\t{metric:.4f}")


if __name__ == "__main__":
    main()
