"""Frozen vs fine-tuned embedding tables over several seeds and learning rates.

Prints one TSV row per (lr, seed, mode); the last column says whether
fine-tuning beat the frozen table on that run.
"""
import argparse
from dataclasses import replace

from deftlab.experiments import OVERFIT, overfit, synthetic_examples


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--lrs", default="2e-5,1e-4")
    ap.add_argument("--epochs", type=int, default=OVERFIT.epochs)
    args = ap.parse_args()

    data = {m: synthetic_examples(m) for m in ("finetune", "frozen")}
    print("lr\tseed\tfinetune_acc\tfrozen_acc\tfinetune_wins")
    for lr in (float(x) for x in args.lrs.split(",")):
        for seed in (int(x) for x in args.seeds.split(",")):
            config = replace(OVERFIT, lr=lr, seed=seed, epochs=args.epochs)
            acc = {}
            for mode, (vocab, examples) in data.items():
                acc[mode] = overfit(mode, config, examples, vocab).accuracy
            print(f"{lr:g}\t{seed}\t{acc['finetune']:.4f}\t{acc['frozen']:.4f}\t{acc['finetune'] > acc['frozen']}")


if __name__ == "__main__":
    main()
