"""Train ablation variants of the desk recipe and tabulate closed-loop metrics for both policies.

Variants: baseline, no_prob (no probability term in matching or selection
training), M1 (one agent mode), N1 (one SDV mode), dataXX (XX percent of the
scenes). Run: ``python scripts/ablation.py --variants baseline,N1 --out runs/ablation``.
"""
import argparse
import time
from pathlib import Path

from moeplan.experiments import (TableWriter, adversarial_suite, desk_recipe, evaluate_policies, table_row,
                                 train_recipe, training_scenes, variant_recipe)
from moeplan.model import load_model


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--variants", default="baseline,no_prob,M1,N1")
    parser.add_argument("--train-episodes", type=int, default=200)
    parser.add_argument("--suite", type=int, default=50)
    parser.add_argument("--max-ticks", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = training_scenes(args.train_episodes)
    suite = adversarial_suite(args.suite)
    with TableWriter(out / "ablation.tsv") as table:
        for name in args.variants.split(","):
            run_dir = out / name
            start = time.perf_counter()
            if (run_dir / "model.npz").exists():
                model = load_model(run_dir / "model.npz")
            else:
                model = train_recipe(variant_recipe(desk_recipe(), name), scenes, run_dir).model
            row = table_row(name, evaluate_policies(model, suite, max_ticks=args.max_ticks))
            table.write(row)
            print(name, {k: v for k, v in row.items() if k.startswith("estimated_contacts")},
                  f"{time.perf_counter() - start:.0f}s", flush=True)


if __name__ == "__main__":
    main()
