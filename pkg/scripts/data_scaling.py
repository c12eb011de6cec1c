"""Train the desk recipe on growing data fractions and compare contacts under both policies.

Every fraction gets the same number of optimizer steps as the full-data run.

Writes ``data_fraction.tsv`` (one row per fraction) and one checkpoint per fraction.
Run: ``python scripts/data_scaling.py --out runs/scaling``.
"""
import argparse
import time
from pathlib import Path

from moeplan.experiments import (DATA_FRACTIONS, TableWriter, adversarial_suite, desk_recipe, evaluate_policies,
                                 train_recipe, training_scenes, variant_recipe)
from moeplan.model import load_model
from moeplan.policy import PolicyKind


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/scaling")
    parser.add_argument("--fractions", default=",".join(str(f) for f in DATA_FRACTIONS))
    parser.add_argument("--train-episodes", type=int, default=200)
    parser.add_argument("--suite", type=int, default=50)
    parser.add_argument("--max-ticks", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = training_scenes(args.train_episodes)
    suite = adversarial_suite(args.suite)
    with TableWriter(out / "data_fraction.tsv") as table:
        for fraction in (float(f) for f in args.fractions.split(",")):
            run_dir = out / f"data{round(fraction * 100)}"
            start = time.perf_counter()
            if (run_dir / "model.npz").exists():
                model = load_model(run_dir / "model.npz")
            else:
                recipe = desk_recipe() if fraction == 1.0 else variant_recipe(desk_recipe(), f"data{round(fraction * 100)}")
                model = train_recipe(recipe, scenes, run_dir).model
            per_policy = evaluate_policies(model, suite, max_ticks=args.max_ticks)
            row = {"fraction": fraction, "scenes": max(1, round(fraction * len(scenes)))}
            for kind in (PolicyKind.MIN_COST, PolicyKind.MIN_COST_CC):
                metrics = per_policy[kind][0]
                row[f"contacts_{kind.value}"] = metrics.estimated_contacts
                row[f"contacts_per_1k_{kind.value}"] = metrics.per_1k_miles("estimated_contacts")
            table.write(row)
            print(row, f"{time.perf_counter() - start:.0f}s", flush=True)


if __name__ == "__main__":
    main()
