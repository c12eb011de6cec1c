"""Always execute one SDV expert and report its passiveness and aggressiveness rates.

Run: ``python scripts/expert_profiles.py --checkpoint runs/ablation/baseline/model.npz``.
"""
import argparse
from pathlib import Path

from moeplan.experiments import TableWriter, adversarial_suite, expert_profiles
from moeplan.model import load_model


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--out", default="runs/profiles")
    parser.add_argument("--suite", type=int, default=50)
    parser.add_argument("--max-ticks", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = expert_profiles(load_model(args.checkpoint), adversarial_suite(args.suite), max_ticks=args.max_ticks)
    with TableWriter(out / "expert_profiles.tsv") as table:
        for row in rows:
            table.write(row)
            print(row, flush=True)


if __name__ == "__main__":
    main()
