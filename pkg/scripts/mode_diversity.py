"""Compare agent minADE of M = 2 and M = 1 models on scenes where a vehicle turns left or right at random.

Run: ``python scripts/mode_diversity.py``.
"""
import argparse

from moeplan.experiments import mode_diversity, turn_scenes
from moeplan.model import ModelConfig
from moeplan.training import TrainConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--train-episodes", type=int, default=300)
    parser.add_argument("--eval-episodes", type=int, default=100)
    parser.add_argument("--epochs", type=int, default=15)
    args = parser.parse_args()
    train_scenes, eval_scenes = turn_scenes(args.train_episodes, args.eval_episodes)
    result = mode_diversity(train_scenes, eval_scenes, ModelConfig(a_max=2, e_max=12),
                            TrainConfig(epochs=args.epochs, batch_size=16))
    for m, ade in result.min_ade.items():
        print(f"M={m}: agent minADE {ade:.3f} m, expert win fractions {result.win_fractions[m]}")
    print(f"ratio M2/M1: {result.min_ade[2] / result.min_ade[1]:.3f} ({result.seconds:.0f}s)")


if __name__ == "__main__":
    main()
