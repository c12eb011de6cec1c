"""Command line: ``moeplan {gen,train,simulate,ablate,report}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
Every command writes its fully resolved configuration next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import InvalidScene, MoePlanError, NumericsError, ParseError, ShapeError
from .model import ModelConfig, load_model
from .policy import PolicyConfig
from .scene import load_scenes
from .training import LossWeights, PerturbConfig, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    paths: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    perturb: Optional[PerturbConfig] = field(default_factory=PerturbConfig)
    train: dict = field(default_factory=lambda: {"epochs": 20, "batch_size": 16, "lr": 1e-3, "frame_stride": 10})
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "paths": self.paths, "model": self.model.to_dict(),
                "loss": asdict(self.loss), "policy": self.policy.to_dict(),
                "perturb": None if self.perturb is None else asdict(self.perturb),
                "train": self.train, "options": self.options}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        cfg.command = d.get("command", "")
        cfg.seed = int(d.get("seed", 0))
        cfg.paths = dict(d.get("paths", {}))
        cfg.model = ModelConfig.from_dict({**cfg.model.to_dict(), **d.get("model", {})})
        cfg.loss = LossWeights(**{**asdict(cfg.loss), **d.get("loss", {})})
        cfg.policy = PolicyConfig.from_dict({**cfg.policy.to_dict(), **d.get("policy", {})})
        if "perturb" in d:
            cfg.perturb = None if d["perturb"] is None else PerturbConfig(**d["perturb"])
        cfg.train = {**cfg.train, **d.get("train", {})}
        cfg.options = dict(d.get("options", {}))
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=int(self.train["epochs"]), batch_size=int(self.train["batch_size"]),
                           lr=float(self.train["lr"]), seed=self.seed, perturb=self.perturb)


def write_config(cfg: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file mirroring RunConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moeplan", description="Mixture-of-experts planner: data, training, simulation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic log episodes (one per line)")
    g.add_argument("kind")
    g.add_argument("count", type=int)
    g.add_argument("--duration", type=float, default=10.0)
    g.add_argument("--adversarial", action="store_true")
    _common(g)

    t = sub.add_parser("train", help="train a planner")
    t.add_argument("--data", type=Path, required=True, help="episode file or scene file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--num-sdv-modes", type=int)
    t.add_argument("--num-agent-modes", type=int)
    t.add_argument("--no-probability", action="store_true", help="train without the probability head")
    t.add_argument("--no-perturb", action="store_true")
    _common(t)

    s = sub.add_parser("simulate", help="closed-loop simulation of a checkpoint")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--episodes", type=Path, required=True)
    s.add_argument("--policy", choices=["MinCost", "MinCostCC"])
    s.add_argument("--alpha", type=float)
    s.add_argument("--max-ticks", type=int)
    _common(s)

    a = sub.add_parser("ablate", help="train variants and compare them in simulation")
    a.add_argument("--data", type=Path, required=True, help="training episodes")
    a.add_argument("--episodes", type=Path, required=True, help="evaluation episodes")
    a.add_argument("--variants", default="baseline,no_prob,M1,N1,data10,data25,data50,data100,experts")
    a.add_argument("--epochs", type=int)
    a.add_argument("--max-ticks", type=int)
    _common(a)

    r = sub.add_parser("report", help="summarize simulation outputs in a directory")
    r.add_argument("directory", type=Path)
    return parser


def _resolve(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_dict(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config {args.config}: {exc}") from exc
    cfg.command = args.command
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        cfg.train["batch_size"] = args.batch_size
    overrides = {}
    if getattr(args, "num_sdv_modes", None) is not None:
        overrides["num_sdv_modes"] = args.num_sdv_modes
    if getattr(args, "num_agent_modes", None) is not None:
        overrides["num_agent_modes"] = args.num_agent_modes
    if overrides:
        cfg.model = ModelConfig.from_dict({**cfg.model.to_dict(), **overrides})
    if getattr(args, "no_perturb", False):
        cfg.perturb = None
    if getattr(args, "policy", None):
        cfg.policy = PolicyConfig.from_dict({**cfg.policy.to_dict(), "policy": args.policy})
    if getattr(args, "alpha", None) is not None:
        cfg.policy = PolicyConfig.from_dict({**cfg.policy.to_dict(), "alpha_collision": args.alpha})
    return cfg


def load_training_scenes(path: Path, stride: int = 10) -> list:
    """Scenes from an episode file (sampled every ``stride`` ticks) or from a scene file."""
    from .experiments import scenes_from_episodes
    from .scenarios import load_episodes

    with open(path) as fh:
        first = fh.readline()
    if not first.strip():
        raise ParseError("empty dataset", 1)
    try:
        head = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), 1) from exc
    if "episode_id" in head:
        return scenes_from_episodes(load_episodes(path), stride)
    return load_scenes(path)


# --------------------------------------------------------------------------
# commands

def cmd_gen(args, cfg: RunConfig) -> int:
    from .scenarios import ScenarioKind, generate_scenarios, write_episodes

    try:
        kind = ScenarioKind.parse(args.kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        episodes = generate_scenarios(kind, args.count, cfg.seed, args.duration, args.adversarial)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    write_episodes(out, episodes)
    cfg.paths = {"out": str(out)}
    cfg.options = {"kind": kind.value, "count": args.count, "duration": args.duration,
                   "adversarial": args.adversarial}
    out.with_name(out.name + ".config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(episodes)} episodes to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .training import train

    scenes = load_training_scenes(args.data, int(cfg.train.get("frame_stride", 10)))
    cfg.paths = {"data": str(args.data), "out": str(args.out)}
    cfg.options["use_probability"] = not args.no_probability
    write_config(cfg, args.out)
    result = train(scenes, cfg.model, cfg.loss, cfg.train_config(), out_dir=args.out,
                   use_probability=not args.no_probability)
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs on {len(scenes)} scenes; final total loss {last['total_loss']:.4f}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .scenarios import load_episodes
    from .simulator import aggregate, run_episodes, summary_report, write_traces

    model = load_model(args.checkpoint)
    episodes = load_episodes(args.episodes)
    cfg.paths = {"checkpoint": str(args.checkpoint), "episodes": str(args.episodes), "out": str(args.out)}
    cfg.model = model.config
    cfg.options["max_ticks"] = args.max_ticks
    write_config(cfg, args.out)
    results = run_episodes(episodes, model, cfg.policy, max_ticks=args.max_ticks)
    write_traces(args.out / "traces.jsonl", [r.trace for r in results])
    total = aggregate([r.metrics for r in results])
    metrics = {"policy": cfg.policy.policy.value, "total": total.to_dict(),
               "episodes": {r.trace.episode_id: r.metrics.to_dict() for r in results}}
    (args.out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    report = summary_report(total, f"{cfg.policy.policy.value} on {args.episodes.name}")
    (args.out / "report.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .experiments import (Recipe, TableWriter, evaluate_policies, expert_profiles, table_row, train_recipe,
                              variant_recipe)
    from .policy import PolicyKind
    from .scenarios import load_episodes

    scenes = load_training_scenes(args.data, int(cfg.train.get("frame_stride", 10)))
    episodes = load_episodes(args.episodes)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    base = Recipe(cfg.model, cfg.loss, cfg.train_config())
    for v in variants:
        if v != "experts":
            try:
                variant_recipe(base, v)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    cfg.paths = {"data": str(args.data), "episodes": str(args.episodes), "out": str(args.out)}
    cfg.options["variants"] = variants
    cfg.options["max_ticks"] = args.max_ticks
    write_config(cfg, args.out)
    baseline_model = None
    fractions = []
    with TableWriter(args.out / "ablation.tsv") as table, TableWriter(args.out / "data_fraction.tsv") as curve:
        for v in variants:
            if v == "experts":
                continue
            recipe = variant_recipe(base, v)
            result = train_recipe(recipe, scenes, out_dir=args.out / "models" / v)
            per_policy = evaluate_policies(result.model, episodes, cfg.policy.alpha_collision, args.max_ticks)
            table.write(table_row(v, per_policy))
            if v == "baseline":
                baseline_model = result.model
            if v.startswith("data"):
                fractions.append(v)
                curve.write({"fraction": recipe.data_fraction,
                             "scenes": max(1, round(recipe.data_fraction * len(scenes))),
                             "contacts_MinCost": per_policy[PolicyKind.MIN_COST][0].estimated_contacts,
                             "contacts_MinCostCC": per_policy[PolicyKind.MIN_COST_CC][0].estimated_contacts,
                             "contacts_per_1k_MinCost": per_policy[PolicyKind.MIN_COST][0].per_1k_miles("estimated_contacts"),
                             "contacts_per_1k_MinCostCC": per_policy[PolicyKind.MIN_COST_CC][0].per_1k_miles("estimated_contacts")})
            print(f"variant {v}: done")
    if "experts" in variants:
        if baseline_model is None:
            baseline_model = train_recipe(base, scenes, out_dir=args.out / "models" / "baseline").model
        with TableWriter(args.out / "expert_profiles.tsv") as fh:
            for row in expert_profiles(baseline_model, episodes, args.max_ticks):
                fh.write(row)
        print("variant experts: done")
    print(f"wrote {args.out / 'ablation.tsv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .simulator import EpisodeMetrics, aggregate, summary_report

    directory = args.directory
    files = sorted(directory.rglob("metrics.json")) if directory.is_dir() else []
    if not files:
        print(f"no data in {directory}")
        return EXIT_OK
    totals = []
    for path in files:
        data = json.loads(path.read_text())
        names = {f.name for f in fields(EpisodeMetrics)}
        for m in data.get("episodes", {}).values():
            totals.append(EpisodeMetrics(**{k: v for k, v in m.items() if k in names}))
    print(summary_report(aggregate(totals), f"{len(files)} metrics file(s) under {directory}"), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        if args.command == "report":
            return cmd_report(args)
        cfg = _resolve(args)
        handler = {"gen": cmd_gen, "train": cmd_train, "simulate": cmd_simulate, "ablate": cmd_ablate}[args.command]
        return handler(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, InvalidScene, ShapeError, FileNotFoundError, MoePlanError, json.JSONDecodeError,
            KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
