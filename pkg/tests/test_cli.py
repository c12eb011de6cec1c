import json

import pytest

from moeplan.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, RunConfig, main

TINY_CONFIG = {
    "model": {"d_point": 8, "d_model": 16, "d_ffn": 16, "d_head_hidden": 16, "n_heads": 2, "n_enc_layers": 1,
              "n_dec_layers": 1, "num_sdv_modes": 3, "num_agent_modes": 2, "a_max": 3, "e_max": 10, "p_max": 12},
    "train": {"epochs": 1, "batch_size": 8, "frame_stride": 5},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.json"
    config.write_text(json.dumps(TINY_CONFIG))
    assert main(["gen", "LeadVehicle", "4", "--seed", "3", "--out", str(root / "train.jsonl")]) == 0
    assert main(["gen", "CutIn", "50", "--adversarial", "--out", str(root / "eval.jsonl")]) == 0
    assert main(["train", "--data", str(root / "train.jsonl"), "--config", str(config), "--out", str(root / "run")]) == 0
    return root


def test_gen_writes_one_line_per_episode(tmp_path):
    out = tmp_path / "s.jsonl"
    assert main(["gen", "StraightRoad", "100", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 100
    saved = json.loads((tmp_path / "s.jsonl.config.json").read_text())
    assert saved["options"]["count"] == 100 and saved["seed"] == 0


def test_gen_is_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert main(["gen", "Intersection", "3", "--seed", "5", "--out", str(path)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_bad_kind_is_a_usage_error(tmp_path, capsys):
    assert main(["gen", "Roundabout", "3", "--out", str(tmp_path / "x.jsonl")]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_command_and_bad_flag_are_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["simulate", "--nonsense"]) == EXIT_USAGE


def test_unknown_config_key_is_a_usage_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"modle": {}}))
    assert main(["gen", "CutIn", "1", "--config", str(cfg), "--out", str(tmp_path / "x.jsonl")]) == EXIT_USAGE


def test_missing_data_file_is_a_data_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_train_writes_config_checkpoint_and_log(workspace):
    run = workspace / "run"
    saved = RunConfig.from_dict(json.loads((run / "config.json").read_text()))
    assert saved.model.d_model == 16 and saved.train["epochs"] == 1
    assert (run / "model.npz").exists() and (run / "train_log.jsonl").exists()


def test_training_twice_from_the_saved_config_reproduces_the_log(workspace, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--data", str(workspace / "train.jsonl"), "--config", str(workspace / "run" / "config.json"),
                 "--out", str(again)]) == EXIT_OK
    assert (again / "train_log.jsonl").read_text() == (workspace / "run" / "train_log.jsonl").read_text()


def test_simulate_writes_report_traces_and_metrics(workspace, tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--checkpoint", str(workspace / "run" / "model.npz"),
                 "--episodes", str(workspace / "eval.jsonl"), "--policy", "MinCost", "--max-ticks", "3",
                 "--out", str(out)])
    assert code == EXIT_OK
    report = (out / "report.txt").read_text()
    assert "estimated_contacts" in report and "per 1k miles" in report
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["policy"] == "MinCost" and len(metrics["episodes"]) == 50
    assert len((out / "traces.jsonl").read_text().splitlines()) == 50 * 4
    assert json.loads((out / "config.json").read_text())["policy"]["policy"] == "MinCost"


def test_simulate_pairs_policies_on_the_same_checkpoint(workspace, tmp_path):
    totals = {}
    for policy in ("MinCost", "MinCostCC"):
        out = tmp_path / policy
        assert main(["simulate", "--checkpoint", str(workspace / "run" / "model.npz"),
                     "--episodes", str(workspace / "eval.jsonl"), "--policy", policy, "--max-ticks", "20",
                     "--out", str(out)]) == 0
        totals[policy] = json.loads((out / "metrics.json").read_text())["total"]
    assert totals["MinCostCC"]["estimated_contacts"] <= totals["MinCost"]["estimated_contacts"]


def test_ablate_two_variants(workspace, tmp_path):
    out = tmp_path / "ablate"
    code = main(["ablate", "--data", str(workspace / "train.jsonl"), "--episodes", str(workspace / "eval.jsonl"),
                 "--variants", "baseline,N1", "--max-ticks", "3", "--config", str(workspace / "tiny.json"),
                 "--out", str(out)])
    assert code == EXIT_OK
    lines = (out / "ablation.tsv").read_text().splitlines()
    header = lines[0].split("\t")
    assert len(lines) == 3
    for line in lines[1:]:
        cells = line.split("\t")
        assert len(cells) == len(header) and all(c != "" for c in cells)
    assert {"variant", "estimated_contacts_per_1k_MinCostCC", "agent_min_ade_3s"} <= set(header)


def test_ablate_rejects_unknown_variant(workspace, tmp_path):
    code = main(["ablate", "--data", str(workspace / "train.jsonl"), "--episodes", str(workspace / "eval.jsonl"),
                 "--variants", "bogus", "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE


def test_report_on_empty_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_OK
    assert "no data" in capsys.readouterr().out


def test_report_summarizes_simulation_outputs(workspace, tmp_path, capsys):
    out = tmp_path / "sim"
    main(["simulate", "--checkpoint", str(workspace / "run" / "model.npz"), "--episodes",
          str(workspace / "eval.jsonl"), "--max-ticks", "2", "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(tmp_path)]) == EXIT_OK
    assert "episodes: 50" in capsys.readouterr().out


def test_episode_duration_outside_range_is_a_usage_error(tmp_path):
    assert main(["gen", "CutIn", "1", "--duration", "5", "--out", str(tmp_path / "x.jsonl")]) == EXIT_USAGE
