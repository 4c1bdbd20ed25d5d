import json
import shutil

import pytest

from pumacgl.cli import main
from pumacgl.graph import load_graph
from pumacgl.memory import load_bank, load_entry
from pumacgl.serialize import read_json
from pumacgl.stream import load_stream

TINY = {
    "dataset": {"sbm": {"classes": 4, "nodes_per_class": 25, "feature_dim": 6, "class_mean_scale": 0.3,
                        "noise_std": 0.3}},
    "stream": {"classes_per_task": 2},
    "budget_ratio": 0.1,
    "train": {"hidden": [16, 16], "epochs": 40, "lr": 0.01},
    "condense": {"encoder_dim": 64, "iters_per_encoder": 20, "feature_lr": 0.01},
    "seeds": [0],
}


@pytest.fixture
def cfg_file(tmp_path):
    def write(**over):
        p = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.json"
        p.write_text(json.dumps({**TINY, **over}))
        return str(p)
    return write


def test_gen_and_split(cfg_file, tmp_path):
    cfg = cfg_file()
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "g.json")]) == 0
    g = load_graph(tmp_path / "g.json")
    assert g.num_nodes == 100
    assert main(["split", "--config", cfg, "--out", str(tmp_path / "s.json")]) == 0
    s = load_stream(tmp_path / "s.json", g)
    assert [t.classes for t in s] == [(0, 1), (2, 3)]


def test_condense_one_task(cfg_file, tmp_path):
    cfg = cfg_file()
    out = tmp_path / "e.json"
    assert main(["condense", "--config", cfg, "--task", "0", "--bank", "cat", "--out", str(out)]) == 0
    e = load_entry(out)
    assert e.task_id == 0 and set(e.labels.tolist()) == {0, 1}


def test_condense_needs_prior_bank(cfg_file, tmp_path):
    assert main(["condense", "--config", cfg_file(), "--task", "1", "--out", str(tmp_path / "e.json")]) == 2


def test_run_writes_cells_and_report(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", "--config", cfg_file(seeds=[0, 1]), "--out", str(out)]) == 0
    for s in (0, 1):
        d = out / "puma" / "class_il" / f"seed{s}"
        res = read_json(d / "result.json")
        assert len(res["matrix"]) == 2
        assert len(load_bank(d / "bank")) == 2
        man = read_json(d / "manifest.json")
        assert man["seed"] == s and man["config"]["seeds"] == [s] and "config_digest" in man
        assert (d / "checkpoints" / "task_001" / "model.json").exists()
    table = (out / "report" / "table.txt").read_text()
    assert "puma/class_il" in table and " 2 " in table


def test_finetune_writes_no_bank(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", "--config", cfg_file(), "--bank", "finetune", "--out", str(out)]) == 0
    assert not list(out.glob("**/bank")) and not list(out.glob("**/entry_*.json"))


def test_report_zero_runs(tmp_path, capsys):
    assert main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "rep")]) == 2
    assert "no completed runs" in capsys.readouterr().err


def test_rerun_is_noop_unless_forced(cfg_file, tmp_path, capsys):
    out = tmp_path / "runs"
    cfg = cfg_file()
    main(["run", "--config", cfg, "--bank", "random", "--out", str(out)])
    res = out / "random" / "class_il" / "seed0" / "result.json"
    stamp = res.stat().st_mtime_ns
    capsys.readouterr()
    assert main(["run", "--config", cfg, "--bank", "random", "--out", str(out)]) == 0
    assert "0 executed" in capsys.readouterr().out and res.stat().st_mtime_ns == stamp
    assert main(["run", "--config", cfg, "--bank", "random", "--out", str(out), "--force"]) == 0
    assert "1 executed" in capsys.readouterr().out


def test_conflicting_config_refused(cfg_file, tmp_path):
    out = tmp_path / "runs"
    main(["run", "--config", cfg_file(), "--bank", "random", "--out", str(out)])
    changed = cfg_file(edge_keep_ratio=0.3)
    assert main(["run", "--config", changed, "--bank", "random", "--out", str(out)]) == 2
    assert main(["run", "--config", changed, "--bank", "random", "--out", str(out), "--force"]) == 0


def test_resume_from_checkpoint(cfg_file, tmp_path):
    out = tmp_path / "runs"
    cfg = cfg_file()
    main(["run", "--config", cfg, "--out", str(out)])
    d = out / "puma" / "class_il" / "seed0"
    want = read_json(d / "result.json")["matrix"]
    # simulate a crash after task 0
    (d / "result.json").unlink()
    shutil.rmtree(d / "checkpoints" / "task_001")
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert read_json(d / "result.json")["matrix"] == want


def test_grid_expands(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", "--config", cfg_file(grid={"tim": [True, False]}), "--bank", "random",
                 "--out", str(out)]) == 0
    assert (out / "random-tim=True").exists() and (out / "random-tim=False").exists()


def test_bad_config_exit_code(cfg_file, tmp_path):
    assert main(["run", "--config", cfg_file(banks=["nope"]), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", cfg_file(train={"bogus": 1}), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
