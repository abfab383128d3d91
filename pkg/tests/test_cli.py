import csv
import json

import pytest

from coscov import cli, trainer
from coscov.checkpoint import MAGIC
from coscov.errors import NumericError

from conftest import TINY_LEN, tiny_config, tiny_train

DATA = __import__("pathlib").Path(__file__).parent / "data"


@pytest.fixture
def tiny_cfg(tmp_path):
    m = tiny_config().to_dict()
    m.pop("num_classes")
    doc = {"model": m, "train": tiny_train(epochs=1).to_dict(),
           "data": {"synthetic": True, "classes": 4, "per_class": 5}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_param_count(capsys):
    code, out, err = run(capsys, "param-count")
    assert code == 0
    assert "backbone 91200 vs 408192: reduction 77.66%" in out
    assert json.loads(err.splitlines()[-1])["command"] == "param-count"


def test_gradcheck_all_and_subset(capsys):
    code, out, _ = run(capsys, "gradcheck", "--instances", "3")
    assert code == 0 and len(out.splitlines()) == 17
    code, out, _ = run(capsys, "gradcheck", "--ops", "conv1d")
    assert code == 0 and len(out.splitlines()) == 1 and out.split()[:2] == ["PASS", "conv1d"]


def test_gradcheck_detects_wrong_gradient(capsys):
    code, out, _ = run(capsys, "gradcheck", "--ops", "tanh", "--instances", "3", "--perturb", "0.01")
    assert code == 1 and "FAIL" in out


def test_gradcheck_unknown_op(capsys):
    code, _, err = run(capsys, "gradcheck", "--ops", "fft")
    assert code == cli.EXIT_CONFIG and "fft" in err


def test_train_then_eval(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    code, stdout, err = run(capsys, "train", "--config", tiny_cfg, "--out", out)
    assert code == 0
    lines = dict(line.split() for line in stdout.splitlines())
    assert set(lines) == {"best_val_accuracy", "test_accuracy"}
    assert json.loads((out / "report.json").read_text())["train_config"]["pad_or_trim_to"] == TINY_LEN
    assert (out / "manifest.json").exists() and (out / "model.ckpt").read_bytes().startswith(MAGIC)
    resolved = json.loads(err.splitlines()[0])
    assert resolved["model"]["num_classes"] == 4 and resolved["train"]["epochs"] == 1

    code, stdout, _ = run(capsys, "eval", "--checkpoint", out / "model.ckpt", "--config", tiny_cfg)
    assert code == 0 and stdout.strip() == lines["test_accuracy"]
    assert len(stdout.strip().split(".")[1]) == 4

    code, stdout2, _ = run(capsys, "eval", "--checkpoint", out / "model.ckpt", "--config", tiny_cfg,
                           "--manifest", out / "manifest.json", "--split", "test")
    assert code == cli.EXIT_CONFIG  # two data sources


def test_same_seed_same_checkpoint(tmp_path, tiny_cfg, capsys):
    for d in ("a", "b"):
        assert run(capsys, "train", "--config", tiny_cfg, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    run(capsys, "train", "--config", tiny_cfg, "--out", tmp_path / "c", "--seed", "7")
    assert (tmp_path / "a" / "model.ckpt").read_bytes() != (tmp_path / "c" / "model.ckpt").read_bytes()


def test_flag_overrides_file(tmp_path, tiny_cfg, capsys):
    code, _, err = run(capsys, "train", "--config", tiny_cfg, "--epochs", "2", "--lr", "0.5")
    resolved = json.loads(err.splitlines()[0])
    assert code == 0 and resolved["train"]["epochs"] == 2 and resolved["train"]["lr"] == 0.5


def test_missing_data_dir(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data-dir", tmp_path / "nope")
    assert code == cli.EXIT_DATA and "nope" in err


def test_no_data_source(capsys):
    assert run(capsys, "train")[0] == cli.EXIT_CONFIG


def test_unknown_key_named(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"filter_size": 3}}))
    code, _, err = run(capsys, "train", "--config", path, "--synthetic")
    assert code == cli.EXIT_CONFIG and "filter_size" in err
    path.write_text(json.dumps({"optim": {}}))
    code, _, err = run(capsys, "param-count", "--config", path)
    assert code == cli.EXIT_CONFIG and "optim" in err


def test_num_classes_mismatch(capsys, tiny_cfg):
    code, _, err = run(capsys, "train", "--config", tiny_cfg, "--num-classes", "7")
    assert code == cli.EXIT_CONFIG and "7" in err


def test_bad_checkpoints(tmp_path, tiny_cfg, capsys):
    run(capsys, "train", "--config", tiny_cfg, "--out", tmp_path / "r")
    ckpt = tmp_path / "r" / "model.ckpt"
    data = bytearray(ckpt.read_bytes())
    data[-3] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(data))
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "bad.ckpt", "--config", tiny_cfg)
    assert code == cli.EXIT_CONFIG and "corrupted" in err

    text = ckpt.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
    (tmp_path / "old.ckpt").write_bytes(text)
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "old.ckpt", "--config", tiny_cfg)
    assert code == cli.EXIT_CONFIG and "9" in err and "version 1" in err


def test_numeric_abort_exit_code(monkeypatch, tiny_cfg, capsys):
    def boom(*a, **k):
        raise NumericError("non-finite loss nan")
    monkeypatch.setattr(cli, "fit", boom)
    code, _, err = run(capsys, "train", "--config", tiny_cfg)
    assert code == cli.EXIT_NUMERIC and "nan" in err


def test_export_filters(tmp_path, capsys):
    out = tmp_path / "f.csv"
    code, stdout, _ = run(capsys, "export-filters", "--layer", "layer1", "--out", out)
    rows = list(csv.DictReader(open(out)))
    assert code == 0 and len(rows) == 1 * 32 * 100 and stdout.startswith(f"wrote {len(rows)} rows")
    assert {r["layer"] for r in rows} == {"layer1"}
    code, _, err = run(capsys, "export-filters", "--layer", "layer9", "--out", out)
    assert code == cli.EXIT_CONFIG and "layer1" in err


def test_export_filters_from_checkpoint(tmp_path, tiny_cfg, capsys):
    run(capsys, "train", "--config", tiny_cfg, "--out", tmp_path / "r")
    out = tmp_path / "f.csv"
    assert run(capsys, "export-filters", "--checkpoint", tmp_path / "r" / "model.ckpt", "--out", out)[0] == 0
    c = tiny_config()
    chans = [1, *c.hidden_channels, c.num_classes]
    expected = sum(a * b * L for a, b, L in zip(chans, chans[1:], c.filter_lens))
    assert len(list(csv.DictReader(open(out)))) == expected


def test_search_with_mock_tables(tmp_path, capsys):
    code, out, _ = run(capsys, "search", "--mock-oracle", DATA / "table1.csv",
                       "--pool-oracle", DATA / "table2.csv", "--out", tmp_path)
    assert code == 0
    assert "filters: [100, 50, 12, 6, 3]" in out and "pools: [10, 8, 4, 4]" in out
    assert (tmp_path / "filters.csv").read_text().startswith("Filter Size,Layer 1")


def test_search_failed_cells_exit(tmp_path, capsys):
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"pool_candidates": [2, 4, 6, 8, 10, 20]}))
    tab = tmp_path / "t.csv"
    tab.write_text("Pool Size,Layer 1,Layer 2,Layer 3,Layer 4\n2,0.1,0.1,0.1,0.1\n4,0.2,,0.2,0.2\n")
    code, out, err = run(capsys, "search", "--pool-oracle", tab)
    assert code == cli.EXIT_SEARCH_FAILED and "pools: [4, 2, 4, 4]" in out and "layer 2" in err


def test_search_bad_table(tmp_path, capsys):
    tab = tmp_path / "t.csv"
    tab.write_text("Filter Size,Layer 1\nabc,1\n")
    assert run(capsys, "search", "--mock-oracle", tab)[0] == cli.EXIT_CONFIG


def test_ablation_and_sweep(tmp_path, tiny_cfg, capsys):
    code, out, _ = run(capsys, "ablation", "--config", tiny_cfg, "--out", tmp_path / "abl.csv")
    assert code == 0 and out.splitlines()[0].count("|") == 6
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"memory_sizes": [2, 4], "embedding_counts": [4], "runs_per_cell": 1}))
    code, out, _ = run(capsys, "sweep", "--config", tiny_cfg, "--grid", grid)
    assert code == 0 and out.splitlines()[0] == "memory_size,k=4" and len(out.splitlines()) == 3
