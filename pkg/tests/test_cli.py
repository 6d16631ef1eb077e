import json

import httpx
import pytest

from agp.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from agp.config import EXAMPLE_CONFIG, load_config

SMALL = """\
[backend]
kind = mock

[world]
seed = 1
n_users = 40

[data]
n_train = 10
n_eval = 20
split_seed = 1

[train]
batch_size = 5
max_epochs = 2
patience = 2
seed = 1
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL)
    return str(path)


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*a, **kw):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(httpx.Client, "send", refuse)


def test_example_config_parses(tmp_path):
    p = tmp_path / "x.ini"
    p.write_text(EXAMPLE_CONFIG)
    c = load_config(p)
    assert c.train.batch_size == 5 and c.data.synthetic and c.backend.kind == "mock"


def test_train_then_eval(cfg, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "-c", cfg, "--run-dir", str(run)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "best prompt: v" in out
    assert len(list((run / "prompts").glob("prompt_v*.txt"))) >= 2
    assert (run / "metrics.csv").exists() and (run / "ledger.csv").exists()
    split = json.loads((run / "split.json").read_text())
    assert len(split["train"]) == 10 and len(split["eval"]) == 20

    assert main(["eval", "-c", cfg, "--run-dir", str(run), "--mode", "agp"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "mean N@10 = " in out
    assert (run / "eval_agp" / "report.csv").read_text().count("\n") == 21


def test_train_refuses_non_empty_dir(cfg, tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    (run / "junk").write_text("x")
    assert main(["train", "-c", cfg, "--run-dir", str(run)]) == EXIT_CONFIG


def test_resume_finished_run_is_noop(cfg, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "-c", cfg, "--run-dir", str(run)])
    before = (run / "metrics.csv").read_bytes()
    assert main(["train", "-c", cfg, "--run-dir", str(run), "--resume"]) == EXIT_OK
    assert (run / "metrics.csv").read_bytes() == before


def test_missing_rankings_file(tmp_path, capsys):
    users = tmp_path / "users.jsonl"
    users.write_text("")
    path = tmp_path / "c.ini"
    path.write_text(f"[data]\nusers = {users}\nrankings = {tmp_path / 'nope.jsonl'}\n")
    assert main(["train", "-c", str(path), "--run-dir", str(tmp_path / "r")]) == EXIT_DATA
    assert "nope.jsonl" in capsys.readouterr().err


def test_bad_batch_size(cfg, tmp_path):
    assert main(["train", "-c", cfg, "--run-dir", str(tmp_path / "r"), "--batch-size", "0"]) == EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nbatchsize = 3\n")
    assert main(["train", "-c", str(p), "--run-dir", str(tmp_path / "r")]) == EXIT_CONFIG


def test_eval_base_makes_no_calls(cfg, tmp_path, capsys):
    assert main(["eval", "-c", cfg, "--mode", "base", "--out", str(tmp_path / "e")]) == EXIT_OK
    assert "gateway calls: 0" in capsys.readouterr().out


def test_eval_agp_without_checkpoints(cfg, tmp_path):
    assert main(["eval", "-c", cfg, "--run-dir", str(tmp_path / "empty"), "--mode", "agp"]) == EXIT_DATA


def test_budget(capsys):
    assert main(["budget", "--batch-size", "10"]) == EXIT_OK
    assert "total: 320" in capsys.readouterr().out
    assert main(["budget", "--batch-size", "5", "--epochs", "10"]) == EXIT_OK
    assert "total: 3400" in capsys.readouterr().out
    assert main(["budget", "--batch-size", "0"]) == EXIT_CONFIG


def test_budget_flags_non_divisible(capsys):
    main(["budget", "--batch-size", "30"])
    assert "approximate" in capsys.readouterr().out


def _spec(tmp_path, body):
    p = tmp_path / "spec.ini"
    p.write_text("[world]\n" + body)
    return str(p)


def test_synth_deterministic_and_loadable(tmp_path):
    from agp.dataset import load_bundle

    spec = _spec(tmp_path, "seed = 4\nn_users = 15\n")
    assert main(["synth", "--spec", spec, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["synth", "--spec", spec, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("users.jsonl", "rankings.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    bundle = load_bundle(tmp_path / "a" / "users.jsonl", tmp_path / "a" / "rankings.jsonl")
    assert len(bundle.users) == 15


def test_synth_infeasible(tmp_path):
    spec = _spec(tmp_path, "n_items = 5\nlist_length = 10\n")
    assert main(["synth", "--spec", spec, "--out", str(tmp_path / "a")]) == EXIT_DATA


def test_http_backend_without_key(cfg, tmp_path, monkeypatch):
    monkeypatch.delenv("AGP_API_KEY", raising=False)
    p = tmp_path / "h.ini"
    p.write_text(SMALL.replace("kind = mock", "kind = http\nbase_url = http://sentinel.invalid/v1"))
    assert main(["eval", "-c", str(p), "--mode", "dir", "--out", str(tmp_path / "e")]) == 3
