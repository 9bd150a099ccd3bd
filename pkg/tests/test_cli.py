import csv
import json

import numpy as np
import pytest

from histoport import groups
from histoport.cli import EXIT_CHECKSUM, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO, EXIT_OK, bench_rows, main
from histoport.io import load_checkpoint, save_checkpoint, tree_digest
from histoport.policy import PolicyBundle, PolicyConfig
from histoport.viz import read_ppm


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A two-iteration run through the CLI: dataset, config, output directory."""
    root = tmp_path_factory.mktemp("run")
    assert main(["gen-data", "--episodes", "2", "--seed", "7", "--out", str(root / "data")]) == EXIT_OK
    cfg = write_json(root / "cfg.json", {"iterations": 2, "eval_every": 1, "eval_episodes": 1})
    assert main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "out")]) == EXIT_OK
    return root


def test_gen_data_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--episodes", "10", "--seed", "7", "--out", str(tmp_path / name)]) == EXIT_OK
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert len(a) == 20 and a == b


def test_train_writes_checkpoint_and_metrics(trained):
    out = trained / "out"
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == [1, 2]
    assert list(rows[0]) == ["iteration", "loss_pick_pos", "loss_pick_angle", "loss_place",
                             "eval_success_rate", "wall_seconds"]
    bundle, manifest = load_checkpoint(out / "checkpoint")
    assert manifest["extra"]["train"]["iterations"] == 2


def test_eval_prints_text_and_csv(trained, capsys, tmp_path):
    ck = str(trained / "out" / "checkpoint")
    assert main(["eval", "--checkpoint", ck, "--episodes", "3", "--out", str(tmp_path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "success rate:" in text and "/ 100" in text
    rows = list(csv.DictReader(open(tmp_path / "eval.csv")))
    assert 0 <= float(rows[0]["success_rate"]) <= 100 and rows[0]["episodes"] == "3"


def test_eval_checksum_failure(trained, tmp_path):
    import shutil

    ck = tmp_path / "ck"
    shutil.copytree(trained / "out" / "checkpoint", ck)
    blob = (ck / "weights.bin").read_bytes()
    (ck / "weights.bin").write_bytes(blob[:-40])
    assert main(["eval", "--checkpoint", str(ck), "--episodes", "1"]) == EXIT_CHECKSUM


def test_eval_exit_codes(trained, tmp_path):
    ck = str(trained / "out" / "checkpoint")
    assert main(["eval", "--checkpoint", str(tmp_path / "missing"), "--episodes", "1"]) == EXIT_IO
    other = write_json(tmp_path / "c.json", {"n": 72})
    assert main(["eval", "--checkpoint", ck, "--config", other, "--episodes", "1"]) == EXIT_CONFIG


def test_train_config_errors(trained, tmp_path):
    data = str(trained / "data")
    bad = write_json(tmp_path / "bad.json", {"iterations": 2, "learning_rate": 0.1})
    assert main(["train", "--config", bad, "--data", data, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    nyq = write_json(tmp_path / "nyq.json", {"n": 12, "m": 12, "jc_angle": 6})
    assert main(["train", "--config", nyq, "--data", data, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    mismatch = write_json(tmp_path / "n72.json", {"n": 72, "iterations": 1})
    assert main(["train", "--config", mismatch, "--data", data, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == EXIT_IO
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--data", data,
                 "--out", str(tmp_path / "o")]) == EXIT_IO


def test_seed_must_be_u64(tmp_path):
    assert main(["gen-data", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["gen-data", "--seed", str(2 ** 64), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_viz_eoh(trained, tmp_path):
    ck = str(trained / "out" / "checkpoint")
    assert main(["viz-eoh", "--checkpoint", ck, "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    pad = PolicyConfig().pad
    assert read_ppm(tmp_path / "eoh_max.ppm").shape == (64 + 2 * pad, 64 + 2 * pad, 3)
    svg = (tmp_path / "eoh_arrows.svg").read_text()
    side = -(-(64 + 2 * pad) // 8)
    assert svg.count("<line ") == side * side * 12


def test_viz_eoh_rejects_invariant_checkpoint(tmp_path):
    save_checkpoint(tmp_path / "ck", PolicyBundle(PolicyConfig(descriptor="invariant")))
    assert main(["viz-eoh", "--checkpoint", str(tmp_path / "ck"), "--out", str(tmp_path / "v")]) == EXIT_CONFIG


def test_bench_parameter_counts(capsys):
    rows = bench_rows([36, 72, 120, 180], repeats=1)
    assert len({r["params"] for r in rows}) == 1
    assert all(r["tensor_bytes"] > 0 and r["median_ms"] > 0 for r in rows)
    assert [r["params"] for r in bench_rows([36], repeats=5)] == [rows[0]["params"]]


def test_bench_cli_csv(tmp_path, capsys):
    assert main(["bench", "--n", "36,72", "--repeats", "1", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert list(rows[0]) == ["N", "params", "median_ms", "tensor_bytes"]
    assert rows[0]["params"] == rows[1]["params"]
    assert "inference time monotone in N" in capsys.readouterr().out
    assert main(["bench", "--n", "36,40", "--repeats", "1"]) == EXIT_CONFIG


def test_check_clean_and_deterministic(capsys):
    assert main(["check"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["check"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert "FAIL" not in first


def test_check_fault_injection(monkeypatch, capsys):
    good = groups.regular_matrix

    def corrupted(n, i):
        p = good(n, i)
        return p[:, ::-1] if i % n == 1 else p  # a wrong permutation for one generator power

    monkeypatch.setattr(groups, "regular_matrix", corrupted)
    assert main(["check"]) == EXIT_INVARIANT
    fails = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert any("homomorphism" in ln for ln in fails)


def test_checkpoint_round_trip_eval_identical(tmp_path):
    from histoport.training import evaluate

    b = PolicyBundle(PolicyConfig(seed=5))
    save_checkpoint(tmp_path / "ck", b)
    b2, _ = load_checkpoint(tmp_path / "ck")
    assert all(np.array_equal(p.data, q.data) for p, q in zip(b.parameters(), b2.parameters()))
    r1, r2 = evaluate(b, 3, 0), evaluate(b2, 3, 0)
    assert (r1.success_rate, r1.mean_translation_error) == (r2.success_rate, r2.mean_translation_error)
