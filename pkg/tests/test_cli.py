import json

import pytest

from sessrec.cli import (EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC,
                         EXIT_OK, main)


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_bundle(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "bundle.json"
    assert run("synth", "--out", str(path), "--n-items", "30", "--sessions", "60",
               "--chains", "3", "--chain-len", "6", "--noise", "0.1",
               "--seed", "5") == EXIT_OK
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0
    assert "sessrec" in capsys.readouterr().out


def test_preprocess_and_graph_export(tmp_path):
    raw = tmp_path / "events.tsv"
    rows = []
    t = 0
    for r in range(6):
        for s, items in enumerate([["a", "b", "c"], ["c", "b"]]):
            for k in items:
                rows.append(f"s{r}_{s}\t{k}\t{t}")
                t += 1
    raw.write_text("\n".join(rows) + "\n")
    bundle = tmp_path / "bundle.json"
    assert run("preprocess", "--in", str(raw), "--out", str(bundle),
               "--min-item-freq", "2") == EXIT_OK
    edges = tmp_path / "edges.tsv"
    out = tmp_path / "bundle_g.json"
    assert run("build-graph", "--in", str(bundle), "--out", str(out),
               "--epsilon", "2", "--export", str(edges)) == EXIT_OK
    lines = edges.read_text().splitlines()
    assert lines and all(len(l.split("\t")) == 3 for l in lines)
    assert lines == sorted(lines, key=lambda l: tuple(map(int, l.split("\t")[:2])))


def test_end_to_end_pipeline(tmp_path, synth_bundle):
    with_graph = tmp_path / "bundle_g.json"
    assert run("build-graph", "--in", str(synth_bundle), "--out",
               str(with_graph)) == EXIT_OK
    out_dir = tmp_path / "run"
    assert run("train", "--data", str(with_graph), "--out", str(out_dir),
               "--d", "8", "--layers", "1", "--epochs", "2", "--batch", "16",
               "--seed", "1") == EXIT_OK
    assert (out_dir / "metrics.json").exists()
    assert (out_dir / "config.json").exists()
    assert (out_dir / "best.ckpt").exists()
    log_lines = (out_dir / "train.log").read_text().splitlines()
    assert all(json.loads(l) for l in log_lines)
    metrics_out = tmp_path / "metrics.json"
    assert run("eval", "--checkpoint", str(out_dir / "best.ckpt"), "--data",
               str(with_graph), "--ks", "10,20", "--out",
               str(metrics_out)) == EXIT_OK
    doc = json.loads(metrics_out.read_text())
    assert {"p@10", "mrr@10", "p@20", "mrr@20"} <= set(doc)


def test_train_beta_zero_is_valid_ablation(tmp_path, synth_bundle):
    out_dir = tmp_path / "scl"
    assert run("train", "--data", str(synth_bundle), "--out", str(out_dir),
               "--d", "8", "--layers", "1", "--epochs", "1", "--beta", "0",
               "--seed", "1") == EXIT_OK
    cfg = json.loads((out_dir / "config.json").read_text())
    assert cfg["beta"] == 0.0


def test_unknown_config_key_rejected(tmp_path, synth_bundle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 8, "learning_rate_typo": 0.1}))
    assert run("train", "--data", str(synth_bundle), "--out",
               str(tmp_path / "x"), "--config", str(cfg)) == EXIT_CONFIG


def test_missing_data_file(tmp_path):
    assert run("train", "--data", str(tmp_path / "nope.json"), "--out",
               str(tmp_path / "x"), "--epochs", "1") == EXIT_DATA


def test_vocab_mismatch_exit_code(tmp_path, synth_bundle):
    out_dir = tmp_path / "run"
    assert run("train", "--data", str(synth_bundle), "--out", str(out_dir),
               "--d", "8", "--layers", "0", "--epochs", "1", "--seed",
               "2") == EXIT_OK
    other = tmp_path / "other.json"
    assert run("synth", "--out", str(other), "--n-items", "25", "--sessions",
               "50", "--chains", "3", "--chain-len", "5", "--seed", "6") == EXIT_OK
    assert run("eval", "--checkpoint", str(out_dir / "best.ckpt"), "--data",
               str(other), "--out", str(tmp_path / "m.json")) == EXIT_CHECKPOINT


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--n", "6", "--d", "4", "--layers", "1",
               "--batch", "3") == EXIT_OK
    doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert doc["max_relative_error"] < 1e-4


def test_preset_sets_layers_and_beta(tmp_path, synth_bundle):
    out_dir = tmp_path / "preset"
    assert run("train", "--data", str(synth_bundle), "--out", str(out_dir),
               "--preset", "tmall", "--d", "8", "--epochs", "0") == EXIT_OK
    cfg = json.loads((out_dir / "config.json").read_text())
    assert cfg["num_layers"] == 3 and cfg["beta"] == 75.0


def test_config_echo_reproduces_results(tmp_path, synth_bundle):
    first = tmp_path / "a"
    assert run("train", "--data", str(synth_bundle), "--out", str(first),
               "--d", "8", "--layers", "1", "--epochs", "2", "--seed",
               "3") == EXIT_OK
    echoed = json.loads((first / "config.json").read_text())
    cfg_file = tmp_path / "echo.json"
    hyper_keys = {"d", "num_layers", "epsilon", "tau", "beta", "lr", "l2",
                  "batch_size", "epochs", "max_session_len", "seed", "use_spl",
                  "use_attention", "use_reverse_pos", "spl_scope", "ce_form"}
    cfg_file.write_text(json.dumps({k: v for k, v in echoed.items()
                                    if k in hyper_keys}))
    second = tmp_path / "b"
    assert run("train", "--data", str(synth_bundle), "--out", str(second),
               "--config", str(cfg_file)) == EXIT_OK
    assert (first / "metrics.json").read_bytes() == \
           (second / "metrics.json").read_bytes()
    assert (first / "best.ckpt").read_bytes() == (second / "best.ckpt").read_bytes()
