import json

import pytest

from rcone.cli import inspect_path, main
from rcone.config import PRESETS, load_config, parse_counts
from rcone.errors import ConfigError
from rcone.nn import load_checkpoint

SMALL = ["--data.n_entities=20", "--data.n_images=2", "--data.n_relations=3",
         "--data.density=0.05", "--data.n_clusters=4", "--data.linked_label_fraction=1.0",
         "--link.complex_steps=30", "--model.d=6", "--model.d_c=4", "--model.heads=2",
         "--model.scene_complex_steps=10", "--queries.image_fraction=1.0"]


def test_defaults_and_counts():
    cfg = load_config(env={})
    assert cfg["model.d"] == 24 and cfg["loss.lambda_l2"] == 0.005 and cfg["run.workers"] == 1
    assert parse_counts("train=1p:5,2i:all;test=1p:2") == {"train": {"1p": 5, "2i": None},
                                                           "test": {"1p": 2}}
    with pytest.raises(ValueError):
        parse_counts("train=7p:1")


def test_all_violations_listed(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nd = 0\n[bogus]\nx = 1\n[loss]\ngamma = -1\nk = abc\n")
    with pytest.raises(ConfigError) as exc:
        load_config(ini, ["--train.steps=-3", "--nope=1"], env={})
    v = exc.value.violations
    assert len(v) >= 3
    assert any("bogus" in x for x in v) and any("nope" in x for x in v)
    assert any("abc" in x for x in v)


def test_validation_collects_every_problem():
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["--model.d=0", "--loss.gamma=-1", "--train.steps=-3"], env={})
    assert len(exc.value.violations) >= 3


def test_env_seed_overrides(tmp_path):
    assert load_config(None, ["--run.seed=3"], env={"RCONE_SEED": "11"})["run.seed"] == 11


def test_short_key_parse_error():
    with pytest.raises(ConfigError):
        load_config(None, ["--lr=x"], env={})


def test_presets_resolve():
    for name in PRESETS:
        load_config(None, [], name, env={})


def test_dry_run_echoes_paper_values(tmp_path, capsys):
    rc = main(["--preset", "paper-fb15k", "train", "--out", str(tmp_path), "--dry-run"])
    assert rc == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["model.d"] == 2400 and man["config"]["loss.lambda_l2"] == 0.005
    assert "config_hash" in man and "versions" in man
    assert '"model.d": 2400' in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--dry-run", "--model.d=0", "--loss.k=0"]) == 2
    err = capsys.readouterr().err
    assert err.count("  - ") == 2


def test_data_error_exit_code(tmp_path):
    assert main(["inspect", str(tmp_path / "missing")]) == 3


def test_gen_queries_twice_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(SMALL + ["--seed", "1", "gen-queries", "--structure", "1p", "--count", "10",
                             "--out", str(out)]) == 0
        outs.append(out)
    for f in ("train.jsonl", "graph.json", "stats.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    a = json.loads((outs[0] / "manifest.json").read_text())
    b = json.loads((outs[1] / "manifest.json").read_text())
    assert a["outputs"] == b["outputs"] and a["config_hash"] == b["config_hash"]
    assert len((outs[0] / "train.jsonl").read_text().splitlines()) == 10


def test_structure_needs_count(tmp_path):
    assert main(SMALL + ["gen-queries", "--structure", "1p", "--out", str(tmp_path)]) == 2


def test_gradcheck_exits_zero(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert all(v["max_rel_err"] < 1e-4 for v in rep.values())
    assert "ok:" in capsys.readouterr().out


def test_pipeline_synth_train_eval_inspect(tmp_path, capsys):
    data, q, run, ev = (tmp_path / x for x in ("data", "q", "run", "ev"))
    counts = "--queries.counts=train=1p:8,2i:4,2in:4;valid=1p:2;test=1p:3"
    assert main(SMALL + ["synth", "--out", str(data)]) == 0
    assert main(SMALL + [counts, "gen-queries", "--data", str(data), "--out", str(q)]) == 0
    assert main(SMALL + ["--train.steps=3", "--train.batch_size=4", "--train.checkpoint_every=2",
                         "train", "--data", str(data), "--queries", str(q), "--out", str(run)]) == 0
    assert (run / "model" / "manifest.json").exists()
    assert (run / "checkpoints" / "step-000002").exists()
    assert main(SMALL + ["eval", "--data", str(data), "--queries", str(q), "--checkpoint",
                         str(run / "model"), "--out", str(ev)]) == 0
    assert json.loads((ev / "report.json").read_text())["filtered"] is True
    assert main(SMALL + ["fidelity", "--data", str(data), "--queries", str(q), "--checkpoint",
                         str(run / "model"), "--out", str(ev), "--n", "50"]) == 0
    fid = json.loads((ev / "fidelity.json").read_text())
    assert fid["containment_violations"] == 0 and 0 <= fid["sc_rigid"] <= 1

    # resuming from step 2 lands on the same parameters as the straight run
    run2 = tmp_path / "run2"
    assert main(SMALL + ["--train.steps=3", "--train.batch_size=4", "train", "--data", str(data),
                         "--queries", str(q), "--out", str(run2), "--resume",
                         str(run / "checkpoints" / "step-000002")]) == 0
    a, _ = load_checkpoint(run / "model")
    b, _ = load_checkpoint(run2 / "model")
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    capsys.readouterr()
    assert inspect_path(data)["kind"] == "mmkg"
    assert inspect_path(q)["kind"] == "dataset"
    assert inspect_path(q / "train.jsonl")["kind"] == "queries"
    assert inspect_path(run / "model")["kind"] == "checkpoint"
    assert main(["inspect", str(data)]) == 0
    assert '"kind": "mmkg"' in capsys.readouterr().out
