import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcone.autodiff import Tensor
from rcone.diagnostics import gradcheck_suite
from rcone.errors import ConfigError, DataError, NumericError
from rcone.kg import SynthConfig, synth_mmkg
from rcone.model import ModelConfig, RConeModel
from rcone.nn import OptimizerConfig
from rcone.querygen import (DatasetConfig, LinkConfig, generate_dataset, joint_link_model,
                            link_scene_graphs)
from rcone.subentity import ComplExConfig
from rcone.training import (LossConfig, TrainConfig, fit, load_training_state,
                            negative_sampling_loss, sample_batch, save_training_state, total_loss)


def test_loss_at_margin_is_two_log_two():
    g = 1.7
    assert float(negative_sampling_loss(g, np.full(5, g), g).data) == pytest.approx(2 * math.log(2),
                                                                                   abs=1e-12)


def test_loss_limit_first_term_only():
    g = 1.2
    got = float(negative_sampling_loss(0.0, np.full(3, 1e6), g).data)
    assert got == pytest.approx(-math.log(1 / (1 + math.exp(-g))), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    pos0, neg0 = rng.uniform(0, 5, 4), rng.uniform(0, 5, (4, 6))
    gamma = rng.uniform(0.5, 3)
    p, n = Tensor(pos0.copy(), True), Tensor(neg0.copy(), True)
    negative_sampling_loss(p, n, gamma).backward()

    def f(a, b):
        return float(negative_sampling_loss(a, b, gamma).data)
    h = 1e-6
    for x0, grad, which in ((pos0, p.grad, 0), (neg0, n.grad, 1)):
        num = np.zeros_like(x0)
        for i in np.ndindex(x0.shape):
            up, dn = x0.copy(), x0.copy()
            up[i] += h
            dn[i] -= h
            args_up = (up, neg0) if which == 0 else (pos0, up)
            args_dn = (dn, neg0) if which == 0 else (pos0, dn)
            num[i] = (f(*args_up) - f(*args_dn)) / (2 * h)
        assert np.max(np.abs(num - grad) / np.maximum(np.abs(grad), 1e-8)) < 1e-6


def test_loss_rejects_nonfinite_and_empty():
    with pytest.raises(NumericError):
        negative_sampling_loss(np.nan, np.ones(2), 1.0)
    with pytest.raises(ValueError):
        negative_sampling_loss(np.ones(2), np.ones((2, 0)), 1.0)


def test_loss_mask_drops_negatives():
    full = float(negative_sampling_loss(1.0, np.array([2.0, 50.0]), 1.0, np.array([1.0, 0.0])).data)
    want = -math.log(1 / (1 + math.exp(-0.0))) - 0.5 * math.log(1 / (1 + math.exp(-1.0)))
    assert full == pytest.approx(want, abs=1e-12)


@pytest.fixture(scope="module")
def tiny():
    m = synth_mmkg(SynthConfig(n_entities=20, n_relations=3, n_images=3, sub_min=3, sub_max=5,
                               density=0.05, n_clusters=4, linked_label_fraction=1.0), 0)
    link = LinkConfig(complex=ComplExConfig(d_c=4, steps=60))
    g = link_scene_graphs(m, joint_link_model(m, link, 0), link)
    counts = {"train": {s: 6 for s in ("1p", "2p", "2i", "2in", "2u", "up")},
              }
    ds = generate_dataset(g, DatasetConfig(counts, type1_fraction=0.4, image_fraction=1.0,
                                           seed=0))
    return ds


def new_model(ds, seed=0):
    return RConeModel(ds.graphs["train"], ModelConfig(d=6, d_c=4, heads=2, complex_steps=20),
                      seed=seed)


def test_type2_only_batch_is_l_c(tiny):
    model = new_model(tiny)
    recs = [r for r in tiny.queries["train"] if not r["answers_type1"]]
    parts = total_loss(model, recs, np.random.default_rng(0))
    assert parts.n_mm == parts.n_se == 0
    assert float(parts.total.data) == parts.L_c


def test_zero_lambdas_give_l_c(tiny):
    model = new_model(tiny)
    recs = tiny.queries["train"]
    assert any(r["answers_type1"] for r in recs)
    parts = total_loss(model, recs, np.random.default_rng(0), LossConfig(lambda_l1=0, lambda_l2=0))
    assert parts.n_mm > 0 and parts.n_se > 0
    assert float(parts.total.data) == pytest.approx(parts.L_c, abs=1e-15)
    full = total_loss(model, recs, np.random.default_rng(0))
    assert float(full.total.data) == pytest.approx(full.L_c + full.L_se + 0.005 * full.L_mm)


def test_negatives_are_filtered(tiny):
    model = new_model(tiny)
    recs = tiny.queries["train"]
    for seed in range(5):
        parts = total_loss(model, recs, np.random.default_rng(seed))
        for i, negs in parts.negatives["c"]:
            bad = set(recs[i]["answers_type2"]) | {p["candidate"] for p in recs[i]["answers_type1"]}
            assert not bad & set(negs)
        for i, negs in parts.negatives["mm"]:
            assert not {p["candidate"] for p in recs[i]["answers_type1"]} & set(negs)
        for i, negs in parts.negatives["se"]:
            assert not {p["sub"] for p in recs[i]["answers_type1"]} & set(negs)


def test_empty_batch_raises(tiny):
    rec = dict(tiny.queries["train"][0], answers_type2=[], answers_type1=[])
    with pytest.raises(DataError):
        total_loss(new_model(tiny), [rec], np.random.default_rng(0))


def test_total_loss_gradcheck():
    res = gradcheck_suite(seed=2, paths=("total_loss",))
    assert res["total_loss"].max_rel_err < 1e-4


def test_zero_steps_leave_init(tiny):
    a, b = new_model(tiny), new_model(tiny)
    fit(a, tiny.queries["train"], TrainConfig(steps=0))
    for k, v in a.store.state().items():
        assert np.array_equal(v, b.store.state()[k])


def test_fit_deterministic(tiny):
    cfg = TrainConfig(steps=4, batch_size=8)
    a, b = new_model(tiny), new_model(tiny)
    fit(a, tiny.queries["train"], cfg)
    fit(b, tiny.queries["train"], cfg)
    for k, v in a.tensors().items():
        assert v.tobytes() == b.tensors()[k].tobytes()


def test_checkpoint_resume_is_bitwise(tiny, tmp_path):
    recs = tiny.queries["train"]
    cfg = TrainConfig(steps=6, batch_size=8)
    straight = new_model(tiny)
    fit(straight, recs, cfg)

    first = new_model(tiny)
    res = fit(first, recs, TrainConfig(steps=3, batch_size=8))
    save_training_state(first, res.optimizer, tmp_path / "ck", 3)
    resumed = new_model(tiny)
    opt, step = load_training_state(resumed, tmp_path / "ck")
    assert step == 3
    fit(resumed, recs, cfg, optimizer=opt, start_step=step)
    for k, v in straight.tensors().items():
        assert v.tobytes() == resumed.tensors()[k].tobytes(), k


def test_fit_writes_log(tiny, tmp_path):
    fit(new_model(tiny), tiny.queries["train"], TrainConfig(steps=3, batch_size=8, log_every=1),
        log_path=tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 3 and '"L_c"' in lines[0]


def test_fit_rejects_bad_config(tiny):
    with pytest.raises(ConfigError):
        fit(new_model(tiny), tiny.queries["train"], TrainConfig(steps=-1))


def test_divergence_aborts_with_last_good(tiny, tmp_path):
    model = new_model(tiny)
    model.store["entity.ax"].data[0, 0] = np.nan
    with pytest.raises(NumericError):
        fit(model, tiny.queries["train"], TrainConfig(steps=2, batch_size=len(tiny.queries["train"])),
            checkpoint_dir=tmp_path)
    assert (tmp_path / "last-good").exists()


def test_sample_batch():
    rng = np.random.default_rng(0)
    assert list(sample_batch(3, 10, rng)) == [0, 1, 2]
    b = sample_batch(100, 10, rng)
    assert len(set(b)) == 10
    with pytest.raises(DataError):
        sample_batch(0, 4, rng)


def test_loss_decreases_early(tiny):
    """Mean loss over the last 20 of 120 steps sits below the first 20, for several seeds."""
    recs = tiny.queries["train"]
    wins = 0
    for seed in range(5):
        model = new_model(tiny, seed)
        res = fit(model, recs, TrainConfig(steps=120, batch_size=16, seed=seed,
                                           optimizer=OptimizerConfig(lr=0.01)))
        losses = [e["loss"] for e in res.log]
        wins += np.mean(losses[-20:]) < np.mean(losses[:20])
    assert wins == 5


@pytest.mark.slow
def test_smoke_loss_decreases_for_most_seeds():
    """Over the first 200 smoke steps the loss drops in at least 19 of 20 seeded runs."""
    from rcone.config import load_config
    cfg = load_config(preset="smoke", env={})
    m = synth_mmkg(cfg.synth(), 0)
    link = cfg.link()
    g = link_scene_graphs(m, joint_link_model(m, link, 0), link)
    ds = generate_dataset(g, cfg.dataset())
    recs = ds.queries["train"]
    wins = 0
    for seed in range(20):
        model = RConeModel(ds.graphs["train"], cfg.model(), seed=seed)
        tc = cfg.train()
        res = fit(model, recs, TrainConfig(200, tc.batch_size, seed, tc.loss, tc.optimizer))
        losses = [e["loss"] for e in res.log]
        wins += np.mean(losses[-20:]) < np.mean(losses[:20])
    assert wins >= 19
