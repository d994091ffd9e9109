import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcone.autodiff import Tensor
from rcone.diagnostics import gradcheck_suite
from rcone.errors import DataError
from rcone.geometry import PI, ConeEmbedding, DnfEmbedding
from rcone.kg import Mmkg, Modality, SceneGraph
from rcone.model import ModelConfig, RConeModel
from rcone.nn import ParamStore
from rcone.query import Projection, Anchor
from rcone.querygen import execute_query, ground_truth, record
from rcone.subentity import (ComplExConfig, ContextAggregator, GraphTransformLayer,
                             SceneGraphProvider, TransformerConfig, aggregate_context,
                             complex_score, neighbour_matrix, select_candidates, train_complex,
                             train_scene_complex, transform_subentities)


# -- provider ----------------------------------------------------------------------

def test_provider_passthrough(toy):
    g, _ = toy
    p = SceneGraphProvider(g.mmkg)
    assert p("ToyStoryPoster") is g.mmkg.scene_graphs["ToyStoryPoster"]
    p("ToyStoryPoster")
    assert p.calls == 2 and p.loads == 1


def test_provider_rejects_generic(toy):
    g, _ = toy
    with pytest.raises(DataError):
        SceneGraphProvider(g.mmkg)("TomHanks")
    with pytest.raises(DataError):
        SceneGraphProvider(g.mmkg)("Nobody")


def test_provider_reads_directory(toy, tmp_path):
    g, sid = toy
    sg = SceneGraph("JohnLasseterImage", [("JohnLasseterImage/Hat#0", "Hat")], set())
    (tmp_path / "JohnLasseterImage.json").write_text(json.dumps(sg.to_json()))
    p = SceneGraphProvider(g.mmkg, tmp_path)
    assert p("JohnLasseterImage").ids == ["JohnLasseterImage/Hat#0"]


def test_provider_missing_file(toy, tmp_path):
    g, _ = toy
    with pytest.raises(DataError):
        SceneGraphProvider(g.mmkg, tmp_path)("WaltDisneyLogo")


def test_empty_candidate_set_makes_no_provider_calls(toy):
    g, _ = toy
    model = RConeModel(g, ModelConfig(d=6, d_c=4, complex_steps=5), seed=0)
    q = Projection(Anchor("ToyStory"), "hasImage")
    rec = record("1p", q, ground_truth(g, execute_query(g, q)))
    assert model.scorer().predict_subentities(rec, tau=-1.0) == {}
    assert model.provider.calls == 0
    sc = model.scorer()
    assert len(sc.candidates(rec, tau=float("inf"))) == 3 and model.provider.calls == 0
    for _ in range(2):
        ids, _ = sc.sub_distances(rec, "ToyStoryPoster")
    assert len(ids) == 12 and model.provider.loads == 1


# -- ComplEx ---------------------------------------------------------------------------

def test_complex_score_examples():
    assert complex_score([1 + 0j], [1 + 0j], [1 + 0j]) == 1.0
    assert complex_score([1j], [1j], [1 + 0j]) == -1.0
    with pytest.raises(ValueError):
        complex_score([1j, 1], [1j], [1])


def test_complex_score_naive_loop(rng):
    h, r, t = (rng.normal(size=7) + 1j * rng.normal(size=7) for _ in range(3))
    naive = 0.0
    for i in range(7):
        a, b, c = h[i], r[i], t[i]
        re = (a.real * b.real - a.imag * b.imag)
        im = (a.real * b.imag + a.imag * b.real)
        naive += re * c.real + im * c.imag
    assert complex_score(h, r, t) == pytest.approx(naive, abs=1e-12)


@given(st.floats(-10, 10), st.integers(0, 1000))
def test_complex_score_linear_in_head(alpha, seed):
    rng = np.random.default_rng(seed)
    h, r, t = (rng.normal(size=4) + 1j * rng.normal(size=4) for _ in range(3))
    assert complex_score(alpha * h, r, t) == pytest.approx(alpha * complex_score(h, r, t),
                                                           abs=1e-9)


def test_train_complex_single_triple():
    ents = ["a", "b", "c", "d"]
    m = train_complex({("a", "r", "b")}, ents, ["r"], ComplExConfig(steps=200), seed=1)
    pos = m.score("a", "r", "b")
    assert all(pos > m.score("a", "r", x) for x in ("c", "d"))


def test_train_complex_separates_true_from_corrupted(toy):
    g, _ = toy
    sg = g.mmkg.scene_graphs["ToyStoryPoster"]
    m = train_scene_complex(sg, ComplExConfig(steps=200), seed=0)
    known = set(sg.sub_triples)
    pos = np.mean([m.score(*t) for t in known])
    neg = np.mean([m.score(h, r, x) for h, r, _ in known for x in sg.ids
                   if (h, r, x) not in known])
    assert pos > neg


def test_train_complex_zero_steps_is_init():
    a = train_complex({("a", "r", "b")}, ["a", "b"], ["r"], ComplExConfig(steps=0), seed=3)
    b = train_complex({("a", "r", "b")}, ["a", "b"], ["r"], ComplExConfig(steps=0), seed=3)
    rng = np.random.default_rng(3)
    want = rng.uniform(-0.5, 0.5, (2, 8))
    assert np.array_equal(a.store["complex.ent.re"].data, want)
    assert np.array_equal(a.store["complex.ent.im"].data, b.store["complex.ent.im"].data)


def test_train_complex_deterministic():
    cfg = ComplExConfig(steps=30)
    tr = {("a", "r", "b"), ("b", "s", "c")}
    a = train_complex(tr, ["a", "b", "c"], ["r", "s"], cfg, seed=9)
    b = train_complex(tr, ["a", "b", "c"], ["r", "s"], cfg, seed=9)
    for k, v in a.store.state().items():
        assert v.tobytes() == b.store.state()[k].tobytes()


def test_train_complex_zero_triples():
    with pytest.raises(DataError):
        train_complex(set(), ["a"], ["r"])
    with pytest.raises(DataError):
        train_scene_complex(SceneGraph("img", [("img/a#0", "a")], set()))


# -- external context ----------------------------------------------------------------

def star(n_leaves):
    ents = ["hub"] + [f"u{i}" for i in range(n_leaves)] + ["far"]
    triples = [("hub", "r", f"u{i}") for i in range(n_leaves)] + [("u0", "r", "far")]
    return ents, triples


def test_context_k0_is_entity_embedding(rng):
    ents, triples = star(3)
    table = rng.normal(size=(len(ents), 5))
    agg = ContextAggregator(ParamStore(), 5, rng)
    ctx = aggregate_context("hub", ents, table, triples, agg, K=0)
    assert len(ctx.hops) == 1 and np.array_equal(ctx.hops[0].data, table[0])


def test_context_zero_weights(rng):
    ents, triples = star(3)
    store = ParamStore()
    agg = ContextAggregator(store, 4, rng)
    for _, p in store.items():
        p.data[...] = 0.0
    ctx = aggregate_context("hub", ents, rng.normal(size=(5, 4)), triples, agg, K=1)
    assert np.array_equal(ctx.hops[1].data, np.zeros(4))


def test_context_single_neighbour_mean(rng):
    ents = ["v", "u", "w"]
    mean_adj, isolated = neighbour_matrix(ents, [("v", "r", "u")])
    table = rng.normal(size=(3, 4))
    assert np.array_equal((mean_adj @ table)[0], table[1])
    assert isolated.tolist() == [False, False, True]


def test_context_isolated_flagged(rng):
    ents = ["v", "u"]
    agg = ContextAggregator(ParamStore(), 3, rng)
    table = rng.normal(size=(2, 3))
    ctx = aggregate_context("v", ents, table, [], agg, K=1)
    W, b = agg.W.W.data, agg.W.b.data
    want = np.maximum(0.0, np.concatenate([table[0], np.zeros(3)]) @ W.T + b)
    assert ctx.isolated and np.allclose(ctx.hops[1].data, want, atol=1e-12)


def context_by_loops(ents, triples, table, W, b, K, node):
    """Plain per-node loops: h^k_e = relu(W [h^{k-1}_e ; mean_{u in N(e)} h^{k-1}_u] + b)."""
    nbrs = {e: set() for e in ents}
    for h, _, t in triples:
        if h != t:
            nbrs[h].add(t)
            nbrs[t].add(h)
    h = {e: table[i] for i, e in enumerate(ents)}
    for _ in range(K):
        new = {}
        for e in ents:
            m = np.mean([h[u] for u in sorted(nbrs[e])], axis=0) if nbrs[e] else np.zeros_like(h[e])
            z = W @ np.concatenate([h[e], m]) + b
            new[e] = np.maximum(z, 0.0)
        h = new
    return h[node]


@pytest.mark.parametrize("K", [1, 2, 3])
def test_context_star_graph_matches_loops(rng, K):
    ents, triples = star(4)
    table = rng.normal(size=(len(ents), 6))
    agg = ContextAggregator(ParamStore(), 6, rng)
    ctx = aggregate_context("hub", ents, table, triples, agg, K=K)
    want = context_by_loops(ents, triples, table, agg.W.W.data, agg.W.b.data, K, "hub")
    assert np.allclose(ctx.hops[K].data, want, atol=1e-12)


def test_context_rejects_generic(toy, rng):
    g, _ = toy
    ents = g.mmkg.entities
    agg = ContextAggregator(ParamStore(), 3, rng)
    with pytest.raises(DataError):
        aggregate_context("TomHanks", ents, np.zeros((len(ents), 3)), g.mmkg.triples, agg,
                          mmkg=g.mmkg)


# -- transformer ---------------------------------------------------------------------

@pytest.fixture
def poster(toy, rng):
    g, _ = toy
    sg = g.mmkg.scene_graphs["ToyStoryPoster"]
    cm = train_scene_complex(sg, ComplExConfig(d_c=4, steps=20), seed=0)
    ents = g.mmkg.entities
    agg = ContextAggregator(ParamStore(), 6, rng)
    ctx = aggregate_context("ToyStoryPoster", ents, rng.uniform(-PI, PI, (len(ents), 6)),
                            g.mmkg.triples, agg, K=1, mmkg=g.mmkg)
    layer = GraphTransformLayer(ParamStore(), TransformerConfig(d_c=4, heads=2), 6, rng)
    return sg, cm, ctx, layer


def test_transform_count_and_range(poster):
    sg, cm, ctx, layer = poster
    out = transform_subentities(cm, sg.ids, ctx, layer)
    assert list(out) == sg.ids
    for emb in out.values():
        assert np.isfinite(emb.ax).all()
        assert ((emb.ax >= -PI) & (emb.ax < PI)).all()


def test_transform_is_pure(poster):
    sg, cm, ctx, layer = poster
    a = transform_subentities(cm, sg.ids, ctx, layer)
    b = transform_subentities(cm, sg.ids, ctx, layer)
    for s in sg.ids:
        assert np.array_equal(a[s].ax, b[s].ax)
    x = np.tile(cm.features(sg.ids[:1]), (3, 1))
    y = layer(x, ctx.tokens()).data
    assert np.array_equal(y[0], y[1]) and np.array_equal(y[1], y[2])


def test_transform_dimension_mismatch(poster, rng):
    sg, cm, ctx, _ = poster
    layer = GraphTransformLayer(ParamStore(), TransformerConfig(d_c=4, heads=2), 5, rng)
    with pytest.raises(ValueError):
        transform_subentities(cm, sg.ids, ctx, layer)


def test_transformer_config_heads():
    assert TransformerConfig(d_c=3, heads=4).validate()


def test_transformer_and_complex_gradcheck():
    res = gradcheck_suite(seed=5, paths=("transformer", "complex"))
    for r in res.values():
        assert r.max_rel_err < 1e-4


# -- candidate selection -----------------------------------------------------------------

def dnf_of(rng, d, k=1):
    return DnfEmbedding(tuple(ConeEmbedding(rng.uniform(-PI, PI, d), rng.uniform(0, PI, d),
                                            rng.uniform(0, PI / 2, d)) for _ in range(k)))


def test_select_all_with_infinite_tau(rng):
    imgs = [f"i{j}" for j in range(6)]
    sel = select_candidates(dnf_of(rng, 4, 2), imgs, rng.uniform(-PI, PI, (6, 4)), float("inf"))
    assert sorted(sel.entities) == imgs
    d = [c.distance for c in sel]
    assert d == sorted(d)


def test_select_zero_tau_empty(rng):
    imgs = [f"i{j}" for j in range(6)]
    assert len(select_candidates(dnf_of(rng, 4), imgs, rng.uniform(-PI, PI, (6, 4)), 0.0)) == 0


def test_select_zero_tau_border_incidence():
    c = ConeEmbedding([0.0], [1.0], [0.0])
    # candidate mode is zero on the inner-cone border when there is no fuzz
    sel = select_candidates(DnfEmbedding((c,)), ["a", "b"], np.array([[0.5], [2.0]]), 0.0)
    assert sel.entities == ["a"]


def test_select_empty_universe(rng):
    assert len(select_candidates(dnf_of(rng, 3), [], np.zeros((0, 3)), float("inf"))) == 0
