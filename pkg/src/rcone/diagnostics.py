"""Gradient checks of every trainable path against central differences."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .kg import SynthConfig, synth_mmkg
from .model import ModelConfig, RConeModel
from .nn import ParamStore, grad_check
from .operators import IntersectionNet, ProjectionNet, TCone
from .querygen import DatasetConfig, LinkConfig, generate_dataset, joint_link_model, link_scene_graphs
from .subentity import (ComplExConfig, ComplExModel, ContextAggregator, GraphTransformLayer,
                        TransformerConfig, _corrupt_tails, complex_loss, neighbour_matrix)
from .training import LossConfig, total_loss

PATHS = ("projection", "intersection", "transformer", "complex", "total_loss")


def _cone(rng, shape):
    ri = rng.uniform(0.3, 5.0, shape)
    return TCone(ad.Tensor(rng.uniform(-3.0, 3.0, shape)), ad.Tensor(ri),
                 ad.Tensor(rng.uniform(0.05, 0.9, shape) * (2 * np.pi - ri)))


def _readout(cone, w):
    return (cone.ax * w[0] + cone.ri * w[1] + cone.fu * w[2]).mean()


def _projection(rng, d=4, n=5):
    store = ParamStore()
    net = ProjectionNet(store, d, rng)
    cone = _cone(rng, (n, d))
    rel = [ad.Tensor(rng.normal(0, 0.5, d)) for _ in range(3)]
    w = rng.normal(size=(3, n, d))
    return store, lambda: _readout(net(cone, *rel), w)


def _intersection(rng, d=4, n=5, k=3):
    store = ParamStore()
    net = IntersectionNet(store, d, rng)
    cones = [_cone(rng, (n, d)) for _ in range(k)]
    w = rng.normal(size=(3, n, d))
    return store, lambda: _readout(net(cones), w)


def _transformer(rng, d=4, d_c=4, n_ent=6, n_sub=5):
    store = ParamStore()
    ents = [f"e{i}" for i in range(n_ent)]
    h0 = store.add("entity.ax", rng.uniform(-3, 3, (n_ent, d)))
    agg = ContextAggregator(store, d, rng)
    layer = GraphTransformLayer(store, TransformerConfig(d_c, heads=2, K=2), d, rng)
    triples = [(ents[i], "r", ents[(i + 1) % n_ent]) for i in range(n_ent)] + [("e0", "r", "e3")]
    adj, _ = neighbour_matrix(ents, triples)
    feats = rng.normal(size=(n_sub, 2 * d_c))
    w = rng.normal(size=(n_sub, d))

    def loss():
        hops = agg.all_hops(h0, adj, 2)
        tokens = ad.stack([h[2] for h in hops], axis=0)
        return (layer(feats, tokens) * w).mean()
    return store, loss


def _complex(rng, n_ent=6, n_rel=2, d_c=4, k=3):
    ents = [f"s{i}" for i in range(n_ent)]
    model = ComplExModel(ents, ["a", "b"][:n_rel], d_c, rng, prefix="cx")
    triples = [(ents[i], "ab"[i % n_rel], ents[(i * 2 + 1) % n_ent]) for i in range(n_ent)]
    h = np.array([model.eidx[x] for x, _, _ in triples])
    r = np.array([model.ridx[x] for _, x, _ in triples])
    t = np.array([model.eidx[x] for _, _, x in triples])
    neg, mask = _corrupt_tails(triples, model.eidx, n_ent, k, rng)
    return model.store, lambda: complex_loss(model, h, r, t, neg, mask)


def _total_loss(seed):
    m = synth_mmkg(SynthConfig(n_entities=16, n_relations=3, n_images=2, sub_min=3, sub_max=4,
                               density=0.05, n_clusters=4, n_sub_relations=2, label_vocab=6,
                               linked_label_fraction=1.0), seed)
    link = LinkConfig(complex=ComplExConfig(d_c=4, steps=40))
    g = link_scene_graphs(m, joint_link_model(m, link, seed), link)
    counts = {"train": {s: 1 for s in ("1p", "2p", "2i", "2in", "2u")}}
    ds = generate_dataset(g, DatasetConfig(counts, type1_fraction=0.4, image_fraction=1.0,
                                           holdout=(0.0, 0.0), seed=seed))
    model = RConeModel(ds.graphs["train"], ModelConfig(d=3, d_c=4, heads=2, complex_steps=20),
                       seed=seed)
    recs = ds.queries["train"]
    cfg = LossConfig(k=3)
    return model.store, lambda: total_loss(model, recs, np.random.default_rng([seed, 7]), cfg).total


def gradcheck_suite(seed=0, h=1e-5, max_coords=6, paths=PATHS):
    """path -> GradCheckReport for each trainable path on a small random instance."""
    out = {}
    for i, path in enumerate(paths):
        rng = np.random.default_rng([seed, 100 + i])
        if path == "projection":
            store, fn = _projection(rng)
        elif path == "intersection":
            store, fn = _intersection(rng)
        elif path == "transformer":
            store, fn = _transformer(rng)
        elif path == "complex":
            store, fn = _complex(rng)
        elif path == "total_loss":
            store, fn = _total_loss(seed)
        else:
            raise ValueError(f"unknown gradient path {path!r}; known: {', '.join(PATHS)}")
        out[path] = grad_check(fn, store, h=h, max_coords=max_coords, seed=seed)
    return out


__all__ = ["PATHS", "gradcheck_suite"]
