"""Sub-entity prediction: scene-graph provisioning, ComplEx scene embeddings,
neighbourhood context and the transformer that maps sub-entities to axes."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .geometry import PI, AxisEmbedding, mode_code, wrap_angle
from .kernels import MODE_CANDIDATE, cone_distance_matrix
from .kg import Modality, SceneGraph
from .nn import Adam, Dense, LayerNorm, OptimizerConfig, ParamStore


# -- scene-graph provisioning --------------------------------------------------

class SceneGraphProvider:
    """Hands out scene graphs on demand and counts how often it was asked.

    Graphs come from the MMKG itself or, when ``directory`` is given, from
    ``<directory>/<entity>.json`` files read on first use.
    """

    def __init__(self, mmkg, directory=None):
        self.mmkg = mmkg
        self.directory = Path(directory) if directory is not None else None
        self.calls = 0
        self.loads = 0
        self._cache = {}

    def __call__(self, entity):
        self.calls += 1
        if entity not in self.mmkg.modality:
            raise DataError(f"unknown entity {entity!r}")
        if self.mmkg.modality[entity] is not Modality.IMAGE:
            raise DataError(f"{entity!r} is not an image entity")
        if entity in self._cache:
            return self._cache[entity]
        sg = None
        if self.directory is not None:
            path = self.directory / f"{entity}.json"
            if path.exists():
                sg = SceneGraph.from_json(json.loads(path.read_text()))
        if sg is None:
            sg = self.mmkg.scene_graphs.get(entity)
        if sg is None:
            raise DataError(f"no scene graph for image entity {entity!r}")
        self.loads += 1
        self._cache[entity] = sg
        return sg


def provide_scene_graph(entity, mmkg):
    return SceneGraphProvider(mmkg)(entity)


# -- ComplEx -------------------------------------------------------------------

def complex_score(h, r, t):
    """Re(sum h * r * conj(t)) for complex vectors."""
    h, r, t = (np.asarray(x, dtype=np.complex128) for x in (h, r, t))
    if not (h.shape == r.shape == t.shape):
        raise ValueError(f"dimension mismatch: {h.shape} {r.shape} {t.shape}")
    return float(np.real(np.sum(h * r * np.conj(t))))


def complex_score_t(hr, hi, rr, ri, tr, ti):
    """Tensor version over the last axis, split into real and imaginary parts."""
    return ((hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti).sum(axis=-1)


@dataclass
class ComplExConfig:
    d_c: int = 8
    steps: int = 200
    lr: float = 0.05
    k: int = 4
    init_scale: float = 0.5

    def validate(self):
        errs = []
        if self.d_c < 1:
            errs.append("d_c must be >= 1")
        if self.steps < 0:
            errs.append("steps must be >= 0")
        if self.k < 1:
            errs.append("ComplEx negatives k must be >= 1")
        if self.lr <= 0:
            errs.append("ComplEx lr must be > 0")
        return errs


class ComplExModel:
    def __init__(self, entities, relations, d_c, rng, prefix="complex", scale=0.5):
        self.entities = list(entities)
        self.relations = list(relations)
        self.eidx = {e: i for i, e in enumerate(self.entities)}
        self.ridx = {r: i for i, r in enumerate(self.relations)}
        self.d_c = d_c
        self.prefix = prefix
        self.store = ParamStore()
        n_e, n_r = len(self.entities), len(self.relations)
        for name, n in (("ent.re", n_e), ("ent.im", n_e), ("rel.re", n_r), ("rel.im", n_r)):
            self.store.add(f"{prefix}.{name}", rng.uniform(-scale, scale, (n, d_c)))

    def _p(self, name):
        return self.store[f"{self.prefix}.{name}"]

    def embedding(self, e):
        i = self.eidx[e]
        return self._p("ent.re").data[i] + 1j * self._p("ent.im").data[i]

    def relation(self, r):
        i = self.ridx[r]
        return self._p("rel.re").data[i] + 1j * self._p("rel.im").data[i]

    def features(self, ids):
        """Real feature rows [re; im] for the given entities, shape (n, 2 d_c)."""
        idx = [self.eidx[e] for e in ids]
        return np.concatenate([self._p("ent.re").data[idx], self._p("ent.im").data[idx]], axis=1)

    def score(self, h, r, t):
        return complex_score(self.embedding(h), self.relation(r), self.embedding(t))

    def score_t(self, h, r, t):
        er, ei = self._p("ent.re"), self._p("ent.im")
        rr, ri = self._p("rel.re"), self._p("rel.im")
        return complex_score_t(er[h], ei[h], rr[r], ri[r], er[t], ei[t])

    def score_matrix(self, h, r):
        """Scores of (h, r, t) for every entity t."""
        hr = self.embedding(h) * self.relation(r)
        ent = self._p("ent.re").data + 1j * self._p("ent.im").data
        return np.real(ent.conj() @ hr)


def _corrupt_tails(triples, eidx, n_ent, k, rng):
    known = {}
    for h, r, t in triples:
        known.setdefault((h, r), set()).add(eidx[t])
    tails, mask = [], []
    for h, r, t in triples:
        bad = known[(h, r)]
        pool = np.setdiff1d(np.arange(n_ent), np.fromiter(bad, dtype=np.int64))
        if len(pool) == 0:
            tails.append(np.zeros(k, dtype=np.int64))
            mask.append(np.zeros(k))
        else:
            tails.append(pool[rng.integers(len(pool), size=k)])
            mask.append(np.ones(k))
    return np.array(tails), np.array(mask)


def train_complex(triples, entities, relations, cfg=None, seed=0, prefix="complex"):
    """Fit ComplEx with a logistic negative-sampling loss on uniformly corrupted tails."""
    cfg = cfg or ComplExConfig()
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    triples = sorted(triples)
    if not triples:
        raise DataError("cannot train ComplEx on a graph with zero triples")
    rng = np.random.default_rng(seed)
    model = ComplExModel(entities, relations, cfg.d_c, rng, prefix, cfg.init_scale)
    if cfg.steps == 0:
        return model
    h = np.array([model.eidx[a] for a, _, _ in triples])
    r = np.array([model.ridx[b] for _, b, _ in triples])
    t = np.array([model.eidx[c] for _, _, c in triples])
    opt = Adam(model.store, OptimizerConfig(lr=cfg.lr))
    for step in range(cfg.steps):
        srng = np.random.default_rng([seed, step])
        neg_t, mask = _corrupt_tails(triples, model.eidx, len(model.entities), cfg.k, srng)
        model.store.zero_grad()
        loss = complex_loss(model, h, r, t, neg_t, mask)
        loss.backward()
        opt.step()
    return model


def complex_loss(model, h, r, t, neg_t, mask):
    pos = model.score_t(h, r, t)
    hh = np.repeat(h[:, None], neg_t.shape[1], axis=1)
    rr = np.repeat(r[:, None], neg_t.shape[1], axis=1)
    neg = model.score_t(hh, rr, neg_t)
    k = neg_t.shape[1]
    per = -ad.log_sigmoid(pos) - (ad.log_sigmoid(-neg) * mask).sum(axis=1) * (1.0 / k)
    return per.mean()


def train_scene_complex(sg, cfg=None, seed=0):
    if not sg.sub_triples:
        raise DataError(f"scene graph of {sg.entity!r} has zero triples")
    return train_complex(sg.sub_triples, sg.ids, sorted(sg.relations), cfg, seed,
                         prefix=f"scene/{sg.entity}")


# -- external context ----------------------------------------------------------

@dataclass
class ExternalContext:
    entity: str
    hops: list          # h^0 .. h^K, each a (d,) Tensor
    isolated: bool

    def tokens(self):
        return ad.stack(self.hops, axis=0)


def neighbour_matrix(entities, triples):
    """Row-normalised undirected adjacency (mean over neighbours) and isolation flags."""
    idx = {e: i for i, e in enumerate(entities)}
    rows, cols = [], []
    for h, _, t in triples:
        if h in idx and t in idx and h != t:
            rows += [idx[h], idx[t]]
            cols += [idx[t], idx[h]]
    n = len(entities)
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0  # collapse parallel edges
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    return sparse.diags(inv) @ adj, deg == 0


class ContextAggregator:
    """h^k = relu(W [h^{k-1}; mean of neighbours' h^{k-1}]), one W shared over hops."""

    def __init__(self, store, d, rng, name="context"):
        self.W = Dense(store, f"{name}.W", 2 * d, d, rng)
        self.d = d

    def all_hops(self, h0, mean_adj, K):
        hs = [h0]
        for _ in range(K):
            prev = hs[-1]
            hs.append(ad.relu(self.W(ad.concat([prev, ad.spmm(mean_adj, prev)], axis=-1))))
        return hs


def aggregate_context(v_m, entities, entity_table, triples, aggregator, K=1, mmkg=None):
    """External context of image entity ``v_m`` from its MMKG neighbourhood."""
    if mmkg is not None and mmkg.modality.get(v_m) is not Modality.IMAGE:
        raise DataError(f"{v_m!r} is not an image entity")
    if K < 0:
        raise ValueError("K must be >= 0")
    entities = list(entities)
    i = entities.index(v_m)
    mean_adj, isolated = neighbour_matrix(entities, triples)
    table = entity_table if isinstance(entity_table, Tensor) else Tensor(entity_table)
    hs = aggregator.all_hops(table, mean_adj, K)
    return ExternalContext(v_m, [h[i] for h in hs], bool(isolated[i]))


# -- graph transformation --------------------------------------------------------

@dataclass
class TransformerConfig:
    d_c: int = 8
    heads: int = 4
    ffn_mult: int = 2
    K: int = 1

    @property
    def width(self):
        return 2 * self.d_c

    def validate(self):
        errs = []
        if self.heads < 1 or self.width % self.heads:
            errs.append(f"transformer width {self.width} must be divisible by heads={self.heads}")
        if self.K < 0:
            errs.append("context hops K must be >= 0")
        return errs


class MultiHeadAttention:
    def __init__(self, store, name, width, kv_in, heads, rng):
        self.q = Dense(store, f"{name}.q", width, width, rng)
        # a key bias only shifts every score of a query equally, so it is left out
        self.k = Dense(store, f"{name}.k", kv_in, width, rng, bias=False)
        self.v = Dense(store, f"{name}.v", kv_in, width, rng)
        self.o = Dense(store, f"{name}.o", width, width, rng)
        self.heads = heads
        self.dh = width // heads

    def _split(self, x):
        n = x.shape[0]
        return x.reshape(n, self.heads, self.dh).transpose(1, 0, 2)

    def __call__(self, x, kv):
        q, k, v = self._split(self.q(x)), self._split(self.k(kv)), self._split(self.v(kv))
        att = ad.softmax(q @ k.transpose(0, 2, 1) * (1.0 / np.sqrt(self.dh)), axis=-1)
        out = (att @ v).transpose(1, 0, 2).reshape(x.shape[0], self.heads * self.dh)
        return self.o(out)


class GraphTransformLayer:
    """Self-attention over sub-entities, cross-attention to context, FFN, angle head."""

    def __init__(self, store, cfg, d, rng, name="transform"):
        errs = cfg.validate()
        if errs:
            raise ValueError("; ".join(errs))
        w = cfg.width
        self.cfg, self.d = cfg, d
        self.ln1 = LayerNorm(store, f"{name}.ln1", w)
        self.self_att = MultiHeadAttention(store, f"{name}.self", w, w, cfg.heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", w)
        self.cross_att = MultiHeadAttention(store, f"{name}.cross", w, d, cfg.heads, rng)
        self.ln3 = LayerNorm(store, f"{name}.ln3", w)
        self.ff1 = Dense(store, f"{name}.ff1", w, cfg.ffn_mult * w, rng)
        self.ff2 = Dense(store, f"{name}.ff2", cfg.ffn_mult * w, w, rng)
        self.head = Dense(store, f"{name}.head", w, d, rng)

    def __call__(self, x, ctx_tokens):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.cfg.width:
            raise ValueError(f"sub-entity features have width {x.shape[-1]}, expected {self.cfg.width}")
        if ctx_tokens.shape[-1] != self.d:
            raise ValueError("context dimension does not match the engine dimension")
        h = self.ln1(x)
        x = x + self.self_att(h, h)
        x = x + self.cross_att(self.ln2(x), ctx_tokens)
        x = x + self.ff2(ad.relu(self.ff1(self.ln3(x))))
        return PI * ad.tanh(self.head(x))


def transform_subentities(sg_model, ids, ctx, layer):
    """Axis embedding per sub-entity of one scene graph."""
    if layer.d != ctx.hops[0].shape[-1]:
        raise ValueError("output head dimension differs from the engine dimension")
    out = layer(sg_model.features(ids), ctx.tokens())
    return {s: AxisEmbedding(wrap_angle(row)) for s, row in zip(ids, out.data)}


# -- candidate selection ---------------------------------------------------------

@dataclass
class Candidate:
    entity: str
    distance: float


@dataclass
class CandidateSelection:
    ranked: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.ranked)

    def __len__(self):
        return len(self.ranked)

    @property
    def entities(self):
        return [c.entity for c in self.ranked]


def select_candidates(dnf, image_entities, image_axes, tau, l1=0.9, l2=0.02):
    """Image entities with candidate-mode distance at most ``tau``, nearest first (ties by id)."""
    image_entities = list(image_entities)
    if not image_entities:
        return CandidateSelection([])
    cones = list(dnf)
    ax = np.stack([c.ax for c in cones])
    ri = np.stack([c.ri for c in cones])
    fu = np.stack([c.fu for c in cones])
    dist = cone_distance_matrix(np.asarray(image_axes, dtype=np.float64), ax, ri, fu,
                                mode_code(MODE_CANDIDATE), l1, l2).min(axis=0)
    keep = [Candidate(e, float(x)) for e, x in zip(image_entities, dist) if x <= tau]
    keep.sort(key=lambda c: (c.distance, c.entity))
    return CandidateSelection(keep)
