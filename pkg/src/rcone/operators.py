"""Cone operators (projection, intersection, complement, union) and query encoding.

Everything here runs on batches: a cone is a ``TCone`` of three (B, d)
tensors, so one call encodes every query of a given shape at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import PI, TWO_PI, ConeEmbedding, DnfEmbedding, mode_code
from .kernels import MODE_ANSWER
from .nn import MLP, Dense
from .query import Anchor, Intersection, Negation, Projection, Union, to_dnf


class TCone(NamedTuple):
    ax: Tensor
    ri: Tensor
    fu: Tensor

    @classmethod
    def from_cone(cls, c):
        return cls(Tensor(c.ax[None]), Tensor(c.ri[None]), Tensor(c.fu[None]))

    def to_cones(self):
        return [ConeEmbedding(a, r, f) for a, r, f in
                zip(self.ax.data, self.ri.data, np.maximum(self.fu.data, 0.0))]


@dataclass
class OperatorConfig:
    d: int = 24
    lambda_p: tuple = (1.0, 1.0, 1.0)
    proj_hidden: int = 0  # 0 -> 3d

    def validate(self):
        errs = []
        if self.d < 1:
            errs.append("d must be >= 1")
        if len(self.lambda_p) != 3 or any(x <= 0 for x in self.lambda_p):
            errs.append("lambda_p must be three positive scales")
        return errs


@dataclass
class Counters:
    """Clamps and degenerate cases met during encoding."""

    fuzzy_clamped: int = 0
    degenerate_axis: int = 0
    extra: dict = field(default_factory=dict)


class ProjectionNet:
    def __init__(self, store, d, rng, hidden=0, lambda_p=(1.0, 1.0, 1.0)):
        self.d = d
        self.mlp = MLP(store, "proj.mlp", 3 * d, hidden or 3 * d, 3 * d, rng)
        self.lambda_p = tuple(float(x) for x in lambda_p)

    def __call__(self, cone, r_ax, r_ri, r_fu):
        x = ad.concat([cone.ax + r_ax, cone.ri + r_ri, cone.fu + r_fu], axis=-1)
        return self.squash(self.mlp(x))

    def squash(self, x):
        d = self.d
        l1, l2, l3 = self.lambda_p
        ax = PI * ad.tanh(x[..., :d] * l1)
        ri = PI * ad.tanh(x[..., d:2 * d] * l2) + PI
        outer = PI * ad.tanh(x[..., 2 * d:] * l3) + PI
        fu = ad.relu(outer - ri)
        return TCone(ax, ri, fu)


def operand_features(cones):
    """Border vector [ax - ri/2; ax + ri/2; ax - (ri+fu)/2; ax + (ri+fu)/2] per operand."""
    feats = []
    for c in cones:
        half, outer = c.ri * 0.5, (c.ri + c.fu) * 0.5
        feats.append(ad.concat([c.ax - half, c.ax + half, c.ax - outer, c.ax + outer], axis=-1))
    return ad.stack(feats, axis=0)


class DeepSets:
    def __init__(self, store, name, d, rng):
        self.inner = MLP(store, f"{name}.inner", 4 * d, d, d, rng)
        self.outer = MLP(store, f"{name}.outer", d, d, d, rng)

    def __call__(self, feats):
        return self.outer(self.inner(feats).mean(axis=0))


class IntersectionNet:
    def __init__(self, store, d, rng):
        self.att1 = Dense(store, "inter.att.W_s1", 4 * d, d, rng)
        # no bias: the softmax runs over operands, so a shared offset cancels
        self.att2 = Dense(store, "inter.att.W_s2", d, d, rng, bias=False)
        self.rigid = DeepSets(store, "inter.rigid", d, rng)
        self.fuzzy = DeepSets(store, "inter.fuzzy", d, rng)

    def attention(self, feats):
        return ad.softmax(self.att2(ad.relu(self.att1(feats))), axis=0)

    def semantic_average(self, cones, feats=None, counters=None, attention=None):
        feats = operand_features(cones) if feats is None else feats
        a = self.attention(feats) if attention is None else attention
        axes = ad.stack([c.ax for c in cones], axis=0)
        x = (a * ad.cos(axes)).sum(axis=0)
        y = (a * ad.sin(axes)).sum(axis=0)
        degenerate = (x.data == 0) & (y.data == 0)
        out = ad.atan2(y, x)
        if degenerate.any():
            if counters is not None:
                counters.degenerate_axis += int(degenerate.sum())
            out = ad.where(degenerate, cones[0].ax, out)
        return out

    def rigid_average(self, cones, feats=None, gate=None):
        feats = operand_features(cones) if feats is None else feats
        gate = ad.sigmoid(self.rigid(feats)) if gate is None else gate
        return ad.stack([c.ri for c in cones], axis=0).min(axis=0) * gate

    def fuzzy_average(self, cones, ri_prime, feats=None, counters=None, gate=None):
        feats = operand_features(cones) if feats is None else feats
        gate = ad.sigmoid(self.fuzzy(feats)) if gate is None else gate
        fu_max = ad.stack([c.fu for c in cones], axis=0).max(axis=0)
        outer_min = ad.stack([c.fu + c.ri for c in cones], axis=0).min(axis=0)
        inner = ad.minimum(fu_max, outer_min - ri_prime)
        if counters is not None:
            counters.fuzzy_clamped += int((inner.data < 0).sum())
        return gate * ad.relu(inner)

    def __call__(self, cones, counters=None):
        if len(cones) < 2:
            raise ValueError("intersection needs at least two operands")
        feats = operand_features(cones)
        ax = self.semantic_average(cones, feats, counters)
        ri = self.rigid_average(cones, feats)
        fu = self.fuzzy_average(cones, ri, feats, counters)
        return TCone(ax, ri, fu)


def complement(cone):
    """Closed-form negation: flip the axis, swap rigid for everything outside."""
    if isinstance(cone, ConeEmbedding):
        ax = np.where(cone.ax >= 0, cone.ax - PI, cone.ax + PI)
        return ConeEmbedding(ax, np.maximum(TWO_PI - (cone.ri + cone.fu), 0.0), cone.fu)
    ax = ad.where(cone.ax.data >= 0, cone.ax - PI, cone.ax + PI)
    return TCone(ax, TWO_PI - (cone.ri + cone.fu), cone.fu)


def union(cones):
    """Union stays a list of conjunct cones (evaluated with a min over distances)."""
    if isinstance(cones, (ConeEmbedding, TCone)):
        cones = [cones]
    cones = list(cones)
    if cones and isinstance(cones[0], ConeEmbedding):
        return DnfEmbedding(tuple(cones))
    return cones


def distance(v_ax, cone, mode=MODE_ANSWER, l1=0.02, l2=1.0):
    """Differentiable d_con summed over the last axis; broadcasts v against the cone.

    ``l1``/``l2`` may be arrays shaped like the result (one weight pair per query).
    """
    d_o, d_i, d_m = distance_terms(v_ax, cone, mode)
    return d_o.sum(axis=-1) + d_i.sum(axis=-1) * l1 + d_m.sum(axis=-1) * l2


def distance_terms(v_ax, cone, mode=MODE_ANSWER):
    """Per-dimension (d_o, d_i, d_m) as tensors."""
    mode = mode_code(mode)
    ax, ri, fu = cone
    dax = ad.sin((v_ax - ax) * 0.5).abs()
    half = ri * 0.5
    outer = (ri + fu) * 0.5
    s_ri = ad.sin(ri * 0.25).abs()
    lo_fu = ad.sin((v_ax - (ax - outer)) * 0.5).abs()
    up_fu = ad.sin((v_ax - (ax + outer)) * 0.5).abs()
    s_outer = np.abs(np.sin(outer.data * 0.5))
    inside = dax.data <= s_outer
    d_o = ad.where(inside, 0.0, ad.minimum(lo_fu, up_fu))
    if mode == MODE_ANSWER:
        d_i = ad.minimum(dax, s_ri)
        lo = ad.sin((v_ax - (ax - half)) * 0.5).abs()
        up = ad.sin((v_ax - (ax + half)) * 0.5).abs()
        d_m = ad.minimum(ad.minimum(lo, up), ad.sin(fu * 0.25).abs())
    else:
        d_i = (dax - s_ri).abs()
        mid = half + fu * 0.25
        lo = ad.sin((v_ax - (ax - mid)) * 0.5).abs()
        up = ad.sin((v_ax - (ax + mid)) * 0.5).abs()
        d_m = ad.minimum(ad.minimum(lo, up), ad.sin(fu * 0.125).abs())
    return d_o, d_i, d_m


def dnf_distance(v_ax, cones, mode=MODE_ANSWER, l1=0.02, l2=1.0):
    """Minimum over conjunct cones of d_con."""
    ds = [distance(v_ax, c, mode, l1, l2) for c in cones]
    if not ds:
        raise ValueError("empty DNF embedding")
    if len(ds) == 1:
        return ds[0]
    return ad.stack(ds, axis=0).min(axis=0)


class ConeEngine:
    """Entity/relation tables plus the operator networks."""

    def __init__(self, store, entities, relations, cfg, rng):
        errs = cfg.validate()
        if errs:
            raise ValueError("; ".join(errs))
        d = self.d = cfg.d
        self.cfg = cfg
        self.store = store
        self.entities = list(entities)
        self.relations = list(relations)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        n_e, n_r = len(self.entities), len(self.relations)
        self.entity_ax = store.add("entity.ax", rng.uniform(-PI, PI, (n_e, d)))
        self.rel_ax = store.add("relation.ax", rng.uniform(-PI, PI, (n_r, d)))
        rel_ri = rng.uniform(0, TWO_PI, (n_r, d))
        self.rel_ri = store.add("relation.ri", rel_ri)
        self.rel_fu = store.add("relation.fu", rng.uniform(0, 1, (n_r, d)) * (TWO_PI - rel_ri))
        self.projection = ProjectionNet(store, d, rng, cfg.proj_hidden, cfg.lambda_p)
        self.intersection = IntersectionNet(store, d, rng)
        self.counters = Counters()

    # -- batched tensor API -------------------------------------------------
    def anchor(self, idx):
        ax = self.entity_ax[idx]
        z = Tensor(np.zeros(ax.shape))
        return TCone(ax, z, z)

    def project(self, cone, rel_idx):
        return self.projection(cone, self.rel_ax[rel_idx], self.rel_ri[rel_idx], self.rel_fu[rel_idx])

    def intersect(self, cones):
        return self.intersection(cones, self.counters)

    def encode(self, node):
        """Batched tree -> list of TCone, one per disjunct."""
        if isinstance(node, Anchor):
            return [self.anchor(node.entity)]
        if isinstance(node, Projection):
            return [self.project(c, node.relation) for c in self.encode(node.child)]
        if isinstance(node, Negation):
            inner = self.encode(node.child)
            if len(inner) != 1:
                raise ValueError("union below a negation; normalize to DNF first")
            return [complement(inner[0])]
        if isinstance(node, Intersection):
            parts = []
            for c in node.children:
                enc = self.encode(c)
                if len(enc) != 1:
                    raise ValueError("union inside a conjunct; normalize to DNF first")
                parts.append(enc[0])
            return [self.intersect(parts)]
        if isinstance(node, Union):
            return [c for child in node.children for c in self.encode(child)]
        raise TypeError(f"not a query node: {node!r}")

    # -- single-query API -----------------------------------------------------
    def _index_tree(self, node):
        if isinstance(node, Anchor):
            if node.entity not in self.entity_index:
                raise KeyError(f"unknown anchor entity {node.entity!r}")
            return Anchor(np.array([self.entity_index[node.entity]]))
        if isinstance(node, Projection):
            if node.relation not in self.relation_index:
                raise KeyError(f"unknown relation {node.relation!r}")
            return Projection(self._index_tree(node.child),
                              np.array([self.relation_index[node.relation]]))
        if isinstance(node, Negation):
            return Negation(self._index_tree(node.child))
        return type(node)([self._index_tree(c) for c in node.children])

    def encode_query(self, graph, normalize=False):
        """DnfEmbedding of one query given with string ids."""
        if normalize:
            graph = to_dnf(graph)
        cones = self.encode(self._index_tree(graph))
        return DnfEmbedding(tuple(c.to_cones()[0] for c in cones))

    def project_cone(self, cone, relation):
        if relation not in self.relation_index:
            raise KeyError(f"unknown relation {relation!r}")
        r = np.array([self.relation_index[relation]])
        return self.project(TCone.from_cone(cone), r).to_cones()[0]

    def project_cones(self, ax, ri, fu, relation):
        """Project a stack of cones (arrays of shape (n, d)) through one relation."""
        r = np.full(len(ax), self.relation_index[relation])
        out = self.project(TCone(Tensor(ax), Tensor(ri), Tensor(fu)), r)
        return out.ax.data, out.ri.data, out.fu.data

    def intersect_cones(self, cones):
        return self.intersect([TCone.from_cone(c) for c in cones]).to_cones()[0]

    def entity_axes(self):
        return self.entity_ax.data
