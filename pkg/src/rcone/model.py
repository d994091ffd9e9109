"""The full model: cone engine, context aggregator, graph transformer and the
per-image ComplEx scene models, plus checkpointing and a numpy scorer."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError
from .geometry import MULTIMODAL_WEIGHTS, UNIMODAL_WEIGHTS, DnfEmbedding, distance_matrix
from .kernels import MODE_ANSWER, MODE_CANDIDATE
from .nn import ParamStore, load_checkpoint, save_checkpoint
from .operators import ConeEngine, OperatorConfig
from .query import STRUCTURES, batch_tree
from .querygen import query_of
from .subentity import (ComplExConfig, ContextAggregator, GraphTransformLayer, SceneGraphProvider,
                        TransformerConfig, neighbour_matrix, select_candidates, train_scene_complex)


@dataclass
class ModelConfig:
    d: int = 24
    d_c: int = 8
    heads: int = 4
    K: int = 1
    lambda_p: tuple = (1.0, 1.0, 1.0)
    complex_steps: int = 200
    tau_cand: float = float("inf")
    proj_hidden: int = 0  # projection MLP width; 0 means 3d

    def validate(self):
        errs = OperatorConfig(self.d, tuple(self.lambda_p), self.proj_hidden).validate()
        errs += TransformerConfig(self.d_c, self.heads, K=self.K).validate()
        errs += ComplExConfig(d_c=self.d_c, steps=self.complex_steps).validate()
        return errs


def query_weights(rec):
    """Distance weights by query kind: multi-modal when any answer is a sub-entity."""
    return MULTIMODAL_WEIGHTS if rec["answers_type1"] else UNIMODAL_WEIGHTS


class RConeModel:
    """Everything trainable plus the frozen scene models.

    ``graph`` is the merged graph visible during training; its MMKG edges
    define the neighbourhoods used for external context.
    """

    def __init__(self, graph, cfg=None, seed=0, context_triples=None):
        cfg = cfg or ModelConfig()
        errs = cfg.validate()
        if errs:
            raise ConfigError(errs)
        self.cfg, self.seed, self.graph = cfg, seed, graph
        mmkg = graph.mmkg
        rng = np.random.default_rng([seed, 1])
        self.store = ParamStore()
        self.engine = ConeEngine(self.store, mmkg.entities, graph.relations,
                                 OperatorConfig(cfg.d, tuple(cfg.lambda_p), cfg.proj_hidden), rng)
        self.aggregator = ContextAggregator(self.store, cfg.d, rng)
        self.layer = GraphTransformLayer(self.store, TransformerConfig(cfg.d_c, cfg.heads, K=cfg.K),
                                         cfg.d, rng)
        if context_triples is None:
            context_triples = [t for t in graph.triples if t[0] in graph.mmkg_entities
                               and t[2] in graph.mmkg_entities]
        self.mean_adj, self.isolated = neighbour_matrix(mmkg.entities, context_triples)
        self.images = list(mmkg.image_entities)
        self.image_idx = np.array([self.engine.entity_index[e] for e in self.images], dtype=np.int64)
        self.provider = SceneGraphProvider(mmkg)
        self.scene_models = {}
        self._step_cache = None

    # -- scene side ------------------------------------------------------------
    def scene_model(self, image):
        """Scene graph and its ComplEx model; both created on first request."""
        if image not in self.scene_models:
            sg = self.provider(image)
            cfg = ComplExConfig(d_c=self.cfg.d_c, steps=self.cfg.complex_steps)
            seed = zlib.crc32(f"{self.seed}/{image}".encode())
            self.scene_models[image] = (sg, train_scene_complex(sg, cfg, seed))
        return self.scene_models[image]

    def begin_step(self):
        self._step_cache = {}

    def context_hops(self):
        cache = self._step_cache if self._step_cache is not None else {}
        if "hops" not in cache:
            cache["hops"] = self.aggregator.all_hops(self.engine.entity_ax, self.mean_adj, self.cfg.K)
        return cache["hops"]

    def sub_axes(self, image):
        """(sub ids, Tensor (n, d)) of transformed sub-entity axes for ``image``."""
        cache = self._step_cache if self._step_cache is not None else {}
        key = ("subs", image)
        if key not in cache:
            sg, cm = self.scene_model(image)
            i = self.engine.entity_index[image]
            tokens = ad.stack([h[i] for h in self.context_hops()], axis=0)
            cache[key] = (sg.ids, self.layer(cm.features(sg.ids), tokens))
        return cache[key]

    # -- query side --------------------------------------------------------------
    def encode_groups(self, records):
        """Encode records batched by structure -> list of (row indices, [TCone per disjunct])."""
        groups = {}
        for i, rec in enumerate(records):
            groups.setdefault(rec["structure"], []).append(i)
        out = []
        for s in STRUCTURES:
            if s not in groups:
                continue
            rows = groups[s]
            try:
                tree = batch_tree([query_of(records[i]) for i in rows],
                                  self.engine.entity_index, self.engine.relation_index)
            except KeyError as exc:
                raise DataError(f"query references unknown id {exc}") from exc
            out.append((rows, self.engine.encode(tree)))
        return out

    def encode_records(self, records):
        dnfs = [None] * len(records)
        for rows, cones in self.encode_groups(records):
            for j, r in enumerate(rows):
                dnfs[r] = DnfEmbedding(tuple(c.to_cones()[j] for c in cones))
        return dnfs

    # -- persistence ------------------------------------------------------------
    def tensors(self):
        out = self.store.state()
        for img in sorted(self.scene_models):
            out.update(self.scene_models[img][1].store.state())
        return out

    def save(self, path, extra=None, meta=None):
        tensors = self.tensors()
        tensors.update(extra or {})
        m = {"model_config": asdict(self.cfg), "seed": self.seed,
             "scene_images": sorted(self.scene_models)}
        m.update(meta or {})
        save_checkpoint(path, tensors, m)

    def load(self, path):
        tensors, meta = load_checkpoint(path)
        for img in meta.get("scene_images", []):
            sg, cm = self.scene_model(img)
            cm.store.load_state({k: v for k, v in tensors.items() if k.startswith(f"scene/{img}.")})
        own = {k: v for k, v in tensors.items() if k in self.store}
        self.store.load_state(own)
        return tensors, meta

    def scorer(self):
        return ModelScorer(self)


class ModelScorer:
    """Numpy view of a model for ranking; caches query encodings."""

    def __init__(self, model):
        self.model = model
        self.entities = list(model.engine.entities)
        self.axes = model.engine.entity_axes().copy()
        self.images = list(model.images)
        self.image_axes = self.axes[model.image_idx]
        self._dnf = {}
        self._subs = {}

    def prepare(self, records):
        todo = [r for r in records if _key(r) not in self._dnf]
        for r, dnf in zip(todo, self.model.encode_records(todo)):
            self._dnf[_key(r)] = dnf

    def dnf(self, rec):
        if _key(rec) not in self._dnf:
            self.prepare([rec])
        return self._dnf[_key(rec)]

    def type2_distances(self, rec):
        l1, l2 = query_weights(rec)
        return self.entities, distance_matrix(self.axes, self.dnf(rec), MODE_ANSWER, l1, l2)

    def candidate_distances(self, rec):
        l1, l2 = MULTIMODAL_WEIGHTS
        return self.images, distance_matrix(self.image_axes, self.dnf(rec), MODE_CANDIDATE, l1, l2)

    def sub_distances(self, rec, candidate):
        if candidate not in self._subs:
            self.model.begin_step()
            ids, ax = self.model.sub_axes(candidate)
            self.model._step_cache = None
            self._subs[candidate] = (list(ids), ax.data.copy())
        ids, ax = self._subs[candidate]
        l1, l2 = MULTIMODAL_WEIGHTS
        return ids, distance_matrix(ax, self.dnf(rec), MODE_ANSWER, l1, l2)

    def candidates(self, rec, tau=None):
        tau = self.model.cfg.tau_cand if tau is None else tau
        return select_candidates(self.dnf(rec), self.images, self.image_axes, tau)

    def predict_subentities(self, rec, tau=None):
        """Selected candidates -> their sub-entities, nearest first.

        Scene graphs are provisioned only for candidates that pass ``tau``.
        """
        out = {}
        for c in self.candidates(rec, tau):
            ids, dist = self.sub_distances(rec, c.entity)
            out[c.entity] = [s for _, s in sorted(zip(dist, ids))]
        return out


def _key(rec):
    return (rec["structure"], tuple(rec["anchors"]), tuple(rec["relations"]))
