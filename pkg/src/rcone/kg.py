"""Multi-modal knowledge graphs, scene graphs, persistence and synthesis."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError

LINK_RELATION = "linksTo"
INVERSE_SUFFIX = "^-1"
MAX_SANE_COUNT = 10_000_000


class Modality(str, Enum):
    GENERIC = "generic"
    IMAGE = "image"


def sub_entity_id(image, label, index):
    return f"{image}/{label}#{index}"


def label_of(sub_id):
    """Label encoded in an ``image/label#index`` sub-entity id."""
    tail = sub_id.rsplit("/", 1)[-1]
    return tail.rsplit("#", 1)[0]


class TripleIndex:
    """Adjacency over a triple set, built on first use."""

    entities: list
    relations: list
    triples: frozenset

    def _index(self):
        idx = self.__dict__.get("_adj")
        if idx is None:
            out, inc = {}, {}
            for h, r, t in self.triples:
                out.setdefault((h, r), set()).add(t)
                inc.setdefault(t, set()).add((h, r))
            out = {k: tuple(sorted(v)) for k, v in out.items()}
            inc = {k: tuple(sorted(v)) for k, v in inc.items()}
            idx = self.__dict__["_adj"] = (out, inc, set(self.entities), set(self.relations))
        return idx

    def neighbors(self, e, r):
        """Relational image {t | (e, r, t) in triples}, sorted by id."""
        out, _, ents, rels = self._index()
        if e not in ents:
            raise KeyError(f"unknown entity {e!r}")
        if r not in rels:
            raise KeyError(f"unknown relation {r!r}")
        return out.get((e, r), ())

    def incoming(self, t):
        """Sorted (head, relation) pairs with an edge into ``t``."""
        return self._index()[1].get(t, ())

    def has_entity(self, e):
        return e in self._index()[2]

    def has_relation(self, r):
        return r in self._index()[3]


@dataclass(eq=False)
class SceneGraph(TripleIndex):
    entity: str
    sub_entities: list  # [(id, label)]
    sub_triples: frozenset
    sub_relations: list = None

    def __post_init__(self):
        self.sub_triples = frozenset(tuple(t) for t in self.sub_triples)
        if self.sub_relations is None:
            self.sub_relations = sorted({r for _, r, _ in self.sub_triples})
        ids = [s for s, _ in self.sub_entities]
        if len(set(ids)) != len(ids):
            raise DataError(f"scene graph {self.entity}: duplicate sub-entity ids")
        bad = [s for s in ids if not s.startswith(self.entity + "/")]
        if bad:
            raise DataError(f"scene graph {self.entity}: ids not namespaced by owner: {bad[:5]}")
        known, rels = set(ids), set(self.sub_relations)
        dangling = sorted({x for h, r, t in self.sub_triples for x in (h, t) if x not in known})
        dangling += sorted({r for _, r, _ in self.sub_triples if r not in rels})
        if dangling:
            raise DataError(f"scene graph {self.entity}: dangling references {dangling[:10]}")

    @property
    def entities(self):
        return self.ids

    @property
    def relations(self):
        return self.sub_relations

    @property
    def triples(self):
        return self.sub_triples

    @property
    def ids(self):
        return [s for s, _ in self.sub_entities]

    @property
    def labels(self):
        return {s: lab for s, lab in self.sub_entities}

    def to_json(self):
        return {
            "entity": self.entity,
            "sub_entities": [{"id": s, "label": lab} for s, lab in sorted(self.sub_entities)],
            "sub_triples": [list(t) for t in sorted(self.sub_triples)],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            subs = [(d["id"], d["label"]) for d in obj["sub_entities"]]
            return cls(obj["entity"], subs, frozenset(tuple(t) for t in obj["sub_triples"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed scene graph JSON: {exc}") from exc


@dataclass(eq=False)
class Mmkg(TripleIndex):
    entities: list
    relations: list
    triples: frozenset
    modality: dict
    scene_graphs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.triples = frozenset(tuple(t) for t in self.triples)
        self.validate()

    def validate(self):
        errs = []
        if len(set(self.entities)) != len(self.entities):
            errs.append("duplicate entity ids")
        if len(set(self.relations)) != len(self.relations):
            errs.append("duplicate relation ids")
        ents, rels = set(self.entities), set(self.relations)
        bad_e = sorted({x for h, _, t in self.triples for x in (h, t) if x not in ents})
        bad_r = sorted({r for _, r, _ in self.triples if r not in rels})
        if bad_e or bad_r:
            errs.append(f"dangling references: entities {bad_e[:10]} relations {bad_r[:10]}")
        if set(self.modality) != ents:
            errs.append("modality map must cover exactly the declared entities")
        for e, sg in self.scene_graphs.items():
            if self.modality.get(e) != Modality.IMAGE:
                errs.append(f"scene graph attached to non-image entity {e!r}")
            if sg.entity != e:
                errs.append(f"scene graph keyed {e!r} declares owner {sg.entity!r}")
        if errs:
            raise DataError("; ".join(errs))

    @property
    def image_entities(self):
        return [e for e in self.entities if self.modality[e] == Modality.IMAGE]

    def modality_of(self, e):
        return self.modality[e]

    def sub_entities(self):
        return [s for e in sorted(self.scene_graphs) for s in self.scene_graphs[e].ids]


@dataclass(eq=False)
class MergedGraph(TripleIndex):
    """Union of an MMKG, its scene graphs and predicted link edges."""

    mmkg: Mmkg
    link_edges: frozenset
    entities: list = None
    relations: list = None
    triples: frozenset = None

    def __post_init__(self):
        self.link_edges = frozenset(tuple(t) for t in self.link_edges)
        sg_rel = sorted({r for sg in self.mmkg.scene_graphs.values() for r in sg.sub_relations})
        if LINK_RELATION in self.mmkg.relations or LINK_RELATION in sg_rel:
            raise DataError(f"relation id {LINK_RELATION!r} is reserved for link edges")
        self.entities = list(self.mmkg.entities) + self.mmkg.sub_entities()
        rels = list(self.mmkg.relations)
        rels += [r for r in sg_rel if r not in set(rels)]
        rels.append(LINK_RELATION)
        self.relations = rels
        triples = set(self.mmkg.triples)
        for sg in self.mmkg.scene_graphs.values():
            triples |= sg.sub_triples
        for h, r, t in self.link_edges:
            if r != LINK_RELATION:
                raise DataError(f"link edge must use {LINK_RELATION!r}: {(h, r, t)}")
        triples |= self.link_edges
        self.triples = frozenset(triples)
        self.owner = {s: e for e, sg in self.mmkg.scene_graphs.items() for s in sg.ids}
        self.mmkg_entities = frozenset(self.mmkg.entities)

    def is_sub_entity(self, x):
        return x in self.owner

    def with_triples(self, triples):
        """A view over the same node/relation sets restricted to ``triples``."""
        g = object.__new__(MergedGraph)
        g.__dict__.update({k: v for k, v in self.__dict__.items() if k != "_adj"})
        g.triples = frozenset(triples)
        return g


# -- persistence --------------------------------------------------------------

def _read_tsv(path, n_fields):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise DataError(f"{path}:{lineno}: expected {n_fields} tab-separated fields, "
                                f"got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def load_mmkg(path, add_inverse_relations=False):
    """Load ``triples.tsv``, ``modality.tsv`` and optional scene graphs from a directory."""
    tpath, mpath = os.path.join(path, "triples.tsv"), os.path.join(path, "modality.tsv")
    for p in (tpath, mpath):
        if not os.path.exists(p):
            raise DataError(f"missing {p}")
    modality = {}
    for lineno, (e, m) in enumerate(_read_tsv(mpath, 2), 1):
        if m not in ("generic", "image"):
            raise DataError(f"{mpath}: entity {e!r} has unknown modality {m!r}")
        if e in modality:
            raise DataError(f"{mpath}: duplicate entity {e!r}")
        modality[e] = Modality(m)
    triples = set(_read_tsv(tpath, 3))
    rpath = os.path.join(path, "relations.tsv")
    if os.path.exists(rpath):
        relations = [r for (r,) in _read_tsv(rpath, 1)]
    else:
        relations = sorted({r for _, r, _ in triples})
    entities = sorted(modality)
    missing = sorted({x for h, _, t in triples for x in (h, t) if x not in modality})
    if missing:
        raise DataError(f"dangling references to undeclared entities: {missing[:20]}")
    scene_graphs = {}
    sdir = os.path.join(path, "scene_graphs")
    if os.path.isdir(sdir):
        for fname in sorted(os.listdir(sdir)):
            if not fname.endswith(".json"):
                continue
            with open(os.path.join(sdir, fname), encoding="utf-8") as fh:
                try:
                    sg = SceneGraph.from_json(json.load(fh))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{fname}: {exc}") from exc
            if sg.entity in scene_graphs:
                raise DataError(f"two scene graphs for {sg.entity!r}")
            scene_graphs[sg.entity] = sg
    metapath = os.path.join(path, "meta.json")
    if os.path.exists(metapath):
        with open(metapath) as fh:
            check_metadata(json.load(fh), len(entities), len(relations))
    g = Mmkg(entities, relations, frozenset(triples), modality, scene_graphs)
    return with_inverse_relations(g) if add_inverse_relations else g


def check_metadata(meta, n_entities, n_relations):
    """Header counts act as upper bounds on what the files may declare."""
    for key, have in (("n_entities", n_entities), ("n_relations", n_relations)):
        if key not in meta:
            continue
        want = meta[key]
        if not isinstance(want, int) or not 1 <= want <= MAX_SANE_COUNT:
            raise DataError(f"meta.json: {key}={want!r} outside sanity bounds")
        if have > want:
            raise DataError(f"meta.json: {key}={want} but files declare {have}")


def _sg_filename(entity):
    return entity.replace("/", "_").replace(os.sep, "_") + ".json"


def save_mmkg(g, path):
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "triples.tsv"), "w", encoding="utf-8") as fh:
        for h, r, t in sorted(g.triples):
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(os.path.join(path, "modality.tsv"), "w", encoding="utf-8") as fh:
        for e in sorted(g.entities):
            fh.write(f"{e}\t{g.modality[e].value}\n")
    with open(os.path.join(path, "relations.tsv"), "w", encoding="utf-8") as fh:
        for r in sorted(g.relations):
            fh.write(f"{r}\n")
    if g.scene_graphs:
        sdir = os.path.join(path, "scene_graphs")
        os.makedirs(sdir, exist_ok=True)
        for e in sorted(g.scene_graphs):
            with open(os.path.join(sdir, _sg_filename(e)), "w", encoding="utf-8") as fh:
                json.dump(g.scene_graphs[e].to_json(), fh, indent=1, sort_keys=True)
                fh.write("\n")


def with_inverse_relations(g):
    inv = {r: r + INVERSE_SUFFIX for r in g.relations}
    triples = set(g.triples) | {(t, inv[r], h) for h, r, t in g.triples}
    return Mmkg(list(g.entities), list(g.relations) + [inv[r] for r in g.relations],
                frozenset(triples), dict(g.modality), dict(g.scene_graphs))


def neighbors(g, e, r):
    return g.neighbors(e, r)


def weakly_connected(entities, triples):
    """Breadth-first reachability over edges taken as undirected."""
    entities = list(entities)
    if not entities:
        return True
    adj = {e: set() for e in entities}
    for h, _, t in triples:
        adj[h].add(t)
        adj[t].add(h)
    seen, frontier = {entities[0]}, [entities[0]]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        frontier = nxt
    return len(seen) == len(entities)


# -- synthesis ----------------------------------------------------------------

@dataclass
class SynthConfig:
    n_entities: int = 50
    n_relations: int = 8
    n_images: int = 5
    sub_min: int = 4
    sub_max: int = 8
    density: float = 0.02
    n_clusters: int = 10
    n_sub_relations: int = 4
    label_vocab: int = 12
    linked_label_fraction: float = 0.5

    def validate(self):
        errs = []
        for k in ("n_entities", "n_relations", "n_clusters", "n_sub_relations", "label_vocab"):
            if getattr(self, k) < 1:
                errs.append(f"{k} must be >= 1")
        if self.n_images < 0 or self.n_images >= self.n_entities:
            errs.append("n_images must be in [0, n_entities)")
        if not 1 <= self.sub_min <= self.sub_max:
            errs.append("need 1 <= sub_min <= sub_max")
        if not 0 < self.density <= 1:
            errs.append("density must lie in (0, 1]")
        if not 0 <= self.linked_label_fraction <= 1:
            errs.append("linked_label_fraction must lie in [0, 1]")
        return errs


def synth_mmkg(cfg, seed):
    """A small MMKG with planted cluster structure.

    Entities fall into clusters and every relation maps each cluster onto one
    target cluster, so held-out edges are predictable from the rest. Each image
    carries a scene graph whose labels partly name generic entities of one
    cluster; those shared labels seed the link predictor.
    """
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    rng = np.random.default_rng(seed)
    n_gen = cfg.n_entities - cfg.n_images
    width = len(str(max(cfg.n_entities - 1, 1)))
    generic = [f"e{i:0{width}d}" for i in range(n_gen)]
    images = [f"img{j:0{len(str(max(cfg.n_images - 1, 1)))}d}" for j in range(cfg.n_images)]
    entities = generic + images
    relations = [f"r{k}" for k in range(cfg.n_relations)]
    n_cl = min(cfg.n_clusters, cfg.n_entities)
    cluster = {e: i % n_cl for i, e in enumerate(entities)}
    maps = [rng.permutation(n_cl) for _ in relations]
    members = {c: [e for e in entities if cluster[e] == c] for c in range(n_cl)}

    triples = set()
    order = [entities[i] for i in rng.permutation(len(entities))]
    connected = [order[0]]
    for x in order[1:]:
        options = []
        for y in connected:
            for k, r in enumerate(relations):
                if maps[k][cluster[y]] == cluster[x]:
                    options.append((y, r, x))
                if maps[k][cluster[x]] == cluster[y]:
                    options.append((x, r, y))
        if options:
            triples.add(options[rng.integers(len(options))])
        else:
            y = connected[rng.integers(len(connected))]
            triples.add((y, relations[rng.integers(len(relations))], x))
        connected.append(x)

    target = max(len(triples), int(round(cfg.density * cfg.n_entities ** 2 * cfg.n_relations)))
    structured = [(h, r, t) for h in entities for k, r in enumerate(relations)
                  for t in members[maps[k][cluster[h]]]]
    pool = [tr for tr in structured if tr not in triples]
    if pool and target > len(triples):
        take = rng.choice(len(pool), size=min(target - len(triples), len(pool)), replace=False)
        triples.update(pool[i] for i in sorted(take))

    vocab = [f"obj{i}" for i in range(cfg.label_vocab)]
    sub_rels = [f"sr{k}" for k in range(cfg.n_sub_relations)]
    scene_graphs = {}
    for j, img in enumerate(images):
        linked_cluster = members[(cluster[img] + 1) % n_cl]
        linked_generic = [e for e in linked_cluster if e in set(generic)] or generic
        n_sub = int(rng.integers(cfg.sub_min, cfg.sub_max + 1))
        subs = []
        for k in range(n_sub):
            if rng.random() < cfg.linked_label_fraction:
                label = linked_generic[rng.integers(len(linked_generic))]
            else:
                label = vocab[rng.integers(len(vocab))]
            subs.append((sub_entity_id(img, label, k), label))
        ids = [s for s, _ in subs]
        st = set()
        for k in range(1, n_sub):
            a, b = ids[int(rng.integers(k))], ids[k]
            st.add((a, sub_rels[rng.integers(len(sub_rels))], b) if rng.random() < 0.5
                   else (b, sub_rels[rng.integers(len(sub_rels))], a))
        for _ in range(n_sub // 2):
            a, b = rng.choice(n_sub, size=2, replace=False)
            st.add((ids[a], sub_rels[rng.integers(len(sub_rels))], ids[b]))
        scene_graphs[img] = SceneGraph(img, subs, frozenset(st))
    modality = {e: Modality.GENERIC for e in generic}
    modality.update({e: Modality.IMAGE for e in images})
    return Mmkg(sorted(entities), relations, frozenset(triples), modality, scene_graphs)
