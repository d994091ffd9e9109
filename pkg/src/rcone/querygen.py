"""Link prediction, the exact query executor and query dataset generation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .kg import LINK_RELATION, MergedGraph, Mmkg
from .query import (Anchor, Intersection, Negation, NEGATION_STRUCTURES, Projection,
                    STRUCTURES, Union, instantiate, slots, structure_of, template, to_dnf)
from .subentity import ComplExConfig, train_complex

__all__ = [
    "LinkConfig", "SEED_RELATION", "joint_link_model", "link_scene_graphs", "to_dnf",
    "execute_query", "GroundTruth", "ground_truth", "generate_query", "DatasetConfig",
    "generate_dataset", "preset_counts", "write_queries", "read_queries", "Dataset",
    "write_dataset", "read_dataset",
]

SEED_RELATION = "sameLabel"


# -- link prediction -------------------------------------------------------------

@dataclass
class LinkConfig:
    threshold: float = 0.9
    cap: int = 100
    min_links: int = 1
    complex: ComplExConfig = field(default_factory=lambda: ComplExConfig(steps=300))

    def validate(self):
        errs = []
        if not 0.0 <= self.threshold <= 1.0:
            errs.append("link threshold must lie in [0, 1]")
        if self.cap < 1:
            errs.append("link cap must be >= 1")
        if not 1 <= self.min_links <= self.cap:
            errs.append("need 1 <= min_links <= cap")
        return errs + self.complex.validate()


def seed_pairs(mmkg):
    """(entity, sameLabel, sub) for every sub-entity whose label names an MMKG entity."""
    ents = set(mmkg.entities)
    out = set()
    for img, sg in mmkg.scene_graphs.items():
        for s, lab in sg.sub_entities:
            if lab in ents and lab != img:
                out.add((lab, SEED_RELATION, s))
    return out


def joint_link_model(mmkg, cfg=None, seed=0):
    """One ComplEx over the MMKG, all scene graphs and the label seed pairs."""
    cfg = cfg or LinkConfig()
    if SEED_RELATION in mmkg.relations:
        raise DataError(f"relation id {SEED_RELATION!r} is reserved for link seeds")
    triples = set(mmkg.triples) | seed_pairs(mmkg)
    sub_rels = []
    for sg in mmkg.scene_graphs.values():
        triples |= sg.sub_triples
        sub_rels += [r for r in sg.sub_relations if r not in sub_rels]
    entities = list(mmkg.entities) + mmkg.sub_entities()
    relations = list(mmkg.relations) + [r for r in sorted(sub_rels) if r not in mmkg.relations]
    relations.append(SEED_RELATION)
    return train_complex(triples, entities, relations, cfg.complex, seed, prefix="link")


def link_scores(mmkg, model, image):
    """Probability sigma(score(e, sameLabel, s)) for each MMKG entity e and sub s of ``image``."""
    sg = mmkg.scene_graphs[image]
    missing = [s for s in sg.ids if s not in model.eidx]
    if missing or image not in model.eidx:
        raise DataError(f"no scene model covers image entity {image!r}")
    out = []
    for s in sg.ids:
        t = model.embedding(s)
        hr = np.array([model.embedding(e) for e in mmkg.entities]) * model.relation(SEED_RELATION)
        sc = np.real(hr @ np.conj(t))
        prob = 1.0 / (1.0 + np.exp(-sc))
        out += [(float(p), e, s) for p, e in zip(prob, mmkg.entities)]
    out.sort(key=lambda x: (-x[0], x[1], x[2]))
    return out


def select_links(scored, cfg):
    passing = [x for x in scored if x[0] > cfg.threshold][:cfg.cap]
    if len(passing) < cfg.min_links:
        passing = scored[:cfg.min_links]
    return [(e, LINK_RELATION, s) for _, e, s in passing]


def link_scene_graphs(mmkg, model, cfg=None):
    """Merge every scene graph into the MMKG through predicted ``linksTo`` edges."""
    cfg = cfg or LinkConfig()
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    edges = []
    for img in sorted(mmkg.scene_graphs):
        edges += select_links(link_scores(mmkg, model, img), cfg)
    return MergedGraph(mmkg, frozenset(edges))


def restrict_images(g, keep):
    """Merged graph with only the scene graphs (and links) of images in ``keep``."""
    keep = set(keep)
    m = g.mmkg
    sub = Mmkg(m.entities, m.relations, m.triples, m.modality,
               {e: sg for e, sg in m.scene_graphs.items() if e in keep})
    links = [t for t in g.link_edges if g.owner[t[2]] in keep]
    return MergedGraph(sub, frozenset(links))


# -- executor ---------------------------------------------------------------------

def execute_query(g, q):
    """Exact answer set of ``q`` over ``g`` (complement taken against all nodes)."""
    universe = frozenset(g.entities)

    def run(n):
        if isinstance(n, Anchor):
            if not g.has_entity(n.entity):
                raise DataError(f"unknown anchor entity {n.entity!r}")
            return frozenset([n.entity])
        if isinstance(n, Projection):
            if not g.has_relation(n.relation):
                raise DataError(f"unknown relation {n.relation!r}")
            out = set()
            for e in run(n.child):
                out.update(g.neighbors(e, n.relation))
            return frozenset(out)
        if isinstance(n, Negation):
            return universe - run(n.child)
        if isinstance(n, Intersection):
            sets = [run(c) for c in n.children]
            return frozenset.intersection(*sets)
        if isinstance(n, Union):
            return frozenset().union(*(run(c) for c in n.children))
        raise TypeError(f"not a query node: {n!r}")
    return run(q)


@dataclass(frozen=True)
class GroundTruth:
    type2: frozenset
    type1: frozenset  # (candidate image, sub-entity)

    @property
    def answers(self):
        return self.type2 | {s for _, s in self.type1}


def ground_truth(g, answers):
    t1 = frozenset((g.owner[a], a) for a in answers if a in g.owner)
    return GroundTruth(frozenset(a for a in answers if a not in g.owner), t1)


# -- generation ---------------------------------------------------------------------

class _Walker:
    def __init__(self, g, rng):
        self.g, self.rng = g, rng
        self.targets = sorted({t for _, _, t in g.triples})

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def walk(self, node, target):
        g = self.g
        if isinstance(node, Anchor):
            return Anchor(target) if target in g.mmkg_entities else None
        if isinstance(node, Projection):
            inc = g.incoming(target)
            if isinstance(node.child, Anchor):
                inc = [p for p in inc if p[0] in g.mmkg_entities]
            if not inc:
                return None
            h, r = self.pick(inc)
            child = self.walk(node.child, h)
            return None if child is None else Projection(child, r)
        if isinstance(node, Negation):
            child = self.walk(node.child, self.pick(self.targets))
            return None if child is None else Negation(child)
        if isinstance(node, Intersection):
            kids = []
            for c in node.children:
                k = self.walk(c, target) if not isinstance(c, Negation) else self.walk(c, None)
                if k is None:
                    return None
                kids.append(k)
            return Intersection(kids)
        if isinstance(node, Union):
            hit = int(self.rng.integers(len(node.children)))
            kids = []
            for i, c in enumerate(node.children):
                k = self.walk(c, target if i == hit else self.pick(self.targets))
                if k is None:
                    return None
                kids.append(k)
            return Union(kids)
        raise TypeError(f"not a query node: {node!r}")


def generate_query(g, structure, rng, want_type1=False, max_retries=100, accept=None,
                   type1_pool=None):
    """Backward-sample one query of ``structure`` whose answers include a random seed.

    Returns (query tree, GroundTruth, seed answer). With ``want_type1`` the seed
    is a sub-entity; otherwise the query may have no sub-entity answers at all.
    ``accept(q, gt, seed)`` can veto a sample. Raises DataError after
    ``max_retries`` dead ends.
    """
    tpl = template(structure)
    walker = _Walker(g, rng)
    if want_type1:
        pool = type1_pool if type1_pool is not None else sorted(g.owner)
        pool = [s for s in pool if g.incoming(s)]
    else:
        pool = [e for e in g.mmkg.entities if g.incoming(e)]
    if not pool:
        raise DataError(f"no possible {'sub-entity' if want_type1 else 'entity'} answers in graph")
    for _ in range(max_retries):
        seed = walker.pick(pool)
        q = walker.walk(tpl, seed)
        if q is None:
            continue
        ans = execute_query(g, q)
        if seed not in ans:
            continue
        gt = ground_truth(g, ans)
        if want_type1 != bool(gt.type1):
            continue
        if accept is not None and not accept(q, gt, seed):
            continue
        return q, gt, seed
    raise DataError(f"could not generate a {structure} query in {max_retries} tries")


# -- datasets -------------------------------------------------------------------------

SPLITS = ("train", "valid", "test")
_TRAIN_PLAIN = ("1p", "2p", "3p", "2i", "3i")


def preset_counts(name):
    """Per-split, per-structure counts; ``fb15k-1000`` is Table-III FB15k scaled by 1/1000."""
    if name != "fb15k-1000":
        raise ConfigError([f"unknown count preset {name!r}"])
    train = {s: 0 for s in STRUCTURES}
    train.update({s: round(273_710 / 1000) for s in _TRAIN_PLAIN})
    train.update({s: round(27_371 / 1000) for s in NEGATION_STRUCTURES})
    test = {s: round(8_000 / 1000) for s in STRUCTURES}
    test["1p"] = round(68_549 / 1000)
    return {"train": train, "valid": dict(test), "test": test}


@dataclass
class DatasetConfig:
    counts: dict
    type1_fraction: float = 0.30
    image_fraction: float = 0.05
    holdout: tuple = (0.05, 0.05)
    link_holdout: tuple = None
    max_retries: int = 100
    seed: int = 0

    def validate(self):
        errs = []
        if not 0.0 <= self.type1_fraction <= 1.0:
            errs.append("type1_fraction must lie in [0, 1]")
        if not 0.0 < self.image_fraction <= 1.0:
            errs.append("image_fraction must lie in (0, 1]")
        for name, h in (("holdout", self.holdout), ("link_holdout", self.link_holdout)):
            if h is None:
                continue
            if len(h) != 2 or min(h) < 0 or sum(h) >= 1:
                errs.append(f"{name} must be two fractions summing below 1")
        for split, per in self.counts.items():
            if split not in SPLITS:
                errs.append(f"unknown split {split!r}")
                continue
            for s, n in per.items():
                if s not in STRUCTURES:
                    errs.append(f"unknown structure {s!r} in {split} counts")
                elif n is not None and n < 0:
                    errs.append(f"negative count for {split}/{s}")
        if self.max_retries < 1:
            errs.append("max_retries must be >= 1")
        return errs


@dataclass
class Dataset:
    graph: MergedGraph
    graphs: dict          # split -> graph whose edges are visible to that split
    queries: dict         # split -> list of query records
    images: list          # images whose scene graphs take part
    stats: dict


def _split_edges(edges, fractions, rng):
    edges = sorted(edges)
    perm = rng.permutation(len(edges))
    n_valid = int(round(fractions[0] * len(edges)))
    n_test = int(round(fractions[1] * len(edges)))
    valid = {edges[i] for i in perm[:n_valid]}
    test = {edges[i] for i in perm[n_valid:n_valid + n_test]}
    return set(edges) - valid - test, valid, test


def _allocate(counts, fraction):
    """Type-I quota per structure: largest remainder so the total rounds exactly."""
    fixed = {s: n for s, n in counts.items() if n}
    total = sum(fixed.values())
    want = int(round(fraction * total))
    raw = {s: fraction * n for s, n in fixed.items()}
    quota = {s: int(np.floor(x)) for s, x in raw.items()}
    rest = sorted(fixed, key=lambda s: (-(raw[s] - quota[s]), STRUCTURES.index(s)))
    for s in rest[:max(0, want - sum(quota.values()))]:
        quota[s] += 1
    return quota


def record(structure, q, gt, hard=None):
    anchors, relations, negs = slots(q)
    rec = {
        "structure": structure,
        "anchors": list(anchors),
        "relations": list(relations),
        "negations": [bool(x) for x in negs],
        "answers_type2": sorted(gt.type2),
        "answers_type1": [{"candidate": c, "sub": s} for c, s in sorted(gt.type1)],
    }
    if hard is not None:
        rec["hard_type2"] = sorted(hard.type2)
        rec["hard_type1"] = [{"candidate": c, "sub": s} for c, s in sorted(hard.type1)]
    return rec


def query_of(rec):
    return instantiate(rec["structure"], rec["anchors"], rec["relations"])


def generate_dataset(g, cfg):
    """Stratified train/valid/test queries; deterministic in ``cfg.seed``."""
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    rng = np.random.default_rng([cfg.seed, 0])
    imgs = sorted(g.mmkg.scene_graphs)
    n_keep = max(1, int(round(cfg.image_fraction * len(imgs)))) if imgs else 0
    keep = sorted(imgs[i] for i in rng.permutation(len(imgs))[:n_keep])
    if len(keep) < len(imgs):
        g = restrict_images(g, keep)

    base = set(g.triples)
    link_edges = set(g.link_edges)
    kg_edges = set(g.mmkg.triples)
    tr_k, va_k, te_k = _split_edges(kg_edges, cfg.holdout, np.random.default_rng([cfg.seed, 1]))
    tr_l, va_l, te_l = _split_edges(link_edges, cfg.link_holdout or cfg.holdout,
                                    np.random.default_rng([cfg.seed, 2]))
    scene = base - kg_edges - link_edges
    g_train = g.with_triples(scene | tr_k | tr_l)
    g_valid = g.with_triples(scene | tr_k | tr_l | va_k | va_l)
    graphs = {"train": g_train, "valid": g_valid, "test": g}
    easy = {"valid": g_train, "test": g_valid}
    held = {"valid": va_k | va_l, "test": te_k | te_l}

    queries, stats = {}, {"images": keep, "splits": {}}
    for si, split in enumerate(SPLITS):
        counts = {s: cfg.counts.get(split, {}).get(s, 0) for s in STRUCTURES}
        gs = graphs[split]
        quota = _allocate(counts, cfg.type1_fraction)
        carry = 0  # type-I queries a structure could not supply, moved to later ones
        out = []
        for ki, s in enumerate(STRUCTURES):
            n = counts[s]
            if n == 0:
                continue
            rng_k = (cfg.seed, 10 + si, ki)
            if s == "1p" and (split != "train" or n is None):
                edges = held[split] if split != "train" else gs.triples
                out += _heldout_1p(gs, easy.get(split), edges, n, quota.get(s, 0),
                                   np.random.default_rng(rng_k))
                continue
            want1 = min(n, quota.get(s, 0) + carry)
            recs, made1 = _sample(gs, easy.get(split), s, n, want1, cfg, rng_k)
            carry = want1 - made1 + max(0, quota.get(s, 0) + carry - n)
            out += recs
        if carry:
            raise DataError(f"{split}: {carry} type-I queries could not be generated; "
                            "lower type1_fraction or the counts")
        queries[split] = out
        stats["splits"][split] = _stats(out)
    stats["table"] = {
        "train_1p/2p/3p/2i/3i": sum(1 for r in queries["train"] if r["structure"] in _TRAIN_PLAIN),
        "train_2in/3in/inp/pin/pni": sum(1 for r in queries["train"]
                                         if r["structure"] in NEGATION_STRUCTURES),
        "test_1p": sum(1 for r in queries["test"] if r["structure"] == "1p"),
        "test_others": sum(1 for r in queries["test"] if r["structure"] != "1p"),
    }
    stats["edges"] = {"train": len(tr_k) + len(tr_l), "valid": len(va_k) + len(va_l),
                      "test": len(te_k) + len(te_l), "links": len(link_edges)}
    return Dataset(g, graphs, queries, keep, stats)


def _sample(g, g_easy, s, n, n_type1, cfg, stream):
    """``n`` distinct queries, up to ``n_type1`` of them Type I; returns (records, type-I made)."""
    out, seen = [], set()
    made1 = 0
    for want1 in (True, False):
        need = n_type1 if want1 else n - made1
        made, i, misses = 0, 0, 0
        while made < need:
            rng = np.random.default_rng([*stream, int(want1), i])
            i += 1
            hard = {}

            def accept(q, gt, seed):
                if g_easy is None:
                    return True
                easy = execute_query(g_easy, q)
                if seed in easy:
                    return False
                hard["gt"] = ground_truth(g, gt.answers - easy)
                return True
            try:
                q, gt, _ = generate_query(g, s, rng, want1, cfg.max_retries, accept)
            except DataError:
                if want1:
                    break
                raise
            key = (tuple(slots(q)[0]), tuple(slots(q)[1]))
            if key in seen:
                misses += 1
                if misses > cfg.max_retries * max(need, 1):
                    if want1:
                        break
                    raise DataError(f"cannot find {n} distinct {s} queries; lower the count")
                continue
            seen.add(key)
            out.append(record(s, q, gt, hard.get("gt")))
            made += 1
        if want1:
            made1 = made
    return out, made1


def _heldout_1p(g, g_easy, held, n, n_type1, rng):
    """1p queries read off held-out edges; ``n=None`` keeps every one.

    Without ``g_easy`` (the train split) every answer counts and no hard set is kept.
    """
    pairs = sorted({(h, r) for h, r, _ in held if h in g.mmkg_entities})
    t1, t2 = [], []
    for h, r in pairs:
        q = Projection(Anchor(h), r)
        ans = execute_query(g, q)
        gt = ground_truth(g, ans)
        hard = None if g_easy is None else ground_truth(g, ans - execute_query(g_easy, q))
        if not (hard or gt).answers:
            continue
        (t1 if gt.type1 else t2).append(record("1p", q, gt, hard))
    if n is None:
        return t1 + t2
    n_t2 = n - n_type1
    if len(t1) < n_type1 or len(t2) < n_t2:
        raise DataError(f"held-out edges give {len(t1)} type I / {len(t2)} type II 1p queries; "
                        f"need {n_type1} / {n_t2}")
    pick1 = sorted(rng.choice(len(t1), size=n_type1, replace=False)) if n_type1 else []
    pick2 = sorted(rng.choice(len(t2), size=n_t2, replace=False)) if n_t2 else []
    return [t1[i] for i in pick1] + [t2[i] for i in pick2]


def _stats(records):
    per = {}
    for r in records:
        d = per.setdefault(r["structure"], {"count": 0, "type1": 0})
        d["count"] += 1
        d["type1"] += bool(r["answers_type1"])
    total = len(records)
    t1 = sum(d["type1"] for d in per.values())
    return {"per_structure": {s: per[s] for s in STRUCTURES if s in per}, "total": total,
            "type1": t1, "type1_fraction": t1 / total if total else 0.0}


def write_queries(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def read_queries(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if structure_of(query_of(rec)) != rec["structure"]:
                    raise ValueError("structure does not match its slots")
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{ln}: bad query record: {exc}") from exc
            out.append(rec)
    return out


def write_dataset(ds, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, recs in ds.queries.items():
        write_queries(out_dir / f"{split}.jsonl", recs)
    edges = {split: sorted(g.triples) for split, g in ds.graphs.items()}
    with open(out_dir / "graph.json", "w", encoding="utf-8") as f:
        json.dump({"images": ds.images, "links": sorted(ds.graph.link_edges),
                   "edges": edges}, f, sort_keys=True, separators=(",", ":"))
    with open(out_dir / "stats.json", "w", encoding="utf-8") as f:
        json.dump(ds.stats, f, sort_keys=True, indent=1)


def read_dataset(path, mmkg):
    """Inverse of ``write_dataset`` given the MMKG the dataset was generated from."""
    path = Path(path)
    try:
        with open(path / "graph.json", encoding="utf-8") as f:
            meta = json.load(f)
        links = frozenset(tuple(t) for t in meta["links"])
        images, edges = meta["images"], meta["edges"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read {path / 'graph.json'}: {exc}") from exc
    missing = sorted(set(images) - set(mmkg.scene_graphs))
    if missing:
        raise DataError(f"dataset images {missing} have no scene graph in the MMKG")
    g = restrict_images(MergedGraph(mmkg, links), images)
    graphs = {s: g.with_triples(tuple(t) for t in e) for s, e in edges.items()}
    queries = {s: read_queries(path / f"{s}.jsonl") for s in SPLITS
               if (path / f"{s}.jsonl").exists()}
    stats = {}
    if (path / "stats.json").exists():
        with open(path / "stats.json", encoding="utf-8") as f:
            stats = json.load(f)
    return Dataset(g, graphs, queries, list(images), stats)
