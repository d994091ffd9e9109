"""Filtered ranking metrics, split reports and the fuzzy-region fidelity analysis."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import PI, TWO_PI, ConeEmbedding, contains, sector_area_overlap
from .query import STRUCTURES

CLASSES = ("typeII", "typeI-candidate", "typeI-subentity")
HITS_K = (1, 3, 5, 10)


def rank(target, ids, distances, exclude=()):
    """Filtered rank of ``target``: 1 + members ahead of it, ties broken by id."""
    ids = list(ids)
    distances = np.asarray(distances, dtype=np.float64)
    exclude = set(exclude)
    if target in exclude:
        raise ValueError(f"target {target!r} is excluded from its own ranking")
    try:
        t = ids.index(target)
    except ValueError:
        raise ValueError(f"target {target!r} is not in the ranking universe") from None
    dt = distances[t]
    r = 1
    for e, d in zip(ids, distances):
        if e == target or e in exclude:
            continue
        if d < dt or (d == dt and e < target):
            r += 1
    return r


def rank_vectorized(target_idx, ids_sorted_rank, distances, exclude_mask):
    """Same as ``rank`` for precomputed arrays; ``ids_sorted_rank`` orders ids."""
    dt = distances[target_idx]
    ahead = (distances < dt) | ((distances == dt) & (ids_sorted_rank < ids_sorted_rank[target_idx]))
    ahead &= ~exclude_mask
    ahead[target_idx] = False
    return 1 + int(ahead.sum())


def mrr(ranks):
    ranks = np.asarray(list(ranks), dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("mrr of an empty rank list")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / ranks))


def hits_at(ranks, k):
    ranks = np.asarray(list(ranks), dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("hits_at of an empty rank list")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    return float(np.mean(ranks <= k))


@dataclass
class Cell:
    ranks: list = field(default_factory=list)

    def summary(self):
        if not self.ranks:
            return None
        out = {"n": len(self.ranks), "mrr": mrr(self.ranks)}
        out.update({f"hits@{k}": hits_at(self.ranks, k) for k in HITS_K})
        return out


@dataclass
class RankReport:
    cells: dict  # (structure, class) -> Cell
    filtered: bool = True

    def metric(self, structure, cls, name="mrr"):
        c = self.cells.get((structure, cls))
        s = c.summary() if c else None
        return None if s is None else s[name]

    def average(self, cls, name="mrr", structures=STRUCTURES):
        vals = [self.metric(s, cls, name) for s in structures]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def pooled_mrr(self, cls, structures):
        ranks = [r for s in structures for r in self.cells.get((s, cls), Cell()).ranks]
        return mrr(ranks) if ranks else None

    def to_json(self):
        out = {"filtered": self.filtered, "structures": list(STRUCTURES), "classes": {}}
        for cls in CLASSES:
            per = {}
            for s in STRUCTURES:
                c = self.cells.get((s, cls))
                summ = c.summary() if c else None
                if summ is not None:
                    per[s] = summ
            out["classes"][cls] = {"per_structure": per,
                                   "avg_mrr": self.average(cls),
                                   "avg_hits@10": self.average(cls, "hits@10"),
                                   "avg_hits@5": self.average(cls, "hits@5")}
        return out

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def table(self, name="mrr"):
        """Aligned text table: one row per answer class, one column per structure plus AVG."""
        head = ["class"] + list(STRUCTURES) + ["AVG"]
        rows = [head]
        for cls in CLASSES:
            vals = [self.metric(s, cls, name) for s in STRUCTURES]
            avg = self.average(cls, name)
            rows.append([cls] + [_fmt(v) for v in vals] + [_fmt(avg)])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["structure", "class", "n", "mrr"] + [f"hits@{k}" for k in HITS_K])
        for cls in CLASSES:
            for s in STRUCTURES:
                c = self.cells.get((s, cls))
                summ = c.summary() if c else None
                if summ is None:
                    continue
                w.writerow([s, cls, summ["n"], f"{summ['mrr']:.6f}"] +
                           [f"{summ[f'hits@{k}']:.6f}" for k in HITS_K])
        return buf.getvalue()


def _fmt(v):
    return "-" if v is None else f"{100 * v:.1f}"


def _targets(rec, kind):
    """(hard targets, all known answers) for one answer class of a record."""
    hard_key = {"t2": "hard_type2", "t1": "hard_type1"}[kind]
    all_key = {"t2": "answers_type2", "t1": "answers_type1"}[kind]
    hard = rec.get(hard_key, rec[all_key])
    return hard, rec[all_key]


def evaluate_split(scorer, records, filtered=True, structures=None):
    """Rank every hard answer of every record against its class universe.

    Type II answers rank among all MMKG entities, Type I candidates among the
    image entities (candidate-mode distances), Type I sub-entities among the
    sub-entities of their own candidate.
    """
    cells = {}
    if hasattr(scorer, "prepare"):
        scorer.prepare(records)
    for rec in records:
        s = rec["structure"]
        if structures is not None and s not in structures:
            continue
        hard2, all2 = _targets(rec, "t2")
        if hard2:
            ids, dist = scorer.type2_distances(rec)
            _rank_all(cells, (s, "typeII"), hard2, all2, ids, dist, filtered)
        hard1, all1 = _targets(rec, "t1")
        if hard1:
            ids, dist = scorer.candidate_distances(rec)
            all_c = sorted({p["candidate"] for p in all1})
            hard_c = sorted({p["candidate"] for p in hard1})
            _rank_all(cells, (s, "typeI-candidate"), hard_c, all_c, ids, dist, filtered)
            for cand in hard_c:
                ids, dist = scorer.sub_distances(rec, cand)
                all_s = [p["sub"] for p in all1 if p["candidate"] == cand]
                hard_s = [p["sub"] for p in hard1 if p["candidate"] == cand]
                _rank_all(cells, (s, "typeI-subentity"), hard_s, all_s, ids, dist, filtered)
    return RankReport(cells, filtered)


def _rank_all(cells, key, hard, known, ids, dist, filtered):
    ids = list(ids)
    pos = {e: i for i, e in enumerate(ids)}
    order = np.empty(len(ids), dtype=np.int64)
    order[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    known_mask = np.zeros(len(ids), dtype=bool)
    for a in known:
        if a not in pos:
            raise DataError(f"answer {a!r} is outside its ranking universe")
        known_mask[pos[a]] = True
    cell = cells.setdefault(key, Cell())
    for a in hard:
        excl = known_mask if filtered else np.zeros(len(ids), dtype=bool)
        cell.ranks.append(rank_vectorized(pos[a], order, np.asarray(dist), excl))


# -- fidelity analysis -----------------------------------------------------------

@dataclass
class FidelityReport:
    n: int
    sc_rigid: float
    sc_fuzzy: float
    violations: int
    relation: str

    def to_json(self):
        return {"n": self.n, "sc_rigid": self.sc_rigid, "sc_fuzzy": self.sc_fuzzy,
                "containment_violations": self.violations, "relation": self.relation,
                "reference": {"rigid": 0.41, "fuzzy": 0.57, "cone_baseline": 0.46}}


def containment_pairs(n, d, rng):
    """Random cone pairs (A, B) with A inside B in every dimension, as (n, d) arrays."""
    b_ax = rng.uniform(-PI, PI, (n, d))
    b_outer = rng.uniform(0.0, TWO_PI, (n, d))
    b_ri = b_outer * rng.uniform(0.0, 1.0, (n, d))
    b_fu = b_outer - b_ri
    a_ri = b_ri * rng.uniform(0.0, 1.0, (n, d))
    # shift A's axis so its rigid arc stays in B's rigid arc
    a_ax = b_ax + (b_ri - a_ri) / 2 * rng.uniform(-1.0, 1.0, (n, d))
    room = b_outer - a_ri - 2 * np.abs(a_ax - b_ax)
    a_fu = np.maximum(room, 0.0) * rng.uniform(0.0, 1.0, (n, d))
    a_ax = np.mod(a_ax + PI, TWO_PI) - PI
    return (a_ax, a_ri, a_fu), (b_ax, b_ri, b_fu)


def fidelity_analysis(project, relations, n=8000, d=None, seed=0, relation=None, workers=1):
    """Share of A's rigid / full sector that stays inside B's after projecting both.

    ``project(ax, ri, fu, relation) -> (ax, ri, fu)`` maps (n, d) arrays. The
    relation is drawn at random when not given. ``workers`` > 1 spreads the
    per-pair overlap computation over threads; the result does not depend on it.
    """
    if project is None:
        raise ValueError("fidelity analysis needs a projection")
    if d is None:
        raise ValueError("dimension d is required")
    rng = np.random.default_rng(seed)
    relations = list(relations)
    rel = relation if relation is not None else relations[int(rng.integers(len(relations)))]
    A, B = containment_pairs(n, d, rng)
    violations = sum(not contains(ConeEmbedding(*(x[i] for x in A)), ConeEmbedding(*(x[i] for x in B)))
                     for i in range(n))
    pa = project(*A, rel)
    pb = project(*B, rel)

    def overlap(i):
        ca = ConeEmbedding(pa[0][i], pa[1][i], np.maximum(pa[2][i], 0.0))
        cb = ConeEmbedding(pb[0][i], pb[1][i], np.maximum(pb[2][i], 0.0))
        ov = sector_area_overlap(ca, cb)
        return ov.rigid_mean, ov.full_mean

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            pairs = list(pool.map(overlap, range(n)))
    else:
        pairs = [overlap(i) for i in range(n)]
    rig = [a for a, _ in pairs]
    full = [b for _, b in pairs]
    return FidelityReport(n, float(np.mean(rig)), float(np.mean(full)), int(violations), str(rel))
