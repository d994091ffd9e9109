"""Computational graphs for FOL queries and the 14 standard query structures.

A query is a tree whose root is the answer variable. Leaves are anchors;
inner nodes project along a relation, negate, intersect or unite. Slot
order (anchors, relations) follows a post-order walk, which is also the
order of the flat lists in query files.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

STRUCTURES = ("1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up",
              "pni", "pin", "inp", "2in", "3in")
NEGATION_STRUCTURES = ("2in", "3in", "inp", "pin", "pni")
UNION_STRUCTURES = ("2u", "up")


@dataclass(frozen=True)
class Anchor:
    entity: object


@dataclass(frozen=True)
class Projection:
    child: object
    relation: object


@dataclass(frozen=True)
class Negation:
    child: object


@dataclass(frozen=True)
class Intersection:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("intersection needs at least two operands")


@dataclass(frozen=True)
class Union:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("union needs at least two operands")


def _templates():
    A, P, N, I, U = Anchor, Projection, Negation, Intersection, Union

    def one(a, r):
        return P(A(a()), r())

    return {
        "1p": lambda a, r: one(a, r),
        "2p": lambda a, r: P(one(a, r), r()),
        "3p": lambda a, r: P(P(one(a, r), r()), r()),
        "2i": lambda a, r: I([one(a, r), one(a, r)]),
        "3i": lambda a, r: I([one(a, r), one(a, r), one(a, r)]),
        "pi": lambda a, r: I([P(one(a, r), r()), one(a, r)]),
        "ip": lambda a, r: P(I([one(a, r), one(a, r)]), r()),
        "2u": lambda a, r: U([one(a, r), one(a, r)]),
        "up": lambda a, r: P(U([one(a, r), one(a, r)]), r()),
        "2in": lambda a, r: I([one(a, r), N(one(a, r))]),
        "3in": lambda a, r: I([one(a, r), one(a, r), N(one(a, r))]),
        "inp": lambda a, r: P(I([one(a, r), N(one(a, r))]), r()),
        "pin": lambda a, r: I([P(one(a, r), r()), N(one(a, r))]),
        "pni": lambda a, r: I([N(P(one(a, r), r())), one(a, r)]),
    }


TEMPLATES = _templates()


def _counter():
    n = [0]

    def nxt():
        n[0] += 1
        return n[0] - 1
    return nxt


def template(structure):
    """Tree for ``structure`` whose slots are their post-order indices."""
    if structure not in TEMPLATES:
        raise ValueError(f"unknown query structure {structure!r}")
    return TEMPLATES[structure](_counter(), _counter())


def arity(structure):
    anchors, relations, _ = slots(template(structure))
    return len(anchors), len(relations)


def instantiate(structure, anchors, relations):
    n_a, n_r = arity(structure)
    if len(anchors) != n_a or len(relations) != n_r:
        raise ValueError(f"{structure} takes {n_a} anchors and {n_r} relations, "
                         f"got {len(anchors)} and {len(relations)}")
    ia, ir = iter(anchors), iter(relations)
    return TEMPLATES[structure](lambda: next(ia), lambda: next(ir))


def slots(node):
    """(anchors, relations, negations) in post-order; negations align with relations."""
    anchors, relations, negs = [], [], []

    def walk(n, negated):
        if isinstance(n, Anchor):
            anchors.append(n.entity)
        elif isinstance(n, Projection):
            walk(n.child, False)
            relations.append(n.relation)
            negs.append(negated)
        elif isinstance(n, Negation):
            walk(n.child, True)
        elif isinstance(n, (Intersection, Union)):
            for c in n.children:
                walk(c, False)
        else:
            raise TypeError(f"not a query node: {n!r}")
    walk(node, False)
    return anchors, relations, negs


def shape(node):
    """Hashable signature of the tree without its ids."""
    if isinstance(node, Anchor):
        return "e"
    if isinstance(node, Projection):
        return ("p", shape(node.child))
    if isinstance(node, Negation):
        return ("n", shape(node.child))
    if isinstance(node, Intersection):
        return ("i",) + tuple(shape(c) for c in node.children)
    if isinstance(node, Union):
        return ("u",) + tuple(shape(c) for c in node.children)
    raise TypeError(f"not a query node: {node!r}")


_SHAPES = {shape(template(s)): s for s in STRUCTURES}


def structure_of(node):
    return _SHAPES.get(shape(node))


def validate(node):
    """Raise ValueError for malformed trees (bad arity, negated anchors)."""
    if isinstance(node, Anchor):
        return
    if isinstance(node, Projection):
        validate(node.child)
    elif isinstance(node, Negation):
        if isinstance(node.child, Anchor):
            raise ValueError("negation must follow a projection or join, not an anchor")
        validate(node.child)
    elif isinstance(node, (Intersection, Union)):
        if len(node.children) < 2:
            raise ValueError("join with fewer than two operands")
        for c in node.children:
            validate(c)
    else:
        raise TypeError(f"not a query node: {node!r}")


def is_dnf(node):
    """Unions appear only at the root."""
    def no_union(n):
        if isinstance(n, Union):
            return False
        if isinstance(n, Anchor):
            return True
        if isinstance(n, (Projection, Negation)):
            return no_union(n.child)
        return all(no_union(c) for c in n.children)
    if isinstance(node, Union):
        return all(no_union(c) for c in node.children)
    return no_union(node)


def disjuncts(node):
    """Union-free trees whose union is equivalent to ``node``."""
    if isinstance(node, Anchor):
        return [node]
    if isinstance(node, Projection):
        return [Projection(c, node.relation) for c in disjuncts(node.child)]
    if isinstance(node, Union):
        return [d for c in node.children for d in disjuncts(c)]
    if isinstance(node, Intersection):
        out = []
        for combo in product(*(disjuncts(c) for c in node.children)):
            flat = []
            for c in combo:
                flat.extend(c.children if isinstance(c, Intersection) else [c])
            out.append(Intersection(flat))
        return out
    if isinstance(node, Negation):
        ds = disjuncts(node.child)
        if len(ds) == 1:
            return [Negation(ds[0])]
        # not (a or b) == (not a) and (not b)
        return [Intersection([Negation(d) for d in ds])]
    raise TypeError(f"not a query node: {node!r}")


def to_dnf(node):
    """Lift unions to the root; union-free trees are returned unchanged."""
    validate(node)
    if is_dnf(node):
        return node
    ds = disjuncts(node)
    return ds[0] if len(ds) == 1 else Union(ds)


def batch_tree(trees, entity_index, relation_index):
    """Stack same-shaped trees into one tree whose ids are int arrays."""
    first = trees[0]
    if any(type(t) is not type(first) for t in trees):
        raise ValueError("trees in a batch must share one shape")
    if isinstance(first, Anchor):
        return Anchor(np.array([entity_index[t.entity] for t in trees], dtype=np.int64))
    if isinstance(first, Projection):
        return Projection(batch_tree([t.child for t in trees], entity_index, relation_index),
                          np.array([relation_index[t.relation] for t in trees], dtype=np.int64))
    if isinstance(first, Negation):
        return Negation(batch_tree([t.child for t in trees], entity_index, relation_index))
    kind = type(first)
    n = len(first.children)
    if any(len(t.children) != n for t in trees):
        raise ValueError("trees in a batch must share one shape")
    return kind([batch_tree([t.children[k] for t in trees], entity_index, relation_index)
                 for k in range(n)])
