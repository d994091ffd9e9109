"""Rough sector-cone geometry: representation, borders, membership, distances.

A cone is three length-d vectors: the semantic axis ``ax``, the rigid aperture
``ri`` and the fuzzy aperture ``fu`` that widens the rigid sector on both
sides. Entities are axes only (``ri = fu = 0``).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .kernels import MODE_ANSWER, MODE_CANDIDATE

PI = np.pi
TWO_PI = 2.0 * np.pi
SLACK = 1e-9

# distance weights (inside, fuzzy) per query kind
UNIMODAL_WEIGHTS = (0.02, 1.0)
MULTIMODAL_WEIGHTS = (0.9, 0.02)

_MODES = {"answer": MODE_ANSWER, "candidate": MODE_CANDIDATE,
          MODE_ANSWER: MODE_ANSWER, MODE_CANDIDATE: MODE_CANDIDATE}


def mode_code(mode):
    try:
        return _MODES[mode]
    except KeyError:
        raise ValueError(f"mode must be 'answer' or 'candidate', got {mode!r}") from None


def wrap_angle(x):
    """Map angles into [-pi, pi)."""
    r = np.mod(np.asarray(x, dtype=np.float64) + PI, TWO_PI) - PI
    return np.where(r >= PI, r - TWO_PI, r)


def angular_distance(a, b):
    """Shortest arc between two angles, in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))


@dataclass(frozen=True)
class ConeEmbedding:
    ax: np.ndarray
    ri: np.ndarray
    fu: np.ndarray

    def __post_init__(self):
        ax = wrap_angle(np.atleast_1d(np.asarray(self.ax, dtype=np.float64)))
        ri = np.atleast_1d(np.asarray(self.ri, dtype=np.float64))
        fu = np.atleast_1d(np.asarray(self.fu, dtype=np.float64))
        if not (ax.shape == ri.shape == fu.shape) or ax.ndim != 1:
            raise ValueError(f"ax/ri/fu must be equal-length vectors: {ax.shape} {ri.shape} {fu.shape}")
        if not (np.isfinite(ax).all() and np.isfinite(ri).all() and np.isfinite(fu).all()):
            raise ValueError("cone parameters must be finite")
        if (ri < -SLACK).any() or (ri > TWO_PI + SLACK).any():
            raise ValueError("rigid aperture outside [0, 2pi]")
        if (fu < -SLACK).any() or (ri + fu > TWO_PI + SLACK).any():
            raise ValueError("fuzzy aperture outside [0, 2pi - ri]")
        object.__setattr__(self, "ax", ax)
        object.__setattr__(self, "ri", ri)
        object.__setattr__(self, "fu", fu)

    @property
    def d(self):
        return self.ax.shape[0]


@dataclass(frozen=True)
class AxisEmbedding:
    ax: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ax", wrap_angle(np.atleast_1d(np.asarray(self.ax, dtype=np.float64))))

    @property
    def d(self):
        return self.ax.shape[0]

    def as_cone(self):
        z = np.zeros_like(self.ax)
        return ConeEmbedding(self.ax, z, z)


@dataclass(frozen=True)
class DnfEmbedding:
    cones: tuple

    def __post_init__(self):
        cones = tuple(self.cones)
        if not cones:
            raise ValueError("a DNF embedding needs at least one conjunct")
        if len({c.d for c in cones}) != 1:
            raise ValueError("conjunct cones differ in dimension")
        object.__setattr__(self, "cones", cones)

    def __len__(self):
        return len(self.cones)

    def __iter__(self):
        return iter(self.cones)


@dataclass(frozen=True)
class Borders:
    L_ri: np.ndarray
    U_ri: np.ndarray
    L_fu: np.ndarray
    U_fu: np.ndarray
    Lm_fu: np.ndarray
    Um_fu: np.ndarray

    def normalized(self):
        return Borders(*(wrap_angle(getattr(self, f)) for f in
                         ("L_ri", "U_ri", "L_fu", "U_fu", "Lm_fu", "Um_fu")))


def borders(c):
    half = c.ri / 2
    outer = (c.ri + c.fu) / 2
    mid = c.ri / 2 + c.fu / 4
    return Borders(c.ax - half, c.ax + half, c.ax - outer, c.ax + outer, c.ax - mid, c.ax + mid)


class Membership(Enum):
    RIGID = "rigid"
    FUZZY = "fuzzy"
    OUTSIDE = "outside"


def _axis(v):
    return v.ax if isinstance(v, (AxisEmbedding, ConeEmbedding)) else np.asarray(v, dtype=np.float64)


def _check_dims(v, c):
    if v.shape != c.ax.shape:
        raise ValueError(f"dimension mismatch: entity {v.shape} vs cone {c.ax.shape}")


def classify(v, c):
    """Per-dimension membership; boundary points resolve inward."""
    v = _axis(v)
    _check_dims(v, c)
    delta = angular_distance(v, c.ax)
    out = []
    for dl, r, f in zip(delta, c.ri, c.fu):
        if dl <= r / 2:
            out.append(Membership.RIGID)
        elif dl <= (r + f) / 2:
            out.append(Membership.FUZZY)
        else:
            out.append(Membership.OUTSIDE)
    return out


def _terms(v, c, mode):
    v = _axis(v)
    _check_dims(v, c)
    return kernels.distance_terms(v, c.ax, c.ri, c.fu, mode_code(mode))


def d_i(v, c, mode="answer"):
    return float(_terms(v, c, mode)[1].sum())


def d_m(v, c, mode="answer"):
    return float(_terms(v, c, mode)[2].sum())


def d_o(v, c):
    return float(_terms(v, c, "answer")[0].sum())


def d_con(v, c, mode="answer", l1=UNIMODAL_WEIGHTS[0], l2=UNIMODAL_WEIGHTS[1]):
    if l1 < 0 or l2 < 0:
        raise ValueError("distance weights must be >= 0")
    o, i, m = _terms(v, c, mode)
    return float(o.sum() + l1 * i.sum() + l2 * m.sum())


def d_dis(v, dnf, mode="answer", l1=UNIMODAL_WEIGHTS[0], l2=UNIMODAL_WEIGHTS[1]):
    cones = dnf.cones if isinstance(dnf, DnfEmbedding) else tuple(dnf)
    if not cones:
        raise ValueError("empty DNF embedding")
    return min(d_con(v, c, mode, l1, l2) for c in cones)


def distance_matrix(entity_axes, dnf, mode="answer", l1=UNIMODAL_WEIGHTS[0], l2=UNIMODAL_WEIGHTS[1]):
    """d_dis of every row of ``entity_axes`` (N, d) against a DNF -> (N,)."""
    cones = dnf.cones if isinstance(dnf, DnfEmbedding) else tuple(dnf)
    ax = np.stack([c.ax for c in cones])
    ri = np.stack([c.ri for c in cones])
    fu = np.stack([c.fu for c in cones])
    mat = kernels.cone_distance_matrix(entity_axes, ax, ri, fu, mode_code(mode), l1, l2)
    return mat.min(axis=0)


@dataclass(frozen=True)
class OverlapRatio:
    rigid: np.ndarray
    full: np.ndarray

    @property
    def rigid_mean(self):
        return float(self.rigid.mean())

    @property
    def full_mean(self):
        return float(self.full.mean())


def _ratio(a_ax, a_w, b_ax, b_w):
    inter = kernels.arc_overlap(a_ax - a_w / 2, a_w, b_ax - b_w / 2, b_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(a_w > 0, inter / np.where(a_w > 0, a_w, 1.0), 0.0)
    # zero-width arc: 1 when the point lies in b's closed arc, else 0
    point_in = angular_distance(a_ax, b_ax) <= b_w / 2
    return np.where(a_w > 0, np.clip(ratio, 0.0, 1.0), point_in.astype(np.float64))


def sector_area_overlap(a, b):
    """Share of each of a's sectors covered by the matching sector of b.

    ``rigid`` compares the rigid arcs, ``full`` the rigid-plus-fuzzy arcs; the
    aggregate is the mean over dimensions.
    """
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    return OverlapRatio(_ratio(a.ax, a.ri, b.ax, b.ri),
                        _ratio(a.ax, a.ri + a.fu, b.ax, b.ri + b.fu))


def contains(a, b, slack=SLACK):
    """True when a's rigid arc lies in b's rigid arc and a's outer arc in b's outer arc."""
    def arc_in(a_ax, a_w, b_ax, b_w):
        return (b_w >= TWO_PI - slack) | (angular_distance(a_ax, b_ax) + a_w / 2 <= b_w / 2 + slack)
    return bool(np.all(arc_in(a.ax, a.ri, b.ax, b.ri)) and
                np.all(arc_in(a.ax, a.ri + a.fu, b.ax, b.ri + b.fu)))
