import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcone.geometry import (MULTIMODAL_WEIGHTS, UNIMODAL_WEIGHTS, AxisEmbedding, ConeEmbedding,
                            DnfEmbedding, Membership, borders, classify, contains, d_con, d_dis,
                            d_i, d_m, d_o, distance_matrix, sector_area_overlap, wrap_angle)

PI = math.pi
angle = st.floats(-PI, PI - 1e-9, allow_nan=False)
unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def cones(draw, d=3):
    ax = [draw(angle) for _ in range(d)]
    ri = [draw(unit) * 2 * PI for _ in range(d)]
    fu = [draw(unit) * (2 * PI - r) for r in ri]
    return ConeEmbedding(ax, ri, fu)


@st.composite
def axes(draw, d=3):
    return AxisEmbedding([draw(angle) for _ in range(d)])


# -- independent scalar transcription of the distance formulas -----------------

def _s(x):
    return abs(math.sin(x))


def oracle(v, c, mode):
    do = di = dm = 0.0
    for x, a, r, f in zip(v.ax, c.ax, c.ri, c.fu):
        lo_ri, up_ri = a - r / 2, a + r / 2
        lo_fu, up_fu = a - (r + f) / 2, a + (r + f) / 2
        lm, um = a - (r / 2 + f / 4), a + (r / 2 + f / 4)
        arc = abs((x - a + PI) % (2 * PI) - PI)
        if arc > (r + f) / 2:
            do += min(_s((x - lo_fu) / 2), _s((x - up_fu) / 2))
        if mode == "answer":
            di += min(_s((x - a) / 2), _s(r / 4))
            dm += min(_s((x - lo_ri) / 2), _s((x - up_ri) / 2), _s(f / 4))
        else:
            di += abs(_s((x - a) / 2) - _s(r / 4))
            dm += min(_s((x - lm) / 2), _s((x - um) / 2), _s(f / 8))
    return do, di, dm


def test_borders_table():
    b = borders(ConeEmbedding([0.0], [PI], [PI / 2]))
    expect = (-PI / 2, PI / 2, -3 * PI / 4, 3 * PI / 4, -5 * PI / 8, 5 * PI / 8)
    got = (b.L_ri, b.U_ri, b.L_fu, b.U_fu, b.Lm_fu, b.Um_fu)
    assert np.allclose(np.ravel(got), expect, atol=1e-15)


def test_borders_degenerate():
    b = borders(ConeEmbedding([1.2], [0.0], [0.0]))
    for f in ("L_ri", "U_ri", "L_fu", "U_fu", "Lm_fu", "Um_fu"):
        assert getattr(b, f)[0] == pytest.approx(1.2, abs=1e-15)


@given(cones(d=5))
def test_border_width_identity(c):
    b = borders(c)
    assert np.allclose(b.U_fu - b.L_fu, c.ri + c.fu, atol=1e-12)
    assert (b.L_ri <= b.U_ri).all()
    n = b.normalized()
    assert ((n.L_fu >= -PI) & (n.L_fu < PI)).all()


def test_cone_invariants():
    with pytest.raises(ValueError):
        ConeEmbedding([0.0], [PI], [1.5 * PI])
    with pytest.raises(ValueError):
        ConeEmbedding([0.0], [-0.1], [0.0])
    c = ConeEmbedding([3 * PI / 2], [0.0], [0.0])
    assert c.ax[0] == pytest.approx(-PI / 2)
    assert wrap_angle(PI) == pytest.approx(-PI)
    with pytest.raises(ValueError):
        DnfEmbedding(())


def test_classify_center_and_full_circle():
    c = ConeEmbedding([0.3, -2.0], [0.5, 1.0], [0.2, 0.1])
    assert classify(AxisEmbedding(c.ax), c) == [Membership.RIGID] * 2
    full = ConeEmbedding([0.0, 1.0], [2 * PI, 2 * PI], [0.0, 0.0])
    assert classify(AxisEmbedding([PI - 1e-3, -2.5]), full) == [Membership.RIGID] * 2


def in_wrapped(x, lo, hi):
    """Interval-arithmetic oracle: x lies in [lo, hi] shifted by some multiple of 2pi."""
    return any(lo + 2 * PI * k <= x <= hi + 2 * PI * k for k in (-2, -1, 0, 1, 2))


def test_classify_just_inside_fuzzy_border():
    c = ConeEmbedding([0.4], [1.0], [0.8])
    v = AxisEmbedding(c.ax + (c.ri + c.fu) / 2 - 1e-6)
    assert classify(v, c) == [Membership.FUZZY]
    assert in_wrapped(v.ax[0], c.ax[0] - 0.9, c.ax[0] + 0.9)
    assert not in_wrapped(v.ax[0], c.ax[0] - 0.5, c.ax[0] + 0.5)


@settings(max_examples=300)
@given(axes(d=4), cones(d=4))
def test_classify_matches_interval_oracle(v, c):
    for x, a, r, f, m in zip(v.ax, c.ax, c.ri, c.fu, classify(v, c)):
        if in_wrapped(x, a - r / 2, a + r / 2):
            want = Membership.RIGID
        elif in_wrapped(x, a - (r + f) / 2, a + (r + f) / 2):
            want = Membership.FUZZY
        else:
            want = Membership.OUTSIDE
        assert m is want


def test_classify_dimension_mismatch():
    with pytest.raises(ValueError):
        classify(AxisEmbedding([0.0]), ConeEmbedding([0.0, 0.0], [1, 1], [0, 0]))


def test_d_i_center_answer_zero():
    c = ConeEmbedding([0.5, -1.0], [1.0, 2.0], [0.3, 0.3])
    assert d_i(AxisEmbedding(c.ax), c, "answer") == pytest.approx(0.0, abs=1e-15)


def test_d_i_candidate_zero_at_rigid_border():
    c = ConeEmbedding([0.5, -1.0], [1.0, 2.0], [0.3, 0.3])
    assert d_i(AxisEmbedding(c.ax + c.ri / 2), c, "candidate") == pytest.approx(0.0, abs=1e-12)
    assert d_i(AxisEmbedding(c.ax - c.ri / 2), c, "candidate") == pytest.approx(0.0, abs=1e-12)


def test_d_o_zero_on_outer_border():
    c = ConeEmbedding([0.5], [1.0], [0.6])
    assert d_o(AxisEmbedding(borders(c).L_fu), c) == pytest.approx(0.0, abs=1e-15)


def test_d_m_candidate_zero_at_fuzzy_center():
    c = ConeEmbedding([0.5], [1.0], [0.6])
    assert d_m(AxisEmbedding(borders(c).Lm_fu), c, "candidate") == pytest.approx(0.0, abs=1e-15)


@given(axes(d=3), cones(d=3))
def test_d_m_answer_without_fuzz(v, c):
    c0 = ConeEmbedding(c.ax, c.ri, np.zeros(3))
    want = sum(min(_s((x - (a - r / 2)) / 2), _s((x - (a + r / 2)) / 2), 0.0)
               for x, a, r in zip(v.ax, c0.ax, c0.ri))
    assert d_m(v, c0, "answer") == pytest.approx(want, abs=1e-12)
    assert want == 0.0  # sin(0/4) wins the min


@settings(max_examples=300)
@given(axes(d=6), cones(d=6), st.sampled_from(["answer", "candidate"]))
def test_distances_match_transcription(v, c, mode):
    do, di, dm = oracle(v, c, mode)
    assert d_o(v, c) == pytest.approx(do, abs=1e-12)
    assert d_i(v, c, mode) == pytest.approx(di, abs=1e-12)
    assert d_m(v, c, mode) == pytest.approx(dm, abs=1e-12)
    for part in (d_o(v, c), d_i(v, c, mode), d_m(v, c, mode)):
        assert 0.0 <= part <= c.d


@given(axes(d=3), cones(d=3), st.floats(0, 2), st.floats(0, 2))
def test_d_con_composition(v, c, l1, l2):
    do, di, dm = oracle(v, c, "answer")
    assert d_con(v, c, "answer", l1, l2) == pytest.approx(do + l1 * di + l2 * dm, abs=1e-12)


def test_weight_constants():
    assert UNIMODAL_WEIGHTS == (0.02, 1.0)
    assert MULTIMODAL_WEIGHTS == (0.9, 0.02)
    with pytest.raises(ValueError):
        d_con(AxisEmbedding([0.0]), ConeEmbedding([0.0], [1.0], [0.0]), "answer", -1.0, 1.0)


@given(axes(d=3), cones(d=3), cones(d=3))
def test_d_dis(v, a, b):
    assert d_dis(v, DnfEmbedding((a,))) == d_con(v, a)
    assert d_dis(v, DnfEmbedding((a, b))) <= d_dis(v, DnfEmbedding((a,)))
    with pytest.raises(ValueError):
        d_dis(v, [])


@given(axes(d=3), cones(d=3), st.integers(-3, 3), st.sampled_from(["answer", "candidate"]))
def test_shift_by_two_pi_changes_nothing(v, c, k, mode):
    shifted = np.asarray(v.ax) + 2 * PI * k
    assert d_con(shifted, c, mode) == pytest.approx(d_con(v, c, mode), abs=1e-12)


def test_distance_matrix_matches_scalar(rng):
    cones_ = [ConeEmbedding(rng.uniform(-PI, PI, 4), r := rng.uniform(0, 2 * PI, 4),
                            rng.uniform(0, 1, 4) * (2 * PI - r)) for _ in range(3)]
    ent = rng.uniform(-PI, PI, (20, 4))
    mat = distance_matrix(ent, DnfEmbedding(tuple(cones_)), "candidate", 0.9, 0.02)
    for i in range(20):
        assert mat[i] == pytest.approx(d_dis(ent[i], cones_, "candidate", 0.9, 0.02), abs=1e-12)


# -- sector overlap ----------------------------------------------------------------

def raster_ratio(a_ax, a_w, b_ax, b_w, n=1_000_000):
    """Share of a's arc covered by b's, by sampling the circle at n points."""
    theta = -PI + (np.arange(n) + 0.5) * (2 * PI / n)

    def arc(ax, w):
        return np.abs((theta - ax + PI) % (2 * PI) - PI) <= w / 2
    in_a = arc(a_ax, a_w)
    return (in_a & arc(b_ax, b_w)).sum() / in_a.sum()


def test_overlap_contained_and_disjoint():
    a = ConeEmbedding([0.0], [0.5], [0.5])
    b = ConeEmbedding([0.1], [1.0], [1.0])
    ov = sector_area_overlap(a, b)
    assert ov.rigid_mean == pytest.approx(1.0) and ov.full_mean == pytest.approx(1.0)
    far = ConeEmbedding([PI - 0.1], [0.5], [0.2])
    ov = sector_area_overlap(a, far)
    assert ov.rigid_mean == 0.0 and ov.full_mean == 0.0


def test_overlap_zero_aperture_convention():
    p = ConeEmbedding([0.2], [0.0], [0.0])
    assert sector_area_overlap(p, ConeEmbedding([0.2], [0.0], [0.0])).rigid_mean == 1.0
    assert sector_area_overlap(p, ConeEmbedding([0.3], [0.0], [0.0])).rigid_mean == 0.0


@pytest.mark.parametrize("a_ax,a_w,b_ax,b_w", [
    (PI - 0.2, 1.0, -PI + 0.3, 1.2),
    (-PI + 0.1, 2.0, PI - 0.4, 0.9),
    (3.0, 4.0, -2.0, 3.0),
    (0.0, 6.0, PI, 5.5),
    (2.5, 1.5, -3.0, 0.4),
])
def test_overlap_wrapping_matches_raster(a_ax, a_w, b_ax, b_w):
    got = sector_area_overlap(ConeEmbedding([a_ax], [a_w], [0.0]),
                              ConeEmbedding([b_ax], [b_w], [0.0])).rigid_mean
    assert got == pytest.approx(raster_ratio(a_ax, a_w, b_ax, b_w), abs=2e-5)


def test_overlap_dimension_mismatch():
    with pytest.raises(ValueError):
        sector_area_overlap(ConeEmbedding([0.0], [1.0], [0.0]),
                            ConeEmbedding([0.0, 0.0], [1.0, 1.0], [0.0, 0.0]))


def test_contains():
    b = ConeEmbedding([0.0], [1.0], [1.0])
    assert contains(ConeEmbedding([0.1], [0.5], [0.4]), b)
    assert not contains(ConeEmbedding([0.4], [0.5], [0.4]), b)
