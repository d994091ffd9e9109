"""Pure-numpy scoring kernels; the reference the compiled versions must match."""
import numpy as np

MODE_ANSWER = 0
MODE_CANDIDATE = 1


def distance_terms(v, ax, ri, fu, mode):
    """Per-dimension (d_o, d_i, d_m) terms, broadcasting v against the cone."""
    dax = np.abs(np.sin((v - ax) / 2.0))
    half_ri = ri / 2.0
    outer = (ri + fu) / 2.0
    s_ri = np.abs(np.sin(ri / 4.0))
    lo_fu = np.abs(np.sin((v - (ax - outer)) / 2.0))
    up_fu = np.abs(np.sin((v - (ax + outer)) / 2.0))
    inside = dax <= np.abs(np.sin(outer / 2.0))
    d_o = np.where(inside, 0.0, np.minimum(lo_fu, up_fu))
    if mode == MODE_ANSWER:
        d_i = np.minimum(dax, s_ri)
        lo = np.abs(np.sin((v - (ax - half_ri)) / 2.0))
        up = np.abs(np.sin((v - (ax + half_ri)) / 2.0))
        d_m = np.minimum(np.minimum(lo, up), np.abs(np.sin(fu / 4.0)))
    else:
        d_i = np.abs(dax - s_ri)
        mid = half_ri + fu / 4.0
        lo = np.abs(np.sin((v - (ax - mid)) / 2.0))
        up = np.abs(np.sin((v - (ax + mid)) / 2.0))
        d_m = np.minimum(np.minimum(lo, up), np.abs(np.sin(fu / 8.0)))
    return d_o, d_i, d_m


def cone_distance_matrix(ent, ax, ri, fu, mode, l1, l2):
    """d_con of every entity axis (N, d) against every cone (Q, d) -> (Q, N)."""
    ent = np.ascontiguousarray(ent, dtype=np.float64)
    ax, ri, fu = (np.ascontiguousarray(a, dtype=np.float64) for a in (ax, ri, fu))
    out = np.empty((ax.shape[0], ent.shape[0]))
    for q in range(ax.shape[0]):
        d_o, d_i, d_m = distance_terms(ent, ax[q], ri[q], fu[q], mode)
        out[q] = d_o.sum(axis=1) + l1 * d_i.sum(axis=1) + l2 * d_m.sum(axis=1)
    return out


def arc_overlap(a_lo, a_len, b_lo, b_len):
    """Length of the intersection of two arcs given as (start, length) on the circle."""
    two_pi = 2.0 * np.pi
    a_lo, a_len, b_lo, b_len = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (a_lo, a_len, b_lo, b_len)))
    s = np.mod(b_lo - a_lo, two_pi)
    first = np.clip(np.minimum(a_len, s + b_len) - s, 0.0, None)
    second = np.clip(np.minimum(a_len, s - two_pi + b_len) - 0.0, 0.0, None)
    return np.minimum(first + second, a_len)
