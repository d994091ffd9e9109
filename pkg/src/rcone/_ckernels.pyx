# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels; same contracts as rcone._kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, fabs, fmin, fmod, M_PI

cnp.import_array()

MODE_ANSWER = 0
MODE_CANDIDATE = 1


def cone_distance_matrix(ent, ax, ri, fu, int mode, double l1, double l2):
    cdef double[:, ::1] E = np.ascontiguousarray(ent, dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(ax, dtype=np.float64)
    cdef double[:, ::1] R = np.ascontiguousarray(ri, dtype=np.float64)
    cdef double[:, ::1] F = np.ascontiguousarray(fu, dtype=np.float64)
    cdef Py_ssize_t nq = A.shape[0], n = E.shape[0], d = E.shape[1]
    if A.shape[1] != d or R.shape[1] != d or F.shape[1] != d:
        raise ValueError("dimension mismatch between entities and cones")
    out_arr = np.empty((nq, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t q, e, k
    cdef double v, a, r, f, dax, outer, half_ri, s_ri, s_outer, s_fu, mid
    cdef double lo, up, so, si, sm, t_o, t_i, t_m
    with nogil:
        for q in range(nq):
            for e in range(n):
                so = 0.0
                si = 0.0
                sm = 0.0
                for k in range(d):
                    v = E[e, k]
                    a = A[q, k]
                    r = R[q, k]
                    f = F[q, k]
                    dax = fabs(sin((v - a) / 2.0))
                    half_ri = r / 2.0
                    outer = (r + f) / 2.0
                    s_ri = fabs(sin(r / 4.0))
                    s_outer = fabs(sin(outer / 2.0))
                    if dax <= s_outer:
                        t_o = 0.0
                    else:
                        lo = fabs(sin((v - (a - outer)) / 2.0))
                        up = fabs(sin((v - (a + outer)) / 2.0))
                        t_o = fmin(lo, up)
                    if mode == 0:
                        t_i = fmin(dax, s_ri)
                        lo = fabs(sin((v - (a - half_ri)) / 2.0))
                        up = fabs(sin((v - (a + half_ri)) / 2.0))
                        s_fu = fabs(sin(f / 4.0))
                    else:
                        t_i = fabs(dax - s_ri)
                        mid = half_ri + f / 4.0
                        lo = fabs(sin((v - (a - mid)) / 2.0))
                        up = fabs(sin((v - (a + mid)) / 2.0))
                        s_fu = fabs(sin(f / 8.0))
                    t_m = fmin(fmin(lo, up), s_fu)
                    so += t_o
                    si += t_i
                    sm += t_m
                out[q, e] = so + l1 * si + l2 * sm
    return out_arr


def arc_overlap(a_lo, a_len, b_lo, b_len):
    arrs = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (a_lo, a_len, b_lo, b_len)))
    shape = arrs[0].shape
    cdef double[::1] alo = np.ascontiguousarray(arrs[0]).reshape(-1)
    cdef double[::1] alen = np.ascontiguousarray(arrs[1]).reshape(-1)
    cdef double[::1] blo = np.ascontiguousarray(arrs[2]).reshape(-1)
    cdef double[::1] blen = np.ascontiguousarray(arrs[3]).reshape(-1)
    out_arr = np.empty(alo.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double two_pi = 2.0 * M_PI
    cdef double s, first, second
    cdef Py_ssize_t i
    with nogil:
        for i in range(alo.shape[0]):
            s = fmod(blo[i] - alo[i], two_pi)
            if s < 0:
                s = s + two_pi
            if s >= two_pi:
                s = 0.0
            first = fmin(alen[i], s + blen[i]) - s
            if first < 0:
                first = 0.0
            second = fmin(alen[i], s - two_pi + blen[i])
            if second < 0:
                second = 0.0
            out[i] = fmin(first + second, alen[i])
    return out_arr.reshape(shape)
