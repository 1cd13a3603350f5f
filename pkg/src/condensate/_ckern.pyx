# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Mirrors ``condensate._pykern`` bit for bit: float32 left folds in ascending
index order seeded with the first term, no FMA contraction (enforced by
compile flags), transcendentals through libm in float64. Any divergence
from the fallback backend is a bug; the parity test suite compares every
kernel on both backends.
"""

import numpy as np

from libc.math cimport cos, exp, pow, sin, sqrt, tanh

NAME = "c"


cdef inline float _fold32_f32(const float[::1] x) nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef float acc = x[0]
    for i in range(1, n):
        acc = acc + x[i]
    return acc


def matvec(const float[:, ::1] m, const float[::1] x):
    cdef Py_ssize_t r, c, rows = m.shape[0], cols = m.shape[1]
    out_arr = np.empty(rows, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float acc, p
    with nogil:
        for r in range(rows):
            acc = m[r, 0] * x[0]
            for c in range(1, cols):
                p = m[r, c] * x[c]
                acc = acc + p
            out[r] = acc
    return out_arr


def dot(const float[::1] a, const float[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef float acc = a[0] * b[0]
    cdef float p
    for i in range(1, n):
        p = a[i] * b[i]
        acc = acc + p
    return float(acc)


cdef inline void _softmax_into(
    const float[::1] scores, float[::1] out
) nogil:
    cdef Py_ssize_t j, n = scores.shape[0]
    cdef float m = scores[0]
    cdef float e, d
    cdef double t
    for j in range(1, n):
        if scores[j] > m:
            m = scores[j]
    d = 0.0
    for j in range(n):
        t = (<double> scores[j]) - (<double> m)
        e = <float> exp(t)
        out[j] = e
        if j == 0:
            d = e
        else:
            d = d + e
    for j in range(n):
        out[j] = out[j] / d


def softmax(const float[::1] scores):
    out_arr = np.empty(scores.shape[0], dtype=np.float32)
    cdef float[::1] out = out_arr
    with nogil:
        _softmax_into(scores, out)
    return out_arr


cdef inline void _attend_into(
    const float[::1] q,
    const float[:, ::1] keys,
    const float[:, ::1] values,
    float inv_scale,
    float[::1] out,
    float[::1] scores,
    float[::1] wbuf,
) nogil:
    cdef Py_ssize_t j, r, n = keys.shape[0], d = keys.shape[1]
    cdef float acc, p, w
    for j in range(n):
        acc = keys[j, 0] * q[0]
        for r in range(1, d):
            p = keys[j, r] * q[r]
            acc = acc + p
        scores[j] = acc * inv_scale
    _softmax_into(scores, wbuf)
    for r in range(out.shape[0]):
        out[r] = wbuf[0] * values[0, r]
    for j in range(1, n):
        w = wbuf[j]
        for r in range(out.shape[0]):
            p = w * values[j, r]
            out[r] = out[r] + p


def attend_row(
    const float[::1] q,
    const float[:, ::1] keys,
    const float[:, ::1] values,
    float inv_scale,
):
    cdef Py_ssize_t n = keys.shape[0], dv = values.shape[1]
    out_arr = np.empty(dv, dtype=np.float32)
    scores_arr = np.empty(n, dtype=np.float32)
    wbuf_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float[::1] scores = scores_arr
    cdef float[::1] wbuf = wbuf_arr
    with nogil:
        _attend_into(q, keys, values, inv_scale, out, scores, wbuf)
    return out_arr, scores_arr


def attend_gather(
    const float[::1] q,
    const float[:, ::1] keys,
    const float[:, ::1] values,
    const long long[::1] idx,
    float inv_scale,
):
    cdef Py_ssize_t s, n_sel = idx.shape[0], d = keys.shape[1]
    cdef Py_ssize_t dv = values.shape[1]
    gk_arr = np.empty((n_sel, d), dtype=np.float32)
    gv_arr = np.empty((n_sel, dv), dtype=np.float32)
    cdef float[:, ::1] gk = gk_arr
    cdef float[:, ::1] gv = gv_arr
    cdef Py_ssize_t r
    with nogil:
        for s in range(n_sel):
            for r in range(d):
                gk[s, r] = keys[idx[s], r]
            for r in range(dv):
                gv[s, r] = values[idx[s], r]
    return attend_row(q, gk_arr, gv_arr, inv_scale)


def causal_attend(
    const float[:, ::1] q_all,
    const float[:, ::1] keys,
    const float[:, ::1] values,
    float inv_scale,
):
    cdef Py_ssize_t i, n = q_all.shape[0], dv = values.shape[1]
    out_arr = np.empty((n, dv), dtype=np.float32)
    scores_arr = np.empty(n, dtype=np.float32)
    wbuf_arr = np.empty(n, dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[::1] scores = scores_arr
    cdef float[::1] wbuf = wbuf_arr
    with nogil:
        for i in range(n):
            _attend_into(
                q_all[i], keys[: i + 1], values[: i + 1], inv_scale,
                out[i], scores[: i + 1], wbuf[: i + 1],
            )
    return out_arr


def rope(const float[::1] x, double pos, double theta):
    cdef Py_ssize_t i, d = x.shape[0]
    out_arr = np.empty(d, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef double freq, angle
    cdef float c, s, x0, x1, a, b
    with nogil:
        for i in range(d // 2):
            freq = pow(theta, -(2.0 * i) / d)
            angle = pos * freq
            c = <float> cos(angle)
            s = <float> sin(angle)
            x0 = x[2 * i]
            x1 = x[2 * i + 1]
            a = x0 * c
            b = x1 * s
            out[2 * i] = a - b
            a = x0 * s
            b = x1 * c
            out[2 * i + 1] = a + b
    return out_arr


def rms_norm(const float[::1] x, const float[::1] gain, float eps):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float ss, p, ms, inv
    with nogil:
        ss = x[0] * x[0]
        for i in range(1, n):
            p = x[i] * x[i]
            ss = ss + p
        ms = ss / (<float> n)
        inv = <float> (1.0 / sqrt((<double> ms) + (<double> eps)))
        for i in range(n):
            out[i] = (x[i] * inv) * gain[i]
    return out_arr


def layer_norm(
    const float[::1] x, const float[::1] gain, const float[::1] bias, float eps
):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef float acc, mean, dev, var, inv, p
    with nogil:
        acc = x[0]
        for i in range(1, n):
            acc = acc + x[i]
        mean = acc / (<float> n)
        dev = x[0] - mean
        acc = dev * dev
        for i in range(1, n):
            dev = x[i] - mean
            p = dev * dev
            acc = acc + p
        var = acc / (<float> n)
        inv = <float> (1.0 / sqrt((<double> var) + (<double> eps)))
        for i in range(n):
            dev = x[i] - mean
            out[i] = ((dev * inv) * gain[i]) + bias[i]
    return out_arr


cdef double _GELU_K = 0.7978845608028654


def gelu(const float[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef double u, inner
    with nogil:
        for i in range(n):
            u = <double> x[i]
            inner = _GELU_K * (u + 0.044715 * (u * u * u))
            out[i] = <float> (0.5 * u * (1.0 + tanh(inner)))
    return out_arr


def l2_norm(const float[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double acc = (<double> x[0]) * (<double> x[0])
    cdef double p
    for i in range(1, n):
        p = (<double> x[i]) * (<double> x[i])
        acc = acc + p
    return float(<float> sqrt(acc))


def row_norms(const float[:, ::1] keys):
    cdef Py_ssize_t j, r, n = keys.shape[0], d = keys.shape[1]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef double acc, p
    with nogil:
        for j in range(n):
            acc = (<double> keys[j, 0]) * (<double> keys[j, 0])
            for r in range(1, d):
                p = (<double> keys[j, r]) * (<double> keys[j, r])
                acc = acc + p
            out[j] = <float> sqrt(acc)
    return out_arr


def argmax(const float[::1] x):
    cdef Py_ssize_t i, n = x.shape[0], best = 0
    cdef float m = x[0]
    for i in range(1, n):
        if x[i] > m:
            m = x[i]
            best = i
    return int(best)


def topk(
    const float[::1] vals,
    Py_ssize_t k,
    Py_ssize_t ex_lo,
    Py_ssize_t ex_hi,
    bint exclude_anchor,
):
    cdef Py_ssize_t n = vals.shape[0]
    if k <= 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    best_v_arr = np.empty(k, dtype=np.float32)
    best_i_arr = np.empty(k, dtype=np.int64)
    cdef float[::1] best_v = best_v_arr
    cdef long long[::1] best_i = best_i_arr
    cdef Py_ssize_t count = 0, j, slot, ins
    cdef float v
    with nogil:
        for j in range(n):
            if ex_hi > ex_lo and j >= ex_lo and j < ex_hi:
                continue
            if exclude_anchor and j == 0:
                continue
            v = vals[j]
            if count < k:
                # insertion sort descending by value; stable, so earlier
                # (lower) positions stay ahead of equal later ones
                ins = count
                while ins > 0 and best_v[ins - 1] < v:
                    best_v[ins] = best_v[ins - 1]
                    best_i[ins] = best_i[ins - 1]
                    ins = ins - 1
                best_v[ins] = v
                best_i[ins] = j
                count = count + 1
            elif v > best_v[count - 1]:
                ins = count - 1
                while ins > 0 and best_v[ins - 1] < v:
                    best_v[ins] = best_v[ins - 1]
                    best_i[ins] = best_i[ins - 1]
                    ins = ins - 1
                best_v[ins] = v
                best_i[ins] = j
    chosen = best_i_arr[:count].copy()
    chosen.sort()
    return chosen


def ulp_check(
    const float[::1] scores,
    const long long[::1] idx,
    const float[:, ::1] values,
):
    cdef Py_ssize_t j, r, s, n = scores.shape[0], n_sel = idx.shape[0]
    cdef Py_ssize_t d = values.shape[1]
    if n_sel == 0:
        return False, 1.0, 0.0
    sel_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] sel = sel_arr
    for s in range(n_sel):
        sel[idx[s]] = 1

    cdef float m_all = scores[0]
    for j in range(1, n):
        if scores[j] > m_all:
            m_all = scores[j]
    cdef float m_sel = scores[idx[0]]
    for s in range(1, n_sel):
        if scores[idx[s]] > m_sel:
            m_sel = scores[idx[s]]

    e32_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] e32 = e32_arr
    cdef double e64, total64 = 0.0, sel64 = 0.0, max_excl = 0.0
    cdef double t
    for j in range(n):
        t = (<double> scores[j]) - (<double> m_all)
        e64 = exp(t)
        e32[j] = <float> e64
        total64 = total64 + e64
        if sel[j]:
            sel64 = sel64 + e64
        elif e64 > max_excl:
            max_excl = e64
    cdef double cond_mass = sel64 / total64
    cdef double max_excl_w = max_excl / total64

    if m_sel != m_all:
        return False, max_excl_w, cond_mass

    cdef float d_dense = e32[0]
    for j in range(1, n):
        d_dense = d_dense + e32[j]
    cdef float d_sparse = e32[idx[0]]
    for s in range(1, n_sel):
        d_sparse = d_sparse + e32[idx[s]]
    if d_dense != d_sparse:
        return False, max_excl_w, cond_mass

    w_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] w = w_arr
    for j in range(n):
        w[j] = e32[j] / d_dense

    acc_d_arr = np.empty(d, dtype=np.float32)
    acc_s_arr = np.empty(d, dtype=np.float32)
    cdef float[::1] acc_d = acc_d_arr
    cdef float[::1] acc_s = acc_s_arr
    cdef float p
    for r in range(d):
        acc_d[r] = w[0] * values[0, r]
    for j in range(1, n):
        for r in range(d):
            p = w[j] * values[j, r]
            acc_d[r] = acc_d[r] + p
    for r in range(d):
        acc_s[r] = w[idx[0]] * values[idx[0], r]
    for s in range(1, n_sel):
        j = idx[s]
        for r in range(d):
            p = w[j] * values[j, r]
            acc_s[r] = acc_s[r] + p
    cdef bint exact = True
    for r in range(d):
        if acc_d[r] != acc_s[r]:
            exact = False
            break
    return bool(exact), max_excl_w, cond_mass
