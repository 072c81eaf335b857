# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel for the dip statistic of a sorted sample.

Same greatest-convex-minorant / least-concave-majorant algorithm as the
pure-python fallback in ``_dip_py``; this version exists because bootstrap
calibration evaluates the statistic hundreds of thousands of times.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def dip_sorted(double[::1] x):
    """Dip statistic of an ascending-sorted 1-d sample."""
    cdef Py_ssize_t n = x.shape[0]
    if n < 1:
        raise ValueError("empty sample")
    if n < 4 or x[0] == x[n - 1]:
        return 0.0

    cdef cnp.ndarray[cnp.int64_t, ndim=1] mn_a = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] mj_a = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gcm_a = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lcm_a = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] mn = mn_a
    cdef cnp.int64_t[::1] mj = mj_a
    cdef cnp.int64_t[::1] gcm = gcm_a
    cdef cnp.int64_t[::1] lcm = lcm_a

    cdef Py_ssize_t low = 0, high = n - 1
    cdef double dip = 0.0
    cdef Py_ssize_t j, k, mnj, mnmnj, mjk, mjmjk
    cdef Py_ssize_t i, ig, ih, ix, iv, l_gcm, l_lcm
    cdef Py_ssize_t gcmix, gcmil, lcmiv, lcmivl
    cdef Py_ssize_t jb, je, jj, j_l, j_u
    cdef double d, dx, C, t, max_t, dip_l, dip_u, dip_new

    # Convex minorant pointers: mn[j] is the previous touch index of the
    # greatest convex minorant fit through points (i, x[i]).
    mn[0] = 0
    for j in range(1, n):
        mn[j] = j - 1
        while True:
            mnj = mn[j]
            mnmnj = mn[mnj]
            if mnj == 0 or (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj):
                break
            mn[j] = mnmnj

    # Concave majorant pointers, symmetric from the right.
    mj[n - 1] = n - 1
    for k in range(n - 2, -1, -1):
        mj[k] = k + 1
        while True:
            mjk = mj[k]
            mjmjk = mj[mjk]
            if mjk == n - 1 or (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk):
                break
            mj[k] = mjmjk

    while True:
        # Walk the minorant fit down from high and the majorant fit up
        # from low, restricted to the current [low, high] interval.
        gcm[0] = high
        i = 0
        while gcm[i] > low:
            gcm[i + 1] = mn[gcm[i]]
            i += 1
        ig = i
        l_gcm = i
        ix = ig - 1

        lcm[0] = low
        i = 0
        while lcm[i] < high:
            lcm[i + 1] = mj[lcm[i]]
            i += 1
        ih = i
        l_lcm = i
        iv = 1

        d = 0.0
        if l_gcm != 1 or l_lcm != 1:
            while True:
                gcmix = gcm[ix]
                lcmiv = lcm[iv]
                if gcmix > lcmiv:
                    gcmil = gcm[ix + 1]
                    dx = (lcmiv - gcmil + 1) - (x[lcmiv] - x[gcmil]) * (gcmix - gcmil) / (x[gcmix] - x[gcmil])
                    iv += 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv - 1
                else:
                    lcmivl = lcm[iv - 1]
                    dx = (x[gcmix] - x[lcmivl]) * (lcmiv - lcmivl) / (x[lcmiv] - x[lcmivl]) - (gcmix - lcmivl - 1)
                    ix -= 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv
                if ix < 0:
                    ix = 0
                if iv > l_lcm:
                    iv = l_lcm
                if gcm[ix] == lcm[iv]:
                    break

        if d < dip:
            break

        # Largest deviation inside the minorant segments.
        dip_l = 0.0
        for j in range(ig, l_gcm):
            max_t = 1.0
            jb = gcm[j + 1]
            je = gcm[j]
            if je - jb > 1 and x[je] != x[jb]:
                C = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = (jj - jb + 1) - (x[jj] - x[jb]) * C
                    if max_t < t:
                        max_t = t
            if dip_l < max_t:
                dip_l = max_t

        # Largest deviation inside the majorant segments.
        dip_u = 0.0
        for j in range(ih, l_lcm):
            max_t = 1.0
            jb = lcm[j]
            je = lcm[j + 1]
            if je - jb > 1 and x[je] != x[jb]:
                C = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = (x[jj] - x[jb]) * C - (jj - jb - 1)
                    if max_t < t:
                        max_t = t
            if dip_u < max_t:
                dip_u = max_t

        dip_new = dip_u if dip_u > dip_l else dip_l
        if dip < dip_new:
            dip = dip_new

        if low == gcm[ig] and high == lcm[ih]:
            break
        low = gcm[ig]
        high = lcm[ih]

    return dip / (2.0 * n)
