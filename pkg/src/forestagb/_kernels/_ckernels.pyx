# cython: language_level=3
"""Compiled kernels. Same signatures and arithmetic order as _pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint8_t
from libc.stdlib cimport malloc, free

cnp.import_array()

NAME = "cython"
cdef double TAU = 1e-12


# ---------------------------------------------------------------------------
# xoshiro256**

cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


cdef inline Py_ssize_t _bounded(uint64_t* s, Py_ssize_t n) noexcept nogil:
    cdef double u = (<double>(_next(s) >> 11)) * (1.0 / 9007199254740992.0)
    cdef Py_ssize_t k = <Py_ssize_t>(u * n)
    if k < n:
        return k
    return n - 1


# ---------------------------------------------------------------------------
# polygon / cell clipping

cdef Py_ssize_t _clip(double* iu, double* iv, Py_ssize_t n, double* ou, double* ov,
                      int axis, double bound, bint keep_greater) noexcept nogil:
    cdef Py_ssize_t k, m = 0
    cdef double pu, pv, qu, qv, pa, qa, t
    cdef bint pin, qin
    if n == 0:
        return 0
    for k in range(n):
        if k == 0:
            pu = iu[n - 1]
            pv = iv[n - 1]
        else:
            pu = iu[k - 1]
            pv = iv[k - 1]
        qu = iu[k]
        qv = iv[k]
        if axis == 0:
            pa = pu
            qa = qu
        else:
            pa = pv
            qa = qv
        if keep_greater:
            pin = pa >= bound
            qin = qa >= bound
        else:
            pin = pa <= bound
            qin = qa <= bound
        if qin:
            if not pin:
                t = (bound - pa) / (qa - pa)
                if axis == 0:
                    ou[m] = bound
                    ov[m] = pv + t * (qv - pv)
                else:
                    ou[m] = pu + t * (qu - pu)
                    ov[m] = bound
                m += 1
            ou[m] = qu
            ov[m] = qv
            m += 1
        elif pin:
            t = (bound - pa) / (qa - pa)
            if axis == 0:
                ou[m] = bound
                ov[m] = pv + t * (qv - pv)
            else:
                ou[m] = pu + t * (qu - pu)
                ov[m] = bound
            m += 1
    return m


def clip_ring_cells(u, v, Py_ssize_t r0, Py_ssize_t r1, Py_ssize_t c0, Py_ssize_t c1):
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = uu.shape[0]
    out_arr = np.zeros((r1 - r0, c1 - c0), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t cap = 2 * n + 8
    cdef double* au = <double*>malloc(cap * sizeof(double))
    cdef double* av = <double*>malloc(cap * sizeof(double))
    cdef double* bu = <double*>malloc(cap * sizeof(double))
    cdef double* bv = <double*>malloc(cap * sizeof(double))
    cdef double* ru = <double*>malloc(n * sizeof(double))
    cdef double* rv = <double*>malloc(n * sizeof(double))
    cdef Py_ssize_t r, c, k, m
    cdef double a, x0, y0, x1, y1, oc, orr
    try:
        with nogil:
            for k in range(n):
                ru[k] = uu[k]
                rv[k] = vv[k]
            for r in range(r0, r1):
                for c in range(c0, c1):
                    m = _clip(ru, rv, n, au, av, 0, <double>c, True)
                    m = _clip(au, av, m, bu, bv, 0, <double>(c + 1), False)
                    m = _clip(bu, bv, m, au, av, 1, <double>r, True)
                    m = _clip(au, av, m, bu, bv, 1, <double>(r + 1), False)
                    if m >= 3:
                        a = 0.0
                        oc = <double>c
                        orr = <double>r
                        for k in range(m):
                            if k == 0:
                                x0 = bu[m - 1] - oc
                                y0 = bv[m - 1] - orr
                            else:
                                x0 = bu[k - 1] - oc
                                y0 = bv[k - 1] - orr
                            x1 = bu[k] - oc
                            y1 = bv[k] - orr
                            a += x0 * y1 - x1 * y0
                        out[r - r0, c - c0] = fabs(0.5 * a)
    finally:
        free(au); free(av); free(bu); free(bv); free(ru); free(rv)
    return out_arr


# ---------------------------------------------------------------------------
# regression trees (random forest)

def grow_cart_tree(X, y, rows, order, Py_ssize_t mtry, Py_ssize_t min_node_size, rng_state):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef int64_t[::1] rv = np.ascontiguousarray(rows, dtype=np.int64)
    work_arr = np.array(order, dtype=np.int64, copy=True, order="C")
    cdef int64_t[:, ::1] work = work_arr
    cdef uint64_t[::1] st = rng_state
    cdef Py_ssize_t m = rv.shape[0]
    cdef Py_ssize_t p = Xv.shape[1]
    cdef Py_ssize_t max_nodes = 2 * m + 1
    feature_arr = np.full(max_nodes, -1, dtype=np.int64)
    thr_arr = np.zeros(max_nodes, dtype=np.float64)
    left_arr = np.full(max_nodes, -1, dtype=np.int64)
    right_arr = np.full(max_nodes, -1, dtype=np.int64)
    value_arr = np.zeros(max_nodes, dtype=np.float64)
    cdef int64_t[::1] feature = feature_arr
    cdef double[::1] threshold = thr_arr
    cdef int64_t[::1] left = left_arr
    cdef int64_t[::1] right = right_arr
    cdef double[::1] value = value_arr
    xs_arr = np.ascontiguousarray(np.asarray(X, dtype=np.float64)[np.asarray(rows)])
    cdef double[:, ::1] xs = xs_arr
    ys_arr = np.ascontiguousarray(np.asarray(y, dtype=np.float64)[np.asarray(rows)])
    cdef double[::1] ys = ys_arr
    cdef int64_t* stack = <int64_t*>malloc(3 * (max_nodes + 1) * sizeof(int64_t))
    cdef int64_t* perm = <int64_t*>malloc((p + 1) * sizeof(int64_t))
    cdef int64_t* cand = <int64_t*>malloc((p + 1) * sizeof(int64_t))
    cdef int64_t* tmp = <int64_t*>malloc((m + 1) * sizeof(int64_t))
    cdef uint8_t* gl = <uint8_t*>malloc((m + 1) * sizeof(uint8_t))
    cdef uint64_t s[4]
    cdef Py_ssize_t sp = 0, n_nodes = 1
    cdef Py_ssize_t node, start, end, n, i, j, k, f, ci, best_f, nleft, a_, b_, lid, rid, pos
    cdef int64_t tswap
    cdef double ymin, ymax, psum, best, best_t, sl, total, sr, score, nl, nr, a, b, t, yy
    for i in range(4):
        s[i] = st[i]
    try:
        with nogil:
            stack[0] = 0
            stack[1] = 0
            stack[2] = m
            sp = 1
            while sp > 0:
                sp -= 1
                node = stack[3 * sp]
                start = stack[3 * sp + 1]
                end = stack[3 * sp + 2]
                n = end - start
                ymin = ys[work[0, start]]
                ymax = ymin
                for k in range(start, end):
                    yy = ys[work[0, k]]
                    if yy < ymin:
                        ymin = yy
                    if yy > ymax:
                        ymax = yy
                if n <= min_node_size or ymin == ymax:
                    if ymin == ymax:
                        value[node] = ys[work[0, start]]
                    else:
                        psum = 0.0
                        for k in range(start, end):
                            psum += ys[work[0, k]]
                        value[node] = psum / n
                    continue
                for i in range(p):
                    perm[i] = i
                for i in range(mtry):
                    j = i + _bounded(s, p - i)
                    tswap = perm[i]
                    perm[i] = perm[j]
                    perm[j] = tswap
                # insertion sort of the first mtry draws
                for i in range(mtry):
                    cand[i] = perm[i]
                for i in range(1, mtry):
                    tswap = cand[i]
                    j = i - 1
                    while j >= 0 and cand[j] > tswap:
                        cand[j + 1] = cand[j]
                        j -= 1
                    cand[j + 1] = tswap
                psum = 0.0
                for k in range(start, end):
                    psum += ys[work[0, k]]
                best = psum * psum / n
                best_f = -1
                best_t = 0.0
                for ci in range(mtry):
                    f = cand[ci]
                    total = 0.0
                    for k in range(start, end):
                        total += ys[work[f, k]]
                    sl = 0.0
                    for k in range(start, end - 1):
                        sl += ys[work[f, k]]
                        a = xs[work[f, k], f]
                        b = xs[work[f, k + 1], f]
                        if not (a < b):
                            continue
                        nl = <double>(k - start + 1)
                        nr = <double>(n - (k - start + 1))
                        sr = total - sl
                        score = sl * sl / nl + sr * sr / nr
                        if score > best:
                            best = score
                            best_f = f
                            t = 0.5 * (a + b)
                            if t < b:
                                best_t = t
                            else:
                                best_t = a
                if best_f < 0:
                    value[node] = psum / n
                    continue
                for k in range(start, end):
                    pos = work[0, k]
                    gl[pos] = xs[pos, best_f] <= best_t
                nleft = 0
                for f in range(p):
                    a_ = start
                    b_ = 0
                    for k in range(start, end):
                        pos = work[f, k]
                        if gl[pos]:
                            work[f, a_] = pos
                            a_ += 1
                        else:
                            tmp[b_] = pos
                            b_ += 1
                    for k in range(b_):
                        work[f, a_ + k] = tmp[k]
                    nleft = a_ - start
                lid = n_nodes
                rid = n_nodes + 1
                n_nodes += 2
                feature[node] = best_f
                threshold[node] = best_t
                left[node] = lid
                right[node] = rid
                stack[3 * sp] = rid
                stack[3 * sp + 1] = start + nleft
                stack[3 * sp + 2] = end
                sp += 1
                stack[3 * sp] = lid
                stack[3 * sp + 1] = start
                stack[3 * sp + 2] = start + nleft
                sp += 1
    finally:
        free(stack); free(perm); free(cand); free(tmp); free(gl)
    for i in range(4):
        st[i] = s[i]
    return (feature_arr[:n_nodes].copy(), thr_arr[:n_nodes].copy(), left_arr[:n_nodes].copy(),
            right_arr[:n_nodes].copy(), value_arr[:n_nodes].copy())


def predict_packed(X, feature, threshold, left, right, value, roots, init):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef int64_t[::1] fv = np.ascontiguousarray(feature, dtype=np.int64)
    cdef double[::1] tv = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef int64_t[::1] lv = np.ascontiguousarray(left, dtype=np.int64)
    cdef int64_t[::1] rv = np.ascontiguousarray(right, dtype=np.int64)
    cdef double[::1] vv = np.ascontiguousarray(value, dtype=np.float64)
    cdef int64_t[::1] rootv = np.ascontiguousarray(roots, dtype=np.int64)
    out_arr = np.array(init, dtype=np.float64, copy=True)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t n = Xv.shape[0], T = rootv.shape[0], i, t
    cdef int64_t node
    with nogil:
        for i in range(n):
            for t in range(T):
                node = rootv[t]
                while fv[node] >= 0:
                    if Xv[i, fv[node]] <= tv[node]:
                        node = lv[node]
                    else:
                        node = rv[node]
                out[i] += vv[node]
    return out_arr


# ---------------------------------------------------------------------------
# histogram trees (gradient boosting)

cdef inline double _soft(double s, double l1) noexcept nogil:
    if s > l1:
        return s - l1
    if s < -l1:
        return s + l1
    return 0.0


cdef inline double _score(double s, double h, double l1, double l2) noexcept nogil:
    cdef double t = _soft(s, l1)
    return t * t / (h + l2)


cdef void _best_split(const uint8_t[:, ::1] B, const double[::1] grad, int64_t* seg,
                      Py_ssize_t cnt, const int64_t[::1] n_bins, const int64_t[::1] feats,
                      Py_ssize_t depth, Py_ssize_t max_depth, Py_ssize_t min_leaf,
                      double l1, double l2, bint extra, uint64_t* s, double total,
                      double* hs, int64_t* hc,
                      double* out_gain, int64_t* out_f, int64_t* out_b) noexcept nogil:
    cdef Py_ssize_t fi, f, nb, k, t, t0, t1, cl, cr
    cdef double parent, best, sl, sr, gain
    cdef int64_t best_f = -1, best_b = -1
    out_gain[0] = 0.0
    out_f[0] = -1
    out_b[0] = -1
    if max_depth > 0 and depth >= max_depth:
        return
    if cnt < 2 * min_leaf or cnt < 2:
        return
    parent = _score(total, <double>cnt, l1, l2)
    best = 0.0
    for fi in range(feats.shape[0]):
        f = feats[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        for k in range(nb):
            hs[k] = 0.0
            hc[k] = 0
        for k in range(cnt):
            hs[B[seg[k], f]] += grad[seg[k]]
            hc[B[seg[k], f]] += 1
        if extra:
            t0 = _bounded(s, nb - 1)
            t1 = t0 + 1
        else:
            t0 = 0
            t1 = nb - 1
        sl = 0.0
        cl = 0
        for t in range(t1):
            sl += hs[t]
            cl += hc[t]
            if t < t0:
                continue
            cr = cnt - cl
            if cl < min_leaf or cr < min_leaf or cl == 0 or cr == 0:
                continue
            sr = total - sl
            gain = _score(sl, <double>cl, l1, l2) + _score(sr, <double>cr, l1, l2) - parent
            if gain > best:
                best = gain
                best_f = f
                best_b = t
    out_gain[0] = best
    out_f[0] = best_f
    out_b[0] = best_b


def grow_hist_tree(B, grad, rows, n_bins, feats, Py_ssize_t num_leaves, Py_ssize_t max_depth,
                   Py_ssize_t min_leaf, double l1, double l2, double lr, bint extra, rng_state):
    cdef const uint8_t[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.uint8)
    cdef const double[::1] gv = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const int64_t[::1] nbv = np.ascontiguousarray(n_bins, dtype=np.int64)
    cdef const int64_t[::1] fv = np.ascontiguousarray(feats, dtype=np.int64)
    work_arr = np.array(rows, dtype=np.int64, copy=True)
    cdef int64_t[::1] work = work_arr
    cdef uint64_t[::1] st = rng_state
    cdef Py_ssize_t nrows = work.shape[0]
    if num_leaves < 1:
        num_leaves = 1
    cdef Py_ssize_t max_nodes = 2 * num_leaves + 1
    feature_arr = np.full(max_nodes, -1, dtype=np.int64)
    thr_arr = np.full(max_nodes, -1, dtype=np.int64)
    left_arr = np.full(max_nodes, -1, dtype=np.int64)
    right_arr = np.full(max_nodes, -1, dtype=np.int64)
    value_arr = np.zeros(max_nodes, dtype=np.float64)
    cdef int64_t[::1] feature = feature_arr
    cdef int64_t[::1] thr = thr_arr
    cdef int64_t[::1] left = left_arr
    cdef int64_t[::1] right = right_arr
    cdef double[::1] value = value_arr
    cdef Py_ssize_t maxb = 1, k
    for k in range(nbv.shape[0]):
        if nbv[k] > maxb:
            maxb = nbv[k]
    # leaf table
    cdef int64_t* l_node = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef int64_t* l_start = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef int64_t* l_end = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef int64_t* l_depth = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef double* l_sum = <double*>malloc(max_nodes * sizeof(double))
    cdef double* l_gain = <double*>malloc(max_nodes * sizeof(double))
    cdef int64_t* l_f = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef int64_t* l_b = <int64_t*>malloc(max_nodes * sizeof(int64_t))
    cdef double* hs = <double*>malloc(maxb * sizeof(double))
    cdef int64_t* hc = <int64_t*>malloc(maxb * sizeof(int64_t))
    cdef int64_t* tmp = <int64_t*>malloc((nrows + 1) * sizeof(int64_t))
    cdef uint64_t s[4]
    cdef Py_ssize_t n_leaves = 1, n_nodes = 1, i, pick, node, start, end, depth, a_, b_, nleft
    cdef Py_ssize_t lid, rid, cnt
    cdef int64_t f, b, r
    cdef double best, total, lsum, rsum
    for i in range(4):
        s[i] = st[i]
    try:
        with nogil:
            total = 0.0
            for k in range(nrows):
                total += gv[work[k]]
            l_node[0] = 0
            l_start[0] = 0
            l_end[0] = nrows
            l_depth[0] = 0
            l_sum[0] = total
            _best_split(Bv, gv, &work[0] if nrows > 0 else tmp, nrows, nbv, fv, 0, max_depth,
                        min_leaf, l1, l2, extra, s, total, hs, hc, &l_gain[0], &l_f[0], &l_b[0])
            while n_leaves < num_leaves:
                pick = -1
                best = 0.0
                for i in range(n_leaves):
                    if l_f[i] >= 0 and l_gain[i] > best:
                        best = l_gain[i]
                        pick = i
                if pick < 0:
                    break
                node = l_node[pick]
                start = l_start[pick]
                end = l_end[pick]
                depth = l_depth[pick]
                f = l_f[pick]
                b = l_b[pick]
                a_ = start
                b_ = 0
                for k in range(start, end):
                    r = work[k]
                    if Bv[r, f] <= b:
                        work[a_] = r
                        a_ += 1
                    else:
                        tmp[b_] = r
                        b_ += 1
                for k in range(b_):
                    work[a_ + k] = tmp[k]
                nleft = a_ - start
                lid = n_nodes
                rid = n_nodes + 1
                n_nodes += 2
                feature[node] = f
                thr[node] = b
                left[node] = lid
                right[node] = rid
                lsum = 0.0
                for k in range(start, start + nleft):
                    lsum += gv[work[k]]
                rsum = 0.0
                for k in range(start + nleft, end):
                    rsum += gv[work[k]]
                l_node[pick] = lid
                l_start[pick] = start
                l_end[pick] = start + nleft
                l_depth[pick] = depth + 1
                l_sum[pick] = lsum
                l_node[n_leaves] = rid
                l_start[n_leaves] = start + nleft
                l_end[n_leaves] = end
                l_depth[n_leaves] = depth + 1
                l_sum[n_leaves] = rsum
                _best_split(Bv, gv, &work[start], nleft, nbv, fv, depth + 1, max_depth,
                            min_leaf, l1, l2, extra, s, lsum, hs, hc,
                            &l_gain[pick], &l_f[pick], &l_b[pick])
                _best_split(Bv, gv, &work[start + nleft], end - start - nleft, nbv, fv,
                            depth + 1, max_depth, min_leaf, l1, l2, extra, s, rsum, hs, hc,
                            &l_gain[n_leaves], &l_f[n_leaves], &l_b[n_leaves])
                n_leaves += 1
            for i in range(n_leaves):
                cnt = l_end[i] - l_start[i]
                if cnt > 0:
                    value[l_node[i]] = lr * (_soft(l_sum[i], l1) / (<double>cnt + l2))
                else:
                    value[l_node[i]] = 0.0
    finally:
        free(l_node); free(l_start); free(l_end); free(l_depth); free(l_sum)
        free(l_gain); free(l_f); free(l_b); free(hs); free(hc); free(tmp)
    for i in range(4):
        st[i] = s[i]
    return (feature_arr[:n_nodes].copy(), thr_arr[:n_nodes].copy(), left_arr[:n_nodes].copy(),
            right_arr[:n_nodes].copy(), value_arr[:n_nodes].copy())


# ---------------------------------------------------------------------------
# epsilon-SVR dual

def smo_solve(K, y, double C, double eps, double tol, Py_ssize_t max_iter):
    cdef double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    cdef Py_ssize_t m = 2 * n
    alpha_arr = np.zeros(m, dtype=np.float64)
    G_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = G_arr
    cdef double* z = <double*>malloc((m + 1) * sizeof(double))
    cdef double* QD = <double*>malloc((m + 1) * sizeof(double))
    cdef Py_ssize_t t, i, j, ii, jj, it = 0, nfree
    cdef double gmax, gmax2, gap = INFINITY, gd, quad, obj, obj_min, zi, zj, Qij
    cdef double ai, aj, qc, delta, diff, ssum, dai, daj, ub, lb, sfree, yg, rho, mzt
    cdef bint any_sel
    try:
        with nogil:
            for t in range(n):
                z[t] = 1.0
                z[t + n] = -1.0
                G[t] = eps - yv[t]
                G[t + n] = eps + yv[t]
                QD[t] = Kv[t, t]
                QD[t + n] = Kv[t, t]
            while True:
                gmax = -INFINITY
                i = -1
                gmax2 = -INFINITY
                for t in range(m):
                    if z[t] > 0:
                        mzt = -G[t]
                        if alpha[t] < C:
                            if mzt > gmax:
                                gmax = mzt
                                i = t
                        if alpha[t] > 0:
                            if -mzt > gmax2:
                                gmax2 = -mzt
                    else:
                        mzt = G[t]
                        if alpha[t] > 0:
                            if mzt > gmax:
                                gmax = mzt
                                i = t
                        if alpha[t] < C:
                            if -mzt > gmax2:
                                gmax2 = -mzt
                gap = gmax + gmax2
                if i < 0:
                    break
                ii = i % n
                j = -1
                obj_min = INFINITY
                any_sel = False
                for t in range(m):
                    if z[t] > 0:
                        if not (alpha[t] > 0):
                            continue
                        gd = gmax + G[t]
                    else:
                        if not (alpha[t] < C):
                            continue
                        gd = gmax - G[t]
                    if not (gd > 0):
                        continue
                    any_sel = True
                    quad = QD[i] + QD[t] - 2.0 * Kv[ii, t % n]
                    if not (quad > 0):
                        quad = TAU
                    obj = -(gd * gd) / quad
                    if obj < obj_min:
                        obj_min = obj
                        j = t
                if gap < tol or not any_sel:
                    break
                if it >= max_iter:
                    break
                if j < 0:
                    # every candidate objective was +inf-free but NaN; treat as converged
                    break
                jj = j % n
                zi = z[i]
                zj = z[j]
                Qij = zi * zj * Kv[ii, jj]
                ai = alpha[i]
                aj = alpha[j]
                if zi != zj:
                    qc = QD[i] + QD[j] + 2.0 * Qij
                    if qc <= 0:
                        qc = TAU
                    delta = (-G[i] - G[j]) / qc
                    diff = ai - aj
                    ai += delta
                    aj += delta
                    if diff > 0:
                        if aj < 0:
                            aj = 0.0
                            ai = diff
                    else:
                        if ai < 0:
                            ai = 0.0
                            aj = -diff
                    if diff > 0.0:
                        if ai > C:
                            ai = C
                            aj = C - diff
                    else:
                        if aj > C:
                            aj = C
                            ai = C + diff
                else:
                    qc = QD[i] + QD[j] - 2.0 * Qij
                    if qc <= 0:
                        qc = TAU
                    delta = (G[i] - G[j]) / qc
                    ssum = ai + aj
                    ai -= delta
                    aj += delta
                    if ssum > C:
                        if ai > C:
                            ai = C
                            aj = ssum - C
                    else:
                        if aj < 0:
                            aj = 0.0
                            ai = ssum
                    if ssum > C:
                        if aj > C:
                            aj = C
                            ai = ssum - C
                    else:
                        if ai < 0:
                            ai = 0.0
                            aj = ssum
                dai = ai - alpha[i]
                daj = aj - alpha[j]
                alpha[i] = ai
                alpha[j] = aj
                for t in range(m):
                    G[t] += (zi * z[t]) * Kv[ii, t % n] * dai + (zj * z[t]) * Kv[jj, t % n] * daj
                it += 1
            ub = INFINITY
            lb = -INFINITY
            nfree = 0
            sfree = 0.0
            for t in range(m):
                yg = z[t] * G[t]
                if alpha[t] >= C:
                    if z[t] < 0:
                        if yg < ub:
                            ub = yg
                    else:
                        if yg > lb:
                            lb = yg
                elif alpha[t] <= 0:
                    if z[t] > 0:
                        if yg < ub:
                            ub = yg
                    else:
                        if yg > lb:
                            lb = yg
                else:
                    nfree += 1
                    sfree += yg
            if nfree > 0:
                rho = sfree / nfree
            else:
                rho = (ub + lb) / 2
    finally:
        free(z); free(QD)
    beta = alpha_arr[:n] - alpha_arr[n:]
    return beta, -rho, it, gap
