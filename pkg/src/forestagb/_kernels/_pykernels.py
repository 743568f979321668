"""Pure-Python/numpy implementations of the hot kernels.

Each function has a compiled twin in ``_ckernels.pyx`` with the same
signature. Summation orders are kept sequential (``cumsum``, ``bincount``,
explicit loops; never ``np.sum``) so that both backends return bit-identical
results.
"""

from __future__ import annotations

import math

import numpy as np

from ..rng import Xoshiro256

NAME = "python"
TAU = 1e-12


# ---------------------------------------------------------------------------
# polygon / cell clipping


def _clip_edge(pts, axis, bound, keep_greater):
    out = []
    n = len(pts)
    if n == 0:
        return out
    for k in range(n):
        p = pts[k - 1]
        q = pts[k]
        pin = p[axis] >= bound if keep_greater else p[axis] <= bound
        qin = q[axis] >= bound if keep_greater else q[axis] <= bound
        if qin:
            if not pin:
                out.append(_cross(p, q, axis, bound))
            out.append(q)
        elif pin:
            out.append(_cross(p, q, axis, bound))
    return out


def _cross(p, q, axis, bound):
    t = (bound - p[axis]) / (q[axis] - p[axis])
    if axis == 0:
        return (bound, p[1] + t * (q[1] - p[1]))
    return (p[0] + t * (q[0] - p[0]), bound)


def _shoelace(pts, ou, ov):
    a = 0.0
    n = len(pts)
    for k in range(n):
        x0 = pts[k - 1][0] - ou
        y0 = pts[k - 1][1] - ov
        x1 = pts[k][0] - ou
        y1 = pts[k][1] - ov
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def clip_ring_cells(u, v, r0, r1, c0, c1):
    """Area of one closed ring inside each unit cell of a row/col window.

    ``u``/``v`` are ring vertices in cell units (u to the east, v to the
    south, origin at the grid's north-west corner), closing vertex
    omitted. Returns an (r1-r0, c1-c0) array of absolute areas.
    """
    ring = list(zip(np.asarray(u, dtype=np.float64).tolist(),
                    np.asarray(v, dtype=np.float64).tolist()))
    out = np.zeros((r1 - r0, c1 - c0), dtype=np.float64)
    for r in range(r0, r1):
        for c in range(c0, c1):
            pts = _clip_edge(ring, 0, float(c), True)
            pts = _clip_edge(pts, 0, float(c + 1), False)
            pts = _clip_edge(pts, 1, float(r), True)
            pts = _clip_edge(pts, 1, float(r + 1), False)
            if len(pts) >= 3:
                out[r - r0, c - c0] = abs(_shoelace(pts, float(c), float(r)))
    return out


# ---------------------------------------------------------------------------
# regression trees (random forest)


def grow_cart_tree(X, y, rows, order, mtry, min_node_size, rng_state):
    """Grow one variance-reduction CART tree.

    ``rows`` lists the training rows of this tree (duplicates allowed);
    ``order[f]`` holds positions into ``rows`` sorted stably by feature f.
    Returns (feature, threshold, left, right, value) arrays; leaves have
    feature -1.
    """
    rng = Xoshiro256(rng_state)
    m = rows.shape[0]
    p = X.shape[1]
    xs = X[rows]
    ys = y[rows]
    work = np.array(order, dtype=np.int64, copy=True)
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]
    stack = [(0, 0, m)]
    while stack:
        node, start, end = stack.pop()
        n = end - start
        seg0 = work[0, start:end]
        yseg = ys[seg0]
        ymin = yseg.min()
        ymax = yseg.max()
        if n <= min_node_size or ymin == ymax:
            value[node] = float(yseg[0]) if ymin == ymax else float(np.cumsum(yseg)[-1]) / n
            continue
        perm = list(range(p))
        for i in range(mtry):
            j = i + rng.bounded(p - i)
            perm[i], perm[j] = perm[j], perm[i]
        cand = sorted(perm[:mtry])
        psum = float(np.cumsum(yseg)[-1])
        best = psum * psum / n
        best_f = -1
        best_t = 0.0
        for f in cand:
            seg = work[f, start:end]
            xv = xs[seg, f]
            yv = ys[seg]
            csum = np.cumsum(yv)
            total = csum[-1]
            valid = xv[:-1] < xv[1:]
            if not valid.any():
                continue
            nl = np.arange(1, n, dtype=np.float64)
            nr = n - nl
            sl = csum[:-1]
            sr = total - sl
            score = sl * sl / nl + sr * sr / nr
            score = np.where(valid, score, -np.inf)
            k = int(np.argmax(score))
            if score[k] > best:
                best = float(score[k])
                best_f = f
                a = float(xv[k])
                b = float(xv[k + 1])
                t = 0.5 * (a + b)
                best_t = t if t < b else a
        if best_f < 0:
            value[node] = float(np.cumsum(yseg)[-1]) / n
            continue
        goes_left = xs[:, best_f] <= best_t
        nleft = 0
        for f in range(p):
            seg = work[f, start:end]
            mask = goes_left[seg]
            nleft = int(mask.sum())
            work[f, start:end] = np.concatenate((seg[mask], seg[~mask]))
        lid = len(feature)
        rid = lid + 1
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = lid
        right[node] = rid
        stack.append((rid, start + nleft, end))
        stack.append((lid, start, start + nleft))
    rng.sync()
    return (
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


def predict_packed(X, feature, threshold, left, right, value, roots, init):
    """Sum of tree outputs per row, accumulated tree by tree onto ``init``."""
    n = X.shape[0]
    out = np.array(init, dtype=np.float64, copy=True)
    if n == 0:
        return out
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            f = feature[nd]
            go_left = X[idx, f] <= threshold[nd]
            node[idx] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        out += value[node]
    return out


# ---------------------------------------------------------------------------
# histogram trees (gradient boosting)


def _soft(s, l1):
    if s > l1:
        return s - l1
    if s < -l1:
        return s + l1
    return 0.0


def _score(s, h, l1, l2):
    t = _soft(s, l1)
    return t * t / (h + l2)


def _best_split(B, grad, seg, n_bins, feats, depth, max_depth, min_leaf, l1, l2,
                extra, rng, total):
    cnt = seg.shape[0]
    if max_depth > 0 and depth >= max_depth:
        return 0.0, -1, -1
    if cnt < 2 * min_leaf or cnt < 2:
        return 0.0, -1, -1
    parent = _score(total, cnt, l1, l2)
    best = 0.0
    best_f = -1
    best_b = -1
    g = grad[seg]
    for f in feats:
        nb = int(n_bins[f])
        if nb < 2:
            continue
        bins = B[seg, f]
        hs = np.bincount(bins, weights=g, minlength=nb)
        hc = np.bincount(bins, minlength=nb)
        cs = np.cumsum(hs)
        cc = np.cumsum(hc)
        if extra:
            cands = [rng.bounded(nb - 1)]
        else:
            cands = range(nb - 1)
        for t in cands:
            cl = int(cc[t])
            cr = cnt - cl
            if cl < min_leaf or cr < min_leaf or cl == 0 or cr == 0:
                continue
            sl = float(cs[t])
            sr = total - sl
            gain = _score(sl, cl, l1, l2) + _score(sr, cr, l1, l2) - parent
            if gain > best:
                best = gain
                best_f = int(f)
                best_b = int(t)
    return best, best_f, best_b


def grow_hist_tree(B, grad, rows, n_bins, feats, num_leaves, max_depth, min_leaf,
                   l1, l2, lr, extra, rng_state):
    """Leaf-wise histogram tree fitted to residuals ``grad`` on ``rows``.

    Returns (feature, threshold_bin, left, right, value) arrays; leaves have
    feature -1 and carry the shrunk leaf output.
    """
    rng = Xoshiro256(rng_state)
    work = np.array(rows, dtype=np.int64, copy=True)
    feature = [-1]
    thr = [-1]
    left = [-1]
    right = [-1]
    value = [0.0]
    # leaf: [node, start, end, depth, sum, gain, f, b]
    total = float(np.cumsum(grad[work])[-1]) if work.shape[0] else 0.0
    leaves = [[0, 0, work.shape[0], 0, total, 0.0, -1, -1]]
    lf = leaves[0]
    lf[5], lf[6], lf[7] = _best_split(B, grad, work[0:work.shape[0]], n_bins, feats, 0,
                                      max_depth, min_leaf, l1, l2, extra, rng, total)
    while len(leaves) < num_leaves:
        pick = -1
        best = 0.0
        for i, lf in enumerate(leaves):
            if lf[6] >= 0 and lf[5] > best:
                best = lf[5]
                pick = i
        if pick < 0:
            break
        node, start, end, depth, _, _, f, b = leaves[pick]
        seg = work[start:end]
        mask = B[seg, f] <= b
        nleft = int(mask.sum())
        work[start:end] = np.concatenate((seg[mask], seg[~mask]))
        lid = len(feature)
        rid = lid + 1
        for _ in range(2):
            feature.append(-1)
            thr.append(-1)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
        feature[node] = f
        thr[node] = b
        left[node] = lid
        right[node] = rid
        lseg = work[start:start + nleft]
        rseg = work[start + nleft:end]
        lsum = float(np.cumsum(grad[lseg])[-1])
        rsum = float(np.cumsum(grad[rseg])[-1])
        lleaf = [lid, start, start + nleft, depth + 1, lsum, 0.0, -1, -1]
        rleaf = [rid, start + nleft, end, depth + 1, rsum, 0.0, -1, -1]
        lleaf[5], lleaf[6], lleaf[7] = _best_split(B, grad, lseg, n_bins, feats, depth + 1,
                                                   max_depth, min_leaf, l1, l2, extra, rng, lsum)
        rleaf[5], rleaf[6], rleaf[7] = _best_split(B, grad, rseg, n_bins, feats, depth + 1,
                                                   max_depth, min_leaf, l1, l2, extra, rng, rsum)
        leaves[pick] = lleaf
        leaves.append(rleaf)
    for lf in leaves:
        cnt = lf[2] - lf[1]
        value[lf[0]] = lr * (_soft(lf[4], l1) / (cnt + l2)) if cnt > 0 else 0.0
    rng.sync()
    return (
        np.array(feature, dtype=np.int64),
        np.array(thr, dtype=np.int64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# epsilon-SVR dual (SMO with second-order working-set selection)


def smo_solve(K, y, C, eps, tol, max_iter):
    """Solve the epsilon-SVR dual for a precomputed kernel matrix.

    Returns (beta, b, iterations, gap) where beta = alpha - alpha_star and
    gap is the maximal KKT violation at exit.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    m = 2 * n
    z = np.concatenate((np.ones(n), -np.ones(n)))
    alpha = np.zeros(m)
    G = np.concatenate((eps - y, eps + y))
    diag = np.diagonal(K).copy()
    QD = np.concatenate((diag, diag))
    it = 0
    gap = math.inf
    while True:
        up = np.where(z > 0, alpha < C, alpha > 0)
        low = np.where(z > 0, alpha > 0, alpha < C)
        mz = np.where(z > 0, -G, G)
        if up.any():
            cand = np.where(up, mz, -np.inf)
            i = int(np.argmax(cand))
            gmax = float(cand[i])
        else:
            i = -1
            gmax = -math.inf
        if low.any():
            gmax2 = float(np.max(np.where(low, -mz, -np.inf)))
        else:
            gmax2 = -math.inf
        gap = gmax + gmax2
        if i < 0:
            break
        ii = i % n
        krow = np.concatenate((K[ii], K[ii]))
        gd = np.where(z > 0, gmax + G, gmax - G)
        quad = QD[i] + QD - 2.0 * krow
        quad = np.where(quad > 0, quad, TAU)
        obj = -(gd * gd) / quad
        sel = low & (gd > 0)
        if gap < tol or not sel.any():
            break
        if it >= max_iter:
            break
        cand = np.where(sel, obj, np.inf)
        j = int(np.argmin(cand))
        jj = j % n
        zi = z[i]
        zj = z[j]
        Qij = zi * zj * K[ii, jj]
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
            if diff > 0.0:  # C_i - C_j == 0
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
            s = ai + aj
            ai -= delta
            aj += delta
            if s > C:
                if ai > C:
                    ai = C
                    aj = s - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > C:
                if aj > C:
                    aj = C
                    ai = s - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        dai = ai - alpha[i]
        daj = aj - alpha[j]
        alpha[i] = ai
        alpha[j] = aj
        qi = (zi * z) * krow
        qj = (zj * z) * np.concatenate((K[jj], K[jj]))
        G += qi * dai + qj * daj
        it += 1
    # bias from free variables, else midpoint of the feasible interval
    ub = math.inf
    lb = -math.inf
    nfree = 0
    sfree = 0.0
    for t in range(m):
        yg = z[t] * G[t]
        if alpha[t] >= C:
            if z[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if z[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    rho = sfree / nfree if nfree > 0 else (ub + lb) / 2
    beta = alpha[:n] - alpha[n:]
    return beta, -rho, it, gap
