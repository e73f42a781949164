"""Compiled inner loops: SMO dual solver and CART tree building/evaluation."""
import numpy as np
from numba import njit

_TAU = 1e-12


@njit(cache=True, nogil=True)
def smo_solve(K, idx, y, p, C, tol, max_iter):
    """Solve  min 0.5 a'Qa + p'a  s.t.  y'a = 0, 0 <= a <= C.

    ``Q[s, t] = y[s] * y[t] * K[idx[s], idx[t]]``. Working pairs are chosen with
    the second-order rule; stops when the maximal KKT violation drops below
    ``tol``. Returns ``(alpha, rho, iterations, gap)``; ``gap`` is the final
    violation, so ``gap >= tol`` means the iteration cap was hit.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    G = p.copy()
    it = 0
    gap = np.inf
    while True:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        if i >= 0:
            ki = idx[i]
            for t in range(n):
                if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                    v = y[t] * G[t]
                    if v > gmax2:
                        gmax2 = v
                    diff = gmax + v
                    if diff > 0:
                        kt = idx[t]
                        quad = K[ki, ki] + K[kt, kt] - 2.0 * K[ki, kt]
                        if quad <= 0:
                            quad = _TAU
                        obj = -(diff * diff) / quad
                        if obj < obj_min:
                            obj_min = obj
                            j = t
        gap = gmax + gmax2
        if i < 0 or j < 0 or gap < tol:
            break
        if it >= max_iter:
            break
        it += 1

        ki = idx[i]
        kj = idx[j]
        kij = K[ki, kj]
        old_ai = alpha[i]
        old_aj = alpha[j]
        quad = K[ki, ki] + K[kj, kj] - 2.0 * kij
        if quad <= 0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        yi = y[i]
        yj = y[j]
        for t in range(n):
            kt = idx[t]
            G[t] += y[t] * (yi * K[kt, ki] * dai + yj * K[kt, kj] * daj)

    ub = np.inf
    lb = -np.inf
    free_sum = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            free_sum += yg
    if nfree > 0:
        rho = free_sum / nfree
    else:
        rho = (ub + lb) / 2.0
    return alpha, rho, it, gap


@njit(cache=True, nogil=True)
def _node_value(y, sample_idx, start, end, n_classes, out):
    if n_classes > 0:
        for c in range(n_classes):
            out[c] = 0.0
        for s in range(start, end):
            out[int(y[sample_idx[s]])] += 1.0
    else:
        acc = 0.0
        for s in range(start, end):
            acc += y[sample_idx[s]]
        out[0] = acc / (end - start)


@njit(cache=True, nogil=True)
def _is_pure(y, sample_idx, start, end):
    first = y[sample_idx[start]]
    for s in range(start + 1, end):
        if y[sample_idx[s]] != first:
            return False
    return True


@njit(cache=True, nogil=True)
def _best_split_on(X, y, sample_idx, start, end, f, n_classes, buf_v, buf_y, left_counts, total_counts, tie):
    """Best (score, threshold) for feature ``f``; score is the summed child impurity.

    A candidate must beat the incumbent by more than ``tie`` so rounding noise
    never decides between mathematically equal splits.
    """
    m = end - start
    for s in range(m):
        r = sample_idx[start + s]
        buf_v[s] = X[r, f]
        buf_y[s] = y[r]
    order = np.argsort(buf_v[:m], kind="mergesort")
    best = np.inf
    best_thr = np.nan
    if n_classes > 0:
        for c in range(n_classes):
            left_counts[c] = 0.0
            total_counts[c] = 0.0
        for s in range(m):
            total_counts[int(buf_y[s])] += 1.0
        for s in range(m - 1):
            o = order[s]
            left_counts[int(buf_y[o])] += 1.0
            a = buf_v[o]
            b = buf_v[order[s + 1]]
            if b <= a:
                continue
            nl = s + 1.0
            nr = m - nl
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                lc = left_counts[c]
                rc = total_counts[c] - lc
                sl += lc * lc
                sr += rc * rc
            score = (nl - sl / nl) + (nr - sr / nr)
            if score < best:
                best = score
                thr = (a + b) / 2.0
                if thr >= b:
                    thr = a
                best_thr = thr
    else:
        tot = 0.0
        tot2 = 0.0
        for s in range(m):
            tot += buf_y[s]
            tot2 += buf_y[s] * buf_y[s]
        ls = 0.0
        ls2 = 0.0
        for s in range(m - 1):
            o = order[s]
            v = buf_y[o]
            ls += v
            ls2 += v * v
            a = buf_v[o]
            b = buf_v[order[s + 1]]
            if b <= a:
                continue
            nl = s + 1.0
            nr = m - nl
            rs = tot - ls
            rs2 = tot2 - ls2
            score = (ls2 - ls * ls / nl) + (rs2 - rs * rs / nr)
            if score < best - tie:
                best = score
                thr = (a + b) / 2.0
                if thr >= b:
                    thr = a
                best_thr = thr
    return best, best_thr


@njit(cache=True, nogil=True)
def build_tree(X, y, sample_idx, n_classes, max_depth, min_samples_split, n_sub, feat_keys):
    """Greedy CART growth.

    ``sample_idx`` (rows used, may repeat for bootstrap) is permuted in place.
    ``feat_keys[node]`` orders features for that node; the first ``n_sub`` are
    examined and further ones only if none of those admits a split.
    ``max_depth < 0`` means unlimited. Returns node arrays and node count.
    """
    n = sample_idx.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    width = n_classes if n_classes > 0 else 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, width))
    buf_v = np.empty(n)
    buf_y = np.empty(n)
    lc = np.zeros(width)
    tc = np.zeros(width)
    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        _node_value(y, sample_idx, start, end, n_classes, value[node])
        m = end - start
        if (max_depth >= 0 and depth >= max_depth) or m < min_samples_split or m < 2:
            continue
        if _is_pure(y, sample_idx, start, end):
            continue
        order = np.argsort(feat_keys[node % feat_keys.shape[0]], kind="mergesort")
        # class counts are exact; squared-error sums carry rounding noise
        tie = 0.0
        if n_classes == 0:
            for s in range(start, end):
                tie += y[sample_idx[s]] * y[sample_idx[s]]
            tie *= 1e-10
        best = np.inf
        best_f = -1
        best_thr = 0.0
        for r in range(p):
            if r >= n_sub and best_f >= 0:
                break
            f = order[r]
            score, thr = _best_split_on(X, y, sample_idx, start, end, f, n_classes, buf_v, buf_y, lc, tc, tie)
            if score < best - tie:
                best = score
                best_f = f
                best_thr = thr
        if best_f < 0:
            continue
        # partition rows: <= threshold to the left, order preserved
        k = 0
        for s in range(start, end):
            r = sample_idx[s]
            if X[r, best_f] <= best_thr:
                buf_v[k] = r
                k += 1
        mid = start + k
        for s in range(start, end):
            r = sample_idx[s]
            if X[r, best_f] > best_thr:
                buf_v[k] = r
                k += 1
        for s in range(m):
            sample_idx[start + s] = np.int64(buf_v[s])
        feature[node] = best_f
        threshold[node] = best_thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is numbered/built first
        stack_node[top] = ri
        stack_start[top] = mid
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = li
        stack_start[top] = start
        stack_end[top] = mid
        stack_depth[top] = depth + 1
        top += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def tree_apply(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out
