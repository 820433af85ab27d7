"""Slow, obviously-correct reference implementations used only by the tests.

None of these touch numpy's linear algebra routines; they are loops over
Python floats (or tiny numpy elementwise ops) so they fail independently
of the code under test.
"""

import math

import numpy as np


def matmul_loops(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def jacobi_eigh(s, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns.
    """
    a = np.array(s, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        diag_sq = float(np.sum(np.diag(a) ** 2))
        off = math.sqrt(max(float(np.sum(a * a)) - diag_sq, 0.0))
        if off <= tol * max(1.0, math.sqrt(diag_sq)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-18 * (abs(a[p, p]) + abs(a[q, q])):
                    # negligible entry: rotating would overflow theta
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                # rotate rows/columns p and q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def top_eigenvalues(s, d, criterion, spectrum=None):
    """Top-``d`` eigenvalues under ``criterion``; pass a precomputed ascending ``spectrum`` to reuse it."""
    w = jacobi_eigh(s)[0] if spectrum is None else np.asarray(spectrum)
    if criterion == "largest_positive":
        return w[::-1][:d]
    if criterion == "most_negative":
        return w[:d]
    order = sorted(range(len(w)), key=lambda i: -abs(w[i]))
    return w[order[:d]]


def gauss_solve(a, b):
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    n = a.shape[0]
    aug = np.hstack([a, b])
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r, col]))
        aug[[col, piv]] = aug[[piv, col]]
        for r in range(col + 1, n):
            f = aug[r, col] / aug[col, col]
            aug[r, col:] -= f * aug[col, col:]
    x = np.zeros_like(b)
    for r in range(n - 1, -1, -1):
        x[r] = (aug[r, n:] - aug[r, r + 1:n] @ x[r + 1:]) / aug[r, r]
    return x


def ridge_normal_equations(x, y, ridge):
    x = np.asarray(x, float)
    xtx = matmul_loops(x.T, x) + ridge * np.eye(x.shape[1])
    return gauss_solve(xtx, matmul_loops(x.T, y))


def rbf_loops(x, gamma):
    x = np.asarray(x, float)
    m = x.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = math.exp(-gamma * sum((x[i, t] - x[j, t]) ** 2 for t in range(x.shape[1])))
    return out


def center_formula(s):
    s = np.asarray(s, float)
    m = s.shape[0]
    one = np.ones((m, m)) / m
    return s - matmul_loops(one, s) - matmul_loops(s, one) + matmul_loops(matmul_loops(one, s), one)


def masked_mse_loops(a, b, mask):
    total, count = 0.0, 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if mask[i, j]:
                total += (a[i, j] - b[i, j]) ** 2
                count += 1
    return total / count


def forward_loops(layers, x):
    """Explicit per-unit forward pass; ``layers`` is a list of (W, b, activation)."""
    h = [list(map(float, row)) for row in np.asarray(x, float)]
    for w, b, act in layers:
        nxt = []
        for row in h:
            out = []
            for j in range(w.shape[1]):
                a = sum(row[i] * w[i, j] for i in range(w.shape[0]))
                if b is not None:
                    a += b[j]
                out.append(math.tanh(a) if act == "tanh" else a)
            nxt.append(out)
        h = nxt
    return np.array(h)


def simec_loss_loops(y, rel, target, mask, lam_sym, sym_target, lam_orth, lam_l2, weights,
                     bounds=None):
    """Objective term by term with explicit loops.

    ``rel`` is (k, d, n); ``target`` is (m, n, k); ``weights`` lists every
    weight matrix for the l2 term.
    """
    k, d, n = rel.shape
    m = y.shape[0]
    num, cnt = 0.0, 0
    for s in range(k):
        for i in range(m):
            for j in range(n):
                if mask is not None and mask[i, j] == 0:
                    continue
                z = sum(y[i, t] * rel[s, t, j] for t in range(d))
                if bounds is not None:
                    lo, hi = bounds
                    z = lo + (hi - lo) / (1.0 + math.exp(-z))
                num += (z - target[i, j, s]) ** 2
                cnt += 1
    total = num / cnt
    if lam_sym:
        w = rel[0]
        acc = 0.0
        for a in range(n):
            for b in range(n):
                acc += (sym_target[a, b] - sum(w[t, a] * w[t, b] for t in range(d))) ** 2
        total += lam_sym * acc / (n * n)
    if lam_orth and d > 1:
        acc = 0.0
        for s in range(k):
            for a in range(d):
                for b in range(d):
                    if a != b:
                        acc += sum(rel[s, a, j] * rel[s, b, j] for j in range(n)) ** 2
        total += lam_orth * acc / (k * d * (d - 1))
    if lam_l2:
        sq = sum(float(v) ** 2 for w in weights for v in np.ravel(w))
        total += lam_l2 * sq / sum(np.size(w) for w in weights)
    return total


def best_rank_loss(r, d):
    """Best rank-``d`` MSE of a rectangular ``r`` via the symmetric augmentation [[0, R], [R^T, 0]].

    Its eigenvalues are +/- the singular values of ``R``, so the Jacobi oracle
    gives the singular spectrum without an SVD routine.
    """
    r = np.asarray(r, float)
    m, n = r.shape
    aug = np.zeros((m + n, m + n))
    aug[:m, m:] = r
    aug[m:, :m] = r.T
    w, _ = jacobi_eigh(aug)
    sv = np.sort(w[w > 0])[::-1]
    return float(np.sum(sv[d:] ** 2)) / (m * n)
