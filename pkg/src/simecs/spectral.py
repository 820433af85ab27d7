"""Symmetric eigensolver and the spectral embedding baselines.

The solver is a block (orthogonal) subspace iteration with a Rayleigh-Ritz
step after every block multiply. Only the top ``d`` pairs are ever needed,
so the block is kept small (``d`` plus some oversampling) instead of paying
for a full ``O(m^3)`` factorization.
"""

from dataclasses import dataclass

import numpy as np

CRITERIA = ("largest_positive", "most_negative", "largest_magnitude")


class ConvergenceError(RuntimeError):
    """Raised when subspace iteration exhausts its iteration budget."""


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # (d,)
    eigenvectors: np.ndarray  # (m, d), orthonormal columns
    iterations: int = 0

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class SignedEmbedding:
    coords: np.ndarray  # (m, d)
    signs: np.ndarray  # (d,) of +1 / -1

    def reconstruct(self):
        return (self.coords * self.signs) @ self.coords.T

    def positive_part(self):
        """Gram matrix of the coordinates belonging to positive eigenvalues."""
        c = self.coords[:, self.signs > 0]
        return c @ c.T

    def negative_part(self):
        """Gram matrix of the coordinates belonging to negative eigenvalues (as a PSD matrix)."""
        c = self.coords[:, self.signs < 0]
        return c @ c.T


def _symmetrize(s):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    return 0.5 * (s + s.T)


def _top_algebraic(s, d, tol, max_iter, rng, block=None):
    """Top-``d`` algebraically largest eigenpairs of symmetric ``s``.

    Runs on ``s + shift*I`` where the shift (a Gershgorin bound) makes the
    spectrum non-negative, so the wanted pairs dominate the block iteration.
    Converged once every wanted Ritz pair has a residual below
    ``tol * ||s||_F`` or the wanted subspace moves by less than ``tol``.
    """
    m = s.shape[0]
    p = min(m, block if block is not None else d + max(d, 10))
    scale = np.linalg.norm(s)
    if scale == 0.0:
        return np.zeros(d), np.eye(m, d), 0
    shift = np.abs(s).sum(axis=1).max()
    a = s + shift * np.eye(m)

    q, _ = np.linalg.qr(rng.standard_normal((m, p)))
    aq = a @ q
    prev = None
    for it in range(1, max_iter + 1):
        h = q.T @ aq
        theta, w = np.linalg.eigh(0.5 * (h + h.T))
        order = np.argsort(-theta, kind="stable")
        theta, w = theta[order], w[:, order]
        q = q @ w
        aq = aq @ w
        lam = theta[:d] - shift
        resid = np.linalg.norm(aq[:, :d] - q[:, :d] * theta[:d], axis=0)
        done = p == m or resid.max() <= tol * scale
        if not done and prev is not None:
            moved = q[:, :d] - prev @ (prev.T @ q[:, :d])
            done = np.linalg.norm(moved) < tol
        if done:
            return lam, q[:, :d].copy(), it
        prev = q[:, :d].copy()
        q, _ = np.linalg.qr(aq)
        aq = a @ q
    raise ConvergenceError(
        f"subspace iteration did not converge in {max_iter} iterations "
        f"(max residual {resid.max() / scale:.3e} relative)"
    )


def eig_sym_topd(s, d, criterion="largest_positive", tol=1e-10, max_iter=10000, seed=0, block=None):
    """Top-``d`` eigenpairs of a symmetric matrix under ``criterion``.

    Parameters
    ----------
    s : array (m, m)
        Symmetric matrix; it is symmetrized as ``(s + s.T) / 2`` first.
    d : int
        Number of eigenpairs, ``1 <= d <= m``.
    criterion : {"largest_positive", "most_negative", "largest_magnitude"}
        Largest algebraic values, most negative values, or largest absolute
        values (the latter merges the two one-sided runs).

    Returns
    -------
    EigenDecomposition
        Eigenvalues ordered by the criterion (descending, ascending, or by
        descending magnitude) with matching orthonormal eigenvector columns.
    """
    s = _symmetrize(s)
    m = s.shape[0]
    if not 1 <= d <= m:
        raise ValueError(f"d must be in [1, {m}], got {d}")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    rng = np.random.default_rng(seed)

    if criterion == "largest_positive":
        lam, vec, it = _top_algebraic(s, d, tol, max_iter, rng, block)
        return EigenDecomposition(lam, vec, it)
    if criterion == "most_negative":
        lam, vec, it = _top_algebraic(-s, d, tol, max_iter, rng, block)
        return EigenDecomposition(-lam, vec, it)

    lp, vp, itp = _top_algebraic(s, d, tol, max_iter, rng, block)
    ln, vn, itn = _top_algebraic(-s, d, tol, max_iter, rng, block)
    ln = -ln
    eps = 1e-12 * max(np.linalg.norm(s), 1.0)
    # each side only contributes eigenvalues of its own sign, so no pair is taken twice
    keep_p, keep_n = lp > -eps, ln < -eps
    lam = np.concatenate([lp[keep_p], ln[keep_n]])
    vec = np.concatenate([vp[:, keep_p], vn[:, keep_n]], axis=1)
    order = np.argsort(-np.abs(lam), kind="stable")[:d]
    lam, vec = lam[order], vec[:, order]
    # near-zero pairs can come from either run; keep the basis orthonormal
    zero = np.abs(lam) <= eps
    if zero.any():
        qz, _ = np.linalg.qr(vec[:, zero] - vec[:, ~zero] @ (vec[:, ~zero].T @ vec[:, zero]))
        vec = vec.copy()
        vec[:, zero] = qz
    return EigenDecomposition(lam, vec, itp + itn)


def kpca_embed(s, d, **solver_kw):
    """Kernel PCA embedding ``U_d sqrt(Lambda_d)`` of a centered similarity matrix.

    Eigenpairs with non-positive eigenvalues yield all-zero columns, so the
    output is always ``(m, d)``.
    """
    eig = eig_sym_topd(s, d, "largest_positive", **solver_kw)
    return eig.eigenvectors * np.sqrt(np.clip(eig.eigenvalues, 0.0, None))


def signed_embed(s, d, **solver_kw):
    """Embedding from the ``d`` eigenpairs of largest magnitude, keeping their signs."""
    eig = eig_sym_topd(s, d, "largest_magnitude", **solver_kw)
    coords = eig.eigenvectors * np.sqrt(np.abs(eig.eigenvalues))
    signs = np.where(eig.eigenvalues < 0, -1.0, 1.0)
    return SignedEmbedding(coords, signs)


def mean_fill_embed(s, mask, d, **solver_kw):
    """kPCA embedding after replacing unobserved entries by the observed mean."""
    s = np.asarray(s, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != s.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {s.shape}")
    if not mask.any():
        raise ValueError("no observed entries")
    filled = np.where(mask, s, s[mask].mean())
    return kpca_embed(0.5 * (filled + filled.T), d, **solver_kw)


def regression_baseline(x, y_spectral, ridge=1e-3):
    """Closed-form ridge regression ``W = argmin ||XW - Y||^2 + ridge ||W||^2``.

    With ``ridge == 0`` the minimum-norm least-squares solution is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y_spectral, dtype=np.float64)
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: x {x.shape} vs y {y.shape}")
    if ridge == 0:
        return np.linalg.lstsq(x, y, rcond=None)[0]
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    return np.linalg.solve(gram, x.T @ y)
