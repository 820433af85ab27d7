"""Target similarity matrices: builders, centering, normalization, masks."""

from dataclasses import dataclass

import numpy as np

from .spectral import eig_sym_topd

# pixels above this fraction of the (normalized) maximum count as black
BINARIZE_THRESHOLD = 0.5


@dataclass
class TargetSpec:
    """Target relations for training.

    ``values`` is ``(m, n)`` for a single relation matrix or ``(m, n, k)`` for
    a stack of ``k`` slices. ``mask`` (``(m, n)``, shared by every slice)
    marks observed entries with 1; ``None`` means fully observed.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    kind: str = "square_symmetric"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[2] < 1:
            raise ValueError(f"target values must be (m, n) or (m, n, k), got {v.shape}")
        self.values = v
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=np.float64)
            if mask.shape != v.shape[:2]:
                raise ValueError(f"mask shape {mask.shape} does not match target {v.shape[:2]}")
            if not np.isin(mask, (0.0, 1.0)).all():
                raise ValueError("mask entries must be 0 or 1")
            self.mask = mask
        if self.kind not in ("square_symmetric", "rectangular"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "square_symmetric":
            m, n, _ = v.shape
            if m != n:
                raise ValueError(f"square_symmetric target must be square, got {m}x{n}")
            obs = np.ones((m, n), bool) if self.mask is None else self.mask.astype(bool)
            both = obs & obs.T
            for j in range(v.shape[2]):
                sl = v[:, :, j]
                if np.abs(np.where(both, sl - sl.T, 0.0)).max(initial=0.0) > 1e-10:
                    raise ValueError(f"slice {j} is not symmetric on its observed entries")

    @property
    def slices(self):
        """Values as a contiguous ``(k, m, n)`` array."""
        cached = getattr(self, "_slices", None)
        if cached is None or cached.shape != (self.k, *self.shape):
            cached = np.ascontiguousarray(np.moveaxis(self.values, -1, 0))
            self._slices = cached
        return cached

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def k(self):
        return self.values.shape[2]

    def matrix(self, j=0):
        return self.values[:, :, j]

    def columns(self, ids):
        """Restrict to the given target columns (result is rectangular)."""
        ids = np.asarray(ids, dtype=np.intp)
        mask = None if self.mask is None else self.mask[:, ids]
        return TargetSpec(self.values[:, ids, :], mask, "rectangular")

    def rows(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        mask = None if self.mask is None else self.mask[ids]
        return TargetSpec(self.values[ids], mask, "rectangular")


def _sq_dists(x):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    # cancellation makes tiny distances unreliable; recompute those directly
    ii, jj = np.nonzero(d2 <= 1e-8 * (sq[:, None] + sq[None, :]))
    if ii.size:
        d2[ii, jj] = ((x[ii] - x[jj]) ** 2).sum(axis=1)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def median_gamma(x):
    """``1 / (2 * median squared pairwise distance)`` over distinct pairs."""
    x = np.asarray(x, dtype=np.float64)
    d2 = _sq_dists(x)
    iu = np.triu_indices(x.shape[0], k=1)
    med = np.median(d2[iu])
    if med <= 0:
        raise ValueError("all points coincide; cannot pick an RBF width")
    return 1.0 / (2.0 * med)


def rbf_kernel(x, gamma):
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-gamma * _sq_dists(x))


def label_similarity(labels):
    labels = np.asarray(labels).ravel()
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def binarize(x, threshold=BINARIZE_THRESHOLD):
    """Binarize features: entries above ``threshold * max`` become 1."""
    x = np.asarray(x, dtype=np.float64)
    top = x.max()
    if top <= 0:
        raise ValueError("cannot binarize features without positive values")
    return (x > threshold * top).astype(np.float64)


def simpson_similarity(x_binary):
    """Overlap coefficient ``|A & B| / min(|A|, |B|)`` between binary rows."""
    b = np.asarray(x_binary, dtype=np.float64)
    counts = b.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"row {empty[0]} has no black pixels")
    inter = b @ b.T
    s = inter / np.minimum(counts[:, None], counts[None, :])
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return s


def center(s):
    """Double-center a square matrix (as for kernel PCA)."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"center expects a square matrix, got shape {s.shape}")
    c = s - s.mean(axis=0, keepdims=True) - s.mean(axis=1, keepdims=True) + s.mean()
    if np.array_equal(s, s.T):
        c = 0.5 * (c + c.T)
    return c


def normalize_range(s):
    """Scale so the largest absolute entry is exactly 1."""
    s = np.asarray(s, dtype=np.float64)
    top = np.abs(s).max(initial=0.0)
    if top == 0:
        raise ValueError("cannot normalize an all-zero matrix")
    return s / top


def normalize_by_top_eigenvalue(s, **solver_kw):
    """Divide by the eigenvalue of largest magnitude."""
    s = np.asarray(s, dtype=np.float64)
    lam = eig_sym_topd(s, 1, "largest_magnitude", **solver_kw).eigenvalues[0]
    if abs(lam) <= 1e-12 * max(np.linalg.norm(s), 1e-300):
        raise ValueError("largest-magnitude eigenvalue is zero")
    return s / lam


def random_mask(shape, fraction_missing, seed=0, symmetric=None):
    """Random 0/1 observation mask with roughly ``fraction_missing`` zeros.

    Square shapes get a symmetric mask (``(i, j)`` and ``(j, i)`` share fate)
    with the diagonal always observed, unless ``symmetric=False``.
    """
    if not 0 <= fraction_missing < 1:
        raise ValueError(f"fraction_missing must be in [0, 1), got {fraction_missing}")
    m, n = shape
    rng = np.random.default_rng(seed)
    if symmetric is None:
        symmetric = m == n
    if not symmetric:
        return (rng.random((m, n)) >= fraction_missing).astype(np.float64)
    if m != n:
        raise ValueError("a symmetric mask needs a square shape")
    # the diagonal is always kept, so drop slightly more off-diagonal pairs
    off = m * (m - 1)
    p_drop = min(1.0, fraction_missing * m * m / off) if off else 0.0
    upper = rng.random((m, m)) >= p_drop
    mask = np.triu(upper, k=1)
    mask = mask | mask.T
    np.fill_diagonal(mask, True)
    return mask.astype(np.float64)


def average_similarities(mats):
    mats = [np.asarray(s, dtype=np.float64) for s in mats]
    if not mats:
        raise ValueError("need at least one matrix to average")
    shape = mats[0].shape
    for s in mats[1:]:
        if s.shape != shape:
            raise ValueError(f"shape mismatch: {s.shape} vs {shape}")
    return np.mean(np.stack(mats), axis=0)
