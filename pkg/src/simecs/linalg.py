"""Small dense-matrix helpers shared by the rest of the package.

Matrices are plain 2-D ``float64`` numpy arrays in C (row-major) order.
Every public helper returns a fresh array and refuses to hand back
non-finite values.
"""

import numpy as np


def as_matrix(a, name="matrix"):
    """Coerce ``a`` to a fresh C-ordered 2-D float64 array."""
    arr = np.array(a, dtype=np.float64, order="C", copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(a, what="result"):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.ascontiguousarray(a @ b)
    return check_finite(out, "matmul")


def transpose(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-D array, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def frobenius_sq(a):
    """Sum of squared entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(check_finite(np.einsum("ij,ij->", a, a), "frobenius_sq"))


def masked_mse(a, b, mask=None):
    """Mean squared difference over entries where ``mask == 1``.

    Without a mask the mean runs over all entries. Works for any shape as
    long as ``a``, ``b`` (broadcastable scalar allowed) and ``mask`` agree.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape)
    diff2 = (a - b) ** 2
    if mask is None:
        if diff2.size == 0:
            raise ValueError("no observed entries")
        return float(check_finite(diff2.mean(), "masked_mse"))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {a.shape}")
    count = mask.sum()
    if count == 0:
        raise ValueError("no observed entries")
    return float(check_finite((diff2 * mask).sum() / count, "masked_mse"))
