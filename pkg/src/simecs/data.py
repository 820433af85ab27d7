"""Datasets: MNIST IDX files, preprocessing, subsampling, synthetic fixtures."""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    """Malformed IDX input."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # (m, D)
    labels: np.ndarray | None = None  # (m,)
    train_ids: np.ndarray | None = None
    test_ids: np.ndarray | None = None
    synthetic: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        m = self.features.shape[0]
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (m,):
                raise ValueError(f"expected {m} labels, got shape {self.labels.shape}")
        if self.train_ids is None:
            self.train_ids = np.arange(m)
            self.test_ids = np.arange(0)
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        self.test_ids = np.asarray(self.test_ids, dtype=np.int64)
        ids = np.concatenate([self.train_ids, self.test_ids])
        if ids.size != m or not np.array_equal(np.sort(ids), np.arange(m)):
            raise ValueError("train/test split must be disjoint and cover every row")

    @property
    def train(self):
        return self.features[self.train_ids]

    @property
    def test(self):
        return self.features[self.test_ids]


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw, magic, ndim, path):
    header = 4 + 4 * ndim
    if len(raw) >= 4:
        (found,) = struct.unpack_from(">I", raw, 0)
        if found != magic:
            raise IdxMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IMAGE_MAGIC, 3, path)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), LABEL_MAGIC, 1, path)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8).ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def load_mnist_idx(images_path, labels_path):
    """Read an MNIST image/label IDX pair (optionally gzipped) into a Dataset."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64)
    return Dataset(features, labels.astype(np.int64))


def find_mnist(data_dir, part="train"):
    """Paths of an MNIST image/label pair under ``data_dir`` or None."""
    if not data_dir:
        return None
    img, lab = MNIST_FILES[part]
    for suffix in ("", ".gz"):
        pi = os.path.join(data_dir, img + suffix)
        pl = os.path.join(data_dir, lab + suffix)
        if os.path.exists(pi) and os.path.exists(pl):
            return pi, pl
    return None


def preprocess(ds):
    """Zero-mean features scaled to a maximum absolute value of 1.

    Column means and the scale come from training rows only; test rows are
    shifted and scaled with the same statistics. Centering comes first so
    that running this twice changes nothing.
    """
    train = ds.features[ds.train_ids]
    if train.size == 0 or not np.any(train):
        raise ValueError("cannot preprocess all-zero features")
    means = train.mean(axis=0)
    centered = ds.features - means
    scale = np.abs(centered[ds.train_ids]).max()
    if scale == 0:
        raise ValueError("training features are constant; nothing to normalize")
    return Dataset(centered / scale, ds.labels, ds.train_ids, ds.test_ids, ds.synthetic)


def subsample(ds, m, classes=None, train_fraction=0.8, seed=0):
    """Random subset of ``m`` rows (after an optional class filter) with a fresh split."""
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must be in (0, 1]")
    pool = np.arange(ds.features.shape[0])
    if classes is not None:
        if ds.labels is None:
            raise ValueError("class filter needs labels")
        pool = pool[np.isin(ds.labels, sorted(classes))]
    if m > pool.size:
        raise ValueError(f"requested {m} rows but only {pool.size} are available")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=m, replace=False))
    n_train = int(round(train_fraction * m))
    perm = rng.permutation(m)
    labels = None if ds.labels is None else ds.labels[chosen]
    return Dataset(ds.features[chosen], labels, np.sort(perm[:n_train]), np.sort(perm[n_train:]),
                   ds.synthetic)


def synth_lowrank(m, d_true, noise=0.0, seed=0, input_dim=None, feature_noise=None):
    """Latent-factor fixture: features informative about a rank-``d_true`` target.

    ``Z`` is standard normal, ``S = Z Z^T`` plus symmetric Gaussian noise of
    scale ``noise``, and the features are ``Z Q`` (``Q`` with orthonormal
    rows) plus Gaussian feature noise (scale ``feature_noise``, which
    defaults to ``noise``).
    """
    if not 1 <= d_true <= m:
        raise ValueError(f"need 1 <= d_true <= m, got d_true={d_true}, m={m}")
    rng = np.random.default_rng(seed)
    D = input_dim or 2 * d_true
    if D < d_true:
        raise ValueError("input_dim must be >= d_true")
    z = rng.standard_normal((m, d_true))
    q, _ = np.linalg.qr(rng.standard_normal((D, d_true)))
    s = z @ z.T
    if noise > 0:
        e = rng.standard_normal((m, m)) * noise
        s = s + (e + e.T) / np.sqrt(2.0)
    s = 0.5 * (s + s.T)
    features = z @ q.T
    feature_noise = noise if feature_noise is None else feature_noise
    if feature_noise > 0:
        features = features + feature_noise * rng.standard_normal(features.shape)
    return features, s


# seven-segment strokes in a 1 x 2 box (x right, y down)
_SEGMENTS = {
    "a": ((0, 0), (1, 0)), "b": ((1, 0), (1, 1)), "c": ((1, 1), (1, 2)), "d": ((0, 2), (1, 2)),
    "e": ((0, 1), (0, 2)), "f": ((0, 0), (0, 1)), "g": ((0, 1), (1, 1)),
    "diag": ((1, 0), (0.35, 2)),
}
_DIGITS = {0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc", 5: "afgcd", 6: "afgedc",
           7: ["a", "diag"], 8: "abcdefg", 9: "abcdfg"}


def synth_digits(m, classes=range(10), seed=0, size=28):
    """Stroke-rendered digit images as an offline stand-in for MNIST.

    Each image draws its class's strokes with random jitter, slant, scale,
    position and stroke weight. Pixel values are 0..255.
    """
    rng = np.random.default_rng(seed)
    classes = list(classes)
    labels = rng.choice(classes, size=m)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1)  # (P, 2)
    images = np.zeros((m, size * size))
    for i, lab in enumerate(labels):
        segs = np.array([_SEGMENTS[s] for s in _DIGITS[int(lab)]], dtype=np.float64)  # (S, 2, 2)
        segs = segs + rng.normal(0, 0.06, size=segs.shape)
        slant = rng.uniform(-0.25, 0.25)
        segs[..., 0] += slant * (2 - segs[..., 1])
        h = rng.uniform(0.55, 0.68) * size / 2
        w = h * rng.uniform(0.5, 0.75)
        off = np.array([size / 2 - w / 2 + rng.normal(0, 1.0), size / 2 - h + rng.normal(0, 1.0)])
        segs = segs * np.array([w, h]) + off
        thick = rng.uniform(0.3, 3.0)
        a, b = segs[:, 0], segs[:, 1]  # (S, 2)
        ab = b - a
        t = np.clip(((pix[:, None, :] - a) * ab).sum(-1) / (ab * ab).sum(-1), 0, 1)  # (P, S)
        closest = a + t[..., None] * ab
        dist = np.sqrt(((pix[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)
        images[i] = np.clip(thick + 0.5 - dist, 0, 1)
    return Dataset(np.round(images * 255.0), labels.astype(np.int64), synthetic=True)


def load_digits(data_dir, m, classes=None, seed=0, train_fraction=0.8):
    """MNIST subset from ``data_dir`` if the IDX files exist, else synthetic digits.

    The result is subsampled and split but not preprocessed.
    """
    paths = find_mnist(data_dir, "train")
    if paths is not None:
        ds = load_mnist_idx(*paths)
    else:
        pool = list(classes) if classes is not None else list(range(10))
        ds = synth_digits(m, pool, seed=seed)
    return subsample(ds, m, classes, train_fraction, seed)
