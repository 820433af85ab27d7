"""Similarity encoder models: configuration, training, prediction, storage."""

import struct
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import net
from .similarity import TargetSpec, average_similarities, normalize_by_top_eigenvalue


class TrainingError(RuntimeError):
    pass


@dataclass
class SimEcConfig:
    input_dim: int
    embed_dim: int
    hidden_sizes: tuple = ()
    n_targets: int | None = None  # None: every target column
    k: int = 1
    lambda_sym: float = 0.0
    lambda_orth: float = 0.0
    lambda_l2: float = 0.0
    output_bounds: tuple | None = None
    lr: float = 1e-3
    lr_final: float = 1.0  # learning rate decays geometrically to lr * lr_final
    epochs: int = 1000
    batch_rows: int = 0  # 0: full batch
    seed: int = 0
    hidden_activation: str = "tanh"
    embed_bias: bool = True

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.output_bounds is not None:
            self.output_bounds = tuple(float(b) for b in self.output_bounds)
        if self.embed_dim < 1 or self.input_dim < 1:
            raise ValueError("input_dim and embed_dim must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lambda_sym > 0 and self.k != 1:
            raise ValueError("lambda_sym > 0 requires k == 1")
        if self.lr <= 0 or not 0 < self.lr_final <= 1:
            raise ValueError("need lr > 0 and 0 < lr_final <= 1")

    def layer_sizes(self):
        return [self.input_dim, *self.hidden_sizes, self.embed_dim]

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = ""
            elif isinstance(v, tuple):
                v = ",".join(repr(e) for e in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values (as read from a key=value file)."""
        kw = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = str(mapping[f.name]).strip()
            kw[f.name] = _parse_field(f.name, raw)
        return cls(**kw)


_INT_FIELDS = {"input_dim", "embed_dim", "k", "epochs", "batch_rows", "seed"}
_FLOAT_FIELDS = {"lambda_sym", "lambda_orth", "lambda_l2", "lr", "lr_final"}


def _parse_field(name, raw):
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name == "n_targets":
        return int(raw) if raw else None
    if name == "hidden_sizes":
        return tuple(int(h) for h in raw.split(",") if h.strip())
    if name == "output_bounds":
        return tuple(float(b) for b in raw.split(",")) if raw else None
    if name == "embed_bias":
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"embed_bias must be a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    return raw


@dataclass
class TrainReport:
    losses: list
    relation_mse: float  # masked MSE of Y W_l vs the trained target columns
    relation_mse_per_slice: list
    gram_mse: float | None = None  # MSE of Y Y^T vs the full square target (all entries)
    gram_mse_per_slice: list | None = None
    wall_time: float = 0.0

    def as_rows(self):
        rows = [("relation_mse", self.relation_mse)]
        if self.gram_mse is not None:
            rows.append(("gram_mse", self.gram_mse))
        if len(self.relation_mse_per_slice) > 1:
            rows += [(f"relation_mse_slice{j}", v) for j, v in enumerate(self.relation_mse_per_slice)]
            if self.gram_mse_per_slice is not None:
                rows += [(f"gram_mse_slice{j}", v) for j, v in enumerate(self.gram_mse_per_slice)]
        rows += [("final_loss", self.losses[-1]), ("epochs", len(self.losses)),
                 ("wall_time", self.wall_time)]
        return rows


@dataclass
class SimEcModel:
    params: net.NetworkParams
    config: SimEcConfig
    target_column_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.target_column_ids is None:
            self.target_column_ids = np.arange(self.params.n_targets)
        self.target_column_ids = np.asarray(self.target_column_ids, dtype=np.int64)
        if self.target_column_ids.shape != (self.params.n_targets,):
            raise ValueError("target_column_ids must have one id per relation column")


def _select_columns(cfg, target, target_ids):
    n_total = target.shape[1]
    if target_ids is not None:
        ids = np.asarray(target_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0 or ids.min() < 0 or ids.max() >= n_total:
            raise ValueError(f"target ids must index the {n_total} target columns")
        if cfg.n_targets is not None and cfg.n_targets != ids.size:
            raise ValueError(f"n_targets={cfg.n_targets} but {ids.size} target ids given")
        return ids
    n = n_total if cfg.n_targets is None else cfg.n_targets
    if not 1 <= n <= n_total:
        raise ValueError(f"n_targets={n} exceeds the {n_total} available target columns")
    return np.arange(n)


def _objective(cfg, target, ids):
    if cfg.lambda_sym <= 0:
        return net.ObjectiveConfig(0.0, cfg.lambda_orth, cfg.lambda_l2)
    m, n_total = target.shape
    if m != n_total:
        raise ValueError("lambda_sym > 0 needs a square target")
    sym = target.matrix(0)[np.ix_(ids, ids)]
    sym_mask = None if target.mask is None else target.mask[np.ix_(ids, ids)]
    return net.ObjectiveConfig(cfg.lambda_sym, cfg.lambda_orth, cfg.lambda_l2, sym, sym_mask)


def evaluate(model, x, target):
    """Relation and Gram-approximation errors of ``model`` on ``(x, target)``.

    ``target`` is the full target (all columns); the relation error uses the
    model's target columns and honours the mask, the Gram error compares
    ``Y Y^T`` against every entry of a square target (no mask).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != target.shape[0]:
        raise ValueError(f"input has {x.shape[0]} rows, target has {target.shape[0]}")
    sub = target.columns(model.target_column_ids)
    if sub.k != model.params.k:
        raise ValueError(f"target has k={sub.k} slices, model predicts k={model.params.k}")
    y = embed(model, x)
    _, pred = net._relations(model.params, y)
    t = sub.slices
    if sub.mask is None:
        per_slice = [float(np.mean((pred[j] - t[j]) ** 2)) for j in range(sub.k)]
    else:
        cnt = sub.mask.sum()
        if cnt == 0:
            raise ValueError("no observed entries")
        per_slice = [float(np.sum(sub.mask * (pred[j] - t[j]) ** 2) / cnt) for j in range(sub.k)]
    rel = float(np.mean(per_slice))
    gram = gram_per = None
    if target.shape[0] == target.shape[1]:
        g = _gram(y)
        gram_per = [float(np.mean((g - target.slices[j]) ** 2)) for j in range(target.k)]
        gram = float(np.mean(gram_per))
    return rel, per_slice, gram, gram_per


def train(cfg, x, target, target_ids=None, fixed_relation=None):
    """Train a similarity encoder.

    Parameters
    ----------
    cfg : SimEcConfig
    x : array (m, D)
        Input feature vectors, one row per target row.
    target : TargetSpec
        Full target relations ``(m, N[, k])``; the model predicts ``n``
        columns of it (the first ``cfg.n_targets`` unless ``target_ids``).
    fixed_relation : array (d, n) or (k, d, n), optional
        Keep the last layer frozen at these values (second stage of dual
        training).

    Returns
    -------
    (SimEcModel, TrainReport)
    """
    start = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input_dim={cfg.input_dim}")
    if x.shape[0] != target.shape[0]:
        raise ValueError(f"input has {x.shape[0]} rows, target has {target.shape[0]}")
    if target.k != cfg.k:
        raise ValueError(f"target has k={target.k} slices but config says k={cfg.k}")
    ids = _select_columns(cfg, target, target_ids)
    sub = target.columns(ids)
    obj = _objective(cfg, target, ids)

    params = net.init(cfg.layer_sizes(), ids.size, cfg.k, seed=cfg.seed,
                      hidden_activation=cfg.hidden_activation, embed_bias=cfg.embed_bias,
                      output_bounds=cfg.output_bounds)
    frozen = ()
    if fixed_relation is not None:
        rel = np.array(fixed_relation, dtype=np.float64)
        if rel.ndim == 2:
            rel = rel[None]
        if rel.shape != params.relation.shape:
            raise ValueError(f"fixed relation shape {rel.shape} != {params.relation.shape}")
        params = net.NetworkParams(params.encoder, rel, params.output_bounds)
        frozen = (len(params.arrays()) - 1,)

    arrays = params.arrays()
    state = net.AdamState.zeros_like(arrays)
    rng = np.random.default_rng(cfg.seed)
    m = x.shape[0]
    batch = cfg.batch_rows if 0 < cfg.batch_rows < m else m
    decay = cfg.lr_final ** (1.0 / max(cfg.epochs - 1, 1))
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr * decay ** epoch
        order = rng.permutation(m) if batch < m else None
        batch_losses = []
        for lo in range(0, m, batch):
            if order is None:
                xb, tb = x, sub
            else:
                rows = order[lo:lo + batch]
                xb, tb = x[rows], sub.rows(rows)
                if tb.mask is not None and tb.mask.sum() == 0:
                    continue
            try:
                value, grads = net.loss_and_grad(params, xb, tb, obj)
            except FloatingPointError:
                raise TrainingError(f"non-finite loss at epoch {epoch}") from None
            arrays, state = net.adam_step(arrays, grads.arrays(), state, lr=lr, frozen=frozen)
            params = params.with_arrays(arrays)
            batch_losses.append(value)
        losses.append(float(np.mean(batch_losses)))

    model = SimEcModel(params, cfg, ids)
    rel, per, gram, gram_per = evaluate(model, x, target)
    report = TrainReport(losses, rel, per, gram, gram_per, time.perf_counter() - start)
    return model, report


def _check_x(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input_dim={model.config.input_dim}")
    return x


def embed(model, x_new):
    """Out-of-sample embedding ``f'(x)``."""
    return net.forward_embed(model.params, _check_x(model, x_new))


def predict_relations(model, x_new):
    """Predicted relations to the model's target columns, shape ``(rows, n, k)``."""
    return net.forward_full(model.params, _check_x(model, x_new))


def _gram(y):
    g = y @ y.T
    return 0.5 * (g + g.T)


def gram_approx(model, x):
    """``Y Y^T`` for ``Y = embed(model, x)``; exactly symmetric."""
    return _gram(embed(model, x))


def identity_factorize(target, d, lambda_orth=0.0, lambda_sym=0.0, lambda_l2=0.0,
                       lr=1e-2, epochs=2000, lr_final=1.0, seed=0):
    """Low-rank factorization ``R ~ W_1 W_2`` by training on ``X = I_m``.

    A single linear layer without bias realizes ``W_1``; the relation layer
    is ``W_2``.
    """
    m = target.shape[0]
    cfg = SimEcConfig(input_dim=m, embed_dim=d, k=target.k, lambda_sym=lambda_sym,
                      lambda_orth=lambda_orth, lambda_l2=lambda_l2, lr=lr, lr_final=lr_final,
                      epochs=epochs, seed=seed, embed_bias=False)
    return train(cfg, np.eye(m), target)


def train_dual(cfg1, cfg2, x1, x2, r):
    """Two encoders mapping both sides of a rectangular ``R`` into one space.

    Stage 1 trains ``f_1`` on ``(x1, R)``. Its training embeddings ``Y_1``
    then become the frozen last layer (``W_l = Y_1^T``) of ``f_2``, trained
    on ``(x2, R^T)``, so that ``f_1'(X_1) f_2'(X_2)^T ~ R``.
    """
    if cfg1.embed_dim != cfg2.embed_dim:
        raise ValueError(f"embedding sizes differ: {cfg1.embed_dim} vs {cfg2.embed_dim}")
    if r.k != 1:
        raise ValueError("dual training expects a single relation matrix")
    m, n = r.shape
    model1, _ = train(cfg1, x1, r)
    y1 = embed(model1, x1)
    rt = TargetSpec(r.matrix(0).T, None if r.mask is None else r.mask.T, "rectangular")
    if cfg2.n_targets not in (None, m):
        raise ValueError(f"second stage must predict all {m} rows of R")
    model2, _ = train(cfg2, x2, rt, fixed_relation=y1.T)
    return model1, model2


def dual_predict(model1, model2, x1, x2):
    """``Y_1 Y_2^T`` for new rows of either side."""
    return embed(model1, x1) @ embed(model2, x2).T


def multi_similarity_target(mats, mode="stacked"):
    """Target built from several similarity matrices.

    Each matrix is first divided by its largest-magnitude eigenvalue.
    ``averaged`` returns their elementwise mean (``k == 1``); ``stacked``
    keeps them as ``k`` slices.
    """
    if len(mats) < 2:
        raise ValueError("need at least two similarity matrices")
    shape = np.shape(mats[0])
    for s in mats:
        if np.shape(s) != shape:
            raise ValueError(f"shape mismatch: {np.shape(s)} vs {shape}")
    normed = [normalize_by_top_eigenvalue(s) for s in mats]
    if mode == "averaged":
        return TargetSpec(average_similarities(normed))
    if mode == "stacked":
        return TargetSpec(np.stack(normed, axis=-1))
    raise ValueError(f"unknown mode {mode!r}; expected 'averaged' or 'stacked'")


# --- storage -----------------------------------------------------------------

MAGIC = b"SIMEC1"


def _model_arrays(model):
    """Matrices in file order: per layer W then b (as 1 x fan_out), then each W_l slice."""
    mats = []
    for layer in model.params.encoder:
        mats.append(layer.weights)
        if layer.bias is not None:
            mats.append(layer.bias.reshape(1, -1))
    mats.extend(model.params.relation)
    return mats


def dumps_model(model):
    text = model.config.to_text()
    text += "target_column_ids=" + ",".join(str(int(i)) for i in model.target_column_ids) + "\n"
    blob = text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for mat in _model_arrays(model):
        mat = np.ascontiguousarray(mat, dtype="<f8")
        parts.append(struct.pack("<II", *mat.shape))
        parts.append(mat.tobytes(order="C"))
    return b"".join(parts)


def loads_model(data):
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not a SIMEC1 model file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise ValueError("truncated model file")
    (n_text,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + n_text:
        raise ValueError("truncated model file")
    mapping = {}
    for line in data[pos:pos + n_text].decode("utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            mapping[key.strip()] = value
    pos += n_text
    cfg = SimEcConfig.from_mapping(mapping)
    ids = np.array([int(i) for i in mapping.get("target_column_ids", "").split(",") if i],
                   dtype=np.int64)

    mats = []
    while pos < len(data):
        if len(data) < pos + 8:
            raise ValueError("truncated model file")
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        nbytes = rows * cols * 8
        if len(data) < pos + nbytes:
            raise ValueError("truncated model file")
        mats.append(np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
                    .reshape(rows, cols).astype(np.float64))
        pos += nbytes

    skeleton = net.init(cfg.layer_sizes(), max(len(ids), 1), cfg.k,
                        hidden_activation=cfg.hidden_activation, embed_bias=cfg.embed_bias,
                        output_bounds=cfg.output_bounds)
    n_encoder = sum(1 + (layer.bias is not None) for layer in skeleton.encoder)
    if len(mats) != n_encoder + cfg.k:
        raise ValueError(f"expected {n_encoder + cfg.k} matrices, found {len(mats)}")
    arrays = []
    it = iter(mats)
    for layer in skeleton.encoder:
        w = next(it)
        if w.shape != layer.weights.shape:
            raise ValueError(f"layer weight shape {w.shape} != expected {layer.weights.shape}")
        arrays.append(w)
        if layer.bias is not None:
            arrays.append(next(it).ravel())
    arrays.append(np.stack(list(it)))
    params = skeleton.with_arrays(arrays)
    return SimEcModel(params, cfg, ids)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
