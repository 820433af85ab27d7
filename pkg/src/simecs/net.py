"""Feed-forward engine for similarity encoders.

The network is a stack of encoder layers ``f'`` (tanh hidden layers and a
linear embedding layer) followed by ``k`` relation matrices ``W_l`` of shape
``(d, n)``. Gradients of the full objective are derived by hand.

Objective (all terms are means, so the lambdas do not depend on m, n, d)::

    mean_obs (act(Y W_l) - T)^2                      data term, observed entries only
    + lambda_sym  * mean_obs (S_nn - W_l^T W_l)^2    k == 1 only
    + lambda_orth * mean_offdiag (W_l W_l^T)^2       averaged over slices
    + lambda_l2   * mean (all weights)^2             biases excluded
"""

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("linear", "tanh")


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray | None = None  # (fan_out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[1],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weights {self.weights.shape}")


@dataclass
class NetworkParams:
    encoder: list  # list[Layer], realizes f'
    relation: np.ndarray  # (k, d, n), realizes W_l
    output_bounds: tuple | None = None  # (lo, hi) for a bounded output, else identity

    def __post_init__(self):
        if not self.encoder:
            raise ValueError("need at least one encoder layer")
        if self.encoder[-1].activation != "linear":
            raise ValueError("the embedding layer must be linear")
        for a, b in zip(self.encoder, self.encoder[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.weights.shape} -> {b.weights.shape}")
        self.relation = np.asarray(self.relation, dtype=np.float64)
        if self.relation.ndim == 2:
            self.relation = self.relation[None]
        if self.relation.shape[1] != self.embed_dim:
            raise ValueError(
                f"relation weights {self.relation.shape} do not match embedding width {self.embed_dim}"
            )
        if self.output_bounds is not None:
            lo, hi = self.output_bounds
            if not lo < hi:
                raise ValueError(f"invalid output bounds {self.output_bounds}")
            self.output_bounds = (float(lo), float(hi))

    @property
    def input_dim(self):
        return self.encoder[0].weights.shape[0]

    @property
    def embed_dim(self):
        return self.encoder[-1].weights.shape[1]

    @property
    def n_targets(self):
        return self.relation.shape[2]

    @property
    def k(self):
        return self.relation.shape[0]

    def arrays(self):
        """All parameter arrays in a fixed order: per layer W (and b), then W_l."""
        out = []
        for layer in self.encoder:
            out.append(layer.weights)
            if layer.bias is not None:
                out.append(layer.bias)
        out.append(self.relation)
        return out

    def weight_flags(self):
        """Parallel to ``arrays()``: True for weight matrices, False for biases."""
        flags = []
        for layer in self.encoder:
            flags.append(True)
            if layer.bias is not None:
                flags.append(False)
        flags.append(True)
        return flags

    def with_arrays(self, arrays):
        """A new NetworkParams of the same structure holding ``arrays``."""
        it = iter(arrays)
        layers = []
        for layer in self.encoder:
            w = next(it)
            b = next(it) if layer.bias is not None else None
            layers.append(Layer(w, b, layer.activation))
        return NetworkParams(layers, next(it), self.output_bounds)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass
class ObjectiveConfig:
    lambda_sym: float = 0.0
    lambda_orth: float = 0.0
    lambda_l2: float = 0.0
    sym_target: np.ndarray | None = None  # (n, n) block S[:n, :n]
    sym_mask: np.ndarray | None = None  # observed entries of sym_target

    def __post_init__(self):
        for name in ("lambda_sym", "lambda_orth", "lambda_l2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lambda_sym > 0:
            if self.sym_target is None:
                raise ValueError("lambda_sym > 0 requires sym_target")
            st = np.asarray(self.sym_target, dtype=np.float64)
            if st.ndim != 2 or st.shape[0] != st.shape[1]:
                raise ValueError(f"sym_target must be square, got {st.shape}")
            self.sym_target = st
            if self.sym_mask is not None:
                self.sym_mask = np.asarray(self.sym_mask, dtype=np.float64)
                if self.sym_mask.shape != st.shape:
                    raise ValueError("sym_mask shape must match sym_target")


def init(layer_sizes, n_targets, k=1, seed=0, hidden_activation="tanh", embed_bias=True,
         output_bounds=None):
    """Glorot-uniform initialization.

    ``layer_sizes`` is the encoder shape chain ``[D, h_1, ..., d]``. Hidden
    layers get ``hidden_activation`` and a bias; the embedding layer is
    linear and gets a bias only if ``embed_bias``. Relation weights have no
    bias. Biases start at zero.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1 or n_targets < 1 or k < 1:
        raise ValueError(f"invalid shape chain {layer_sizes} with n={n_targets}, k={k}")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out, shape):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        act = "linear" if last else hidden_activation
        bias = np.zeros(fo) if (not last or embed_bias) else None
        layers.append(Layer(glorot(fi, fo, (fi, fo)), bias, act))
    d = sizes[-1]
    relation = glorot(d, n_targets, (k, d, n_targets))
    return NetworkParams(layers, relation, output_bounds)


def _check_input(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.input_dim:
        raise ValueError(f"input shape {x.shape} does not match network input dim {p.input_dim}")
    return x


def _encode(p, x):
    hs = [x]
    h = x
    for layer in p.encoder:
        a = h @ layer.weights
        if layer.bias is not None:
            a = a + layer.bias
        h = np.tanh(a) if layer.activation == "tanh" else a
        hs.append(h)
    return hs


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relations(p, y):
    # slice-major (k, rows, n) internally; BLAS does each slice
    z = np.matmul(y[None], p.relation)
    if p.output_bounds is None:
        return z, z
    lo, hi = p.output_bounds
    return z, lo + (hi - lo) * _sigmoid(z)


def forward_embed(p, x):
    """Embedding ``Y = f'(X)``, shape ``(rows, d)``."""
    return _encode(p, _check_input(p, x))[-1]


def forward_full(p, x):
    """Relation predictions ``act(Y W_l)``, shape ``(rows, n, k)``."""
    _, out = _relations(p, forward_embed(p, x))
    return np.moveaxis(out, 0, -1)


def _target_arrays(target, rows):
    slices = target.slices
    if slices.shape[1] != rows:
        raise ValueError(f"target has {slices.shape[1]} rows but input has {rows}")
    return slices, target.mask


def _check_objective(p, obj):
    if obj.lambda_sym > 0:
        if p.k != 1:
            raise ValueError("lambda_sym > 0 is only defined for a single relation slice (k == 1)")
        if obj.sym_target.shape != (p.n_targets, p.n_targets):
            raise ValueError(
                f"sym_target shape {obj.sym_target.shape} does not match n_targets={p.n_targets}"
            )


def loss_and_grad(p, x, target, obj, need_grad=True):
    """Objective value and its exact gradient (a NetworkParams-shaped result).

    Returns ``(loss, grads)``; ``grads`` is ``None`` when ``need_grad`` is false.
    """
    x = _check_input(p, x)
    _check_objective(p, obj)
    t, mask = _target_arrays(target, x.shape[0])
    if (t.shape[0], t.shape[2]) != (p.k, p.n_targets):
        raise ValueError(
            f"target has k={t.shape[0]}, n={t.shape[2]} but network outputs k={p.k}, n={p.n_targets}"
        )

    hs = _encode(p, x)
    y = hs[-1]
    z, out = _relations(p, y)
    res = out - t
    if mask is not None:
        res = res * mask
        n_obs = mask.sum() * p.k
    else:
        n_obs = res.size
    with np.errstate(over="ignore", invalid="ignore"):
        sq = float(np.sum(res * res))
    if n_obs == 0:
        raise ValueError("no observed entries")
    total = sq / n_obs

    w_rel = p.relation
    flags = p.weight_flags()
    arrays = p.arrays()
    n_weights = sum(a.size for a, f in zip(arrays, flags) if f)
    if obj.lambda_l2 > 0:
        total += obj.lambda_l2 * sum(float(np.sum(a * a)) for a, f in zip(arrays, flags) if f) / n_weights

    d = p.embed_dim
    if obj.lambda_orth > 0 and d > 1:
        off = 1.0 - np.eye(d)
        gram = np.einsum("kdn,ken->kde", w_rel, w_rel) * off
        total += obj.lambda_orth * float(np.sum(gram * gram)) / (p.k * d * (d - 1))
    if obj.lambda_sym > 0:
        w = w_rel[0]
        err = obj.sym_target - w.T @ w
        n_sym = err.size
        if obj.sym_mask is not None:
            err = err * obj.sym_mask
            n_sym = obj.sym_mask.sum()
        total += obj.lambda_sym * float(np.sum(err * err)) / n_sym

    if not np.isfinite(total):
        raise FloatingPointError("loss is not finite")
    if not need_grad:
        return total, None

    # data term
    dz = res * (2.0 / n_obs)
    if p.output_bounds is not None:
        lo, hi = p.output_bounds
        sg = (out - lo) / (hi - lo)
        dz = dz * ((hi - lo) * sg * (1.0 - sg))
    g_rel = np.matmul(y.T[None], dz)
    dy = np.matmul(dz, np.swapaxes(w_rel, 1, 2)).sum(axis=0)

    if obj.lambda_orth > 0 and d > 1:
        g_rel += (4.0 * obj.lambda_orth / (p.k * d * (d - 1))) * np.einsum("kde,ken->kdn", gram, w_rel)
    if obj.lambda_sym > 0:
        g_rel[0] -= (2.0 * obj.lambda_sym / n_sym) * (w @ (err + err.T))

    # encoder, last layer first
    g_layers = []
    dh = dy
    for i in range(len(p.encoder) - 1, -1, -1):
        layer = p.encoder[i]
        h_in, h_out = hs[i], hs[i + 1]
        da = dh * (1.0 - h_out * h_out) if layer.activation == "tanh" else dh
        gw = h_in.T @ da
        gb = da.sum(axis=0) if layer.bias is not None else None
        g_layers.append((gw, gb))
        if i > 0:
            dh = da @ layer.weights.T
    g_layers.reverse()

    grads = []
    for gw, gb in g_layers:
        grads.append(gw)
        if gb is not None:
            grads.append(gb)
    grads.append(g_rel)
    if obj.lambda_l2 > 0:
        scale = 2.0 * obj.lambda_l2 / n_weights
        grads = [g + scale * a if f else g for g, a, f in zip(grads, arrays, flags)]
    return total, p.with_arrays(grads)


def loss(p, x, target, obj):
    return loss_and_grad(p, x, target, obj, need_grad=False)[0]


def backward(p, x, target, obj):
    """Exact gradient of ``loss`` w.r.t. every parameter."""
    return loss_and_grad(p, x, target, obj)[1]


def finite_diff_grad(p, x, target, obj, h=1e-5):
    """Central-difference gradient, one parameter at a time (test oracle)."""
    if h <= 0:
        raise ValueError("h must be > 0")
    base = [a.copy() for a in p.arrays()]
    grads = []
    for idx, arr in enumerate(base):
        g = np.zeros_like(arr)
        for pos in np.ndindex(arr.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[idx][pos] += h
            minus[idx][pos] -= h
            g[pos] = (loss(p.with_arrays(plus), x, target, obj)
                      - loss(p.with_arrays(minus), x, target, obj)) / (2 * h)
        grads.append(g)
    return p.with_arrays(grads)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(arrays, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, frozen=()):
    """One bias-corrected Adam update.

    Returns ``(new_arrays, new_state)``; inputs are left untouched. Arrays
    whose index is in ``frozen`` are passed through unchanged.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    t = state.t + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_arrays, new_m, new_v = [], [], []
    for i, (a, g, m, v) in enumerate(zip(arrays, grads, state.m, state.v)):
        if i in frozen:
            new_arrays.append(a)
            new_m.append(m)
            new_v.append(v)
            continue
        if g.shape != a.shape or m.shape != a.shape:
            raise ValueError(f"shape mismatch at parameter {i}: {a.shape} vs {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_arrays.append(a - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(new_m, new_v, t)
