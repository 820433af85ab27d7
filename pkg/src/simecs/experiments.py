"""Desk-scale reproductions of the similarity-encoder experiments.

Every experiment returns an :class:`ExperimentResult` whose rows are
``(sweep_value, method, mse)``. Errors are in-sample: the similarity
approximations are compared with the target matrix of the training points.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .simec import SimEcConfig, gram_approx, multi_similarity_target, predict_relations, train
from .similarity import (
    TargetSpec,
    binarize,
    center,
    label_similarity,
    median_gamma,
    normalize_range,
    random_mask,
    rbf_kernel,
    simpson_similarity,
)
from .spectral import kpca_embed, mean_fill_embed, regression_baseline, signed_embed

EXPERIMENTS = ("fig3", "fig4_reg", "fig4_targets", "fig4_missing", "fig6", "fig7", "dual")

DEFAULT_M = {"fig3": 1000, "fig4_reg": 1000, "fig4_targets": 1000, "fig4_missing": 1000,
             "fig6": 800, "fig7": 800, "dual": 200}


@dataclass
class ExperimentResult:
    experiment: str
    sweep: list
    rows: list = field(default_factory=list)  # (sweep_value, method, mse)
    seed: int = 0
    wall_time: float = 0.0
    synthetic: bool = False

    def add(self, value, method, mse):
        self.rows.append((float(value), method, float(mse)))

    def series(self, method):
        """``{sweep_value: mse}`` for one method."""
        return {v: e for v, meth, e in self.rows if meth == method}

    def methods(self):
        return sorted({meth for _, meth, _ in self.rows})

    def sorted_rows(self):
        order = {v: i for i, v in enumerate(self.sweep)}
        return sorted(self.rows, key=lambda r: (order.get(r[0], len(order)), r[0], r[1]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_value", "method", "mse"])
            for v, meth, e in self.sorted_rows():
                w.writerow([format(v, ".17g"), meth, format(e, ".17g")])


def mse(a, b):
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


def prepare_target(s):
    """Center, then scale into [-1, 1]."""
    return normalize_range(center(s))


def digits_features(m, data_dir=None, classes=None, seed=0):
    """Preprocessed image features (MNIST if available, else synthetic) and labels."""
    ds = data_mod.load_digits(data_dir, m, classes=classes, seed=seed, train_fraction=1.0)
    ds = data_mod.preprocess(ds)
    return ds.features, ds.labels, ds.synthetic


def simec_config(x, d, hidden=(), **kw):
    kw.setdefault("lr", 2e-2)
    kw.setdefault("lr_final", 0.02)
    kw.setdefault("epochs", 1000)
    return SimEcConfig(input_dim=x.shape[1], embed_dim=d, hidden_sizes=tuple(hidden), **kw)


# --- individual experiments ----------------------------------------------------

def fig3(m=1000, d_values=(1, 2, 4, 7, 10, 15), data_dir=None, seed=0, epochs=1000,
         hidden=(100, 50), ridge=1e-3, lambda_sym=1.0):
    """Class-label similarity: eigendecomposition vs linear/deep SimEc vs ridge on eigenvectors."""
    start = time.perf_counter()
    x, labels, synthetic = digits_features(m, data_dir, seed=seed)
    s = prepare_target(label_similarity(labels))
    target = TargetSpec(s)
    res = ExperimentResult("fig3", list(d_values), seed=seed, synthetic=synthetic)
    for d in d_values:
        y = kpca_embed(s, d)
        res.add(d, "eigendecomposition", mse(s, y @ y.T))
        w = regression_baseline(x, y, ridge)
        yr = x @ w
        res.add(d, "ridge_on_eigen", mse(s, yr @ yr.T))
        for name, hid in (("linear_simec", ()), ("deep_simec", hidden)):
            cfg = simec_config(x, d, hid, lambda_sym=lambda_sym, epochs=epochs, seed=seed)
            model, _ = train(cfg, x, target)
            res.add(d, name, mse(s, gram_approx(model, x)))
    res.wall_time = time.perf_counter() - start
    return res


def _rbf_target(x):
    return prepare_target(rbf_kernel(x, median_gamma(x)))


def fig4_reg(m=1000, d=10, lambdas=(0.0, 0.1, 1.0, 10.0), data_dir=None, seed=0, epochs=1000,
             hidden=(100,)):
    """Effect of the symmetry regularizer on ``Y W_l`` versus ``Y Y^T``."""
    start = time.perf_counter()
    x, _, synthetic = digits_features(m, data_dir, seed=seed)
    s = _rbf_target(x)
    target = TargetSpec(s)
    res = ExperimentResult("fig4_reg", list(lambdas), seed=seed, synthetic=synthetic)
    y = kpca_embed(s, d)
    opt = mse(s, y @ y.T)
    for lam in lambdas:
        cfg = simec_config(x, d, hidden, lambda_sym=lam, epochs=epochs, seed=seed)
        model, rep = train(cfg, x, target)
        res.add(lam, "simec_YWl", rep.relation_mse)
        res.add(lam, "simec_YYt", rep.gram_mse)
        res.add(lam, "kpca", opt)
    res.wall_time = time.perf_counter() - start
    return res


def fig4_targets(m=1000, d=10, fractions=(0.05, 0.1, 0.25, 0.5, 1.0), data_dir=None, seed=0,
                 epochs=1000, hidden=(100,), lambda_sym=1.0):
    """Training against only the first ``n = fraction * m`` target columns."""
    start = time.perf_counter()
    x, _, synthetic = digits_features(m, data_dir, seed=seed)
    s = _rbf_target(x)
    target = TargetSpec(s)
    res = ExperimentResult("fig4_targets", list(fractions), seed=seed, synthetic=synthetic)
    y = kpca_embed(s, d)
    opt = mse(s, y @ y.T)
    for frac in fractions:
        n = max(d, int(round(frac * m)))
        cfg = simec_config(x, d, hidden, n_targets=n, lambda_sym=lambda_sym, epochs=epochs, seed=seed)
        model, rep = train(cfg, x, target)
        res.add(frac, "simec_YYt", rep.gram_mse)
        res.add(frac, "kpca", opt)
    res.wall_time = time.perf_counter() - start
    return res


def lowrank_problem(m=500, rank=10, noise=0.5, seed=0, input_dim=50):
    """Centered synthetic rank-``rank`` similarity with informative features."""
    x, s = data_mod.synth_lowrank(m, rank, noise=noise, seed=seed, input_dim=input_dim,
                                  feature_noise=0.01)
    x = x - x.mean(axis=0)
    x = x / np.abs(x).max()
    return x, prepare_target(s)


def fig4_missing(m=500, d=10, fractions=(0.0, 0.5, 0.75, 0.9, 0.95), seed=0, epochs=1000,
                 hidden=(), lambda_sym=1.0, lambda_l2=0.0, rank=10, noise=0.5, data_dir=None):
    """Missing target entries: SimEc (masked loss) vs mean-filled eigendecomposition."""
    start = time.perf_counter()
    x, s = lowrank_problem(m, rank, noise, seed)
    res = ExperimentResult("fig4_missing", list(fractions), seed=seed, synthetic=True)
    y = kpca_embed(s, d)
    opt = mse(s, y @ y.T)
    for frac in fractions:
        mask = random_mask(s.shape, frac, seed=seed + 1)
        target = TargetSpec(s, mask)
        cfg = simec_config(x, d, hidden, lambda_sym=lambda_sym, lambda_l2=lambda_l2, epochs=epochs,
                           seed=seed)
        model, rep = train(cfg, x, target)
        res.add(frac, "simec_YYt", rep.gram_mse)
        yf = mean_fill_embed(s, mask, d)
        res.add(frac, "mean_fill_eig", mse(s, yf @ yf.T))
        res.add(frac, "kpca_full", opt)
    res.wall_time = time.perf_counter() - start
    return res


def simpson_target(m=800, data_dir=None, seed=0):
    """Features and centered Simpson similarity of binarized 0/7 digit images."""
    ds = data_mod.load_digits(data_dir, m, classes=(0, 7), seed=seed, train_fraction=1.0)
    s = prepare_target(simpson_similarity(binarize(ds.features)))
    return data_mod.preprocess(ds).features, s, ds.synthetic


def fig6(m=800, d_values=(2, 5, 10), data_dir=None, seed=0, epochs=1000, hidden=(100,)):
    """Non-metric Simpson similarity: kPCA vs signed spectral vs SimEc ``Y W_l``."""
    start = time.perf_counter()
    x, s, synthetic = simpson_target(m, data_dir, seed)
    target = TargetSpec(s)
    res = ExperimentResult("fig6", list(d_values), seed=seed, synthetic=synthetic)
    for d in d_values:
        y = kpca_embed(s, d)
        res.add(d, "positive_eigenvalues", mse(s, y @ y.T))
        res.add(d, "signed_eigenvalues", mse(s, signed_embed(s, d).reconstruct()))
        cfg = simec_config(x, d, hidden, epochs=epochs, seed=seed)
        _, rep = train(cfg, x, target)
        res.add(d, "simec_YWl", rep.relation_mse)
    res.wall_time = time.perf_counter() - start
    return res


def split_nonmetric(s, n_components=10):
    """Positive and negative parts ``S ~ S1 - S2`` from the leading eigenpairs of each sign."""
    pos = kpca_embed(s, n_components)
    neg = kpca_embed(-s, n_components)
    return pos @ pos.T, neg @ neg.T


def fig7(m=800, d_values=(5, 10), data_dir=None, seed=0, epochs=1000, hidden=(100,),
         n_components=10):
    """Two similarity matrices: separate, averaged and stacked-tensor SimEcs."""
    start = time.perf_counter()
    x, s, synthetic = simpson_target(m, data_dir, seed)
    s1, s2 = split_nonmetric(s, n_components)
    stacked = multi_similarity_target([s1, s2], "stacked")
    # one common factor keeps the equal top eigenvalues but lifts entries out of the 1/m range
    scale = np.abs(stacked.values).max()
    stacked = TargetSpec(stacked.values / scale)
    averaged = TargetSpec(multi_similarity_target([s1, s2], "averaged").values / scale)
    parts = [stacked.matrix(0), stacked.matrix(1)]
    res = ExperimentResult("fig7", list(d_values), seed=seed, synthetic=synthetic)
    for d in d_values:
        kw = dict(epochs=epochs, seed=seed)
        m_st, _ = train(simec_config(x, d, hidden, k=2, **kw), x, stacked)
        m_av, _ = train(simec_config(x, d, hidden, **kw), x, averaged)
        pred_st = predict_relations(m_st, x)
        pred_av = predict_relations(m_av, x)[:, :, 0]
        g_st, g_av = gram_approx(m_st, x), gram_approx(m_av, x)
        for j, sj in enumerate(parts):
            name = f"S{j + 1}"
            y = kpca_embed(sj, d)
            res.add(d, f"{name}/eigendecomposition", mse(sj, y @ y.T))
            m_single, rep = train(simec_config(x, d, hidden, **kw), x, TargetSpec(sj))
            res.add(d, f"{name}/single/YWl", rep.relation_mse)
            res.add(d, f"{name}/single/YYt", rep.gram_mse)
            res.add(d, f"{name}/stacked/YWl", mse(sj, pred_st[:, :, j]))
            res.add(d, f"{name}/stacked/YYt", mse(sj, g_st))
            res.add(d, f"{name}/averaged/YWl", mse(sj, pred_av))
            res.add(d, f"{name}/averaged/YYt", mse(sj, g_av))
    res.wall_time = time.perf_counter() - start
    return res


def dual_problem(m=200, n=150, rank=3, seed=0, input_dims=(10, 8), held_out=0.2):
    """Rank-``rank`` rectangular relations with informative features on both sides."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, rank))
    b = rng.standard_normal((n, rank))
    r = a @ b.T
    q1, _ = np.linalg.qr(rng.standard_normal((input_dims[0], rank)))
    q2, _ = np.linalg.qr(rng.standard_normal((input_dims[1], rank)))
    x1 = a @ q1.T + 0.01 * rng.standard_normal((m, input_dims[0]))
    x2 = b @ q2.T + 0.01 * rng.standard_normal((n, input_dims[1]))
    mask = random_mask((m, n), held_out, seed=seed + 1, symmetric=False)
    return x1, x2, r, mask


def dual(m=200, n=150, d=3, seed=0, epochs=1500, hidden=(), held_out_values=(0.2,)):
    """Two SimEcs sharing one embedding space for a rectangular relation matrix."""
    from .simec import dual_predict, train_dual

    start = time.perf_counter()
    res = ExperimentResult("dual", list(held_out_values), seed=seed, synthetic=True)
    for frac in held_out_values:
        x1, x2, r, mask = dual_problem(m, n, seed=seed, held_out=frac)
        target = TargetSpec(r, mask, "rectangular")
        cfg1 = SimEcConfig(input_dim=x1.shape[1], embed_dim=d, hidden_sizes=hidden, lr=1e-2,
                           lr_final=0.01, epochs=epochs, seed=seed)
        cfg2 = SimEcConfig(input_dim=x2.shape[1], embed_dim=d, hidden_sizes=hidden, lr=1e-2,
                           lr_final=0.01, epochs=epochs, seed=seed + 1)
        m1, m2 = train_dual(cfg1, cfg2, x1, x2, target)
        pred = dual_predict(m1, m2, x1, x2)
        held = mask == 0
        res.add(frac, "dual_heldout", mse(pred[held], r[held]) if held.any() else 0.0)
        res.add(frac, "dual_observed", mse(pred[~held], r[~held]))
        res.add(frac, "stage1_observed", mse(predict_relations(m1, x1)[:, :, 0][~held], r[~held]))
        res.add(frac, "variance", float(np.var(r)))
    res.wall_time = time.perf_counter() - start
    return res


RUNNERS = {"fig3": fig3, "fig4_reg": fig4_reg, "fig4_targets": fig4_targets,
           "fig4_missing": fig4_missing, "fig6": fig6, "fig7": fig7, "dual": dual}
