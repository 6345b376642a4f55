"""KernelSHAP attributions and SHAP-driven feature selection."""
import csv
from dataclasses import dataclass, replace
import itertools
import logging
import math

import numpy as np

from . import nn
from .prune import prune_and_finetune
from .sparse import to_sparse_model
from .training import make_windows, train

log = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ShapConfig:
    background_count: int = 100
    eval_count: int = 1000
    coalition_samples: int = None  # None -> 2 * M + 2048
    seed: int = 0
    sampling_mode: str = "random"  # or "consecutive"
    l1_reg: str = "auto"  # "auto" (AIC below 20% of coalition space), "aic" or "none"

    def __post_init__(self):
        if self.background_count < 1 or self.eval_count < 1:
            raise ValueError("background_count and eval_count must be >= 1")
        if self.sampling_mode not in ("random", "consecutive"):
            raise ValueError("sampling_mode must be 'random' or 'consecutive'")
        if self.l1_reg not in ("auto", "aic", "none"):
            raise ValueError("l1_reg must be 'auto', 'aic' or 'none'")

    def n_coalitions(self, m):
        n = 2 * m + 2048 if self.coalition_samples is None else self.coalition_samples
        if n < m + 2:
            raise ValueError(f"coalition_samples must be >= M + 2 = {m + 2}")
        return n


@dataclass
class Explanation:
    phi: np.ndarray   # (features, classes)
    base: np.ndarray  # E_background[f]
    fx: np.ndarray    # f(x)


def shapley_kernel(m, s):
    return (m - 1) / (math.comb(m, s) * s * (m - s))


def _coalitions(m, budget, rng):
    """Coalition matrix (bool, K x m) and regression weights, boundaries excluded.

    Subset sizes are visited from the outside in (1 and m-1, then 2 and m-2,
    ...). A size class is enumerated completely while the budget covers it in
    proportion to its kernel mass; the remaining mass is spread over sampled
    coalitions, each drawn together with its complement.
    """
    n_sizes = math.ceil((m - 1) / 2)
    n_paired = (m - 1) // 2
    sizes = np.arange(1, n_sizes + 1)
    mass = (m - 1) / (sizes * (m - sizes))
    mass[:n_paired] *= 2
    mass /= mass.sum()

    rows, weights = [], []
    left = budget
    remaining = mass.copy()
    n_full = 0
    for s in sizes:
        paired = s <= n_paired
        count = math.comb(m, s) * (2 if paired else 1)
        if left * remaining[s - 1] / count < 1 - 1e-8:
            break
        n_full += 1
        left -= count
        if remaining[s - 1] < 1:
            remaining /= 1 - remaining[s - 1]
        w = mass[s - 1] / math.comb(m, s) / (2 if paired else 1)
        for combo in itertools.combinations(range(m), int(s)):
            z = np.zeros(m, dtype=bool)
            z[list(combo)] = True
            rows.append(z)
            weights.append(w)
            if paired:
                rows.append(~z)
                weights.append(w)

    if n_full < n_sizes and left > 0:
        weight_left = mass[n_full:].sum()
        p = mass[n_full:].copy()
        p[:max(n_paired - n_full, 0)] /= 2
        p /= p.sum()
        seen = {}
        sampled = []
        draws = rng.choice(len(p), size=4 * left, p=p) + n_full + 1
        for s in draws:
            if left <= 0:
                break
            z = np.zeros(m, dtype=bool)
            z[rng.permutation(m)[:s]] = True
            for cand in ((z, ~z) if s <= n_paired else (z,)):
                if left <= 0:
                    break
                key = cand.tobytes()
                if key in seen:
                    sampled[seen[key]][1] += 1.0
                else:
                    seen[key] = len(sampled)
                    sampled.append([cand, 1.0])
                    left -= 1
        total = sum(w for _, w in sampled)
        for z, w in sampled:
            rows.append(z)
            weights.append(w * weight_left / total)
    return np.array(rows), np.array(weights, dtype=np.float64)


def _max_coalitions(m):
    return 2 ** 30 if m > 30 else 2 ** m - 2


def _aic_support(Z, w, y, total):
    """Features kept by an AIC-selected LARS lasso on the augmented system."""
    from sklearn.linear_model import LassoLarsIC

    s = Z.sum(axis=1)
    w_aug = np.concatenate([w * (Z.shape[1] - s), w * s])
    sw = np.sqrt(w_aug)
    y_aug = np.concatenate([y, y - total]) * sw
    X_aug = np.vstack([Z, Z - 1.0]) * sw[:, None]
    coef = LassoLarsIC(criterion="aic").fit(X_aug, y_aug).coef_
    return np.flatnonzero(coef)


def _masked_means(predict, x, background, Z, players, chunk_rows=65536):
    B = background.shape[0]
    out = []
    per_chunk = max(1, chunk_rows // B)
    for s in range(0, len(Z), per_chunk):
        zs = Z[s:s + per_chunk]
        data = np.repeat(background[None], len(zs), axis=0)  # (k, B, M)
        for r, z in enumerate(zs):
            cols = players[z]
            data[r][:, cols] = x[cols]
        pred = np.asarray(predict(data.reshape(-1, background.shape[1])))
        out.append(pred.reshape(len(zs), B, -1).mean(axis=1))
    return np.concatenate(out)


def _constrained_wls(Z, w, y, total, support):
    """Weighted least squares with sum(phi[support]) == total; returns phi over support."""
    k = len(support)
    if k == 1:
        return np.array([total])
    Zs = Z[:, support]
    A = Zs[:, :-1] - Zs[:, -1:]
    b = y - Zs[:, -1] * total
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    if np.linalg.matrix_rank(Aw) < k - 1:
        raise SingularSystemError(
            f"KernelSHAP regression is singular with {len(Z)} coalitions for {k} features; "
            "increase coalition_samples"
        )
    sol, *_ = np.linalg.lstsq(Aw, b * sw, rcond=None)
    return np.append(sol, total - sol.sum())


def kernel_shap(predict, x, background, cfg=ShapConfig()):
    """Per-feature, per-class Shapley estimates for instance ``x``.

    ``predict`` maps an ``(n, M)`` array to ``(n, classes)`` outputs. Absent
    features take background values and the prediction is averaged over the
    background set. Features equal to ``x`` in every background row get an
    exact zero. The solve is constrained so ``phi.sum(0) == f(x) - E[f]``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValueError("background set is empty")
    M = x.shape[0]
    if background.shape[1] != M:
        raise ValueError("background rows and x must have the same number of features")
    fx = np.asarray(predict(x[None]))[0]
    base = np.asarray(predict(background)).mean(axis=0)
    C = fx.shape[0]
    phi = np.zeros((M, C))
    players = np.flatnonzero(np.any(background != x, axis=0))
    m = len(players)
    if m == 0:
        return Explanation(phi, base, fx)
    if m == 1:
        phi[players[0]] = fx - base
        return Explanation(phi, base, fx)

    rng = np.random.default_rng(cfg.seed)
    Z, w = _coalitions(m, cfg.n_coalitions(m), rng)
    ey = _masked_means(predict, x, background, Z, players)
    Zf = Z.astype(np.float64)
    use_l1 = cfg.l1_reg == "aic" or (cfg.l1_reg == "auto" and len(Z) / _max_coalitions(m) < 0.2)
    for c in range(C):
        total = fx[c] - base[c]
        y = ey[:, c] - base[c]
        support = np.arange(m)
        if use_l1:
            support = _aic_support(Zf, w, y, total)
            if len(support) == 0:
                continue
        phi[players[support], c] = _constrained_wls(Zf, w, y, total, support)
    return Explanation(phi, base, fx)


def lstm_window_shap(predict, window, background, cfg=ShapConfig()):
    """Attributions for a (T, F) window, averaged over timesteps -> (F, classes).

    Every (timestep, feature) cell is a separate player. ``predict`` maps
    ``(n, T, F)`` windows to class outputs; ``background`` is ``(B, T, F)``.
    """
    window = np.asarray(window, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    T, F = window.shape
    flat = lambda X: predict(np.asarray(X).reshape(-1, T, F))
    ex = kernel_shap(flat, window.reshape(-1), background.reshape(len(background), -1), cfg)
    phi = ex.phi.reshape(T, F, -1).mean(axis=0)
    return Explanation(phi, ex.base, ex.fx)


# ------------------------------------------------------------------ reporting


@dataclass
class AttributionReport:
    feature_names: tuple
    mean_abs: np.ndarray  # one value per feature

    @property
    def ranking(self):
        # descending importance, ties to the lower index
        return np.lexsort((np.arange(len(self.mean_abs)), -self.mean_abs))

    def shares(self):
        total = self.mean_abs.sum()
        if total <= 0:
            return np.zeros_like(self.mean_abs)
        return self.mean_abs / total

    def cumulative_share(self):
        return np.cumsum(self.shares()[self.ranking])

    def write_csv(self, path):
        rank_of = np.empty(len(self.mean_abs), dtype=int)
        rank_of[self.ranking] = np.arange(1, len(self.mean_abs) + 1)
        cum = self.cumulative_share()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "mean_abs_shap", "rank", "cumulative_share"])
            for pos, j in enumerate(self.ranking):
                w.writerow([self.feature_names[j], repr(float(self.mean_abs[j])), rank_of[j], repr(float(cum[pos]))])

    @classmethod
    def read_csv(cls, path, feature_names=None):
        """Rebuild a report; with ``feature_names`` the original column order is restored."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        vals = {r["feature"]: float(r["mean_abs_shap"]) for r in rows}
        names = tuple(feature_names) if feature_names is not None else tuple(r["feature"] for r in rows)
        missing = [n for n in names if n not in vals]
        if missing:
            raise ValueError(f"attribution CSV lacks features {missing}")
        return cls(names, np.array([vals[n] for n in names]))


def aggregate(phis, feature_names):
    """Mean |phi| over instances and classes; ``phis`` is (n, features, classes)."""
    phis = np.asarray(phis)
    return AttributionReport(tuple(feature_names), np.abs(phis).mean(axis=(0, 2)))


def select_topk(report, k=10):
    """Indices of the ``k`` largest mean |phi| (descending) and their share of the total."""
    m = len(report.mean_abs)
    if not 1 <= k <= m:
        raise ValueError(f"k must be between 1 and {m}")
    idx = report.ranking[:k]
    return [int(i) for i in idx], float(report.cumulative_share()[k - 1])


def _pick(n, count, mode, rng):
    count = min(count, n)
    if mode == "consecutive":
        start = int(rng.integers(0, n - count + 1))
        return np.arange(start, start + count)
    return np.sort(rng.choice(n, size=count, replace=False))


def attribute(params, background_rows, eval_rows, feature_names, cfg=ShapConfig(), progress=None):
    """Run KernelSHAP for a dense model over an evaluation set.

    ``background_rows`` / ``eval_rows`` are row matrices in time order. For an
    LSTM they are cut into windows before sampling, so picks of consecutive
    samples are consecutive windows.
    """
    rng = np.random.default_rng(cfg.seed)
    if params.kind == "mlp":
        bg_pool = np.asarray(background_rows, dtype=np.float64)
        ev_pool = np.asarray(eval_rows, dtype=np.float64)
        predict = lambda X: nn.mlp_predict_proba(params, X)
    else:
        bg_pool, _ = make_windows(background_rows, None, params.window)
        ev_pool, _ = make_windows(eval_rows, None, params.window)
        predict = lambda X: nn.lstm_predict_proba(params, X)
    bg = bg_pool[_pick(len(bg_pool), cfg.background_count, cfg.sampling_mode, rng)]
    ev = ev_pool[_pick(len(ev_pool), cfg.eval_count, cfg.sampling_mode, rng)]
    phis = []
    for n, x in enumerate(ev):
        sub = replace(cfg, seed=int(rng.integers(0, 2**31 - 1)))
        if params.kind == "mlp":
            phis.append(kernel_shap(predict, x, bg, sub).phi)
        else:
            phis.append(lstm_window_shap(predict, x, bg, sub).phi)
        if progress:
            progress(n + 1, len(ev))
    return aggregate(phis, feature_names)


@dataclass
class FsResult:
    sparse_model: object
    dense_params: object     # retrained + pruned, on the projected inputs
    mask: dict
    report: AttributionReport
    selected: list           # chosen indices, descending importance
    share: float
    feature_mask: list       # selected indices in ascending column order


def fs_prune_pipeline(trained, train_data, val_data, cfg, sched, k=10, shap_cfg=ShapConfig(),
                      eval_rows=None, report=None):
    """Attribute, keep the top-k inputs, retrain from scratch on them, then prune.

    ``eval_rows`` are the rows explained (defaults to the validation rows); a
    precomputed ``report`` skips the attribution step.
    """
    if report is None:
        rows = val_data.features if eval_rows is None else eval_rows
        report = attribute(trained, train_data.features, rows, train_data.feature_names, shap_cfg)
    selected, share = select_topk(report, k)
    feature_mask = sorted(selected)
    tr, va = train_data.project(feature_mask), val_data.project(feature_mask)
    fresh = nn.spec_of(trained).build(len(feature_mask), seed=cfg.seed)
    dense, _ = train(fresh, tr, cfg, val=va)
    pruned, mask, _ = prune_and_finetune(dense, tr, cfg, sched, val=va)
    sm = to_sparse_model(pruned, feature_mask, input_width=train_data.features.shape[1])
    return FsResult(sm, pruned, mask, report, selected, share, feature_mask)
