import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsebench import explain, nn
from sparsebench.explain import AttributionReport, ShapConfig, kernel_shap, lstm_window_shap, select_topk


def linear_model(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return lambda X: np.c_[X @ w + b, -(X @ w)]


def exact_shapley(predict, x, background):
    """Brute-force Shapley values over all subsets with background-mean marginalization."""
    m = len(x)

    def v(S):
        data = background.copy()
        data[:, list(S)] = x[list(S)]
        return predict(data).mean(axis=0)

    phi = np.zeros((m, predict(x[None]).shape[1]))
    for j in range(m):
        rest = [k for k in range(m) if k != j]
        for r in range(m):
            for S in itertools.combinations(rest, r):
                wgt = math.factorial(r) * math.factorial(m - r - 1) / math.factorial(m)
                phi[j] += wgt * (v(S + (j,)) - v(S))
    return phi


def test_linear_closed_form(rng):
    w = rng.standard_normal(8)
    bg = rng.standard_normal((30, 8))
    f = linear_model(w, 0.3)
    for x in rng.standard_normal((20, 8)):
        ex = kernel_shap(f, x, bg, ShapConfig(seed=1))
        np.testing.assert_allclose(ex.phi[:, 0], w * (x - bg.mean(axis=0)), atol=1e-3)
        assert np.abs(ex.phi.sum(axis=0) - (ex.fx - ex.base)).max() < 1e-4


def test_linear_closed_form_sampled_regime(rng):
    # 49 features: coalitions are sampled, not enumerated
    w = rng.standard_normal(49)
    bg = rng.standard_normal((10, 49))
    x = rng.standard_normal(49)
    ex = kernel_shap(linear_model(w), x, bg, ShapConfig(seed=2))
    np.testing.assert_allclose(ex.phi[:, 0], w * (x - bg.mean(axis=0)), atol=1e-3)


def test_matches_brute_force_shapley_on_nonlinear_model(rng):
    p = nn.init_mlp(5, [7], seed=4)
    f = lambda X: nn.mlp_predict_proba(p, X)
    bg = rng.standard_normal((6, 5))
    x = rng.standard_normal(5)
    ex = kernel_shap(f, x, bg, ShapConfig(seed=0))
    np.testing.assert_allclose(ex.phi, exact_shapley(f, x, bg), atol=1e-10)


def test_constant_feature_gets_zero(rng):
    bg = rng.standard_normal((15, 6))
    bg[:, 2] = 1.5
    x = rng.standard_normal(6)
    x[2] = 1.5
    p = nn.init_mlp(6, [4], seed=0)
    ex = kernel_shap(lambda X: nn.mlp_predict_proba(p, X), x, bg, ShapConfig(seed=0))
    assert np.all(np.abs(ex.phi[2]) < 1e-6)


def test_all_features_constant(rng):
    x = np.ones(3)
    ex = kernel_shap(linear_model([1.0, 2.0, 3.0]), x, np.ones((4, 3)))
    assert np.all(ex.phi == 0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15)
def test_additivity_property(seed):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp(12, [6], seed=seed % 1000)
    f = lambda X: nn.mlp_predict_proba(p, X)
    bg = rng.standard_normal((5, 12))
    x = rng.standard_normal(12)
    ex = kernel_shap(f, x, bg, ShapConfig(coalition_samples=200, seed=seed))
    assert np.abs(ex.phi.sum(axis=0) - (ex.fx - ex.base)).max() < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        ShapConfig(background_count=0)
    with pytest.raises(ValueError):
        ShapConfig(coalition_samples=5).n_coalitions(10)
    assert ShapConfig().n_coalitions(49) == 2 * 49 + 2048


def test_coalition_weights():
    rng = np.random.default_rng(0)
    Z, w = explain._coalitions(6, 1000, rng)  # fully enumerated
    assert len(Z) == 2 ** 6 - 2
    s = Z.sum(axis=1)
    want = np.array([explain.shapley_kernel(6, k) for k in s])
    np.testing.assert_allclose(w / w.sum(), want / want.sum(), rtol=1e-12)
    Z, w = explain._coalitions(30, 500, rng)  # sampled
    assert len(Z) == 500 and abs(w.sum() - 1.0) < 1e-9
    assert len({z.tobytes() for z in Z}) == len(Z)


def test_lstm_constant_in_time_linear_model(rng):
    T, F = 3, 4
    w = rng.standard_normal(F)
    f = lambda X: np.c_[X.mean(axis=1) @ w, np.zeros(len(X))]
    # x and background constant over time
    x = np.repeat(rng.standard_normal(F)[None], T, axis=0)
    bg = np.repeat(rng.standard_normal((10, 1, F)), T, axis=1)
    ex = lstm_window_shap(f, x, bg, ShapConfig(seed=0))
    single = kernel_shap(lambda X: np.c_[X @ w, np.zeros(len(X))], x[0], bg[:, 0], ShapConfig(seed=0))
    np.testing.assert_allclose(ex.phi * T, single.phi, atol=1e-9)


def test_lstm_constant_feature_and_linearity(rng):
    p = nn.init_lstm(3, [4], window=2, seed=1)
    f = lambda X: nn.lstm_predict_proba(p, X)
    bg = rng.standard_normal((8, 2, 3))
    x = rng.standard_normal((2, 3))
    bg[:, :, 1] = 0.7
    x[:, 1] = 0.7
    cfg = ShapConfig(seed=3)
    ex = lstm_window_shap(f, x, bg, cfg)
    assert np.all(np.abs(ex.phi[1]) < 1e-6)
    scaled = lstm_window_shap(lambda X: 2.5 * f(X), x, bg, cfg)
    np.testing.assert_allclose(scaled.phi, 2.5 * ex.phi, atol=1e-9)


def test_select_topk_and_shares():
    rep = AttributionReport(("a", "b", "c", "d"), np.array([0.1, 0.4, 0.1, 0.4]))
    idx, share = select_topk(rep, 2)
    assert idx == [1, 3] and abs(share - 0.8) < 1e-12
    idx, share = select_topk(rep, 4)
    assert idx == [1, 3, 0, 2] and share == pytest.approx(1.0)
    with pytest.raises(ValueError):
        select_topk(rep, 5)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=30))
def test_report_invariants(vals):
    rep = AttributionReport(tuple(f"f{j}" for j in range(len(vals))), np.array(vals))
    shares = rep.shares()
    cum = rep.cumulative_share()
    assert np.all((shares >= 0) & (shares <= 1 + 1e-12))
    assert np.all(np.diff(cum) >= -1e-12)
    assert sorted(rep.ranking.tolist()) == list(range(len(vals)))


def test_report_csv_roundtrip(tmp_path, rng):
    rep = AttributionReport(("x", "y", "z"), rng.random(3))
    rep.write_csv(tmp_path / "a.csv")
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "feature,mean_abs_shap,rank,cumulative_share"
    back = AttributionReport.read_csv(tmp_path / "a.csv", ("x", "y", "z"))
    np.testing.assert_array_equal(back.mean_abs, rep.mean_abs)


def test_attribute_recovers_signal_features():
    from sparsebench import dataflow as df
    from sparsebench.training import TrainConfig, train
    spec = df.SynthSpec(n_rows=3000, feature_count=12, signal_count=3)
    t = df.map_labels(df.synth_generate(spec, 5), spec.label_mapping())
    tr, va = df.split_validation(t)
    p, _ = train(nn.init_mlp(12, [16], seed=0), tr, TrainConfig(max_epochs=15, seed=0), val=va)
    rep = explain.attribute(p, tr.features, va.features, tr.feature_names,
                            ShapConfig(background_count=20, eval_count=30, seed=0))
    idx, _ = select_topk(rep, 3)
    assert sorted(tr.feature_names[i] for i in idx) == t.meta["signal_columns"]
