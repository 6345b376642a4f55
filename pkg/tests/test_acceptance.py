"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary."""
import json
import os
import struct
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from sparsebench import bench, dataflow, explain, formats, kernels, nn, training
from sparsebench.pipeline import open_run
from sparsebench.prune import PruneSchedule, compute_masks, sparsity_at
from sparsebench.sparse import NaiveDenseModel, predict_many, sparse_infer, to_sparse_model
from sparsebench.training import apply_mask, grad_check

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def pruned(params, target, rng=None):
    if rng is not None:
        for a in params.arrays().values():
            if a.ndim == 1:
                a[:] = 0.3 * rng.standard_normal(a.shape)
    apply_mask(params, compute_masks(params, target))
    return params


def f32(params):
    return type(params).from_export(params.topology(),
                                    {n: a.astype(np.float32) for n, a, _ in params.export_tensors()})


# --------------------------------------------------------------------------- 1

def test_c01_schedule(criterion):
    t0 = time.perf_counter()
    s = PruneSchedule()
    ok = sparsity_at(s, s.t0) == s.s_i and sparsity_at(s, s.end) == 0.65
    mid = sparsity_at(s, s.t0 + 5 * s.delta_t)
    ok &= abs(mid - 0.56875) < 1e-12
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(10_000):
        s_f = rng.uniform(0, 0.99)
        sched = PruneSchedule(s_i=rng.uniform(0, s_f), s_f=s_f, t0=int(rng.integers(0, 20)),
                              delta_t=int(rng.integers(1, 5)), n=int(rng.integers(1, 30)))
        # before the start, the start, every pruning event, and past the end
        steps = [sched.t0 - 1, sched.t0, *sched.event_steps(), sched.end + 1]
        vals = [sparsity_at(sched, t) for t in steps]
        bad += any(b < a for a, b in zip(vals, vals[1:]))
        bad += vals[1] != sched.s_i or vals[-2] != sched.s_f
    dt = time.perf_counter() - t0
    criterion(1, ok and bad == 0 and dt < 1.0,
              f"endpoints exact, midpoint {mid:.5f}, 10^4 schedules monotone ({bad} violations), {dt:.2f} s")


# --------------------------------------------------------------------------- 2

def test_c02_sparse_dense_equivalence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(50):
        n_in = int(rng.integers(2, 40))
        hidden = [int(h) for h in rng.integers(2, 40, size=rng.integers(1, 4))]
        for target in (0.0, 0.3, 0.65, 0.9):
            p = pruned(nn.init_mlp(n_in, hidden, seed=k), target, rng)
            m = to_sparse_model(p)
            X = rng.standard_normal((100, n_in))
            diff = np.abs(predict_many(lambda x: sparse_infer(m, x), X) - nn.mlp_predict_proba(f32(p), X))
            worst = max(worst, diff.max())
    for k in range(20):
        n_in = int(rng.integers(2, 20))
        units = [int(h) for h in rng.integers(2, 16, size=rng.integers(1, 3))]
        window = int(rng.integers(1, 6))
        for target in (0.0, 0.3, 0.65, 0.9):
            p = pruned(nn.init_lstm(n_in, units, window=window, seed=k), target, rng)
            m = to_sparse_model(p)
            X = rng.standard_normal((100, window, n_in))
            diff = np.abs(predict_many(lambda x: sparse_infer(m, x), X) - nn.lstm_predict_proba(f32(p), X))
            worst = max(worst, diff.max())
    dt = time.perf_counter() - t0
    criterion(2, worst < 1e-5 and dt < 60, f"50 MLPs + 20 LSTMs x 4 sparsities: max |diff| {worst:.2e}, {dt:.1f} s")


# --------------------------------------------------------------------------- 3

def test_c03_gradient_check(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mlp_err = lstm_err = 0.0
    for k in range(5):
        p = nn.init_mlp(6, [8, 6], seed=k)
        for l in p.layers:
            l.b[:] = 0.1 * rng.standard_normal(l.b.shape)
        assert nn.n_parameters(p) <= 500
        mlp_err = max(mlp_err, grad_check(p, rng.standard_normal((8, 6)), rng.integers(0, 3, size=8)))
        q = nn.init_lstm(4, [5], window=3, seed=k)
        assert nn.n_parameters(q) <= 500
        lstm_err = max(lstm_err, grad_check(q, rng.standard_normal((6, 3, 4)), rng.integers(0, 3, size=6)))
    dt = time.perf_counter() - t0
    criterion(3, mlp_err < 1e-4 and lstm_err < 1e-3 and dt < 30,
              f"max rel err MLP {mlp_err:.2e} (< 1e-4), LSTM window 3 {lstm_err:.2e} (< 1e-3), {dt:.1f} s")


# --------------------------------------------------------------------------- 4

def _tensor_segments(path):
    """Walk a SPIF file by hand; returns {name: (segment bytes, rows, cols)} and checks the file length."""
    with open(path, "rb") as fh:
        buf = fh.read()
    assert buf[:4] == b"SPIF"
    (mlen,) = struct.unpack_from("<I", buf, 6)
    manifest = json.loads(buf[10:10 + mlen])
    pos = 10 + mlen
    out = {}
    for t in manifest["tensors"]:
        rows, cols = t["shape"]
        row_ptr_at = pos + 8 * t["nnz"]
        row_ptr = np.frombuffer(buf, dtype="<u4", count=rows + 1, offset=row_ptr_at)
        assert row_ptr[-1] == t["nnz"]
        size = 8 * t["nnz"] + 4 * (rows + 1)
        out[t["name"]] = (size, rows, cols)
        pos += size
    pos += sum(4 * b["length"] for b in manifest["biases"])
    assert pos == len(buf)
    return out


def test_c04_size_reduction(criterion, tmp_path):
    problems, checked, big = [], 0, 0
    for params in (nn.init_mlp(49, [16, 128, 64], seed=0), nn.init_lstm(49, [100, 50], window=5, seed=0),
                   nn.init_mlp(256, [256, 128], seed=0)):
        p = pruned(params, 0.65)
        path = tmp_path / f"{p.kind}.spif"
        formats.serialize_sparse(to_sparse_model(p), path)
        segs = _tensor_segments(path)
        for name, w in p.prunable().items():
            nnz = int(np.count_nonzero(w))
            rows, cols = w.shape
            seg, _, _ = segs[name]
            checked += 1
            if seg != nnz * 8 + (rows + 1) * 4:
                problems.append(f"{name}: {seg} bytes")
            if rows >= 64 and cols >= 64:
                big += 1
                if seg > 0.75 * rows * cols * 4:
                    problems.append(f"{name}: {seg} > 0.75 x dense")
    criterion(4, not problems and big > 0,
              f"{checked} tensors byte-exact, {big} tensors >= 64x64 all <= 0.75x dense" if not problems
              else "; ".join(problems))


# --------------------------------------------------------------------------- 5

def test_c05_latency_ratio(criterion):
    p = pruned(nn.init_mlp(1024, [1024, 1024], n_classes=1024, seed=0), 0.65)
    dense = NaiveDenseModel(p)
    m = to_sparse_model(p)
    X = np.random.default_rng(5).standard_normal((200, 1024)).astype(np.float32)
    d = bench.measure_latency(dense, X, fraction=1.0, repeats=3)
    s = bench.measure_latency(lambda x: sparse_infer(m, x), X, fraction=1.0, repeats=3)
    ratio = d.ms_per_sample / s.ms_per_sample
    criterion(5, ratio >= 1.2, f"1024-wide, 65% sparse, {kernels.BACKEND} backend: dense {d.ms_per_sample:.4f} ms, "
                               f"sparse {s.ms_per_sample:.4f} ms, speedup {ratio:.2f}x (>= 1.2)")


# ------------------------------------------------------------------ 6, 8, 11

@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """Fast-mode MLP and LSTM runs over the synthetic fixture, plus their wall time."""
    root = str(tmp_path_factory.mktemp("runs"))
    runs, t0 = {}, time.perf_counter()
    for kind in ("mlp", "lstm"):
        run = open_run(os.path.join(CONFIGS, f"synth_{kind}.json"), fast=True, root=root)
        run.emit(run.bench())
        runs[kind] = run
    return runs, time.perf_counter() - t0


def _val_accuracy(run, val, path):
    if formats.sniff(path) == "spif":
        m = formats.deserialize_sparse(path)
        fn, kind, window = (lambda x: sparse_infer(m, x)), m.kind, m.window
    else:
        params, manifest = formats.load_dense(path)
        fn = NaiveDenseModel(params, manifest["feature_mask"], manifest["input_width"])
        kind, window = params.kind, getattr(params, "window", 1)
    if kind == "lstm":
        X, y = training.make_windows(val.features, val.labels, window)
    else:
        X, y = val.features, val.labels
    return float(np.mean(np.argmax(predict_many(fn, X), axis=1) == y))


@pytest.mark.slow
def test_c06_accuracy_retention(criterion, pipeline_runs):
    runs, wall = pipeline_runs
    parts, ok = [], wall < 600
    for kind, run in runs.items():
        _, val, _ = run.load_data()
        acc = {stage: _val_accuracy(run, val, path) for stage, path in
               (("dense", run.original_path), ("pruned", run.pruned_spif), ("fs", run.fs_pruned_spif))}
        ok &= acc["pruned"] >= acc["dense"] - 0.01 and acc["fs"] >= acc["dense"] - 0.01
        parts.append(f"{kind.upper()} val acc {acc['dense']:.4f}/{acc['pruned']:.4f}/{acc['fs']:.4f}")
    criterion(6, ok, "dense/pruned/fs-pruned: " + ", ".join(parts) + f"; pipeline {wall:.0f} s (< 600)")


@pytest.mark.slow
def test_c08_topk_share(criterion, pipeline_runs):
    runs, _ = pipeline_runs
    run = runs["mlp"]
    params, _ = formats.load_dense(run.original_path)
    train, val, _ = run.load_data()
    cfg = explain.ShapConfig(background_count=20, eval_count=20, coalition_samples=40_000, seed=0,
                             sampling_mode="random", l1_reg="auto")
    report = explain.attribute(params, train.features, val.features, train.feature_names, cfg)
    idx, share = explain.select_topk(report, 10)
    with open(run.synth_csv + ".meta.json") as fh:
        signal = set(json.load(fh)["signal_columns"])
    found = {train.feature_names[i] for i in idx}
    criterion(8, share >= 0.80, f"MLP top-10 mean|phi| share {share:.3f} (>= 0.80); "
                                f"{len(found & signal)}/10 signal features recovered")


def _tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            out[os.path.relpath(os.path.join(d, f), root)] = os.path.join(d, f)
    return out


@pytest.mark.slow
def test_c11_reproducibility(criterion, pipeline_runs, tmp_path):
    runs, _ = pipeline_runs
    first = runs["mlp"]
    again = open_run(os.path.join(CONFIGS, "synth_mlp.json"), fast=True, root=str(tmp_path))
    again.emit(again.bench())
    a, b = _tree(first.dir), _tree(again.dir)
    differing = []
    for rel in sorted(set(a) | set(b)):
        if rel not in a or rel not in b:
            differing.append(rel)
        elif rel.startswith(os.path.join("reports", "report.")):
            continue  # latency column checked separately below
        elif open(a[rel], "rb").read() != open(b[rel], "rb").read():
            differing.append(rel)
    cells = lambda path: [r.cells()[:6] + r.cells()[7:] for r in bench.read_report_csv(path).rows]
    same_report = cells(a[os.path.join("reports", "report.csv")]) == cells(b[os.path.join("reports", "report.csv")])
    criterion(11, not differing and same_report,
              f"{len(a)} artifacts byte-identical across two runs; report equal except the timing column"
              if not differing else f"differing: {differing}")


# --------------------------------------------------------------------------- 7

def test_c07_kernelshap_linear(criterion):
    rng = np.random.default_rng(7)
    w = rng.standard_normal(10)
    bg = rng.standard_normal((40, 10))
    f = lambda X: np.c_[X @ w + 0.5, -(X @ w)]
    worst = add = 0.0
    for x in rng.standard_normal((20, 10)):
        ex = explain.kernel_shap(f, x, bg, explain.ShapConfig(seed=3))
        worst = max(worst, np.abs(ex.phi[:, 0] - w * (x - bg.mean(axis=0))).max())
        add = max(add, np.abs(ex.phi.sum(axis=0) - (ex.fx - ex.base)).max())
    criterion(7, worst < 1e-3 and add < 1e-4,
              f"20 instances: max |phi - w(x - E[x])| {worst:.2e} (< 1e-3), additivity {add:.2e} (< 1e-4)")


# --------------------------------------------------------------------------- 9

def _brute(pred, truth):
    """Per-class counts by scanning samples; exact rational P/R/F1 (F1 as 2PR/(P+R))."""
    n = len(truth)
    acc = Fraction(sum(p == t for p, t in zip(pred, truth)), n)
    P = R = F = Fraction(0)
    for c in sorted(set(truth) | set(pred)):
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        w = Fraction(tp + fn, n)
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        P += w * prec
        R += w * rec
        F += w * f1
    return tuple(float(v) for v in (acc, P, R, F))


def test_c09_metric_oracle(criterion):
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 200))
        truth, pred = rng.integers(0, 3, size=n), rng.integers(0, 3, size=n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # some random vectors never predict a class
            m = bench.compute_metrics(pred, truth)
        mismatches += (m.accuracy, m.precision, m.recall, m.f1) != _brute(pred.tolist(), truth.tolist())
    criterion(9, mismatches == 0, f"100 random label vectors, {mismatches} inexact weighted P/R/F1")


# -------------------------------------------------------------------------- 10

def test_c10_real_data(criterion):
    cfg_path = os.environ.get("SPARSEBENCH_CICEVSE_CONFIG")
    if not cfg_path:
        pytest.skip("set SPARSEBENCH_CICEVSE_CONFIG to a run config over the EVSE-A/EVSE-B CSVs")
    run = open_run(cfg_path)
    run.preprocess()
    with open(run.features_json) as fh:
        info = json.load(fh)
    d = run.cfg["data"]
    first = run.cfg.resolve(d["train_csv"][0])  # the EVSE-A file
    t = dataflow.map_labels(dataflow.load_csv(first, d["label_col"]), d["label_mapping"])
    shares = np.bincount(t.labels, minlength=3) / t.n_rows * 100
    want = {"DoS": 84.50, "Recon": 12.55, "Benign": 2.95}
    got = {c: shares[dataflow.CLASS_NAMES.index(c)] for c in want}
    ok = len(info["kept"]) == 49 and all(abs(got[c] - want[c]) <= 0.05 for c in want)
    criterion(10, ok, f"{len(info['kept'])} features kept (49); EVSE-A shares "
                      + ", ".join(f"{c} {got[c]:.2f}% ({want[c]:.2f})" for c in want))
