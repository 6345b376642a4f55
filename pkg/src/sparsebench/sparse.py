"""Sparse (CSR) models and per-sample inference, plus the naive dense twin.

Both runtimes call the same backend from :mod:`sparsebench.kernels`, so a
latency comparison between them measures the nnz reduction and not a change
of numerical library.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .csr import to_csr
from .nn import GATES, LstmParams, MlpParams, ShapeError, softmax


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(eq=False)
class SparseModel:
    topology: dict
    weights: dict          # tensor name -> CsrMatrix, file order
    biases: dict           # tensor name -> float32 vector, file order
    feature_mask: list = None
    input_width: int = None  # width of raw inputs before feature_mask projection
    _plan: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_width is None:
            self.input_width = len(self.feature_mask) if self.feature_mask is not None else self.n_inputs
        self.validate()
        self._plan = self._build_plan()

    @property
    def kind(self):
        return self.topology["kind"]

    @property
    def window(self):
        return self.topology.get("window", 1)

    @property
    def n_inputs(self):
        t = self.topology
        return t["layers"][0]["in"] if t["kind"] == "mlp" else t["cells"][0]["in"]

    def validate(self):
        t = self.topology
        expected = {}
        if t["kind"] == "mlp":
            prev = None
            for k, spec in enumerate(t["layers"]):
                if prev is not None and spec["in"] != prev:
                    raise ShapeError(f"layer {k} input dim does not chain")
                expected[f"layers.{k}.W"] = (spec["out"], spec["in"])
                prev = spec["out"]
            bias_len = {f"layers.{k}.b": s["out"] for k, s in enumerate(t["layers"])}
        elif t["kind"] == "lstm":
            bias_len = {}
            prev = None
            for k, spec in enumerate(t["cells"]):
                u = spec["units"]
                if prev is not None and spec["in"] != prev:
                    raise ShapeError(f"cell {k} input dim does not chain")
                for g in GATES:
                    expected[f"cells.{k}.W_{g}"] = (u, spec["in"])
                    expected[f"cells.{k}.U_{g}"] = (u, u)
                    bias_len[f"cells.{k}.b_{g}"] = u
                prev = u
            h = t["head"]
            if h["in"] != prev:
                raise ShapeError("head input dim must equal last cell units")
            expected["head.W"] = (h["out"], h["in"])
            bias_len["head.b"] = h["out"]
        else:
            raise ShapeError(f"unknown model kind {t['kind']!r}")
        if set(expected) != set(self.weights) or set(bias_len) != set(self.biases):
            raise ShapeError("tensor names do not match the topology")
        for name, shape in expected.items():
            m = self.weights[name]
            if tuple(m.shape) != tuple(shape):
                raise ShapeError(f"{name}: shape {m.shape} != topology {shape}")
            m.validate()
        for name, n in bias_len.items():
            if self.biases[name].shape != (n,):
                raise ShapeError(f"{name}: length {self.biases[name].shape} != {n}")
        if self.feature_mask is not None:
            fm = list(self.feature_mask)
            if len(fm) != self.n_inputs:
                raise ShapeError(f"feature_mask has {len(fm)} entries but first layer takes {self.n_inputs}")
            if len(set(fm)) != len(fm) or min(fm) < 0 or max(fm) >= self.input_width:
                raise ShapeError("feature_mask must hold distinct indices below input_width")
        return self

    def _build_plan(self):
        def triple(name):
            m = self.weights[name]
            return m.values, m.col_idx, m.row_ptr

        t = self.topology
        if t["kind"] == "mlp":
            return [
                (triple(f"layers.{k}.W"), self.biases[f"layers.{k}.b"], s["activation"] == "relu")
                for k, s in enumerate(t["layers"])
            ]
        plan = []
        for k in range(len(t["cells"])):
            plan.append([
                (triple(f"cells.{k}.W_{g}"), triple(f"cells.{k}.U_{g}"), self.biases[f"cells.{k}.b_{g}"])
                for g in GATES
            ])
        plan.append((triple("head.W"), self.biases["head.b"]))
        return plan

    def payload_bytes(self):
        return sum(m.payload_bytes() for m in self.weights.values())

    def sparsity(self):
        size = sum(m.rows * m.cols for m in self.weights.values())
        return 1.0 - sum(m.nnz for m in self.weights.values()) / size

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.feature_mask is not None and x.shape[-1] == self.input_width != self.n_inputs:
            x = x[..., self.feature_mask]
        if x.shape[-1] != self.n_inputs:
            raise ShapeError(f"input has {x.shape[-1]} features, model expects {self.n_inputs}"
                             + (f" (or {self.input_width} before projection)" if self.feature_mask is not None else ""))
        return np.ascontiguousarray(x)

    def dense_params(self):
        """Dense float64 parameters holding exactly the stored (float32) values."""
        tensors = {n: m.to_dense() for n, m in self.weights.items()}
        tensors.update(self.biases)
        cls = MlpParams if self.kind == "mlp" else LstmParams
        return cls.from_export(self.topology, tensors)


def to_sparse_model(params, feature_mask=None, input_width=None):
    weights, biases = {}, {}
    for name, arr, role in params.export_tensors():
        if role == "weight":
            weights[name] = to_csr(arr)
        else:
            biases[name] = np.ascontiguousarray(arr, dtype=np.float32)
    fm = None if feature_mask is None else [int(i) for i in feature_mask]
    return SparseModel(params.topology(), weights, biases, fm, input_width)


def sparse_mlp_infer(m, x):
    if m.kind != "mlp":
        raise ShapeError("sparse_mlp_infer needs an MLP model")
    a = m.project(x)
    if a.ndim != 1:
        raise ShapeError("sparse_mlp_infer takes one feature vector")
    for (values, col_idx, row_ptr), bias, relu in m._plan:
        a = kernels.spmv_bias(values, col_idx, row_ptr, a, bias)
        if relu:
            kernels.relu_inplace(a)
    # softmax over the dense logits vector
    return softmax(a)


def sparse_lstm_infer(m, xs):
    if m.kind != "lstm":
        raise ShapeError("sparse_lstm_infer needs an LSTM model")
    xs = m.project(xs)
    if xs.ndim != 2 or xs.shape[0] != m.window:
        raise ShapeError(f"expected a ({m.window}, features) window, got {xs.shape}")
    seq = list(xs)
    spmv, spmv_bias = kernels.spmv, kernels.spmv_bias
    for gates in m._plan[:-1]:
        units = len(gates[0][2])
        h = np.zeros(units)
        c = np.zeros(units)
        out = []
        for x in seq:
            z = [spmv_bias(*W, x, b) + spmv(*U, h) for W, U, b in gates]
            i, f, o = _sigmoid(z[0]), _sigmoid(z[1]), _sigmoid(z[3])
            g = np.tanh(z[2])
            c = f * c + i * g
            h = o * np.tanh(c)
            out.append(h)
        seq = out
    W, b = m._plan[-1]
    return softmax(spmv_bias(*W, seq[-1], b))


def sparse_infer(m, x):
    return sparse_mlp_infer(m, x) if m.kind == "mlp" else sparse_lstm_infer(m, x)


class NaiveDenseModel:
    """Dense float32 weights run through the backend's naive matvec loops."""

    def __init__(self, params, feature_mask=None, input_width=None):
        self.kind = params.kind
        self.feature_mask = feature_mask
        self.n_inputs = params.n_inputs
        self.input_width = input_width if input_width is not None else self.n_inputs
        f32 = lambda a: np.ascontiguousarray(a, dtype=np.float32)
        if params.kind == "mlp":
            self.layers = [(f32(l.W), f32(l.b), l.activation == "relu") for l in params.layers]
        else:
            self.window = params.window
            self.cells = [
                [(f32(c.gate("W", g)), f32(c.gate("U", g)), f32(c.gate("b", g))) for g in GATES]
                for c in params.cells
            ]
            self.head = (f32(params.head.W), f32(params.head.b))

    def _project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.feature_mask is not None and x.shape[-1] == self.input_width != self.n_inputs:
            x = x[..., self.feature_mask]
        if x.shape[-1] != self.n_inputs:
            raise ShapeError(f"input has {x.shape[-1]} features, model expects {self.n_inputs}")
        return np.ascontiguousarray(x)

    def __call__(self, x):
        x = self._project(x)
        mv, mvb = kernels.dense_matvec, kernels.dense_matvec_bias
        if self.kind == "mlp":
            a = x
            for W, b, relu in self.layers:
                a = mvb(W, a, b)
                if relu:
                    kernels.relu_inplace(a)
            return softmax(a)
        seq = list(x)
        for gates in self.cells:
            units = len(gates[0][2])
            h = np.zeros(units)
            c = np.zeros(units)
            out = []
            for xt in seq:
                z = [mvb(W, xt, b) + mv(U, h) for W, U, b in gates]
                i, f, o = _sigmoid(z[0]), _sigmoid(z[1]), _sigmoid(z[3])
                c = f * c + i * np.tanh(z[2])
                h = o * np.tanh(c)
                out.append(h)
            seq = out
        W, b = self.head
        return softmax(mvb(W, seq[-1], b))


def predict_many(fn, X):
    """Apply a single-sample inference function over the first axis of ``X``."""
    return np.stack([fn(x) for x in X]) if len(X) else np.zeros((0, 3))
