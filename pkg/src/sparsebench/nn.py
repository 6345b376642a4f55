"""Dense MLP and LSTM classifiers: parameters, forward passes and gradients.

Everything here runs in float64 on numpy arrays. Batched entry points take
``(batch, features)`` for the MLP and ``(batch, window, features)`` for the
LSTM; the single-sample ``mlp_forward`` / ``lstm_forward`` wrap them.
"""
from dataclasses import dataclass

import numpy as np

GATES = ("i", "f", "g", "o")
N_CLASSES = 3


class ShapeError(ValueError):
    """Input or parameter dimensions do not line up."""


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(z):
    # tanh form never overflows and avoids sign-split indexing
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels].mean())


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# --------------------------------------------------------------------------- MLP


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str  # "relu" or "softmax"


@dataclass
class MlpParams:
    layers: list

    kind = "mlp"

    @property
    def n_inputs(self):
        return self.layers[0].W.shape[1]

    @property
    def n_classes(self):
        return self.layers[-1].W.shape[0]

    def validate(self):
        if not self.layers:
            raise ShapeError("MLP needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.W.ndim != 2 or layer.b.shape != (layer.W.shape[0],):
                raise ShapeError(f"layer {k}: bias length does not match weight rows")
            if k and layer.W.shape[1] != self.layers[k - 1].W.shape[0]:
                raise ShapeError(f"layer {k}: input dim {layer.W.shape[1]} != previous output dim")
            want = "softmax" if k == len(self.layers) - 1 else "relu"
            if layer.activation != want:
                raise ShapeError(f"layer {k}: activation must be {want}")
        return self

    def arrays(self):
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"layers.{k}.W"] = layer.W
            out[f"layers.{k}.b"] = layer.b
        return out

    def prunable(self, store=None):
        store = self.arrays() if store is None else store
        return {f"layers.{k}.W": store[f"layers.{k}.W"] for k in range(len(self.layers))}

    def export_tensors(self):
        """(name, array, role) in file order; role is "weight" or "bias"."""
        out = []
        for k, layer in enumerate(self.layers):
            out.append((f"layers.{k}.W", layer.W, "weight"))
            out.append((f"layers.{k}.b", layer.b, "bias"))
        return out

    def topology(self):
        return {
            "kind": "mlp",
            "layers": [
                {"in": int(l.W.shape[1]), "out": int(l.W.shape[0]), "activation": l.activation}
                for l in self.layers
            ],
        }

    @classmethod
    def from_export(cls, topology, tensors):
        layers = []
        for k, spec in enumerate(topology["layers"]):
            layers.append(DenseLayer(
                np.asarray(tensors[f"layers.{k}.W"], dtype=np.float64).reshape(spec["out"], spec["in"]),
                np.asarray(tensors[f"layers.{k}.b"], dtype=np.float64).reshape(spec["out"]),
                spec["activation"],
            ))
        return cls(layers).validate()

    def copy(self):
        return MlpParams([DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


def init_mlp(n_inputs, hidden, n_classes=N_CLASSES, seed=0):
    rng = np.random.default_rng(seed)
    dims = [n_inputs, *hidden, n_classes]
    layers = []
    for k in range(len(dims) - 1):
        act = "softmax" if k == len(dims) - 2 else "relu"
        layers.append(DenseLayer(_glorot(rng, dims[k + 1], dims[k]), np.zeros(dims[k + 1]), act))
    return MlpParams(layers)


def _check_inputs(x, width):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != width:
        raise ShapeError(f"input has {x.shape[-1]} features, model expects {width}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def mlp_logits(p, X, cache=None):
    a = X
    for k, layer in enumerate(p.layers):
        if cache is not None:
            cache.append(a)
        z = a @ layer.W.T + layer.b
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a


def mlp_predict_proba(p, X):
    X = _check_inputs(np.atleast_2d(X), p.n_inputs)
    return softmax(mlp_logits(p, X))


def mlp_forward(p, x):
    """Class probabilities for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("mlp_forward takes a single feature vector")
    return mlp_predict_proba(p, x[None, :])[0]


def mlp_loss_and_grads(p, X, y):
    cache = []
    logits = mlp_logits(p, X, cache)
    loss = cross_entropy(logits, y)
    n = len(y)
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = {}
    for k in range(len(p.layers) - 1, -1, -1):
        layer, a_in = p.layers[k], cache[k]
        grads[f"layers.{k}.W"] = delta.T @ a_in
        grads[f"layers.{k}.b"] = delta.sum(axis=0)
        if k:
            delta = (delta @ layer.W) * (a_in > 0)
    return loss, grads


# -------------------------------------------------------------------------- LSTM


@dataclass
class LstmCell:
    W: np.ndarray  # (4*units, in), gate blocks in GATES order
    U: np.ndarray  # (4*units, units)
    b: np.ndarray  # (4*units,)

    @property
    def units(self):
        return self.U.shape[1]

    @property
    def n_inputs(self):
        return self.W.shape[1]

    def gate(self, which, g):
        u = self.units
        k = GATES.index(g)
        return getattr(self, which)[k * u:(k + 1) * u]


@dataclass
class LstmParams:
    cells: list
    head: DenseLayer
    window: int = 5

    kind = "lstm"

    @property
    def n_inputs(self):
        return self.cells[0].n_inputs

    @property
    def n_classes(self):
        return self.head.W.shape[0]

    def validate(self):
        if not self.cells:
            raise ShapeError("LSTM needs at least one cell")
        if self.window < 1:
            raise ShapeError("window must be >= 1")
        prev = None
        for k, c in enumerate(self.cells):
            u = c.units
            if c.W.shape[0] != 4 * u or c.U.shape != (4 * u, u) or c.b.shape != (4 * u,):
                raise ShapeError(f"cell {k}: gate blocks inconsistent with {u} units")
            if prev is not None and c.n_inputs != prev:
                raise ShapeError(f"cell {k}: input dim {c.n_inputs} != previous units {prev}")
            prev = u
        if self.head.W.shape[1] != prev or self.head.b.shape != (self.head.W.shape[0],):
            raise ShapeError("head input dim must equal last cell units")
        if self.head.activation != "softmax":
            raise ShapeError("head activation must be softmax")
        return self

    def arrays(self):
        out = {}
        for k, c in enumerate(self.cells):
            out[f"cells.{k}.W"] = c.W
            out[f"cells.{k}.U"] = c.U
            out[f"cells.{k}.b"] = c.b
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out

    def prunable(self, store=None):
        store = self.arrays() if store is None else store
        out = {}
        for k, c in enumerate(self.cells):
            u = c.units
            for which in ("W", "U"):
                full = store[f"cells.{k}.{which}"]
                for j, g in enumerate(GATES):
                    out[f"cells.{k}.{which}_{g}"] = full[j * u:(j + 1) * u]
        out["head.W"] = store["head.W"]
        return out

    def export_tensors(self):
        out = []
        for k, c in enumerate(self.cells):
            for which in ("W", "U"):
                for g in GATES:
                    out.append((f"cells.{k}.{which}_{g}", c.gate(which, g), "weight"))
            for g in GATES:
                out.append((f"cells.{k}.b_{g}", c.gate("b", g), "bias"))
        out.append(("head.W", self.head.W, "weight"))
        out.append(("head.b", self.head.b, "bias"))
        return out

    def topology(self):
        return {
            "kind": "lstm",
            "window": int(self.window),
            "cells": [{"in": int(c.n_inputs), "units": int(c.units)} for c in self.cells],
            "head": {"in": int(self.head.W.shape[1]), "out": int(self.head.W.shape[0]), "activation": "softmax"},
        }

    @classmethod
    def from_export(cls, topology, tensors):
        cells = []
        for k, spec in enumerate(topology["cells"]):
            u, n_in = spec["units"], spec["in"]
            W = np.concatenate([np.asarray(tensors[f"cells.{k}.W_{g}"], dtype=np.float64).reshape(u, n_in) for g in GATES])
            U = np.concatenate([np.asarray(tensors[f"cells.{k}.U_{g}"], dtype=np.float64).reshape(u, u) for g in GATES])
            b = np.concatenate([np.asarray(tensors[f"cells.{k}.b_{g}"], dtype=np.float64).reshape(u) for g in GATES])
            cells.append(LstmCell(W, U, b))
        h = topology["head"]
        head = DenseLayer(
            np.asarray(tensors["head.W"], dtype=np.float64).reshape(h["out"], h["in"]),
            np.asarray(tensors["head.b"], dtype=np.float64).reshape(h["out"]),
            "softmax",
        )
        return cls(cells, head, int(topology["window"])).validate()

    def copy(self):
        return LstmParams(
            [LstmCell(c.W.copy(), c.U.copy(), c.b.copy()) for c in self.cells],
            DenseLayer(self.head.W.copy(), self.head.b.copy(), "softmax"),
            self.window,
        )


def init_lstm(n_inputs, units, n_classes=N_CLASSES, window=5, seed=0):
    rng = np.random.default_rng(seed)
    cells = []
    n_in = n_inputs
    for u in units:
        W = np.concatenate([_glorot(rng, u, n_in) for _ in GATES])
        lim = 1.0 / np.sqrt(u)
        U = rng.uniform(-lim, lim, size=(4 * u, u))
        b = np.zeros(4 * u)
        b[u:2 * u] = 1.0  # forget gate
        cells.append(LstmCell(W, U, b))
        n_in = u
    head = DenseLayer(_glorot(rng, n_classes, n_in), np.zeros(n_classes), "softmax")
    return LstmParams(cells, head, window)


def _lstm_run(p, X, keep_cache):
    """Run all cells over ``X`` (batch, T, F). Returns last hidden state and caches."""
    seq = X
    caches = []
    for cell in p.cells:
        B, T, _ = seq.shape
        u = cell.units
        h = np.zeros((B, u))
        c = np.zeros((B, u))
        # input part of every step in one 2-D product: (B, T, 4u)
        xw = (seq.reshape(B * T, -1) @ cell.W.T).reshape(B, T, 4 * u) + cell.b
        outs = np.empty((B, T, u))
        steps = []
        for t in range(T):
            z = xw[:, t] + h @ cell.U.T
            i = sigmoid(z[:, :u])
            f = sigmoid(z[:, u:2 * u])
            g = np.tanh(z[:, 2 * u:3 * u])
            o = sigmoid(z[:, 3 * u:])
            c_prev, h_prev = c, h
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            outs[:, t] = h
            if keep_cache:
                steps.append((i, f, g, o, c_prev, h_prev, tc))
        if keep_cache:
            caches.append((seq, steps))
        seq = outs
    return seq[:, -1], caches


def lstm_logits(p, X):
    h, _ = _lstm_run(p, X, False)
    return h @ p.head.W.T + p.head.b


def _check_windows(p, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] != p.window:
        raise ShapeError(f"expected windows of shape (batch, {p.window}, features), got {X.shape}")
    return _check_inputs(X, p.n_inputs)


def lstm_predict_proba(p, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    return softmax(lstm_logits(p, _check_windows(p, X)))


def lstm_forward(p, xs):
    """Class probabilities for one window of feature vectors (window, features)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise ShapeError("lstm_forward takes a single (window, features) array")
    return lstm_predict_proba(p, xs[None])[0]


def lstm_loss_and_grads(p, X, y):
    h_last, caches = _lstm_run(p, X, True)
    logits = h_last @ p.head.W.T + p.head.b
    loss = cross_entropy(logits, y)
    n = len(y)
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = {"head.W": delta.T @ h_last, "head.b": delta.sum(axis=0)}

    # gradient w.r.t. the hidden output sequence of the top cell: only last step
    B, T = X.shape[0], X.shape[1]
    dseq = np.zeros((B, T, p.cells[-1].units))
    dseq[:, -1] = delta @ p.head.W

    for k in range(len(p.cells) - 1, -1, -1):
        cell = p.cells[k]
        seq_in, steps = caches[k]
        u = cell.units
        dW = np.zeros_like(cell.W)
        dU = np.zeros_like(cell.U)
        db = np.zeros_like(cell.b)
        dx = np.zeros_like(seq_in)
        dh_next = np.zeros((B, u))
        dc_next = np.zeros((B, u))
        for t in range(T - 1, -1, -1):
            i, f, g, o, c_prev, h_prev, tc = steps[t]
            dh = dseq[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dW += dz.T @ seq_in[:, t]
            dU += dz.T @ h_prev
            db += dz.sum(axis=0)
            dx[:, t] = dz @ cell.W
            dh_next = dz @ cell.U
            dc_next = dc * f
        grads[f"cells.{k}.W"] = dW
        grads[f"cells.{k}.U"] = dU
        grads[f"cells.{k}.b"] = db
        dseq = dx
    return loss, grads


# ------------------------------------------------------------------ dispatchers


def predict_proba(params, X):
    if params.kind == "mlp":
        return mlp_predict_proba(params, X)
    return lstm_predict_proba(params, X)


def loss_and_grads(params, X, y):
    if params.kind == "mlp":
        return mlp_loss_and_grads(params, X, y)
    return lstm_loss_and_grads(params, X, y)


def logits(params, X):
    return mlp_logits(params, X) if params.kind == "mlp" else lstm_logits(params, X)


def n_parameters(params):
    return sum(a.size for a in params.arrays().values())


@dataclass(frozen=True)
class ModelSpec:
    """Architecture recipe: hidden widths (MLP) or cell units (LSTM)."""
    kind: str = "mlp"
    hidden: tuple = (16, 128, 64)
    window: int = 5

    def __post_init__(self):
        if self.kind not in ("mlp", "lstm"):
            raise ValueError(f"model kind must be 'mlp' or 'lstm', not {self.kind!r}")
        if self.kind == "lstm" and not self.hidden:
            raise ValueError("an LSTM needs at least one cell")

    def build(self, n_inputs, seed=0, n_classes=N_CLASSES):
        if self.kind == "mlp":
            return init_mlp(n_inputs, list(self.hidden), n_classes, seed)
        return init_lstm(n_inputs, list(self.hidden), n_classes, self.window, seed)

    def to_dict(self):
        return {"kind": self.kind, "hidden": list(self.hidden), "window": self.window}


def spec_of(params):
    if params.kind == "mlp":
        return ModelSpec("mlp", tuple(l.W.shape[0] for l in params.layers[:-1]))
    return ModelSpec("lstm", tuple(c.units for c in params.cells), params.window)
