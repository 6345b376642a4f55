"""Mini-batch Adam training with early stopping and optional sparsity masks."""
from dataclasses import asdict, dataclass, field
import logging

import numpy as np

from . import nn

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training diverged or received unusable data."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience < self.max_epochs:
            raise ValueError("patience must satisfy 0 <= patience < max_epochs")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def replace(self, **changes):
        return TrainConfig(**{**asdict(self), **changes})


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """Update the arrays in ``params`` (name -> ndarray) in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


def make_windows(features, labels, window):
    """Sliding windows ending at every row from ``window - 1`` on.

    Window ``k`` holds rows ``k .. k + window - 1`` and carries the label of
    its last row.
    """
    X = np.asarray(features, dtype=np.float64)
    if len(X) < window:
        raise TrainingError(f"need at least {window} rows to build one window, got {len(X)}")
    W = np.lib.stride_tricks.sliding_window_view(X, window, axis=0)  # (n-w+1, F, w)
    W = np.ascontiguousarray(W.transpose(0, 2, 1))
    y = None if labels is None else np.asarray(labels)[window - 1:]
    return W, y


def model_inputs(params, features, labels=None):
    """Turn a row matrix into what ``params`` consumes (rows or windows)."""
    if params.kind == "lstm":
        return make_windows(features, labels, params.window)
    X = np.asarray(features, dtype=np.float64)
    return X, (None if labels is None else np.asarray(labels))


def apply_mask(params, mask):
    if not mask:
        return
    for name, view in params.prunable().items():
        view *= mask[name]


def _mask_grads(params, grads, mask):
    for name, view in params.prunable(grads).items():
        view *= mask[name]


def evaluate_loss(params, X, y, chunk=2048):
    total = 0.0
    for s in range(0, len(y), chunk):
        z = nn.logits(params, X[s:s + chunk])
        total += nn.cross_entropy(z, y[s:s + chunk]) * len(y[s:s + chunk])
    return total / len(y)


def predict(params, X, chunk=2048):
    out = [np.argmax(nn.logits(params, X[s:s + chunk]), axis=1) for s in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def train(params, data, cfg, mask=None, val=None):
    """Fit ``params`` on ``data`` (a Dataset). Returns ``(best params, History)``.

    ``val`` drives early stopping; without it the training loss is monitored.
    With ``mask`` (tensor name -> keep flags) masked weights get zero gradient
    and are re-zeroed after every optimizer step.
    """
    params = params.copy()
    X, y = model_inputs(params, data.features, data.labels)
    if len(y) == 0:
        raise TrainingError("empty training set")
    counts = np.bincount(y, minlength=params.n_classes)
    if len(counts) > params.n_classes:
        raise TrainingError(f"label {len(counts) - 1} out of range for {params.n_classes} classes")
    if np.any(counts == 0):
        empty = [int(c) for c in np.flatnonzero(counts == 0)]
        raise TrainingError(f"classes {empty} have no training samples")
    if val is not None:
        Xv, yv = model_inputs(params, val.features, val.labels)
    else:
        Xv = yv = None

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    store = params.arrays()
    apply_mask(params, mask)
    hist = History()
    best = params.copy()
    stale = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(y))
        seen = 0
        running = 0.0
        for bi, s in enumerate(range(0, len(y), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss, grads = nn.loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            if mask:
                _mask_grads(params, grads, mask)
            opt.step(store, grads)
            if mask:
                apply_mask(params, mask)
            running += loss * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": running / seen}
        if yv is not None:
            record["val_loss"] = evaluate_loss(params, Xv, yv)
            record["val_accuracy"] = float(np.mean(predict(params, Xv) == yv))
            monitored = record["val_loss"]
        else:
            monitored = record["train_loss"]
        hist.epochs.append(record)
        log.debug("epoch %d: %s", epoch, record)
        if monitored < hist.best_loss:
            hist.best_loss = monitored
            hist.best_epoch = epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= max(cfg.patience, 1):
                hist.stopped_early = True
                break
    return best, hist


def grad_check(params, X, y, h=1e-4, max_params=500, floor=1e-7):
    """Max relative error between analytic and central-difference gradients.

    Entries where both gradients are below ``floor`` in magnitude count as
    exact matches.
    """
    n = nn.n_parameters(params)
    if n > max_params:
        raise ValueError(f"grad_check is meant for small models; this one has {n} parameters")
    params = params.copy()
    _, grads = nn.loss_and_grads(params, X, y)
    worst = 0.0
    for name, arr in params.arrays().items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up, _ = nn.loss_and_grads(params, X, y)
            flat[j] = orig - h
            down, _ = nn.loss_and_grads(params, X, y)
            flat[j] = orig
            num = (up - down) / (2 * h)
            a = gflat[j]
            denom = abs(a) + abs(num)
            if denom < floor:
                continue
            worst = max(worst, abs(a - num) / denom)
    return worst
