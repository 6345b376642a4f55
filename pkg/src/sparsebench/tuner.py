"""Seeded random search over layer-count/width spaces."""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import json
import logging
import math

import numpy as np

from . import nn
from .bench import compute_metrics
from .training import TrainConfig, model_inputs, predict, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Param:
    kind: str            # "int", "categorical", "loguniform", "uniform"
    low: float = None
    high: float = None
    step: float = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError("categorical parameter needs choices")
            return
        if self.kind not in ("int", "loguniform", "uniform"):
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.low is None or self.high is None or self.low > self.high:
            raise ValueError("bounds must satisfy low <= high")
        if self.kind == "loguniform" and self.low <= 0:
            raise ValueError("log-uniform bounds must be positive")
        if self.step is not None:
            if self.step <= 0:
                raise ValueError("step must be positive")
            n = (self.high - self.low) / self.step
            if abs(n - round(n)) > 1e-9:
                raise ValueError("step must divide the range")

    def sample(self, rng):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(0, len(self.choices)))]
        if self.kind == "int":
            step = int(self.step or 1)
            n = (int(self.high) - int(self.low)) // step
            return int(self.low) + step * int(rng.integers(0, n + 1))
        if self.kind == "loguniform":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        if self.step:
            n = int(round((self.high - self.low) / self.step))
            return float(self.low + self.step * int(rng.integers(0, n + 1)))
        return float(rng.uniform(self.low, self.high))

    def contains(self, v):
        if self.kind == "categorical":
            return v in self.choices
        if not self.low - 1e-12 <= v <= self.high + 1e-12:
            return False
        if self.step:
            n = (v - self.low) / self.step
            return abs(n - round(n)) < 1e-9
        return True

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "choices" in d:
            d["choices"] = tuple(d["choices"])
        return cls(**d)


@dataclass(frozen=True)
class SearchSpace:
    """``depth`` is drawn first; ``per_layer`` params are then drawn once per layer."""
    model: str = "mlp"
    depth: Param = None
    per_layer: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def contains(self, config):
        if self.depth is not None:
            if not self.depth.contains(config["n_layers"]):
                return False
            for name, p in self.per_layer.items():
                vals = config[name]
                if len(vals) != self.n_drawn_layers(config["n_layers"]):
                    return False
                if not all(p.contains(v) for v in vals):
                    return False
        return all(p.contains(config[name]) for name, p in self.params.items())

    def n_drawn_layers(self, n_layers):
        # the layer count includes the softmax output layer; an LSTM keeps at least one cell
        hidden = n_layers - 1
        return max(hidden, 1) if self.model == "lstm" else hidden

    @classmethod
    def from_dict(cls, d):
        return cls(
            model=d.get("model", "mlp"),
            depth=Param.from_dict(d["depth"]) if d.get("depth") else None,
            per_layer={k: Param.from_dict(v) for k, v in d.get("per_layer", {}).items()},
            params={k: Param.from_dict(v) for k, v in d.get("params", {}).items()},
        )


MLP_SPACE = SearchSpace(
    model="mlp",
    depth=Param("int", 1, 8, 1),
    per_layer={"hidden": Param("categorical", choices=(16, 32, 64, 128))},
)

LSTM_SPACE = SearchSpace(
    model="lstm",
    depth=Param("int", 1, 3, 1),
    per_layer={"hidden": Param("categorical", choices=(50, 75, 100))},
)


def sample_config(space, seed):
    rng = np.random.default_rng(seed)
    config = {}
    if space.depth is not None:
        n = space.depth.sample(rng)
        config["n_layers"] = n
        for name, p in space.per_layer.items():
            config[name] = [p.sample(rng) for _ in range(space.n_drawn_layers(n))]
    for name, p in space.params.items():
        config[name] = p.sample(rng)
    return config


@dataclass
class TrialRecord:
    trial: int
    config: dict
    seed: int
    status: str = "complete"
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    error: str = ""


def model_spec_from_config(space, config, window=5):
    hidden = tuple(int(h) for h in config.get("hidden", ()))
    return nn.ModelSpec(space.model, hidden, int(config.get("window", window)))


def _run_trial(trial, seed, space, train_data, val_data, cfg, window):
    config = sample_config(space, seed)
    rec = TrialRecord(trial, config, seed)
    try:
        spec = model_spec_from_config(space, config, window)
        trial_cfg = cfg.replace(seed=seed, **{k: config[k] for k in ("lr", "batch_size") if k in config})
        params = spec.build(train_data.features.shape[1], seed=seed)
        params, _ = train(params, train_data, trial_cfg, val=val_data)
        Xv, yv = model_inputs(params, val_data.features, val_data.labels)
        m = compute_metrics(predict(params, Xv), yv)
        rec.accuracy, rec.precision, rec.recall, rec.f1 = m.accuracy, m.precision, m.recall, m.f1
    except Exception as exc:  # a failed trial is recorded, not fatal
        log.warning("trial %d failed: %s", trial, exc)
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def run_study(space, train_data, val_data, budget=10, cfg=TrainConfig(), seed=0, window=5, workers=1):
    """Train ``budget`` sampled configs; best = highest validation accuracy, earliest on ties."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(budget)]
    args = [(t, seeds[t], space, train_data, val_data, cfg, window) for t in range(budget)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda a: _run_trial(*a), args))
    else:
        records = [_run_trial(*a) for a in args]
    done = [r for r in records if r.status == "complete"]
    best = max(done, key=lambda r: (r.accuracy, -r.trial)) if done else None
    return best, records


def write_study_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "params_json", "accuracy", "precision", "recall", "f1", "status"])
        for r in records:
            w.writerow([r.trial, json.dumps(r.config, sort_keys=True), repr(r.accuracy), repr(r.precision),
                        repr(r.recall), repr(r.f1), r.status])


def best_config_fragment(space, record, window=5):
    spec = model_spec_from_config(space, record.config, window)
    frag = {"model": spec.to_dict()}
    extra = {k: record.config[k] for k in ("lr", "batch_size") if k in record.config}
    if extra:
        frag["train"] = extra
    return frag
