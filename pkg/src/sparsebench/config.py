"""Run configuration (JSON) with field-by-field validation."""
import copy
import hashlib
import json
import os

DEFAULTS = {
    "name": "run",
    "seed": None,
    "fast": False,
    "data": {
        "synth": None,
        "train_csv": [],
        "test_csv": [],
        "label_col": "label",
        "label_mapping": {},
        "nominal_columns": [],
        "drop_columns": [],
        "missing_threshold": 0.99,
        "corr_threshold": 0.95,
        "corr_merge": "union",
        "val_fraction": 0.2,
        "test_fraction": 0.2,
    },
    "model": {"kind": "mlp", "hidden": [16, 128, 64], "window": 5},
    "train": {"batch_size": 32, "max_epochs": 50, "lr": 1e-3, "patience": 5},
    "prune": {"s_i": 0.0, "s_f": 0.65, "t0": 0, "delta_t": 1, "n": 10, "recovery_epochs": 5},
    "shap": {"background_count": 100, "eval_count": 1000, "coalition_samples": None, "sampling_mode": None,
             "l1_reg": "auto"},
    "select": {"k": 10},
    "tuner": {"budget": 10, "space": None, "workers": 1},
    "bench": {"latency_fraction": 0.10, "repeats": 3, "raw_latency": False},
}

# applied by --fast / "fast": true
FAST = {
    "train": {"max_epochs": 10},
    "shap": {"background_count": 20, "eval_count": 20, "coalition_samples": 512},
    "tuner": {"max_epochs": 10},
}

SYNTH_DEFAULTS = {
    "n_rows": 20000,
    "feature_count": 49,
    "signal_count": 10,
    "priors": [0.25, 0.50, 0.25],
    "separation": 1.5,
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    def __init__(self, raw, base_dir="."):
        self.raw = _merge(DEFAULTS, raw)
        self.base_dir = base_dir
        if self.raw["data"]["synth"] is not None:
            self.raw["data"]["synth"] = _merge(SYNTH_DEFAULTS, self.raw["data"]["synth"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config: invalid JSON ({exc})"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config: top level must be an object"])
        return cls(raw, os.path.dirname(os.path.abspath(path)))

    def __getitem__(self, key):
        return self.raw[key]

    def override(self, seed=None, fast=None, label_col=None):
        if seed is not None:
            self.raw["seed"] = int(seed)
        if fast:
            self.raw["fast"] = True
        if label_col is not None:
            self.raw["data"]["label_col"] = label_col
        return self

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def kind(self):
        return self.raw["model"]["kind"]

    def effective(self, section):
        """A section with --fast reductions applied."""
        sec = dict(self.raw[section])
        if self.raw["fast"] and section in FAST:
            for k, v in FAST[section].items():
                sec[k] = v if sec.get(k) is None else min(sec[k], v)
        return sec

    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def validate(self, need_inputs=True):
        p = []
        r = self.raw
        if r["seed"] is None:
            p.append("seed: required (set in config or pass --seed)")
        elif not isinstance(r["seed"], int) or r["seed"] < 0:
            p.append("seed: must be a non-negative integer")
        if not isinstance(r["name"], str) or not r["name"] or "/" in r["name"]:
            p.append("name: must be a non-empty string without '/'")
        m = r["model"]
        if m.get("kind") not in ("mlp", "lstm"):
            p.append("model.kind: must be 'mlp' or 'lstm'")
        if not isinstance(m.get("hidden"), list) or not all(isinstance(h, int) and h > 0 for h in m.get("hidden") or [0]):
            if not (m.get("kind") == "mlp" and m.get("hidden") == []):
                p.append("model.hidden: must be a list of positive integers")
        if not isinstance(m.get("window"), int) or m["window"] < 1:
            p.append("model.window: must be an integer >= 1")
        t = r["train"]
        if not isinstance(t.get("batch_size"), int) or t["batch_size"] < 1:
            p.append("train.batch_size: must be an integer >= 1")
        if not isinstance(t.get("max_epochs"), int) or t["max_epochs"] < 1:
            p.append("train.max_epochs: must be an integer >= 1")
        if not isinstance(t.get("patience"), int) or t["patience"] < 0:
            p.append("train.patience: must be a non-negative integer")
        elif isinstance(t.get("max_epochs"), int) and t["patience"] >= t["max_epochs"]:
            p.append("train.patience: must be smaller than train.max_epochs")
        if not isinstance(t.get("lr"), (int, float)) or t["lr"] <= 0:
            p.append("train.lr: must be positive")
        pr = r["prune"]
        try:
            ok = 0 <= pr["s_i"] <= pr["s_f"] < 1
        except TypeError:
            ok = False
        if not ok:
            p.append("prune.s_i/s_f: need 0 <= s_i <= s_f < 1")
        for k in ("n", "delta_t"):
            if not isinstance(pr.get(k), int) or pr[k] < 1:
                p.append(f"prune.{k}: must be an integer >= 1")
        for k in ("t0", "recovery_epochs"):
            if not isinstance(pr.get(k), int) or pr[k] < 0:
                p.append(f"prune.{k}: must be a non-negative integer")
        s = r["shap"]
        for k in ("background_count", "eval_count"):
            if not isinstance(s.get(k), int) or s[k] < 1:
                p.append(f"shap.{k}: must be an integer >= 1")
        if s.get("sampling_mode") not in (None, "random", "consecutive"):
            p.append("shap.sampling_mode: must be 'random' or 'consecutive'")
        if s.get("l1_reg") not in ("auto", "aic", "none"):
            p.append("shap.l1_reg: must be 'auto', 'aic' or 'none'")
        cs = s.get("coalition_samples")
        if cs is not None and (not isinstance(cs, int) or cs < 3):
            p.append("shap.coalition_samples: must be null or an integer >= M + 2")
        if not isinstance(r["select"].get("k"), int) or r["select"]["k"] < 1:
            p.append("select.k: must be an integer >= 1")
        if not isinstance(r["tuner"].get("budget"), int) or r["tuner"]["budget"] < 1:
            p.append("tuner.budget: must be an integer >= 1")
        b = r["bench"]
        if not isinstance(b.get("latency_fraction"), (int, float)) or not 0 < b["latency_fraction"] <= 1:
            p.append("bench.latency_fraction: must be in (0, 1]")
        if not isinstance(b.get("repeats"), int) or b["repeats"] < 1:
            p.append("bench.repeats: must be an integer >= 1")
        d = r["data"]
        if d["corr_merge"] not in ("union", "intersection"):
            p.append("data.corr_merge: must be 'union' or 'intersection'")
        for k in ("val_fraction", "test_fraction"):
            if not isinstance(d.get(k), (int, float)) or not 0 < d[k] < 1:
                p.append(f"data.{k}: must be in (0, 1)")
        if d["synth"] is None:
            if not d["train_csv"]:
                p.append("data: give either data.synth or data.train_csv")
            if not d["label_mapping"]:
                p.append("data.label_mapping: required for CSV input")
            if need_inputs:
                for k in ("train_csv", "test_csv"):
                    for path in _as_list(d[k]):
                        if not os.path.isfile(self.resolve(path)):
                            p.append(f"data.{k}: file not found: {path}")
        else:
            sy = d["synth"]
            pri = sy.get("priors")
            if not isinstance(pri, list) or len(pri) != 3 or abs(sum(pri) - 1.0) > 1e-9:
                p.append("data.synth.priors: three class priors summing to 1")
            if not isinstance(sy.get("n_rows"), int) or sy["n_rows"] < 10:
                p.append("data.synth.n_rows: must be an integer >= 10")
            fc, sc = sy.get("feature_count"), sy.get("signal_count")
            if not isinstance(fc, int) or fc < 1:
                p.append("data.synth.feature_count: must be a positive integer")
            elif not isinstance(sc, int) or not 0 <= sc <= fc:
                p.append("data.synth.signal_count: must be between 0 and feature_count")
        if p:
            raise ConfigError(p)
        return self


def _as_list(v):
    return [v] if isinstance(v, str) else list(v or [])
