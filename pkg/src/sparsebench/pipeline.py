"""Run-directory stages: data -> dense model -> pruned -> feature-selected pruned -> report.

Every stage reads its inputs from disk and writes its outputs next to a
``<artifact>.meta.json`` sidecar (config digest, seed, version, input
hashes). A stage whose inputs are missing runs the producing stage first.
"""
import hashlib
import json
import logging
import os

import numpy as np

from . import __version__, bench, dataflow, explain, formats, nn, prune, sparse, training, tuner
from .config import RunConfig, _as_list

log = logging.getLogger(__name__)

STAGE_IDS = {"synth": 1, "preprocess": 2, "tune": 3, "train": 4, "prune": 5, "select": 6, "bench": 7,
             "convert-sparse": 8}


def runs_root():
    return os.environ.get("SPARSEBENCH_RUNS_DIR") or "runs"


def stage_seed(master, stage):
    return int(np.random.SeedSequence([int(master), STAGE_IDS[stage]]).generate_state(1)[0])


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1) + "\n")


class Run:
    def __init__(self, cfg, root=None):
        self.cfg = cfg
        self.dir = os.path.join(root or runs_root(), cfg["name"])
        for sub in ("data", "models", "reports"):
            os.makedirs(os.path.join(self.dir, sub), exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.dir, *parts)

    def rel(self, path):
        return os.path.relpath(path, self.dir)

    def write_meta(self, artifact, stage, inputs=(), extra=None):
        meta = {
            "artifact": self.rel(artifact),
            "stage": stage,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "stage_seed": stage_seed(self.cfg.seed, stage),
            "version": __version__,
            "inputs": {self.rel(p): file_sha256(p) for p in inputs},
            "sha256": file_sha256(artifact),
        }
        if extra:
            meta.update(extra)
        _write_json(artifact + ".meta.json", meta)

    # ------------------------------------------------------------------ configs

    def train_config(self, stage):
        t = self.cfg.effective("train")
        return training.TrainConfig(batch_size=t["batch_size"], max_epochs=t["max_epochs"], lr=t["lr"],
                                    patience=min(t["patience"], t["max_epochs"] - 1),
                                    seed=stage_seed(self.cfg.seed, stage))

    def schedule(self):
        return prune.PruneSchedule(**{k: self.cfg["prune"][k] for k in
                                      ("s_i", "s_f", "t0", "delta_t", "n", "recovery_epochs")})

    def shap_config(self):
        s = self.cfg.effective("shap")
        mode = s["sampling_mode"] or ("consecutive" if self.cfg.kind == "lstm" else "random")
        return explain.ShapConfig(s["background_count"], s["eval_count"], s["coalition_samples"],
                                  stage_seed(self.cfg.seed, "select"), mode, s.get("l1_reg", "auto"))

    def model_spec(self):
        m = self.cfg["model"]
        return nn.ModelSpec(m["kind"], tuple(m["hidden"]), m["window"])

    @property
    def model_name(self):
        return self.cfg.kind.upper()

    # --------------------------------------------------------------------- data

    @property
    def synth_csv(self):
        return self.path("data", "synth.csv")

    @property
    def train_csv(self):
        return self.path("data", "train.csv")

    @property
    def test_csv(self):
        return self.path("data", "test.csv")

    @property
    def features_json(self):
        return self.path("data", "features.json")

    def synth(self):
        sy = self.cfg["data"]["synth"]
        if sy is None:
            raise dataflow.DataError("config has no data.synth section")
        spec = dataflow.SynthSpec(sy["n_rows"], sy["feature_count"], sy["signal_count"], tuple(sy["priors"]),
                                  sy["separation"])
        t = dataflow.synth_generate(spec, stage_seed(self.cfg.seed, "synth"))
        dataflow.write_csv(t, self.synth_csv, self.label_col)
        self.write_meta(self.synth_csv, "synth", extra={
            "signal_columns": t.meta["signal_columns"],
            "label_mapping": spec.label_mapping(),
        })
        log.info("synth: %d rows -> %s", t.n_rows, self.synth_csv)
        return self.synth_csv

    @property
    def label_col(self):
        return self.cfg["data"]["label_col"]

    def label_mapping(self):
        d = self.cfg["data"]
        if d["synth"] is not None and not d["label_mapping"]:
            return dataflow.SynthSpec().label_mapping() if "detailed_labels" not in d["synth"] else {
                lab: c for c, labs in d["synth"]["detailed_labels"].items() for lab in labs}
        return d["label_mapping"]

    def preprocess(self):
        d = self.cfg["data"]
        label = self.label_col
        if d["synth"] is not None:
            if not os.path.isfile(self.synth_csv):
                self.synth()
            inputs = [self.synth_csv]
            full = dataflow.load_csv(self.synth_csv, label)
            cut = full.n_rows - int(np.ceil(d["test_fraction"] * full.n_rows))
            train_t, test_t = full.take_rows(np.arange(cut)), full.take_rows(np.arange(cut, full.n_rows))
        else:
            inputs = [self.cfg.resolve(p) for p in _as_list(d["train_csv"])]
            train_t = dataflow.concat_tables([dataflow.load_csv(p, label) for p in inputs])
            tests = [self.cfg.resolve(p) for p in _as_list(d["test_csv"])]
            if tests:
                inputs += tests
                test_t = dataflow.concat_tables([dataflow.load_csv(p, label) for p in tests])
            else:
                cut = train_t.n_rows - int(np.ceil(d["test_fraction"] * train_t.n_rows))
                train_t, test_t = train_t.take_rows(np.arange(cut)), train_t.take_rows(np.arange(cut, train_t.n_rows))
        res = dataflow.preprocess_pair(
            train_t, test_t, self.label_mapping(), d["nominal_columns"], d["drop_columns"],
            d["missing_threshold"], d["corr_threshold"], d["corr_merge"],
        )
        dataflow.write_csv(res.train, self.train_csv, label)
        dataflow.write_csv(res.test, self.test_csv, label)
        shares = res.train.labels.tolist()
        info = {
            "kept": res.kept,
            "removed_degenerate": res.removed_degenerate,
            "removed_correlated": res.removed_correlated,
            "label_col": label,
            "label_mapping": self.label_mapping(),
            "train_rows": res.train.n_rows,
            "test_rows": res.test.n_rows,
            "train_class_shares": {c: shares.count(i) / len(shares) for i, c in enumerate(dataflow.CLASS_NAMES)},
        }
        _write_json(self.features_json, info)
        for p in (self.train_csv, self.test_csv, self.features_json):
            self.write_meta(p, "preprocess", inputs)
        log.info("preprocess: %d features kept", len(res.kept))
        return res

    def ensure_data(self):
        if not all(os.path.isfile(p) for p in (self.train_csv, self.test_csv, self.features_json)):
            self.preprocess()

    def load_data(self):
        """``(train, val, test)`` datasets from the preprocessed CSVs."""
        self.ensure_data()
        with open(self.features_json) as fh:
            info = json.load(fh)
        mapping = info["label_mapping"]
        tr = dataflow.map_labels(dataflow.load_csv(self.train_csv, info["label_col"]), mapping)
        te = dataflow.map_labels(dataflow.load_csv(self.test_csv, info["label_col"]), mapping)
        train, val = dataflow.split_validation(tr, self.cfg["data"]["val_fraction"])
        return train, val, dataflow.to_dataset(te)

    # ------------------------------------------------------------------- models

    @property
    def original_path(self):
        return self.path("models", "original.json")

    @property
    def pruned_path(self):
        return self.path("models", "pruned.json")

    @property
    def pruned_spif(self):
        return self.path("models", "pruned.spif")

    @property
    def fs_pruned_path(self):
        return self.path("models", "fs_pruned.json")

    @property
    def fs_pruned_spif(self):
        return self.path("models", "fs_pruned.spif")

    @property
    def attributions_csv(self):
        return self.path("reports", "attributions.csv")

    def _save_dense(self, params, path, stage, inputs, feature_mask=None, input_width=None):
        formats.save_dense(params, path, feature_mask, input_width)
        blob = path[:-5] + ".bin"
        self.write_meta(path, stage, inputs)
        self.write_meta(blob, stage, inputs)

    def tune(self):
        train, val, _ = self.load_data()
        tc = self.cfg.effective("tuner")
        if tc["space"]:
            space = tuner.SearchSpace.from_dict(tc["space"])
        else:
            space = tuner.LSTM_SPACE if self.cfg.kind == "lstm" else tuner.MLP_SPACE
        cfg = self.train_config("tune")
        if tc.get("max_epochs"):
            cfg = cfg.replace(max_epochs=tc["max_epochs"], patience=min(cfg.patience, tc["max_epochs"] - 1))
        best, records = tuner.run_study(space, train, val, tc["budget"], cfg, stage_seed(self.cfg.seed, "tune"),
                                        self.cfg["model"]["window"], tc.get("workers", 1))
        study = self.path("reports", "study.csv")
        tuner.write_study_csv(records, study)
        inputs = [self.train_csv]
        self.write_meta(study, "tune", inputs)
        out = self.path("reports", "best_config.json")
        _write_json(out, tuner.best_config_fragment(space, best, self.cfg["model"]["window"]) if best else {})
        self.write_meta(out, "tune", inputs)
        return best, records

    def train(self):
        train, val, _ = self.load_data()
        params = self.model_spec().build(train.features.shape[1], seed=stage_seed(self.cfg.seed, "train"))
        params, hist = training.train(params, train, self.train_config("train"), val=val)
        self._save_dense(params, self.original_path, "train", [self.train_csv])
        hp = self.path("reports", "train_history.json")
        _write_json(hp, hist.to_dict())
        self.write_meta(hp, "train", [self.train_csv])
        return params

    def load_original(self):
        if not os.path.isfile(self.original_path):
            self.train()
        return formats.load_dense(self.original_path)[0]

    def prune(self):
        params = self.load_original()
        train, val, _ = self.load_data()
        pruned, _, hist = prune.prune_and_finetune(params, train, self.train_config("prune"), self.schedule(), val=val)
        inputs = [self.original_path, self.train_csv]
        self._save_dense(pruned, self.pruned_path, "prune", inputs)
        hp = self.path("reports", "prune_history.json")
        _write_json(hp, {**hist.to_dict(), "tensor_sparsity": prune.tensor_sparsity(pruned)})
        self.write_meta(hp, "prune", inputs)
        return pruned

    def convert_sparse(self):
        """Write a SPIF next to every pruned dense model present (pruned, fs_pruned)."""
        if not os.path.isfile(self.pruned_path):
            self.prune()
        written = []
        for dense, spif in ((self.pruned_path, self.pruned_spif), (self.fs_pruned_path, self.fs_pruned_spif)):
            if not os.path.isfile(dense):
                continue
            params, manifest = formats.load_dense(dense)
            m = sparse.to_sparse_model(params, manifest["feature_mask"], manifest["input_width"])
            formats.serialize_sparse(m, spif)
            self.write_meta(spif, "convert-sparse", [dense])
            written.append(spif)
        return written

    def attribute(self):
        params = self.load_original()
        train, val, _ = self.load_data()
        report = explain.attribute(params, train.features, val.features, train.feature_names, self.shap_config())
        report.write_csv(self.attributions_csv)
        self.write_meta(self.attributions_csv, "select", [self.original_path, self.train_csv])
        return report

    def select_features(self, attributions=None):
        """Top-k inputs by mean |phi|, retrained from scratch and pruned; writes fs_pruned model + SPIF."""
        params = self.load_original()
        train, val, _ = self.load_data()
        if attributions:
            report = explain.AttributionReport.read_csv(attributions, train.feature_names)
            inputs = [attributions]
        else:
            report = self.attribute()
            inputs = [self.attributions_csv]
        cfg = self.train_config("select")
        res = explain.fs_prune_pipeline(params, train, val, cfg, self.schedule(), self.cfg["select"]["k"],
                                        report=report)
        inputs += [self.original_path, self.train_csv]
        self._save_dense(res.dense_params, self.fs_pruned_path, "select", inputs, res.feature_mask,
                         train.features.shape[1])
        formats.serialize_sparse(res.sparse_model, self.fs_pruned_spif)
        self.write_meta(self.fs_pruned_spif, "select", [self.fs_pruned_path])
        sel = self.path("reports", "selected_features.json")
        _write_json(sel, {
            "k": self.cfg["select"]["k"],
            "selected": [train.feature_names[i] for i in res.selected],
            "feature_mask": res.feature_mask,
            "share": res.share,
        })
        self.write_meta(sel, "select", inputs)
        return res

    # -------------------------------------------------------------------- bench

    def ensure_models(self):
        if not os.path.isfile(self.original_path):
            self.train()
        if not os.path.isfile(self.pruned_path):
            self.prune()
        if not os.path.isfile(self.pruned_spif):
            self.convert_sparse()
        if not (os.path.isfile(self.fs_pruned_path) and os.path.isfile(self.fs_pruned_spif)):
            self.select_features()

    def bench(self, keep_raw=None):
        """Score the three stages on the test split; returns a ``BenchReport``."""
        self.ensure_models()
        _, _, test = self.load_data()
        b = self.cfg.effective("bench")
        keep_raw = b["raw_latency"] if keep_raw is None else keep_raw
        seed = stage_seed(self.cfg.seed, "bench")
        original, manifest = formats.load_dense(self.original_path)
        X, y = training.model_inputs(original, test.features, test.labels)
        deployed = {
            "original": (sparse.NaiveDenseModel(original, None, manifest["input_width"]), self.original_path),
            "pruned": (formats.deserialize_sparse(self.pruned_spif), self.pruned_spif),
            "fs_pruned": (formats.deserialize_sparse(self.fs_pruned_spif), self.fs_pruned_spif),
        }
        report = bench.BenchReport()
        raw = {}
        for stage in bench.STAGES:
            model, path = deployed[stage]
            fn = model if stage == "original" else (lambda x, m=model: sparse.sparse_infer(m, x))
            pred = np.argmax(sparse.predict_many(fn, X), axis=1)
            metrics = bench.compute_metrics(pred, y)
            lat = bench.measure_latency(fn, X, b["latency_fraction"], seed, b["repeats"], keep_raw)
            raw[(self.model_name, stage)] = lat
            report.add(self.model_name, stage, metrics, lat.ms_per_sample, bench.measure_size(path))
            log.info("bench %s/%s: acc %.4f, %.6f ms (spread %.6f)", self.model_name, stage, metrics.accuracy,
                     lat.ms_per_sample, lat.spread_ms)
        if keep_raw:
            write_latency = self.path("reports", "latency_raw.csv")
            bench.write_latency_raw(raw, write_latency)
        return report

    def emit(self, report, out=None, fmt="csv"):
        out = out or self.path("reports", "report." + ("md" if fmt == "markdown" else "csv"))
        bench.emit_report(report, out, fmt)
        self.write_meta(out, "bench", [p for p in (self.original_path, self.pruned_spif, self.fs_pruned_spif)
                                       if os.path.isfile(p)])
        return out


def open_run(config_path, seed=None, fast=False, label_col=None, need_inputs=True, root=None):
    cfg = RunConfig.load(config_path).override(seed=seed, fast=fast, label_col=label_col)
    cfg.validate(need_inputs=need_inputs)
    return Run(cfg, root)
