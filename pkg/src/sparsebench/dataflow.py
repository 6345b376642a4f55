"""Flow-record ingestion and preprocessing.

Pipeline: ``load_csv`` -> ``map_labels`` -> ``encode_nominal`` ->
``drop_degenerate`` -> ``prune_correlated`` -> ``split_validation``. Every
step returns a new :class:`FlowTable`; inputs are never modified.
"""
import csv
from dataclasses import dataclass, field, replace
import logging
import math
import os
import warnings

import numpy as np

log = logging.getLogger(__name__)

CLASS_NAMES = ("Benign", "Recon", "DoS")


class DataError(ValueError):
    """Base class for input-data problems."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class RaggedRowError(DataError):
    def __init__(self, row, got, want):
        super().__init__(f"row {row} has {got} fields, header has {want}")
        self.row = row


class MissingLabelColumnError(DataError):
    pass


class UnmappedLabelError(DataError):
    def __init__(self, label):
        super().__init__(f"label {label!r} has no entry in the label mapping")
        self.label = label


class AllColumnsRemovedError(DataError):
    pass


class InvalidPriorsError(DataError):
    pass


@dataclass(frozen=True)
class FlowTable:
    columns: tuple
    values: np.ndarray      # (rows, columns) float64, NaN = missing
    raw_labels: np.ndarray  # detailed label per row (str objects)
    order_key: np.ndarray   # int64, strictly increasing
    text: dict = field(default_factory=dict)  # column -> original strings, for non-numeric columns
    labels: np.ndarray = None  # coarse class index per row, set by map_labels
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise DataError("values must be (rows, columns)")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("column names must be unique")
        n = self.values.shape[0]
        if len(self.raw_labels) != n or len(self.order_key) != n:
            raise DataError("labels and order_key must have one entry per row")
        if n > 1 and np.any(np.diff(self.order_key) <= 0):
            raise DataError("order_key must be strictly increasing")

    @property
    def n_rows(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, self.columns.index(name)]

    def select_columns(self, keep):
        idx = [self.columns.index(c) for c in keep]
        return replace(
            self,
            columns=tuple(keep),
            values=self.values[:, idx],
            text={c: v for c, v in self.text.items() if c in keep},
        )

    def take_rows(self, rows):
        rows = np.asarray(rows)
        return replace(
            self,
            values=self.values[rows],
            raw_labels=self.raw_labels[rows],
            order_key=self.order_key[rows],
            text={c: v[rows] for c, v in self.text.items()},
            labels=None if self.labels is None else self.labels[rows],
        )


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray   # (rows, features) float64
    labels: np.ndarray     # int, 0=Benign 1=Recon 2=DoS
    feature_names: tuple
    class_names: tuple = CLASS_NAMES
    detailed_labels: np.ndarray = None
    order_key: np.ndarray = None

    def __len__(self):
        return len(self.labels)

    def project(self, idx):
        idx = list(idx)
        return replace(self, features=self.features[:, idx], feature_names=tuple(self.feature_names[i] for i in idx))

    def class_shares(self):
        return np.bincount(self.labels, minlength=len(self.class_names)) / len(self.labels)


def _parse_float(cell):
    cell = cell.strip()
    if not cell:
        return math.nan, False
    try:
        v = float(cell)
    except ValueError:
        return math.nan, True
    return v, False


def load_csv(path, label_column, order_key_start=0):
    """Read a flow CSV. Non-numeric cells become NaN; their strings are kept in ``text``.

    ``label_column=None`` reads an unlabelled file (every raw label is ``""``).
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFileError(f"no such CSV file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        if label_column is None:
            li = None
        elif label_column not in header:
            raise MissingLabelColumnError(f"{path}: label column {label_column!r} not in header")
        else:
            li = header.index(label_column)
        feat_idx = [i for i in range(len(header)) if i != li]
        rows, labels = [], []
        for rn, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise RaggedRowError(rn, len(rec), len(header))
            rows.append([rec[i] for i in feat_idx])
            labels.append("" if li is None else rec[li].strip())
    columns = tuple(header[i] for i in feat_idx)
    n = len(rows)
    values = np.full((n, len(columns)), np.nan)
    nonnumeric = set()
    for r, rec in enumerate(rows):
        for j, cell in enumerate(rec):
            v, bad = _parse_float(cell)
            values[r, j] = v
            if bad:
                nonnumeric.add(j)
    text = {columns[j]: np.array([rec[j] for rec in rows], dtype=object) for j in sorted(nonnumeric)}
    return FlowTable(
        columns=columns,
        values=values,
        raw_labels=np.array(labels, dtype=object),
        order_key=np.arange(order_key_start, order_key_start + n, dtype=np.int64),
        text=text,
    )


def concat_tables(tables):
    """Append tables in the given (chronological) order, renumbering order_key."""
    first = tables[0]
    for t in tables[1:]:
        if t.columns != first.columns:
            raise DataError("tables to merge must share the same columns")
    values = np.concatenate([t.values for t in tables])
    text = {}
    for c in sorted(set().union(*[t.text for t in tables])):
        text[c] = np.concatenate([
            t.text[c] if c in t.text else np.array([repr(v) for v in t.column(c)], dtype=object) for t in tables
        ])
    labels = None
    if all(t.labels is not None for t in tables):
        labels = np.concatenate([t.labels for t in tables])
    return FlowTable(
        columns=first.columns,
        values=values,
        raw_labels=np.concatenate([t.raw_labels for t in tables]),
        order_key=np.arange(len(values), dtype=np.int64),
        text=text,
        labels=labels,
        meta=dict(first.meta),
    )


def write_csv(t, path, label_column="label"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*t.columns, label_column])
        for r in range(t.n_rows):
            cells = []
            for j, c in enumerate(t.columns):
                if c in t.text:
                    cells.append(t.text[c][r])
                else:
                    v = t.values[r, j]
                    cells.append("" if math.isnan(v) else repr(float(v)))
            w.writerow([*cells, t.raw_labels[r]])


# ----------------------------------------------------------------- preprocess


def coarse_index(name):
    if isinstance(name, (int, np.integer)):
        if not 0 <= int(name) < len(CLASS_NAMES):
            raise DataError(f"coarse class index {name} out of range")
        return int(name)
    for i, c in enumerate(CLASS_NAMES):
        if str(name).strip().lower() == c.lower():
            return i
    raise DataError(f"unknown coarse class {name!r}; expected one of {CLASS_NAMES}")


def map_labels(t, mapping):
    """Attach coarse labels (``labels``) from detailed labels; ``raw_labels`` keep the detail."""
    lookup = {str(k): coarse_index(v) for k, v in mapping.items()}
    out = np.empty(t.n_rows, dtype=np.int64)
    for r, lab in enumerate(t.raw_labels):
        try:
            out[r] = lookup[lab]
        except KeyError:
            raise UnmappedLabelError(lab) from None
    return replace(t, labels=out)


def encode_nominal(t, nominal_columns):
    """Label-encode string columns; codes follow lexicographic order of the strings."""
    values = t.values.copy()
    text = dict(t.text)
    for c in nominal_columns:
        if c not in t.columns:
            raise DataError(f"nominal column {c!r} not in table")
        j = t.columns.index(c)
        if c in t.text:
            strings = t.text[c]
        else:
            strings = np.array(["" if math.isnan(v) else repr(float(v)) for v in t.values[:, j]], dtype=object)
        present = sorted({s.strip() for s in strings if s.strip()})
        codes = {s: float(i) for i, s in enumerate(present)}
        values[:, j] = [codes.get(s.strip(), math.nan) for s in strings]
        text.pop(c, None)
    return replace(t, values=values, text=text)


def degenerate_columns(t, missing_threshold=0.99):
    """Names of columns that are mostly missing or constant."""
    out = []
    for j, c in enumerate(t.columns):
        col = t.values[:, j]
        missing = np.isnan(col)
        if missing.mean() > missing_threshold:
            out.append(c)
            continue
        present = col[~missing]
        if present.size == 0 or np.all(present == present[0]):
            out.append(c)
    return out


def drop_degenerate(t, missing_threshold=0.99, extra=()):
    """Remove >threshold-missing and constant columns, then median-impute the rest."""
    if t.n_rows == 0:
        raise DataError("empty table")
    drop = set(degenerate_columns(t, missing_threshold)) | set(extra)
    keep = [c for c in t.columns if c not in drop]
    if not keep:
        raise AllColumnsRemovedError("every column was removed as degenerate")
    t = t.select_columns(keep)
    values = t.values.copy()
    for j in range(values.shape[1]):
        col = values[:, j]
        missing = np.isnan(col)
        if missing.any():
            col[missing] = np.median(col[~missing])
    return replace(t, values=values, text={})


def pearson_matrix(values):
    """Pairwise-complete Pearson correlation; undefined entries are 0."""
    X = np.asarray(values, dtype=np.float64)
    m = X.shape[1]
    if not np.isnan(X).any():
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.corrcoef(X, rowvar=False)
        r = np.atleast_2d(r)
    else:
        r = np.eye(m)
        ok = ~np.isnan(X)
        for a in range(m):
            for b in range(a + 1, m):
                both = ok[:, a] & ok[:, b]
                if both.sum() < 2:
                    continue
                xa, xb = X[both, a], X[both, b]
                xa = xa - xa.mean()
                xb = xb - xb.mean()
                den = math.sqrt(float(xa @ xa) * float(xb @ xb))
                r[a, b] = r[b, a] = (xa @ xb) / den if den > 0 else 0.0
    return np.nan_to_num(r, nan=0.0)


def correlated_removals(t, threshold=0.95):
    if t.n_rows < 2:
        raise DataError("correlation needs at least 2 rows")
    r = pearson_matrix(t.values)
    m = len(t.columns)
    iu, ju = np.triu_indices(m, k=1)
    hot = np.abs(r[iu, ju]) > threshold
    pairs = list(zip(iu[hot].tolist(), ju[hot].tolist()))
    counts = np.zeros(m, dtype=np.int64)
    for a, b in pairs:
        counts[a] += 1
        counts[b] += 1
    pairs.sort(key=lambda p: (-max(counts[p[0]], counts[p[1]]), p[0], p[1]))
    removed = set()
    for a, b in pairs:
        if a in removed or b in removed:
            continue
        # a < b, so a ties in favour of the earlier column
        removed.add(b if counts[a] >= counts[b] else a)
    return [t.columns[j] for j in sorted(removed)]


def prune_correlated(t, threshold=0.95):
    """Drop one member of every feature pair with |rho| > threshold. Returns ``(table, removed)``."""
    removed = correlated_removals(t, threshold)
    keep = [c for c in t.columns if c not in set(removed)]
    return t.select_columns(keep), removed


def split_validation(t, frac=0.2):
    """Hold out the chronologically last ``ceil(frac * n)`` rows of every detailed-label group."""
    if t.labels is None:
        raise DataError("map_labels must run before split_validation")
    val_rows = []
    for lab in sorted(set(t.raw_labels.tolist())):
        rows = np.flatnonzero(t.raw_labels == lab)
        rows = rows[np.argsort(t.order_key[rows], kind="stable")]
        if len(rows) < 2:
            warnings.warn(f"label group {lab!r} has {len(rows)} row(s); kept entirely in training", stacklevel=2)
            continue
        n_val = math.ceil(frac * len(rows))
        val_rows.extend(rows[len(rows) - n_val:].tolist())
    is_val = np.zeros(t.n_rows, dtype=bool)
    is_val[val_rows] = True
    return to_dataset(t.take_rows(np.flatnonzero(~is_val))), to_dataset(t.take_rows(np.flatnonzero(is_val)))


def to_dataset(t):
    if t.labels is None:
        raise DataError("map_labels must run before building a Dataset")
    return Dataset(
        features=t.values.astype(np.float64),
        labels=t.labels.astype(np.int64),
        feature_names=tuple(t.columns),
        detailed_labels=t.raw_labels.copy(),
        order_key=t.order_key.copy(),
    )


@dataclass
class PreprocessResult:
    train: object      # FlowTable restricted to the surviving columns
    test: object
    kept: list
    removed_degenerate: list
    removed_correlated: list


def preprocess_pair(train, test, mapping, nominal=(), drop_columns=(), missing_threshold=0.99,
                    corr_threshold=0.95, merge="union"):
    """Run the preprocessing rules on a train and a test table and align their columns.

    Degenerate and correlated columns are found on each table separately.
    ``merge="union"`` removes a column flagged in either table (no surviving
    pair exceeds the threshold in either); ``"intersection"`` removes only
    columns flagged in both.
    """
    if merge not in ("union", "intersection"):
        raise ValueError("merge must be 'union' or 'intersection'")
    tables = [t for t in (train, test) if t is not None]
    combine = (lambda a, b: a | b) if merge == "union" else (lambda a, b: a & b)

    prepared = []
    for t in tables:
        t = map_labels(t, mapping)
        drop = [c for c in drop_columns if c in t.columns]
        t = t.select_columns([c for c in t.columns if c not in drop])
        t = encode_nominal(t, [c for c in nominal if c in t.columns])
        prepared.append(t)

    degen = [set(degenerate_columns(t, missing_threshold)) for t in prepared]
    degenerate = degen[0] if len(degen) == 1 else combine(degen[0], degen[1])
    cleaned = [drop_degenerate(t, missing_threshold, extra=degenerate) for t in prepared]
    common = [c for c in cleaned[0].columns if all(c in t.columns for t in cleaned)]
    cleaned = [t.select_columns(common) for t in cleaned]

    corr = [set(correlated_removals(t, corr_threshold)) for t in cleaned]
    correlated = corr[0] if len(corr) == 1 else combine(corr[0], corr[1])
    kept = [c for c in common if c not in correlated]
    final = [t.select_columns(kept) for t in cleaned]
    log.info("preprocess: %d columns kept, %d degenerate, %d correlated", len(kept), len(degenerate), len(correlated))
    return PreprocessResult(
        train=final[0],
        test=final[1] if len(final) > 1 else None,
        kept=kept,
        removed_degenerate=sorted(degenerate),
        removed_correlated=sorted(correlated),
    )


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SynthSpec:
    n_rows: int = 20000
    feature_count: int = 49
    signal_count: int = 10
    priors: tuple = (0.25, 0.50, 0.25)
    separation: float = 1.5
    detailed_labels: dict = field(default_factory=lambda: {
        "Benign": ["benign"],
        "Recon": ["port-scan", "os-fingerprint"],
        "DoS": ["syn-flood", "udp-flood", "icmp-flood"],
    })

    def __post_init__(self):
        if len(self.priors) != len(CLASS_NAMES):
            raise InvalidPriorsError(f"need {len(CLASS_NAMES)} class priors, got {len(self.priors)}")
        if any(p < 0 for p in self.priors) or abs(sum(self.priors) - 1.0) > 1e-9:
            raise InvalidPriorsError(f"priors {self.priors} must be non-negative and sum to 1")
        if not 0 <= self.signal_count <= self.feature_count:
            raise DataError("signal_count must be between 0 and feature_count")
        if self.n_rows < 1:
            raise DataError("n_rows must be positive")

    def label_mapping(self):
        return {d: c for c, ds in self.detailed_labels.items() for d in ds}


def synth_generate(spec, seed):
    """Synthetic flow table: ``signal_count`` columns shift with the class, the rest are noise.

    Each signal column assigns the three classes the means ``(-s, 0, +s)`` in
    a random order, ``s`` drawn from ``separation * [1, 2]``; noise is unit
    Gaussian. Signal column names are listed in ``meta["signal_columns"]``.
    """
    rng = np.random.default_rng(seed)
    n, m = spec.n_rows, spec.feature_count
    classes = rng.choice(len(CLASS_NAMES), size=n, p=np.asarray(spec.priors, dtype=np.float64))
    signal = np.sort(rng.choice(m, size=spec.signal_count, replace=False))
    means = np.zeros((len(CLASS_NAMES), m))
    for j in signal:
        s = spec.separation * rng.uniform(1.0, 2.0)
        means[:, j] = rng.permutation([-s, 0.0, s])
    values = rng.standard_normal((n, m)) + means[classes]
    detailed = np.empty(n, dtype=object)
    for ci, cname in enumerate(CLASS_NAMES):
        rows = np.flatnonzero(classes == ci)
        options = spec.detailed_labels[cname]
        detailed[rows] = np.asarray(options, dtype=object)[rng.integers(0, len(options), size=len(rows))]
    columns = tuple(f"f{j:02d}" for j in range(m))
    return FlowTable(
        columns=columns,
        values=values,
        raw_labels=detailed,
        order_key=np.arange(n, dtype=np.int64),
        meta={"signal_columns": [columns[j] for j in signal], "seed": int(seed)},
    )
