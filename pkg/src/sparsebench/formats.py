"""On-disk model formats.

Dense models are a JSON manifest plus a little-endian float32 blob holding
the tensors back to back in manifest order. Sparse models use the ``SPIF``
container::

    b"SPIF" | version u16 | manifest length u32 | manifest (UTF-8 JSON)
    | per weight tensor: values f32[nnz], col_idx u32[nnz], row_ptr u32[rows+1]
    | per bias vector: f32[length]

All integers little-endian. The weight payload (CSR arrays only) is the size
metric reported by the benchmark.
"""
import json
import os
import struct

import numpy as np

from .csr import CsrMatrix
from .nn import LstmParams, MlpParams
from .sparse import SparseModel

SPIF_MAGIC = b"SPIF"
SPIF_VERSION = 1
DENSE_FORMAT = "sparsebench-dense"
_HEADER = struct.Struct("<4sHI")


class ModelFormatError(ValueError):
    """Unrecognised or malformed model file."""


class BadHeaderError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ----------------------------------------------------------------------- dense


def save_dense(params, path, feature_mask=None, input_width=None):
    """Write ``<path>`` (manifest) and ``<path minus .json>.bin`` (blob)."""
    path = os.fspath(path)
    stem = path[:-5] if path.endswith(".json") else path
    blob_path = stem + ".bin"
    entries = []
    chunks = []
    offset = 0
    for name, arr, role in params.export_tensors():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "role": role, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format": DENSE_FORMAT,
        "version": 1,
        "topology": params.topology(),
        "dtype": "<f4",
        "blob": os.path.basename(blob_path),
        "tensors": entries,
        "feature_mask": None if feature_mask is None else [int(i) for i in feature_mask],
        "input_width": int(input_width if input_width is not None else params.n_inputs),
    }
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))
    with open(path if path.endswith(".json") else stem + ".json", "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return offset


def read_dense_manifest(path):
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not a JSON manifest ({exc})") from None
    if manifest.get("format") != DENSE_FORMAT:
        raise ModelFormatError(f"{path}: not a dense model manifest")
    return manifest


def load_dense(path):
    """Returns ``(params, manifest)``."""
    manifest = read_dense_manifest(path)
    blob_path = os.path.join(os.path.dirname(os.fspath(path)), manifest["blob"])
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    tensors = {}
    for t in manifest["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise TruncatedFileError(f"{blob_path}: tensor {t['name']} runs past end of blob")
        tensors[t["name"]] = np.frombuffer(blob[t["offset"]:end], dtype="<f4").reshape(t["shape"])
    topo = manifest["topology"]
    cls = MlpParams if topo["kind"] == "mlp" else LstmParams
    return cls.from_export(topo, tensors), manifest


# ---------------------------------------------------------------------- sparse


def serialize_sparse(m, path):
    """Write ``m`` as a SPIF file. Returns the weight payload in bytes."""
    manifest = {
        "topology": m.topology,
        "tensors": [{"name": n, "shape": list(c.shape), "nnz": c.nnz} for n, c in m.weights.items()],
        "biases": [{"name": n, "length": int(b.shape[0])} for n, b in m.biases.items()],
        "feature_mask": m.feature_mask,
        "input_width": int(m.input_width),
    }
    mbytes = _dumps(manifest).encode("utf-8")
    parts = [_HEADER.pack(SPIF_MAGIC, SPIF_VERSION, len(mbytes)), mbytes]
    payload = 0
    for c in m.weights.values():
        arrays = (c.values.astype("<f4"), c.col_idx.astype("<u4"), c.row_ptr.astype("<u4"))
        for a in arrays:
            parts.append(a.tobytes())
            payload += a.nbytes
    for b in m.biases.values():
        parts.append(b.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
    return payload


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def read_spif_manifest(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    return _read_header(r), r


def _read_header(r):
    magic, version, mlen = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != SPIF_MAGIC:
        raise BadHeaderError(f"{r.path}: bad magic {magic!r}")
    if version != SPIF_VERSION:
        raise BadHeaderError(f"{r.path}: unsupported SPIF version {version}")
    try:
        return json.loads(r.take(mlen, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeaderError(f"{r.path}: unreadable manifest ({exc})") from None


def deserialize_sparse(path):
    manifest, r = read_spif_manifest(path)
    weights = {}
    for t in manifest["tensors"]:
        rows, cols = t["shape"]
        nnz = t["nnz"]
        values = np.frombuffer(r.take(4 * nnz, t["name"]), dtype="<f4").astype(np.float32)
        col_idx = np.frombuffer(r.take(4 * nnz, t["name"]), dtype="<u4").astype(np.int32)
        row_ptr = np.frombuffer(r.take(4 * (rows + 1), t["name"]), dtype="<u4").astype(np.int32)
        weights[t["name"]] = CsrMatrix(values, col_idx, row_ptr, (rows, cols)).validate()
    biases = {}
    for b in manifest["biases"]:
        biases[b["name"]] = np.frombuffer(r.take(4 * b["length"], b["name"]), dtype="<f4").astype(np.float32)
    if r.pos != len(r.buf):
        raise ModelFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return SparseModel(manifest["topology"], weights, biases, manifest["feature_mask"], manifest["input_width"])


def sniff(path):
    """Return ``"spif"`` or ``"dense"`` for a model file, else raise."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == SPIF_MAGIC:
        return "spif"
    try:
        read_dense_manifest(path)
    except (ModelFormatError, UnicodeDecodeError):
        raise ModelFormatError(f"{path}: unknown model format") from None
    return "dense"


def weight_payload_bytes(path):
    """Weights-only byte count of a dense manifest or SPIF file."""
    kind = sniff(path)
    if kind == "spif":
        manifest, _ = read_spif_manifest(path)
        return sum(t["nnz"] * 8 + (t["shape"][0] + 1) * 4 for t in manifest["tensors"])
    manifest = read_dense_manifest(path)
    return sum(4 * int(np.prod(t["shape"])) for t in manifest["tensors"] if t["role"] == "weight")


def load_model(path):
    """Load either format; dense files come back as ``(params, manifest)``."""
    if sniff(path) == "spif":
        return deserialize_sparse(path)
    return load_dense(path)
