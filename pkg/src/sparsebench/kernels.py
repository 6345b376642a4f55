"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is loaded. Set ``SPARSEBENCH_BACKEND=python``
to force the fallback.
"""
import importlib
import os

_MODULES = {"cython": "sparsebench._ckernels", "python": "sparsebench._pykernels"}


def load_backend(name):
    if name not in _MODULES:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(_MODULES)}")
    return importlib.import_module(_MODULES[name])


def available_backends():
    names = []
    for name in _MODULES:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    wanted = os.environ.get("SPARSEBENCH_BACKEND", "").strip().lower()
    if wanted:
        return load_backend(wanted)
    try:
        return load_backend("cython")
    except ImportError:
        return load_backend("python")


_active = _select()

BACKEND = _active.BACKEND
spmv = _active.spmv
spmv_bias = _active.spmv_bias
dense_matvec = _active.dense_matvec
dense_matvec_bias = _active.dense_matvec_bias
relu_inplace = _active.relu_inplace
