"""Atomic file output, JSON records and versioned npz checkpoints."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .disentangler import Disentangler, DisentanglerLayer
from .tree import TreeTopology
from .ttn import TtnState

CHECKPOINT_VERSION = 1


def _atomic_write(path: Path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    _atomic_write(path, lambda fh: fh.write(text.encode()))


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_checkpoint(path, state: TtnState, layer: DisentanglerLayer | None = None, meta: dict | None = None):
    arrays = {"version": np.array(CHECKPOINT_VERSION), "N": np.array(state.N),
              "center": np.array(-1 if state.center is None else state.center),
              "meta": np.array(json.dumps(meta or {}, sort_keys=True))}
    for n, T in state.tensors.items():
        arrays[f"node_{n}"] = T
    if layer is not None:
        arrays["u_sites"] = np.array([d.sites for d in layer], dtype=np.int64).reshape(-1, 2)
        arrays["u_ops"] = np.array([d.u for d in layer], dtype=complex).reshape(-1, 4, 4)
    _atomic_write(path, lambda fh: np.savez(fh, **arrays))


def load_checkpoint(path, topology: TreeTopology):
    """Returns ``(state, layer_or_None, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if int(z["N"]) != topology.N:
            raise ValueError("checkpoint belongs to a different lattice")
        tensors = {n: z[f"node_{n}"] for n in topology.nodes}
        center = int(z["center"])
        layer = None
        if "u_sites" in z:
            layer = DisentanglerLayer([Disentangler(k, tuple(s), u)
                                       for k, (s, u) in enumerate(zip(z["u_sites"], z["u_ops"]))])
        meta = json.loads(str(z["meta"]))
    return TtnState(topology, tensors, None if center < 0 else center), layer, meta
