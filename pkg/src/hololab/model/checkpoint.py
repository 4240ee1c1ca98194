"""Checkpoints: a named-array archive mirroring the three parameter trees.

Keys are "shared/<name>", "temporal_real/<name>", "temporal_spin/<name>"
plus a JSON config blob under "config_json". Loading verifies that the
tree name sets are disjoint and that the two temporal trees have
elementwise-identical shapes. Writes are atomic (temp file then rename).
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import GarmentVDM, params_by_tree


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    model: GarmentVDM,
    path: str | Path,
    extra: dict | None = None,
    arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Write model trees (+ optional JSON metadata and extra named arrays,
    e.g. optimizer state) as one archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out: dict[str, np.ndarray] = {}
    for tree, params in params_by_tree(model).items():
        for name, p in params.items():
            out[f"{tree}/{name}"] = p.detach().cpu().numpy()
    if arrays:
        for name, arr in arrays.items():
            out[f"extra/{name}"] = np.asarray(arr)
    blob = {"config": model.config.to_dict()}
    if extra:
        blob.update(extra)
    out["config_json"] = np.frombuffer(json.dumps(blob).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **out)
    _atomic_write(path, buf.getvalue())


def load_blob(path: str | Path) -> dict:
    with np.load(path) as z:
        return json.loads(bytes(z["config_json"]))


def load_checkpoint(path: str | Path) -> tuple[GarmentVDM, dict, dict[str, np.ndarray]]:
    """Rebuild the model from an archive; returns (model, extra blob, extra arrays)."""
    with np.load(Path(path)) as z:
        blob = json.loads(bytes(z["config_json"]))
        arrays = {k: z[k] for k in z.files if k != "config_json"}

    trees: dict[str, dict[str, np.ndarray]] = {"shared": {}, "temporal_real": {}, "temporal_spin": {}}
    extra_arrays: dict[str, np.ndarray] = {}
    for key, arr in arrays.items():
        tree, name = key.split("/", 1)
        if tree == "extra":
            extra_arrays[name] = arr
            continue
        trees[tree][name] = arr
    name_sets = [set(v) for v in trees.values()]
    for i in range(len(name_sets)):
        for j in range(i + 1, len(name_sets)):
            if name_sets[i] & name_sets[j]:
                raise ValueError("checkpoint parameter trees are not disjoint")
    spin_names = {n.replace("temporal_real", "temporal_spin") for n in trees["temporal_real"]}
    if spin_names != set(trees["temporal_spin"]):
        raise ValueError("temporal trees do not mirror each other")
    for name, arr in trees["temporal_real"].items():
        twin = trees["temporal_spin"][name.replace("temporal_real", "temporal_spin")]
        if arr.shape != twin.shape:
            raise ValueError(f"temporal tree shape mismatch at {name}")

    config = ModelConfig.from_dict(blob["config"])
    model = GarmentVDM(config)
    state = {}
    for tree in trees.values():
        for name, arr in tree.items():
            state[name] = torch.from_numpy(arr.copy())
    missing = set(dict(model.named_parameters())) - set(state)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    model.load_state_dict(state)
    extra = {k: v for k, v in blob.items() if k != "config"}
    return model, extra, extra_arrays
