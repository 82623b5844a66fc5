"""Parameter checkpoints: a JSON form and a bit-exact binary (.npz) form."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    if path.suffix == ".json":
        doc = {
            "format": "trajformer-params",
            "version": FORMAT_VERSION,
            "meta": meta,
            "params": {
                k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
                for k, v in sorted(params.items())
            },
        }
        path.write_text(json.dumps(doc, sort_keys=True))
    else:
        header = json.dumps({"format": "trajformer-params", "version": FORMAT_VERSION, "meta": meta}, sort_keys=True)
        arrays = {f"p:{k}": np.asarray(v, dtype=np.float64) for k, v in sorted(params.items())}
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        _check_version(doc)
        params = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()
        }
        return params, doc.get("meta", {})
    with np.load(path, allow_pickle=False) as z:
        doc = json.loads(bytes(z["__header__"]).decode())
        _check_version(doc)
        params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p:")}
    return params, doc.get("meta", {})


def _check_version(doc: dict) -> None:
    if doc.get("format") != "trajformer-params":
        raise ValueError("not a trajformer parameter file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
