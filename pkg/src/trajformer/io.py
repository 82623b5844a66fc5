"""Scene files: JSON lines with header, gt_box, detection and points records.

Point clouds go inline for small scenes or to a ``.bin`` sidecar of
little-endian float64 rows (x, y, z, source id) indexed by row offset.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .geometry import BoxState
from .sim import DetectionNoise, Frame, LabeledBox, Scene, SceneSpec

SCENE_SCHEMA = "trajformer-scene"
SCENE_SCHEMA_VERSION = 1
INLINE_POINT_LIMIT = 4096


class SceneFormatError(ValueError):
    pass


def _box(b: BoxState) -> list[float]:
    return [float(v) for v in b.geometry()]


def _dump(fh, rec: dict) -> None:
    fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_scene(path, scene: Scene, inline: bool | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    total = sum(len(fr.points) for fr in scene.frames)
    inline = total <= INLINE_POINT_LIMIT if inline is None else inline
    sidecar = path.with_suffix(".bin")
    header = {
        "type": "header",
        "schema": SCENE_SCHEMA,
        "version": SCENE_SCHEMA_VERSION,
        "seed": scene.spec.seed,
        "spec": asdict(scene.spec),
        "noise": asdict(scene.noise) if scene.noise is not None else None,
        "detection_seed": scene.detection_seed,
        "frames": len(scene.frames),
        "points": "inline" if inline else "sidecar",
        "sidecar": None if inline else sidecar.name,
    }
    chunks = []
    offset = 0
    with open(path, "w") as fh:
        _dump(fh, header)
        for fr in scene.frames:
            for g in fr.gt:
                _dump(fh, {"type": "gt_box", "frame": fr.t, "id": g.id, "cls": g.cls, "box": _box(g.box)})
            for d in fr.detections:
                rec = {"type": "detection", "frame": fr.t, "id": d.id, "cls": d.cls, "box": _box(d.box)}
                rec.update(score=d.box.score, gt_id=d.gt_id)
                _dump(fh, rec)
            rows = np.column_stack([fr.points, fr.point_source.astype(np.float64)]) if len(fr.points) else np.zeros((0, 4))
            rec = {"type": "points", "frame": fr.t, "count": len(rows)}
            if inline:
                rec["data"] = rows.tolist()
            else:
                rec["offset"] = offset
                chunks.append(rows)
                offset += len(rows)
            _dump(fh, rec)
    if not inline:
        data = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 4))
        sidecar.write_bytes(data.astype("<f8").tobytes())
    return path


def _spec(d: dict) -> SceneSpec:
    return SceneSpec(**d)


def _noise(d: dict | None) -> DetectionNoise | None:
    if d is None:
        return None
    d = dict(d)
    for k in ("tp_score", "fp_score"):
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    return DetectionNoise(**d)


def load_scene(path) -> Scene:
    path = Path(path)
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise SceneFormatError(f"{path}: missing header record")
    head = lines[0]
    if head.get("schema") != SCENE_SCHEMA or head.get("version") != SCENE_SCHEMA_VERSION:
        raise SceneFormatError(f"{path}: unsupported schema {head.get('schema')!r} v{head.get('version')!r}")
    spec = _spec(head["spec"])
    frames = [Frame(t, []) for t in range(head["frames"])]
    sidecar = None
    if head["points"] == "sidecar":
        raw = (path.parent / head["sidecar"]).read_bytes()
        sidecar = np.frombuffer(raw, dtype="<f8").reshape(-1, 4)
    for rec in lines[1:]:
        kind = rec.get("type")
        fr = frames[rec["frame"]]
        if kind == "gt_box":
            fr.gt.append(LabeledBox(rec["id"], rec["cls"], BoxState.from_array(rec["box"], t=fr.t)))
        elif kind == "detection":
            box = BoxState.from_array(rec["box"], t=fr.t, score=rec["score"])
            fr.detections.append(LabeledBox(rec["id"], rec["cls"], box, gt_id=rec["gt_id"]))
        elif kind == "points":
            if "data" in rec:
                rows = np.asarray(rec["data"], dtype=np.float64).reshape(-1, 4)
            else:
                rows = np.array(sidecar[rec["offset"] : rec["offset"] + rec["count"]])
            fr.points = rows[:, :3].copy()
            fr.point_source = rows[:, 3].astype(np.int64)
        else:
            raise SceneFormatError(f"{path}: unknown record type {kind!r}")
    return Scene(spec, frames, _noise(head["noise"]), head["detection_seed"])


def scene_paths(root) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(root.glob("*.jsonl"))


def gt_frames(scene: Scene) -> dict[int, list[LabeledBox]]:
    return {fr.t: list(fr.gt) for fr in scene.frames}


def point_counts(scene: Scene) -> dict[int, dict[int, int]]:
    """Frame -> GT id -> number of simulated points on that object."""
    out = {}
    for fr in scene.frames:
        ids, counts = np.unique(fr.point_source[fr.point_source >= 0], return_counts=True)
        out[fr.t] = {int(i): int(n) for i, n in zip(ids, counts)}
    return out
