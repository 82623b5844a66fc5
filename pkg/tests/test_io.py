import numpy as np
import pytest

from trajformer.io import SceneFormatError, load_scene, point_counts, save_scene, scene_paths
from trajformer.sim import SceneSpec, build_scene, noise_preset


@pytest.fixture(scope="module")
def scene():
    return build_scene(SceneSpec(frames=16, seed=3), noise_preset("centerpoint-like"))


def _same(a, b):
    assert a.spec == b.spec and a.noise == b.noise and a.detection_seed == b.detection_seed
    for fa, fb in zip(a.frames, b.frames):
        assert fa.gt == fb.gt
        assert fa.detections == fb.detections
        assert np.array_equal(fa.points, fb.points)
        assert np.array_equal(fa.point_source, fb.point_source)


@pytest.mark.parametrize("inline", [True, False])
def test_roundtrip(tmp_path, scene, inline):
    path = save_scene(tmp_path / "s.jsonl", scene, inline=inline)
    assert path.with_suffix(".bin").exists() != inline
    _same(scene, load_scene(path))


def test_saving_twice_is_byte_identical(tmp_path, scene):
    a = save_scene(tmp_path / "a" / "s.jsonl", scene, inline=False)
    b = save_scene(tmp_path / "b" / "s.jsonl", scene, inline=False)
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".bin").read_bytes() == b.with_suffix(".bin").read_bytes()


def test_bad_files(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "gt_box"}\n')
    with pytest.raises(SceneFormatError):
        load_scene(p)
    p.write_text('{"type": "header", "schema": "trajformer-scene", "version": 99}\n')
    with pytest.raises(SceneFormatError):
        load_scene(p)


def test_scene_paths_and_counts(tmp_path, scene):
    save_scene(tmp_path / "b.jsonl", scene)
    save_scene(tmp_path / "a.jsonl", scene)
    assert [p.name for p in scene_paths(tmp_path)] == ["a.jsonl", "b.jsonl"]
    counts = point_counts(scene)
    assert set(counts[0]) == {g.id for g in scene.frames[0].gt}
