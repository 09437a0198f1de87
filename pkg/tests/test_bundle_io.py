import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings

from airloc.bundle_io import (BundleFormatError, BundleValidationError, ReferenceImage, SceneBundle, load_bundle,
                              load_queries, query_sets_equal, save_bundle, save_queries, bundles_equal)
from airloc.geometry import Camera, Pose
from airloc.matching import LocalFeatureSet
from strategies import query_sets

CAM = Camera(100.0, 100.0, 50.0, 40.0, 100, 80)


def tiny_bundle(point_ids=(0, 1), points=None):
    fs = LocalFeatureSet([[1.0, 2.0], [3.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]], list(point_ids))
    im = ReferenceImage(0, 0, Pose.identity(), fs, [1.0, 2.0, 2.0])
    return SceneBundle("t", {0: CAM}, [im], points if points is not None else {0: [0, 0, 1], 1: [1, 1, 2]})


@settings(max_examples=60)
@given(query_sets())
def test_query_set_round_trip(qs):
    with tempfile.TemporaryDirectory() as tmp:
        save_queries(qs, Path(tmp, "a"))
        back = load_queries(Path(tmp, "a"))
        assert query_sets_equal(qs, back)
        save_queries(back, Path(tmp, "b"))
        for f in Path(tmp, "a").rglob("*.jsonl"):
            assert f.read_bytes() == (Path(tmp, "b") / f.relative_to(Path(tmp, "a"))).read_bytes()


def test_synthetic_bundle_round_trip(small_world, tmp_path):
    save_bundle(small_world.bundle, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert bundles_equal(small_world.bundle, back)
    save_queries(small_world.queries, tmp_path / "q")
    assert query_sets_equal(small_world.queries, load_queries(tmp_path / "q"))


def test_global_descriptor_normalized_on_construction():
    b = tiny_bundle()
    assert np.allclose(b.images[0].global_descriptor, [1 / 3, 2 / 3, 2 / 3])


def test_dangling_point_rejected():
    with pytest.raises(BundleValidationError, match="points3d"):
        tiny_bundle(point_ids=(0, 7))


def test_point_linked_twice_rejected():
    with pytest.raises(BundleValidationError):
        tiny_bundle(point_ids=(1, 1))


def test_missing_camera_rejected():
    fs = LocalFeatureSet([[1.0, 2.0]], [[1.0, 0.0]], [-1])
    with pytest.raises(BundleValidationError):
        SceneBundle("t", {0: CAM}, [ReferenceImage(0, 3, Pose.identity(), fs, [1.0])], {})


def test_malformed_line_reports_file_and_line(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    f = tmp_path / "points3d.jsonl"
    lines = f.read_text().splitlines()
    lines[1] = '{"id": 1, "xyz": [1, 2'
    f.write_text("\n".join(lines) + "\n")
    with pytest.raises(BundleFormatError, match=r"points3d\.jsonl:2"):
        load_bundle(tmp_path)


def test_wrong_type_reports_line(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    f = tmp_path / "images.jsonl"
    rec = json.loads(f.read_text())
    rec["center"] = "here"
    f.write_text(json.dumps(rec) + "\n")
    with pytest.raises(BundleFormatError, match=r"images\.jsonl:1"):
        load_bundle(tmp_path)


def test_dangling_point_on_disk(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    f = tmp_path / "points3d.jsonl"
    f.write_text(f.read_text().splitlines()[0] + "\n")
    with pytest.raises((BundleFormatError, BundleValidationError), match="points3d"):
        load_bundle(tmp_path)


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        load_bundle("/nonexistent/bundle")


def test_missing_file(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    (tmp_path / "cameras.jsonl").unlink()
    with pytest.raises(BundleFormatError, match="cameras"):
        load_bundle(tmp_path)


def test_kind_mismatch(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    with pytest.raises(BundleFormatError):
        load_queries(tmp_path)


def test_max_features_truncates(small_world, tmp_path):
    save_bundle(small_world.bundle, tmp_path)
    b = load_bundle(tmp_path, max_features=10)
    for k, im in b.images.items():
        full = small_world.bundle.images[k].features
        assert len(im.features) == min(10, len(full))
        assert np.array_equal(im.features.keypoints, full.keypoints[: len(im.features)])


def test_saving_twice_is_stable(tmp_path):
    save_bundle(tiny_bundle(), tmp_path)
    first = {f: f.read_bytes() for f in tmp_path.rglob("*.jsonl")}
    save_bundle(load_bundle(tmp_path), tmp_path)
    assert first == {f: f.read_bytes() for f in tmp_path.rglob("*.jsonl")}
