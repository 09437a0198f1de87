import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from airloc.bundle_io import bundles_equal, query_sets_equal
from airloc.geometry import project_points
from airloc.index import query_score
from airloc.synthworld import SceneModel, WorldConfig, WorldConfigError, generate
from conftest import SMALL


def test_same_seed_same_world(small_world):
    again = generate(WorldConfig(**SMALL))
    assert bundles_equal(small_world.bundle, again.bundle)
    assert query_sets_equal(small_world.queries, again.queries)
    assert small_world.offsets == again.offsets


def test_other_seed_other_world(small_world):
    other = generate(WorldConfig(**{**SMALL, "seed": 8}))
    assert not bundles_equal(small_world.bundle, other.bundle)


def test_features_project_from_ground_truth():
    cfg = WorldConfig(**{**SMALL, "pixel_noise_sigma": 0.0})
    w = generate(cfg)
    for im in list(w.bundle.images.values())[:10]:
        fs = im.features
        linked = fs.point_ids >= 0
        xyz = w.bundle.point_coordinates(fs.point_ids[linked])
        uv, z = project_points(w.bundle.cameras[im.camera_id], im.pose, xyz)
        assert np.all(z > cfg.min_depth)
        assert np.allclose(uv, fs.keypoints[linked], atol=1e-9)
        assert (~linked).sum() == cfg.distractor_features_per_image


def test_query_counts_follow_profile(small_world):
    tiers = [o.tier for o in small_world.offsets]
    fractions = [t[0] for t in WorldConfig().query_offset_profile]
    for i, f in enumerate(fractions):
        assert abs(tiers.count(i) - f * len(tiers)) < 1
    for o in small_world.offsets:
        _, max_m, max_deg = WorldConfig().query_offset_profile[o.tier]
        assert 0 <= o.translation <= max_m and 0 <= o.rotation <= max_deg


def test_queries_have_ground_truth_and_no_links(small_world):
    for q in small_world.queries:
        assert q.gt_pose is not None and q.features.point_ids is None
        assert len(q.features) >= small_world.config.min_visible


def test_offset_lowers_score(small_world):
    # larger viewpoint offsets should look less like the map
    b = small_world.bundle
    scores = [query_score(b.index, q.global_descriptor) for q in small_world.queries]
    rho = spearmanr([o.translation for o in small_world.offsets], scores)[0]
    assert rho < -0.3


def test_viewpoint_drift_changes_descriptors():
    cfg = WorldConfig(**SMALL)
    model = SceneModel(cfg, np.random.default_rng(0))
    p0, p1 = model.loop_pose(0.0), model.loop_pose(0.15)
    i0, _ = model.visible(p0)
    i1, _ = model.visible(p1)
    common = np.intersect1d(i0, i1)
    assert len(common) > 5
    d0 = model.observed_descriptors(common, p0, None, 0.0)
    d1 = model.observed_descriptors(common, p1, None, 0.0)
    same = model.observed_descriptors(common, p0, None, 0.0)
    assert np.array_equal(d0, same)
    cos = np.sum(d0 * d1, axis=1)
    assert np.all(cos < 1.0) and np.mean(cos) > 0.5


@pytest.mark.parametrize("field,value", [("num_points", -3), ("num_queries", 0), ("pixel_noise_sigma", -1.0),
                                         ("global_descriptor_mode", "nope"), ("loop_radius", 6.0),
                                         ("query_offset_profile", ((0.5, 0.1, 1.0),))])
def test_config_errors_name_the_field(field, value):
    with pytest.raises(WorldConfigError) as e:
        WorldConfig(**{field: value})
    assert e.value.field == field and field in str(e.value)


def test_config_file_round_trip(tmp_path):
    cfg = WorldConfig(seed=5, num_queries=12)
    path = tmp_path / "w.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert WorldConfig.from_file(path) == cfg
    with pytest.raises(WorldConfigError) as e:
        WorldConfig.from_dict({"seed": 1, "colour": "red"})
    assert e.value.field == "colour"
