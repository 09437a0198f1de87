"""Seeded synthetic scenes with ground truth.

The world is a box of landmarks surrounding a closed camera loop. Reference
cameras sit on the loop looking outward; queries are perturbed copies of
loop poses. Each landmark carries a random base descriptor, and its
observed descriptor drifts smoothly with the viewing direction, so wide
baselines cost matches. A global descriptor is the pooled signature of the
visible landmarks, which makes global similarity a proxy for covisibility.

All randomness comes from one ``numpy.random.Generator`` (PCG64) seeded by
``WorldConfig.seed``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Tuple

import numpy as np

from .bundle_io import Query, QuerySet, ReferenceImage, SceneBundle
from .geometry import Camera, Pose, Quaternion, project_points
from .matching import NO_POINT, LocalFeatureSet


class WorldConfigError(ValueError):
    """Invalid synthetic-world configuration; ``field`` names the culprit."""

    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 2024
    num_points: int = 2000
    scene_extent: float = 10.0
    scene_height: float = 3.0
    loop_radius: float = 2.0
    num_reference_images: int = 150
    num_queries: int = 200
    local_descriptor_dim: int = 64
    global_descriptor_dim: int = 128
    pixel_noise_sigma: float = 1.0
    local_descriptor_noise_sigma: float = 0.15
    viewpoint_descriptor_drift: float = 1.5
    distractor_features_per_image: int = 50
    # (fraction of queries, max translation offset [m], max rotation offset [deg])
    query_offset_profile: Tuple[Tuple[float, float, float], ...] = (
        (0.3, 0.2, 2.0), (0.4, 0.8, 10.0), (0.3, 1.6, 25.0))
    global_descriptor_mode: str = "covisibility"
    focal_length: float = 500.0
    image_width: int = 640
    image_height: int = 480
    min_depth: float = 0.3
    min_visible: int = 8
    max_viewpoint_retries: int = 100

    def __post_init__(self):
        object.__setattr__(self, "query_offset_profile",
                           tuple(tuple(float(x) for x in t) for t in self.query_offset_profile))
        positive = ["num_points", "num_reference_images", "num_queries", "local_descriptor_dim",
                    "global_descriptor_dim", "image_width", "image_height", "min_visible",
                    "max_viewpoint_retries", "scene_extent", "scene_height", "loop_radius",
                    "focal_length", "min_depth"]
        for name in positive:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise WorldConfigError(name, f"must be positive, got {v!r}")
        for name in ["pixel_noise_sigma", "local_descriptor_noise_sigma", "viewpoint_descriptor_drift"]:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0):
                raise WorldConfigError(name, f"must be >= 0, got {v!r}")
        if not (isinstance(self.distractor_features_per_image, int)
                and self.distractor_features_per_image >= 0):
            raise WorldConfigError("distractor_features_per_image", "must be a nonnegative integer")
        if self.loop_radius >= self.scene_extent / 2:
            raise WorldConfigError("loop_radius", "loop must lie inside the scene box")
        prof = self.query_offset_profile
        if not prof or any(len(t) != 3 or min(t) < 0 for t in prof):
            raise WorldConfigError("query_offset_profile",
                                   "need (fraction, meters, degrees) triples, all >= 0")
        if abs(sum(t[0] for t in prof) - 1.0) > 1e-9:
            raise WorldConfigError("query_offset_profile", "fractions must sum to 1")
        if self.global_descriptor_mode not in ("covisibility", "random"):
            raise WorldConfigError("global_descriptor_mode", "must be 'covisibility' or 'random'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["query_offset_profile"] = [list(t) for t in self.query_offset_profile]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise WorldConfigError(name, "unknown field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise WorldConfigError("config", str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "WorldConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class QueryOffset:
    translation: float  # metres from the loop pose the query was derived from
    rotation: float  # degrees
    tier: int


@dataclass
class SyntheticWorld:
    config: WorldConfig
    bundle: SceneBundle
    queries: QuerySet
    offsets: list = field(default_factory=list)


class SceneModel:
    """Landmarks and their appearance model; renders feature sets for poses."""

    def __init__(self, config: WorldConfig, rng: np.random.Generator):
        c = config
        self.config = c
        self.camera = Camera(c.focal_length, c.focal_length, c.image_width / 2.0,
                             c.image_height / 2.0, c.image_width, c.image_height)
        self.points = self._sample_points(rng)
        D = c.local_descriptor_dim
        base = rng.normal(size=(c.num_points, D))
        self.base = base / np.linalg.norm(base, axis=1, keepdims=True)
        # viewing-direction response, roughly unit gain per landmark
        self.drift = rng.normal(size=(c.num_points, D, 3)) / math.sqrt(D)
        self.projection = rng.normal(size=(c.global_descriptor_dim, D)) / math.sqrt(D)

    def _sample_points(self, rng):
        c = self.config
        half = c.scene_extent / 2.0
        clear = c.loop_radius + 2.0 * c.min_depth
        pts = []
        n = 0
        while n < c.num_points:
            cand = rng.uniform([-half, -half, -c.scene_height / 2], [half, half, c.scene_height / 2],
                               size=(2 * c.num_points, 3))
            keep = cand[np.hypot(cand[:, 0], cand[:, 1]) > clear]
            pts.append(keep)
            n += len(keep)
        return np.vstack(pts)[: c.num_points]

    def loop_pose(self, phi: float) -> Pose:
        c = self.config
        center = np.array([c.loop_radius * math.cos(phi), c.loop_radius * math.sin(phi), 0.0])
        forward = np.array([math.cos(phi), math.sin(phi), 0.0])
        right = np.cross(forward, [0.0, 0.0, 1.0])
        down = np.cross(forward, right)
        R = np.vstack([right, down, forward])
        return Pose(Quaternion.from_matrix(R), center)

    def visible(self, pose: Pose):
        uv, z = project_points(self.camera, pose, self.points)
        ok = (z > self.config.min_depth) & self.camera.in_bounds(np.nan_to_num(uv, nan=-1.0))
        idx = np.flatnonzero(ok)
        return idx, uv[idx]

    def observed_descriptors(self, idx, pose: Pose, rng, noise_sigma):
        view = pose.center - self.points[idx]
        view /= np.linalg.norm(view, axis=1, keepdims=True)
        d = self.base[idx] + self.config.viewpoint_descriptor_drift * np.einsum(
            "ndk,nk->nd", self.drift[idx], view)
        if noise_sigma > 0:
            d = d + rng.normal(scale=noise_sigma, size=d.shape)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def global_descriptor(self, idx, rng) -> np.ndarray:
        if self.config.global_descriptor_mode == "random":
            g = rng.normal(size=self.config.global_descriptor_dim)
        else:
            g = self.projection @ self.base[idx].mean(axis=0)
        return g / np.linalg.norm(g)

    def render(self, pose: Pose, rng, pixel_sigma=None, descriptor_sigma=None, linked=True):
        """Feature set and visible landmark ids for ``pose``."""
        c = self.config
        pixel_sigma = c.pixel_noise_sigma if pixel_sigma is None else pixel_sigma
        descriptor_sigma = c.local_descriptor_noise_sigma if descriptor_sigma is None else descriptor_sigma
        idx, uv = self.visible(pose)
        if pixel_sigma > 0:
            uv = uv + rng.normal(scale=pixel_sigma, size=uv.shape)
        desc = self.observed_descriptors(idx, pose, rng, descriptor_sigma)
        nd = c.distractor_features_per_image
        d_uv = rng.uniform([0, 0], [c.image_width, c.image_height], size=(nd, 2))
        d_desc = rng.normal(size=(nd, c.local_descriptor_dim))
        d_desc /= np.linalg.norm(d_desc, axis=1, keepdims=True)
        kp = np.vstack([uv, d_uv])
        ds = np.vstack([desc, d_desc])
        pids = np.concatenate([idx, np.full(nd, NO_POINT)]).astype(np.int64)
        order = rng.permutation(len(kp))
        fs = LocalFeatureSet(kp[order], ds[order], pids[order] if linked else None)
        return fs, idx


def _random_axis(rng) -> np.ndarray:
    a = rng.normal(size=3)
    return a / np.linalg.norm(a)


def generate(config: WorldConfig = WorldConfig()) -> SyntheticWorld:
    """Build a reference bundle and a query set with ground-truth poses."""
    rng = np.random.default_rng(config.seed)
    model = SceneModel(config, rng)
    cam_id = 0
    cameras = {cam_id: model.camera}

    images = []
    for i in range(config.num_reference_images):
        pose = model.loop_pose(2.0 * math.pi * i / config.num_reference_images)
        fs, idx = model.render(pose, rng)
        if len(idx) < config.min_visible:
            raise RuntimeError(f"reference image {i} sees only {len(idx)} landmarks")
        images.append(ReferenceImage(i, cam_id, pose, fs, model.global_descriptor(idx, rng)))
    points = {i: model.points[i] for i in range(config.num_points)}
    bundle = SceneBundle(f"synth-{config.seed}", cameras, images, points)

    fractions = np.array([t[0] for t in config.query_offset_profile])
    counts = np.floor(fractions * config.num_queries).astype(int)
    counts[np.argsort(-(fractions * config.num_queries - counts), kind="stable")[
        : config.num_queries - counts.sum()]] += 1
    tiers = np.repeat(np.arange(len(counts)), counts)
    tiers = tiers[rng.permutation(len(tiers))]

    queries, offsets = [], []
    for qid, tier in enumerate(tiers):
        _, max_m, max_deg = config.query_offset_profile[tier]
        for _ in range(config.max_viewpoint_retries):
            base = model.loop_pose(rng.uniform(0.0, 2.0 * math.pi))
            u = rng.uniform()
            direction = _random_axis(rng)
            direction[2] *= 0.25
            direction /= np.linalg.norm(direction)
            center = base.center + u * max_m * direction
            delta = Quaternion.from_axis_angle(_random_axis(rng), math.radians(u * max_deg))
            pose = Pose(delta * base.rotation, center)
            fs, idx = model.render(pose, rng, linked=False)
            if len(idx) >= config.min_visible:
                break
        else:
            raise RuntimeError(f"query {qid}: no viewpoint with {config.min_visible} visible landmarks")
        queries.append(Query(qid, cam_id, fs, model.global_descriptor(idx, rng), pose))
        offsets.append(QueryOffset(u * max_m, u * max_deg, int(tier)))
    qset = QuerySet(f"synth-{config.seed}-queries", cameras, queries)
    return SyntheticWorld(config, bundle, qset, offsets)


def query_from_reference(bundle: SceneBundle, image_id: int, query_id: int = 0) -> Query:
    """A query that duplicates a mapped view exactly (features and descriptor)."""
    im = bundle.images[image_id]
    fs = LocalFeatureSet(im.features.keypoints, im.features.descriptors, None)
    return Query(query_id, im.camera_id, fs, im.global_descriptor, im.pose)
