"""Scene bundles and query sets, plus their line-oriented on-disk format.

A bundle directory holds::

    meta.jsonl                 format tag, name, descriptor dimensions
    cameras.jsonl              one pinhole camera per line
    images.jsonl               reference images: camera id, rotation, centre
    points3d.jsonl             3D points
    global_descriptors.jsonl   one global descriptor per reference image
    features/<image_id>.jsonl  one keypoint per line: pixel, descriptor, point id

A query-set directory holds ``meta.jsonl``, ``cameras.jsonl``,
``queries.jsonl`` (camera id, global descriptor, optional ground-truth pose)
and ``features/<query_id>.jsonl`` without point ids.

Every record is a JSON object on its own line with a fixed key order.
Floats are written with the shortest representation that round-trips, so
``save(load(dir))`` reproduces ``dir`` byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .geometry import Camera, Pose, Quaternion
from .index import DescriptorIndex, l2_normalize
from .matching import NO_POINT, LocalFeatureSet

FORMAT_VERSION = "airloc-bundle/1"

META_FILE = "meta.jsonl"
CAMERAS_FILE = "cameras.jsonl"
IMAGES_FILE = "images.jsonl"
POINTS_FILE = "points3d.jsonl"
GLOBALS_FILE = "global_descriptors.jsonl"
QUERIES_FILE = "queries.jsonl"
FEATURES_DIR = "features"


class BundleFormatError(ValueError):
    """Unreadable or malformed file; the message names file and line."""


class BundleValidationError(ValueError):
    """In-memory bundle or query set violates an invariant."""


@dataclass(frozen=True)
class ReferenceImage:
    id: int
    camera_id: int
    pose: Pose
    features: LocalFeatureSet
    global_descriptor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "global_descriptor", _vec(l2_normalize(self.global_descriptor)))


@dataclass(frozen=True)
class Query:
    id: int
    camera_id: int
    features: LocalFeatureSet
    global_descriptor: np.ndarray
    gt_pose: Optional[Pose] = None

    def __post_init__(self):
        object.__setattr__(self, "global_descriptor", _vec(l2_normalize(self.global_descriptor)))


def _vec(a) -> np.ndarray:
    v = np.array(a, dtype=np.float64)
    v.setflags(write=False)
    return v


class SceneBundle:
    """Reference map: cameras, posed reference images, 3D points."""

    def __init__(self, name: str, cameras: Mapping[int, Camera], images: Sequence[ReferenceImage],
                 points3d: Mapping[int, "np.ndarray"]):
        self.name = str(name)
        self.cameras: Dict[int, Camera] = dict(sorted(cameras.items()))
        self.images: Dict[int, ReferenceImage] = {im.id: im for im in sorted(images, key=lambda im: im.id)}
        if len(self.images) != len(images):
            raise BundleValidationError("duplicate reference image id")
        self.points3d: Dict[int, np.ndarray] = {int(k): _vec(v) for k, v in sorted(points3d.items())}
        validate_bundle(self)

    @property
    def local_descriptor_dim(self) -> int:
        return _common_dim((im.features for im in self.images.values()), "local")

    @property
    def global_descriptor_dim(self) -> int:
        dims = {len(im.global_descriptor) for im in self.images.values()}
        return dims.pop() if dims else 0

    def __len__(self) -> int:
        return len(self.images)

    @cached_property
    def index(self) -> DescriptorIndex:
        return DescriptorIndex({i: im.global_descriptor for i, im in self.images.items()})

    @cached_property
    def _point_table(self):
        ids = np.fromiter(self.points3d.keys(), dtype=np.int64, count=len(self.points3d))
        xyz = np.array(list(self.points3d.values())).reshape(-1, 3)
        return ids, xyz

    def point_coordinates(self, point_ids) -> np.ndarray:
        ids, xyz = self._point_table
        pos = np.searchsorted(ids, point_ids)
        return xyz[pos]


class QuerySet:
    def __init__(self, name: str, cameras: Mapping[int, Camera], queries: Sequence[Query]):
        self.name = str(name)
        self.cameras: Dict[int, Camera] = dict(sorted(cameras.items()))
        self.queries: List[Query] = list(queries)
        validate_queries(self)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def ground_truth(self) -> Dict[int, Pose]:
        return {q.id: q.gt_pose for q in self.queries if q.gt_pose is not None}


# -------------------------------------------------------------- validation


def _common_dim(feature_sets, what) -> int:
    dims = {fs.dim for fs in feature_sets if len(fs)}
    if len(dims) > 1:
        raise BundleValidationError(f"inconsistent {what} descriptor dimensions {sorted(dims)}")
    return dims.pop() if dims else 0


def validate_bundle(bundle: SceneBundle) -> None:
    if not bundle.images:
        raise BundleValidationError("bundle has no reference images")
    for pid, xyz in bundle.points3d.items():
        if xyz.shape != (3,) or not np.all(np.isfinite(xyz)):
            raise BundleValidationError(f"points3d: point {pid} is not a finite 3-vector")
    gdims = set()
    for im in bundle.images.values():
        if im.camera_id not in bundle.cameras:
            raise BundleValidationError(f"image {im.id} references missing camera {im.camera_id}")
        pids = im.features.point_ids
        if pids is None:
            raise BundleValidationError(f"image {im.id}: reference features need point links")
        linked = pids[pids != NO_POINT]
        missing = [int(p) for p in linked if int(p) not in bundle.points3d]
        if missing:
            raise BundleValidationError(
                f"image {im.id} observes point {missing[0]} absent from points3d")
        if len(np.unique(linked)) != len(linked):
            raise BundleValidationError(f"image {im.id} links one 3D point to several keypoints")
        g = np.asarray(im.global_descriptor)
        if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)) or not np.any(g):
            raise BundleValidationError(f"image {im.id}: invalid global descriptor")
        gdims.add(g.size)
    if len(gdims) > 1:
        raise BundleValidationError(f"inconsistent global descriptor dimensions {sorted(gdims)}")
    _common_dim((im.features for im in bundle.images.values()), "local")


def validate_queries(qs: QuerySet) -> None:
    seen = set()
    gdims = set()
    for q in qs.queries:
        if q.id in seen:
            raise BundleValidationError(f"duplicate query id {q.id}")
        seen.add(q.id)
        if q.camera_id not in qs.cameras:
            raise BundleValidationError(f"query {q.id} references missing camera {q.camera_id}")
        if q.features.point_ids is not None:
            raise BundleValidationError(f"query {q.id} carries point links")
        g = np.asarray(q.global_descriptor)
        if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)) or not np.any(g):
            raise BundleValidationError(f"query {q.id}: invalid global descriptor")
        gdims.add(g.size)
    if len(gdims) > 1:
        raise BundleValidationError(f"inconsistent global descriptor dimensions {sorted(gdims)}")
    _common_dim((q.features for q in qs.queries), "local")


# ------------------------------------------------------------ serialization


def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def _camera_record(cid: int, cam: Camera) -> dict:
    return {"id": cid, "fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx),
            "cy": float(cam.cy), "width": int(cam.width), "height": int(cam.height)}


def _pose_record(pose: Pose) -> dict:
    return {"qvec": _floats(pose.rotation.as_array()), "center": _floats(pose.center)}


def _features_lines(fs: LocalFeatureSet, linked: bool) -> List[str]:
    lines = []
    for i in range(len(fs)):
        rec = {"uv": _floats(fs.keypoints[i]), "desc": _floats(fs.descriptors[i])}
        if linked:
            pid = int(fs.point_ids[i])
            rec["point_id"] = None if pid == NO_POINT else pid
        lines.append(_dumps(rec))
    return lines


def _write_lines(path: Path, lines: List[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def _prepare_dir(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    feat = directory / FEATURES_DIR
    feat.mkdir(exist_ok=True)
    for stale in feat.glob("*.jsonl"):
        stale.unlink()


def save_bundle(bundle: SceneBundle, directory) -> None:
    """Write ``bundle`` in canonical form (records sorted by id)."""
    validate_bundle(bundle)
    directory = Path(directory)
    _prepare_dir(directory)
    _write_lines(directory / META_FILE, [_dumps({
        "format": FORMAT_VERSION, "kind": "bundle", "name": bundle.name,
        "local_descriptor_dim": bundle.local_descriptor_dim,
        "global_descriptor_dim": bundle.global_descriptor_dim})])
    _write_lines(directory / CAMERAS_FILE,
                 [_dumps(_camera_record(cid, c)) for cid, c in sorted(bundle.cameras.items())])
    _write_lines(directory / IMAGES_FILE, [
        _dumps({"id": im.id, "camera_id": im.camera_id, **_pose_record(im.pose)})
        for im in bundle.images.values()])
    _write_lines(directory / POINTS_FILE, [
        _dumps({"id": pid, "xyz": _floats(xyz)}) for pid, xyz in bundle.points3d.items()])
    _write_lines(directory / GLOBALS_FILE, [
        _dumps({"image_id": im.id, "values": _floats(im.global_descriptor)})
        for im in bundle.images.values()])
    for im in bundle.images.values():
        _write_lines(directory / FEATURES_DIR / f"{im.id}.jsonl", _features_lines(im.features, True))


def save_queries(queries: QuerySet, directory) -> None:
    validate_queries(queries)
    directory = Path(directory)
    _prepare_dir(directory)
    gdims = {len(q.global_descriptor) for q in queries.queries}
    _write_lines(directory / META_FILE, [_dumps({
        "format": FORMAT_VERSION, "kind": "queries", "name": queries.name,
        "local_descriptor_dim": _common_dim((q.features for q in queries.queries), "local"),
        "global_descriptor_dim": gdims.pop() if gdims else 0})])
    _write_lines(directory / CAMERAS_FILE,
                 [_dumps(_camera_record(cid, c)) for cid, c in sorted(queries.cameras.items())])
    _write_lines(directory / QUERIES_FILE, [
        _dumps({"id": q.id, "camera_id": q.camera_id,
                "pose": None if q.gt_pose is None else _pose_record(q.gt_pose),
                "global": _floats(q.global_descriptor)})
        for q in queries.queries])
    for q in queries.queries:
        _write_lines(directory / FEATURES_DIR / f"{q.id}.jsonl", _features_lines(q.features, False))


# ----------------------------------------------------------------- loading


class _Reader:
    """Iterates JSON records of one file, tagging errors with file:line."""

    def __init__(self, path: Path):
        self.path = path
        self.lineno = 0

    def fail(self, msg: str):
        raise BundleFormatError(f"{self.path}:{self.lineno}: {msg}")

    def records(self):
        try:
            fh = open(self.path, "r", encoding="ascii")
        except FileNotFoundError:
            raise BundleFormatError(f"{self.path}: missing file") from None
        except OSError as exc:
            raise BundleFormatError(f"{self.path}: {exc}") from None
        with fh:
            for self.lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    self.fail("blank line")
                try:
                    rec = json.loads(line)
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    self.fail(f"malformed record ({exc.msg if hasattr(exc, 'msg') else exc})")
                if not isinstance(rec, dict):
                    self.fail("record is not an object")
                yield rec

    def get(self, rec, key, kind=None, length=None):
        if key not in rec:
            self.fail(f"missing field {key!r}")
        val = rec[key]
        if kind == "int":
            if not isinstance(val, int) or isinstance(val, bool):
                self.fail(f"field {key!r} must be an integer")
        elif kind == "num":
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(f"field {key!r} must be a number")
            val = float(val)
        elif kind == "vec":
            if (not isinstance(val, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in val)):
                self.fail(f"field {key!r} must be a list of numbers")
            if length is not None and len(val) != length:
                self.fail(f"field {key!r} must have length {length}, got {len(val)}")
            val = np.asarray(val, dtype=np.float64)
            if not np.all(np.isfinite(val)):
                self.fail(f"field {key!r} must be finite")
        elif kind == "str":
            if not isinstance(val, str):
                self.fail(f"field {key!r} must be a string")
        return val


def _read_meta(directory: Path, kind: str) -> dict:
    r = _Reader(directory / META_FILE)
    recs = list(r.records())
    if len(recs) != 1:
        r.fail("expected exactly one meta record")
    meta = recs[0]
    if r.get(meta, "format", "str") != FORMAT_VERSION:
        r.fail(f"unsupported format {meta['format']!r}, expected {FORMAT_VERSION!r}")
    if r.get(meta, "kind", "str") != kind:
        r.fail(f"expected a {kind} directory, found {meta['kind']!r}")
    r.get(meta, "name", "str")
    r.get(meta, "local_descriptor_dim", "int")
    r.get(meta, "global_descriptor_dim", "int")
    return meta


def _read_cameras(directory: Path) -> Dict[int, Camera]:
    r = _Reader(directory / CAMERAS_FILE)
    cams = {}
    for rec in r.records():
        cid = r.get(rec, "id", "int")
        if cid in cams:
            r.fail(f"duplicate camera id {cid}")
        try:
            cams[cid] = Camera(r.get(rec, "fx", "num"), r.get(rec, "fy", "num"), r.get(rec, "cx", "num"),
                               r.get(rec, "cy", "num"), r.get(rec, "width", "int"), r.get(rec, "height", "int"))
        except ValueError as exc:
            if isinstance(exc, BundleFormatError):
                raise
            r.fail(str(exc))
    return cams


def _read_pose(r: _Reader, rec) -> Pose:
    q = r.get(rec, "qvec", "vec", 4)
    c = r.get(rec, "center", "vec", 3)
    try:
        return Pose(Quaternion.from_array(q), c)
    except ValueError as exc:
        r.fail(str(exc))


def _read_features(path: Path, dim: int, linked: bool, max_features: Optional[int]) -> LocalFeatureSet:
    r = _Reader(path)
    uv, desc, pids = [], [], []
    for rec in r.records():
        uv.append(r.get(rec, "uv", "vec", 2))
        d = r.get(rec, "desc", "vec", dim)
        if not np.any(d):
            r.fail("zero-norm descriptor")
        desc.append(d)
        if linked:
            pid = r.get(rec, "point_id")
            if pid is not None and (not isinstance(pid, int) or isinstance(pid, bool) or pid < 0):
                r.fail("field 'point_id' must be null or a nonnegative integer")
            pids.append(NO_POINT if pid is None else pid)
        elif "point_id" in rec:
            r.fail("query features must not carry point ids")
    if linked and len(set(p for p in pids if p != NO_POINT)) != sum(p != NO_POINT for p in pids):
        raise BundleFormatError(f"{path}: a 3D point is linked to several keypoints")
    fs = LocalFeatureSet(np.array(uv).reshape(-1, 2), np.array(desc).reshape(len(desc), dim),
                         np.array(pids, dtype=np.int64) if linked else None)
    return fs.truncated(max_features)


def load_bundle(directory, max_features: Optional[int] = None) -> SceneBundle:
    """Read and validate a bundle directory.

    ``max_features`` caps keypoints per image, keeping the first ones in
    file order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: no such directory")
    meta = _read_meta(directory, "bundle")
    ldim, gdim = meta["local_descriptor_dim"], meta["global_descriptor_dim"]
    cameras = _read_cameras(directory)

    r = _Reader(directory / POINTS_FILE)
    points = {}
    for rec in r.records():
        pid = r.get(rec, "id", "int")
        if pid in points:
            r.fail(f"duplicate point id {pid}")
        points[pid] = r.get(rec, "xyz", "vec", 3)

    r = _Reader(directory / GLOBALS_FILE)
    globals_ = {}
    for rec in r.records():
        iid = r.get(rec, "image_id", "int")
        if iid in globals_:
            r.fail(f"duplicate global descriptor for image {iid}")
        g = r.get(rec, "values", "vec", gdim)
        if not np.any(g):
            r.fail("zero-norm global descriptor")
        globals_[iid] = l2_normalize(g)

    r = _Reader(directory / IMAGES_FILE)
    images = []
    seen = set()
    for rec in r.records():
        iid = r.get(rec, "id", "int")
        if iid in seen:
            r.fail(f"duplicate image id {iid}")
        seen.add(iid)
        cid = r.get(rec, "camera_id", "int")
        if cid not in cameras:
            r.fail(f"camera {cid} not defined in {CAMERAS_FILE}")
        pose = _read_pose(r, rec)
        if iid not in globals_:
            r.fail(f"image {iid} has no record in {GLOBALS_FILE}")
        fpath = directory / FEATURES_DIR / f"{iid}.jsonl"
        fs = _read_features(fpath, ldim, True, max_features)
        for pid in fs.point_ids:
            if pid != NO_POINT and int(pid) not in points:
                raise BundleFormatError(
                    f"{fpath}: point_id {int(pid)} not defined in {POINTS_FILE} (points3d)")
        images.append(ReferenceImage(iid, cid, pose, fs, globals_[iid]))
    extra = set(globals_) - seen
    if extra:
        raise BundleFormatError(f"{directory / GLOBALS_FILE}: descriptor for unknown image {min(extra)}")
    try:
        return SceneBundle(meta["name"], cameras, images, points)
    except BundleValidationError as exc:
        raise BundleFormatError(f"{directory}: {exc}") from None


def load_queries(directory, max_features: Optional[int] = None) -> QuerySet:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: no such directory")
    meta = _read_meta(directory, "queries")
    ldim, gdim = meta["local_descriptor_dim"], meta["global_descriptor_dim"]
    cameras = _read_cameras(directory)
    r = _Reader(directory / QUERIES_FILE)
    queries = []
    seen = set()
    for rec in r.records():
        qid = r.get(rec, "id", "int")
        if qid in seen:
            r.fail(f"duplicate query id {qid}")
        seen.add(qid)
        cid = r.get(rec, "camera_id", "int")
        if cid not in cameras:
            r.fail(f"camera {cid} not defined in {CAMERAS_FILE}")
        pose_rec = r.get(rec, "pose")
        if pose_rec is not None and not isinstance(pose_rec, dict):
            r.fail("field 'pose' must be null or an object")
        pose = None if pose_rec is None else _read_pose(r, pose_rec)
        g = r.get(rec, "global", "vec", gdim)
        if not np.any(g):
            r.fail("zero-norm global descriptor")
        fs = _read_features(directory / FEATURES_DIR / f"{qid}.jsonl", ldim, False, max_features)
        queries.append(Query(qid, cid, fs, g, pose))
    try:
        return QuerySet(meta["name"], cameras, queries)
    except BundleValidationError as exc:
        raise BundleFormatError(f"{directory}: {exc}") from None


# --------------------------------------------------------------- equality


def _pose_equal(a: Optional[Pose], b: Optional[Pose]) -> bool:
    if a is None or b is None:
        return a is b
    return a == b


def bundles_equal(a: SceneBundle, b: SceneBundle) -> bool:
    """Structural equality (exact, field by field)."""
    if a.name != b.name or a.cameras != b.cameras:
        return False
    if list(a.points3d) != list(b.points3d) or not all(
            np.array_equal(a.points3d[k], b.points3d[k]) for k in a.points3d):
        return False
    if list(a.images) != list(b.images):
        return False
    for k, ia in a.images.items():
        ib = b.images[k]
        if (ia.camera_id != ib.camera_id or not _pose_equal(ia.pose, ib.pose)
                or ia.features != ib.features
                or not np.array_equal(ia.global_descriptor, ib.global_descriptor)):
            return False
    return True


def query_sets_equal(a: QuerySet, b: QuerySet) -> bool:
    if a.name != b.name or a.cameras != b.cameras or len(a) != len(b):
        return False
    for qa, qb in zip(a.queries, b.queries):
        if (qa.id != qb.id or qa.camera_id != qb.camera_id or not _pose_equal(qa.gt_pose, qb.gt_pose)
                or qa.features != qb.features
                or not np.array_equal(qa.global_descriptor, qb.global_descriptor)):
            return False
    return True
