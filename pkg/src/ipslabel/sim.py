"""Synthetic scene simulator: ground truth for every pipeline stage.

A scene is a set of box-shaped objects on a flat floor, observed by a
robot carrying a beacon pair, a pinhole camera, and a multi-channel
ray-cast LiDAR. The robot frame is the frame the beacon construction
yields (x forward, y = x cross z, z up); the camera and LiDAR mounts are
proper rotations expressed in that frame, so the true camera extrinsic is
exactly what the PnP stage estimates.

Everything is deterministic given (seed, sample index): robot poses,
beacon noise, and pixel noise all draw from dedicated substreams.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calib import CameraIntrinsics, Correspondence, _project_cam
from .cloud import PointCloud, write_ply
from .errors import AllVerticesBehindCamera, ConfigError
from .fileio import atomic_write_text, dump_json
from .geom import BeaconPair, RigidTransform, compose, frame_from_beacons, inverse
from .labelgen import (
    ObjectSpec,
    OrientedBox3,
    box_from_vertices,
    box_to_camera,
    label_object_entry,
    labels_to_dict,
    project_box,
)
from .rng import NS_BEACON, NS_CALSET, NS_POSE, substream

TABLE_SLAB_THICKNESS = 0.15  # meters; tabletop plus apron frame, the part the LiDAR sees
TABLE_STEM_WIDTH = 0.08  # meters; square center column


def _default_cam_from_robot(pitch_deg: float = 15.0) -> RigidTransform:
    """Camera mount: optical axis ahead of the robot, pitched down."""
    a = math.radians(pitch_deg)
    base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    pitch = np.array(
        [[1.0, 0.0, 0.0], [0.0, math.cos(a), -math.sin(a)], [0.0, math.sin(a), math.cos(a)]]
    )
    rot = pitch @ base
    cam_pos_robot = np.array([0.05, 0.0, 0.05])
    return RigidTransform(rot, -rot @ cam_pos_robot, src="robot", dst="cam")


def _default_lidar_from_cam(cam_from_robot: RigidTransform) -> RigidTransform:
    """LiDAR mount: axis-aligned with the robot, 0.1 m below the beacons."""
    lidar_pos_robot = np.array([0.0, 0.0, -0.1])
    lidar_from_robot = RigidTransform(
        np.eye(3), -lidar_pos_robot, src="robot", dst="lidar"
    )
    return compose(lidar_from_robot, inverse(cam_from_robot))


DEFAULT_INTRINSICS = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
DEFAULT_CAM_FROM_ROBOT = _default_cam_from_robot()
DEFAULT_LIDAR_FROM_CAM = _default_lidar_from_cam(DEFAULT_CAM_FROM_ROBOT)


@dataclass(frozen=True)
class LidarConfig:
    channels: int = 16
    vfov_min_deg: float = -15.0
    vfov_max_deg: float = 15.0
    azimuth_step_deg: float = 0.2
    max_range: float = 30.0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("LiDAR needs at least one channel")
        if self.azimuth_step_deg <= 0 or self.max_range <= 0:
            raise ValueError("azimuth step and max range must be positive")


@dataclass(frozen=True)
class ObjectPlacement:
    """An object instance: measured spec plus its true pose on the floor."""

    object_id: str
    spec: ObjectSpec
    x: float
    y: float
    yaw: float
    beacon_sep: float = 0.4


def _default_objects() -> tuple:
    return (
        ObjectPlacement("obj0", ObjectSpec("cabinet", 0.9, 0.5, 1.3), 4.0, 0.9, 0.4),
        ObjectPlacement("obj1", ObjectSpec("table", 1.2, 0.8, 0.75), 3.4, -1.6, -0.3),
    )


@dataclass(frozen=True)
class SceneConfig:
    objects: tuple = field(default_factory=_default_objects)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    cam_from_robot: RigidTransform = DEFAULT_CAM_FROM_ROBOT
    lidar_from_cam: RigidTransform = DEFAULT_LIDAR_FROM_CAM
    lidar: LidarConfig = LidarConfig()
    beacon_noise: float = 0.02  # uniform half-width per axis, meters
    pixel_noise_sigma: float = 0.0  # Gaussian, pixels (calibration pixels only)
    robot_beacon_height: float = 0.7
    robot_beacon_sep: float = 0.4
    collection_readings: int = 1
    calibration_readings: int = 16
    calibration_points: int = 63
    floor_z: float = 0.0
    table_z: float = 0.75  # calibration table plane height
    robot_radius_min: float = 3.5
    robot_radius_max: float = 5.5
    heading_jitter_deg: float = 3.0

    def __post_init__(self):
        if self.beacon_noise < 0 or self.pixel_noise_sigma < 0:
            raise ValueError("noise levels must be >= 0")
        if not self.objects:
            raise ValueError("scene needs at least one object")


def default_scene() -> SceneConfig:
    return SceneConfig()


# ---------------------------------------------------------------------------
# Per-sample geometry


def _mutual_clearance(scene: SceneConfig, x: float, y: float) -> float:
    """Smallest sight-line clearance from (x, y) to any object past the others.

    For every ordered object pair, measures how far the segment from the
    viewpoint to the target's center passes from the other object's
    center, minus both BEV half-diagonals. Negative means one object
    shadows another from this viewpoint.
    """
    worst = math.inf
    for target in scene.objects:
        t = np.array([target.x, target.y])
        for other in scene.objects:
            if other is target:
                continue
            o = np.array([other.x, other.y])
            a = np.array([x, y])
            seg = t - a
            seg_len2 = float(seg @ seg)
            frac = float(np.clip((o - a) @ seg / seg_len2, 0.0, 1.0)) if seg_len2 > 0 else 0.0
            gap = float(np.linalg.norm(o - (a + frac * seg)))
            spec_t, spec_o = target.spec, other.spec
            need = 0.5 * math.hypot(spec_t.length, spec_t.width)
            need += 0.5 * math.hypot(spec_o.length, spec_o.width)
            worst = min(worst, gap - need)
    return worst


def robot_pose_for_sample(scene: SceneConfig, seed: int, index: int) -> tuple:
    """(x, y, heading): on a ring around the objects, facing their centroid.

    Viewpoints from which one object shadows another are rejected and
    redrawn (a capture run records objects it can actually see); after 64
    rejections the least-shadowed draw wins so the sampler always returns.
    """
    cx = float(np.mean([o.x for o in scene.objects]))
    cy = float(np.mean([o.y for o in scene.objects]))
    rng = substream(seed, NS_POSE, index)
    best = None
    best_clearance = -math.inf
    for _ in range(64):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        radius = rng.uniform(scene.robot_radius_min, scene.robot_radius_max)
        x = cx + radius * math.cos(angle)
        y = cy + radius * math.sin(angle)
        jitter = math.radians(scene.heading_jitter_deg) * rng.uniform(-1.0, 1.0)
        clearance = _mutual_clearance(scene, x, y)
        if clearance > best_clearance:
            best_clearance = clearance
            best = (x, y, jitter)
        if clearance >= 0.0:
            break
    x, y, jitter = best
    heading = math.atan2(cy - y, cx - x) + jitter
    return (float(x), float(y), float(heading))


def robot_beacons(scene: SceneConfig, pose) -> BeaconPair:
    x, y, heading = pose
    front = np.array([x, y, scene.robot_beacon_height])
    back = front - scene.robot_beacon_sep * np.array(
        [math.cos(heading), math.sin(heading), 0.0]
    )
    return BeaconPair(front, back)


def object_beacons(placement: ObjectPlacement) -> BeaconPair:
    """Beacons on the object's top surface, along its x axis."""
    spec = placement.spec
    mid = np.array([placement.x, placement.y, spec.height])
    half = 0.5 * placement.beacon_sep * np.array(
        [math.cos(placement.yaw), math.sin(placement.yaw), 0.0]
    )
    return BeaconPair(mid + half, mid - half)


def true_object_box_ips(placement: ObjectPlacement) -> OrientedBox3:
    spec = placement.spec
    center = np.array([placement.x, placement.y, spec.height / 2.0])
    return OrientedBox3(center, spec.dims, placement.yaw, frame="ips")


def _solid_boxes_ips(placement: ObjectPlacement) -> list:
    """The solids the LiDAR actually sees (a table is a slab plus a stem)."""
    spec = placement.spec
    if spec.class_name == "table":
        slab_center = np.array(
            [placement.x, placement.y, spec.height - TABLE_SLAB_THICKNESS / 2.0]
        )
        slab = OrientedBox3(
            slab_center,
            (spec.length, spec.width, TABLE_SLAB_THICKNESS),
            placement.yaw,
            frame="ips",
        )
        stem_height = spec.height - TABLE_SLAB_THICKNESS
        stem_center = np.array([placement.x, placement.y, stem_height / 2.0])
        stem = OrientedBox3(
            stem_center,
            (TABLE_STEM_WIDTH, TABLE_STEM_WIDTH, stem_height),
            placement.yaw,
            frame="ips",
        )
        return [slab, stem]
    return [true_object_box_ips(placement)]


def true_transforms(scene: SceneConfig, pose) -> dict:
    """Clean transform chain for a robot pose."""
    t_robot_from_ips = inverse(frame_from_beacons(robot_beacons(scene, pose), frame="robot"))
    t_cam_from_ips = compose(scene.cam_from_robot, t_robot_from_ips)
    t_lidar_from_ips = compose(scene.lidar_from_cam, t_cam_from_ips)
    return {
        "robot_from_ips": t_robot_from_ips,
        "cam_from_ips": t_cam_from_ips,
        "lidar_from_ips": t_lidar_from_ips,
    }


def _box_to_frame(box: OrientedBox3, t: RigidTransform) -> OrientedBox3:
    return box_from_vertices(t.apply(box.vertices()), frame=t.dst)


# ---------------------------------------------------------------------------
# LiDAR ray casting


def _ray_box_hits(dirs: np.ndarray, box: OrientedBox3) -> np.ndarray:
    """Slab-method entry distance per ray from the origin; inf for misses."""
    origin_local = box.to_local(np.zeros(3))
    d_local = dirs @ box.rotation
    half = box.dims / 2.0
    near = np.full(dirs.shape[0], -np.inf)
    far = np.full(dirs.shape[0], np.inf)
    for k in range(3):
        dk = d_local[:, k]
        ok = origin_local[k]
        parallel = np.abs(dk) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[k] - ok) / dk
            t2 = (half[k] - ok) / dk
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        if abs(ok) <= half[k]:
            lo = np.where(parallel, -np.inf, lo)
            hi = np.where(parallel, np.inf, hi)
        else:
            lo = np.where(parallel, np.inf, lo)
            hi = np.where(parallel, -np.inf, hi)
        near = np.maximum(near, lo)
        far = np.minimum(far, hi)
    hit = (far >= near) & (near > 1e-9)
    t = np.where(hit, near, np.inf)
    return t


def _lidar_directions(cfg: LidarConfig) -> np.ndarray:
    elevations = np.radians(np.linspace(cfg.vfov_min_deg, cfg.vfov_max_deg, cfg.channels))
    n_az = int(round(360.0 / cfg.azimuth_step_deg))
    azimuths = np.radians(np.arange(n_az) * cfg.azimuth_step_deg)
    ce, se = np.cos(elevations), np.sin(elevations)
    ca, sa = np.cos(azimuths), np.sin(azimuths)
    # channel-major layout: ray (channel i, azimuth j) at row i * n_az + j
    dx = np.outer(ce, ca).ravel()
    dy = np.outer(ce, sa).ravel()
    dz = np.repeat(se, n_az)
    return np.column_stack([dx, dy, dz])


def raycast_lidar(scene: SceneConfig, pose) -> PointCloud:
    """Nearest-hit ray cast against object solids and the floor.

    Rays start at the LiDAR origin; each returns the closest intersection
    with any object face or the ground plane within max range, so
    surfaces facing away from the sensor receive no points.
    """
    chain = true_transforms(scene, pose)["lidar_from_ips"]
    solids = [
        _box_to_frame(solid, chain)
        for placement in scene.objects
        for solid in _solid_boxes_ips(placement)
    ]
    ground_z = float(chain.apply(np.array([pose[0], pose[1], scene.floor_z]))[2])
    dirs = _lidar_directions(scene.lidar)
    best = np.full(dirs.shape[0], np.inf)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = ground_z / dz
    t_ground = np.where((dz < 0) & (t_ground > 1e-9), t_ground, np.inf)
    best = np.minimum(best, t_ground)
    for solid in solids:
        best = np.minimum(best, _ray_box_hits(dirs, solid))
    valid = best <= scene.lidar.max_range
    points = dirs[valid] * best[valid][:, None]
    return PointCloud(points, frame="lidar")


# ---------------------------------------------------------------------------
# Beacon and pixel measurements


@dataclass(frozen=True)
class BeaconReading:
    noisy: BeaconPair
    clean: BeaconPair


def emit_beacons(scene: SceneConfig, pose, seed: int, index: int, readings: int | None = None) -> dict:
    """Noisy beacon readings per frame: {"robot": [...], "obj0": [...], ...}.

    Noise is per-axis uniform in [-b, +b]. Draw order is fixed (reading,
    then frame, then front/rear), so outputs are reproducible.
    """
    if readings is None:
        readings = scene.collection_readings
    if readings < 1:
        raise ValueError("need at least one reading")
    rng = substream(seed, NS_BEACON, index)
    clean = {"robot": robot_beacons(scene, pose)}
    for placement in scene.objects:
        clean[placement.object_id] = object_beacons(placement)
    out = {frame: [] for frame in clean}
    b = scene.beacon_noise
    for _ in range(readings):
        for frame, pair in clean.items():
            front = pair.front + rng.uniform(-b, b, size=3)
            rear = pair.rear + rng.uniform(-b, b, size=3)
            out[frame].append(BeaconReading(BeaconPair(front, rear), pair))
    return {frame: tuple(rs) for frame, rs in out.items()}


# ---------------------------------------------------------------------------
# Ground-truth samples


@dataclass(frozen=True)
class GroundTruthSample:
    sample_id: str
    robot_pose: tuple
    readings: dict
    cloud: PointCloud
    truth_objects: tuple  # label-schema dicts with truth extras
    t_robot_from_ips: RigidTransform  # clean


def make_sample(scene: SceneConfig, seed: int, index: int) -> GroundTruthSample:
    pose = robot_pose_for_sample(scene, seed, index)
    chain = true_transforms(scene, pose)
    readings = emit_beacons(scene, pose, seed, index)
    cloud = raycast_lidar(scene, pose)
    entries = []
    for placement in scene.objects:
        box_ips = true_object_box_ips(placement)
        box_lidar = _box_to_frame(box_ips, chain["lidar_from_ips"])
        try:
            verts_cam = box_to_camera(
                box_ips, scene.cam_from_robot, chain["robot_from_ips"]
            )
            box2 = project_box(verts_cam, scene.intrinsics)
            reason = None
        except AllVerticesBehindCamera:
            box2 = None
            reason = "behind_camera"
        entry = label_object_entry(
            placement.spec.class_name,
            box_lidar,
            box2,
            refined=False,
            object_id=placement.object_id,
            box2d_reason=reason,
        )
        entry["box3d_ips"] = box_ips.to_dict()
        entry["dims_spec"] = [float(v) for v in placement.spec.dims]
        entries.append(entry)
    return GroundTruthSample(
        sample_id=f"sample_{index:03d}",
        robot_pose=pose,
        readings=readings,
        cloud=cloud,
        truth_objects=tuple(entries),
        t_robot_from_ips=chain["robot_from_ips"],
    )


# ---------------------------------------------------------------------------
# Calibration set


@dataclass(frozen=True)
class CalibrationSet:
    correspondences: tuple
    robot_readings: tuple  # BeaconReading
    robot_pose: tuple
    cam_from_robot: RigidTransform  # truth
    t_robot_from_ips: RigidTransform  # clean


def make_calibration_set(scene: SceneConfig, seed: int) -> CalibrationSet:
    """Beacons on the floor and table planes with measured-noise positions
    and annotated (optionally noisy) pixels, plus robot beacon readings."""
    rng = substream(seed, NS_CALSET)
    cx = float(np.mean([o.x for o in scene.objects]))
    cy = float(np.mean([o.y for o in scene.objects]))
    pose = (cx - 5.0, cy, 0.0)
    clean_pair = robot_beacons(scene, pose)
    t_robot_from_ips = inverse(frame_from_beacons(clean_pair, frame="robot"))
    t_cam_from_ips = compose(scene.cam_from_robot, t_robot_from_ips)
    n = scene.calibration_points
    n_floor = (n + 1) // 2
    corrs = []
    margin = 5.0
    for i in range(n):
        tag = "floor" if i < n_floor else "table"
        z = scene.floor_z if tag == "floor" else scene.table_z
        while True:
            forward = rng.uniform(2.0, 6.0)
            lateral = rng.uniform(-0.35, 0.35) * forward
            true_pos = np.array([pose[0] + forward, pose[1] + lateral, z])
            pc = t_cam_from_ips.apply(true_pos)
            if pc[2] <= 0.5:
                continue
            uv = _project_cam(scene.intrinsics, pc[None, :])[0]
            if (
                margin <= uv[0] <= scene.intrinsics.width - margin
                and margin <= uv[1] <= scene.intrinsics.height - margin
            ):
                break
        measured = true_pos + rng.uniform(-scene.beacon_noise, scene.beacon_noise, size=3)
        pixel = uv + scene.pixel_noise_sigma * rng.standard_normal(2)
        corrs.append(Correspondence(measured, pixel, tag))
    robot_reads = []
    b = scene.beacon_noise
    for _ in range(scene.calibration_readings):
        front = clean_pair.front + rng.uniform(-b, b, size=3)
        rear = clean_pair.rear + rng.uniform(-b, b, size=3)
        robot_reads.append(BeaconReading(BeaconPair(front, rear), clean_pair))
    return CalibrationSet(
        correspondences=tuple(corrs),
        robot_readings=tuple(robot_reads),
        robot_pose=pose,
        cam_from_robot=scene.cam_from_robot,
        t_robot_from_ips=t_robot_from_ips,
    )


# ---------------------------------------------------------------------------
# File rendering (pure text, written atomically by generate_dataset)


def beacons_csv(readings: dict) -> str:
    lines = ["frame,beacon_id,x,y,z,clean_x,clean_y,clean_z"]
    frames = list(readings)
    n_readings = len(readings[frames[0]])
    for r in range(n_readings):
        for frame in frames:
            reading = readings[frame][r]
            for beacon_id, noisy, clean in (
                ("front", reading.noisy.front, reading.clean.front),
                ("rear", reading.noisy.rear, reading.clean.rear),
            ):
                vals = [repr(float(v)) for v in (*noisy, *clean)]
                lines.append(f"{frame},{beacon_id}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def parse_beacons_csv(text: str) -> dict:
    """Inverse of beacons_csv: {"frame": [BeaconReading, ...]}."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = "frame,beacon_id,x,y,z,clean_x,clean_y,clean_z"
    if not lines or lines[0] != header:
        raise ValueError(f"beacon CSV must start with header {header!r}")
    rows = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise ValueError(f"bad beacon CSV row: {ln!r}")
        frame, beacon_id = parts[0], parts[1]
        vals = [float(v) for v in parts[2:]]
        rows.setdefault(frame, {"front": [], "rear": []})
        if beacon_id not in ("front", "rear"):
            raise ValueError(f"beacon_id must be front or rear, got {beacon_id!r}")
        rows[frame][beacon_id].append((np.array(vals[:3]), np.array(vals[3:])))
    out = {}
    for frame, sides in rows.items():
        if len(sides["front"]) != len(sides["rear"]):
            raise ValueError(f"frame {frame!r} has unpaired beacon rows")
        readings = []
        for (fn, fc), (rn, rc) in zip(sides["front"], sides["rear"]):
            readings.append(BeaconReading(BeaconPair(fn, rn), BeaconPair(fc, rc)))
        out[frame] = readings
    return out


def correspondences_csv(corrs) -> str:
    lines = ["beacon_x,beacon_y,beacon_z,u,v,plane_tag"]
    for c in corrs:
        vals = [repr(float(v)) for v in (*c.beacon_ips, *c.pixel)]
        lines.append(",".join(vals) + f",{c.plane_tag}")
    return "\n".join(lines) + "\n"


def parse_correspondences_csv(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = "beacon_x,beacon_y,beacon_z,u,v,plane_tag"
    if not lines or lines[0] != header:
        raise ValueError(f"correspondence CSV must start with header {header!r}")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValueError(f"bad correspondence CSV row: {ln!r}")
        vals = [float(v) for v in parts[:5]]
        out.append(Correspondence(vals[:3], vals[3:5], parts[5]))
    return out


def _transform_row_major(t: RigidTransform) -> list:
    return [float(v) for v in t.matrix.reshape(-1)]


def _truth_json(sample: GroundTruthSample) -> str:
    doc = labels_to_dict(sample.sample_id, list(sample.truth_objects))
    doc["robot"] = {
        "pose": [float(v) for v in sample.robot_pose],
        "t_robot_from_ips": _transform_row_major(sample.t_robot_from_ips),
    }
    return dump_json(doc)


def render_sample_files(scene: SceneConfig, seed: int, index: int) -> dict:
    """All files of one sample as {relative path: text}."""
    sample = make_sample(scene, seed, index)
    sid = sample.sample_id
    return {
        f"samples/{sid}/cloud.ply": write_ply(sample.cloud),
        f"samples/{sid}/beacons.csv": beacons_csv(sample.readings),
        f"truth/{sid}.json": _truth_json(sample),
    }


def _render_sample_worker(args) -> dict:
    scene, seed, index = args
    return render_sample_files(scene, seed, index)


def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "objects": [
            {
                "id": o.object_id,
                "class": o.spec.class_name,
                "dims": [o.spec.length, o.spec.width, o.spec.height],
                "x": o.x,
                "y": o.y,
                "yaw": o.yaw,
                "beacon_sep": o.beacon_sep,
            }
            for o in scene.objects
        ],
        "intrinsics": {
            "fx": scene.intrinsics.fx,
            "fy": scene.intrinsics.fy,
            "cx": scene.intrinsics.cx,
            "cy": scene.intrinsics.cy,
            "width": scene.intrinsics.width,
            "height": scene.intrinsics.height,
        },
        "cam_from_robot": {
            "rotation": scene.cam_from_robot.rotation.tolist(),
            "translation": scene.cam_from_robot.translation.tolist(),
        },
        "lidar_from_cam": {
            "rotation": scene.lidar_from_cam.rotation.tolist(),
            "translation": scene.lidar_from_cam.translation.tolist(),
        },
        "lidar": {
            "channels": scene.lidar.channels,
            "vfov_min_deg": scene.lidar.vfov_min_deg,
            "vfov_max_deg": scene.lidar.vfov_max_deg,
            "azimuth_step_deg": scene.lidar.azimuth_step_deg,
            "max_range": scene.lidar.max_range,
        },
        "beacon_noise": scene.beacon_noise,
        "pixel_noise_sigma": scene.pixel_noise_sigma,
        "robot_beacon_height": scene.robot_beacon_height,
        "robot_beacon_sep": scene.robot_beacon_sep,
        "collection_readings": scene.collection_readings,
        "calibration_readings": scene.calibration_readings,
        "calibration_points": scene.calibration_points,
        "floor_z": scene.floor_z,
        "table_z": scene.table_z,
        "robot_radius_min": scene.robot_radius_min,
        "robot_radius_max": scene.robot_radius_max,
        "heading_jitter_deg": scene.heading_jitter_deg,
    }


def _check_keys(d: dict, allowed, section: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section {section!r}; "
            f"allowed: {sorted(allowed)}"
        )


def _transform_from_dict(d: dict, src: str, dst: str, section: str) -> RigidTransform:
    _check_keys(d, {"rotation", "translation"}, section)
    try:
        return RigidTransform(d["rotation"], d["translation"], src=src, dst=dst)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad transform in section {section!r}: {e}") from e


def scene_from_dict(d: dict) -> SceneConfig:
    _check_keys(d, set(scene_to_dict(SceneConfig())), "scene")
    kwargs = {}
    if "objects" in d:
        objects = []
        for i, o in enumerate(d["objects"]):
            _check_keys(
                o, {"id", "class", "dims", "x", "y", "yaw", "beacon_sep"}, f"scene.objects[{i}]"
            )
            try:
                dims = o["dims"]
                spec = ObjectSpec(o["class"], dims[0], dims[1], dims[2])
                objects.append(
                    ObjectPlacement(
                        o.get("id", f"obj{i}"),
                        spec,
                        float(o["x"]),
                        float(o["y"]),
                        float(o["yaw"]),
                        beacon_sep=float(o.get("beacon_sep", 0.4)),
                    )
                )
            except (KeyError, IndexError, TypeError, ValueError) as e:
                raise ConfigError(f"bad scene.objects[{i}]: {e}") from e
        kwargs["objects"] = tuple(objects)
    if "intrinsics" in d:
        sec = d["intrinsics"]
        _check_keys(sec, {"fx", "fy", "cx", "cy", "width", "height"}, "scene.intrinsics")
        try:
            kwargs["intrinsics"] = CameraIntrinsics(**sec)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad scene.intrinsics: {e}") from e
    if "cam_from_robot" in d:
        kwargs["cam_from_robot"] = _transform_from_dict(
            d["cam_from_robot"], "robot", "cam", "scene.cam_from_robot"
        )
    if "lidar_from_cam" in d:
        kwargs["lidar_from_cam"] = _transform_from_dict(
            d["lidar_from_cam"], "cam", "lidar", "scene.lidar_from_cam"
        )
    if "lidar" in d:
        sec = d["lidar"]
        _check_keys(
            sec,
            {"channels", "vfov_min_deg", "vfov_max_deg", "azimuth_step_deg", "max_range"},
            "scene.lidar",
        )
        try:
            kwargs["lidar"] = LidarConfig(**sec)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad scene.lidar: {e}") from e
    for key in (
        "beacon_noise",
        "pixel_noise_sigma",
        "robot_beacon_height",
        "robot_beacon_sep",
        "floor_z",
        "table_z",
        "robot_radius_min",
        "robot_radius_max",
        "heading_jitter_deg",
    ):
        if key in d:
            kwargs[key] = float(d[key])
    for key in ("collection_readings", "calibration_readings", "calibration_points"):
        if key in d:
            kwargs[key] = int(d[key])
    try:
        return SceneConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"bad scene config: {e}") from e


def render_calibration_files(scene: SceneConfig, seed: int) -> dict:
    calset = make_calibration_set(scene, seed)
    return {
        "calibration/correspondences.csv": correspondences_csv(calset.correspondences),
        "calibration/robot_beacons.csv": beacons_csv(
            {"robot": calset.robot_readings}
        ),
    }


def manifest_json(scene: SceneConfig, seed: int, n_samples: int) -> str:
    calset = make_calibration_set(scene, seed)
    return dump_json(
        {
            "format": "ipslabel-dataset-v1",
            "seed": int(seed),
            "n_samples": int(n_samples),
            "scene": scene_to_dict(scene),
            "calibration_truth": {
                "cam_from_robot": _transform_row_major(scene.cam_from_robot),
                "robot_pose": [float(v) for v in calset.robot_pose],
            },
        }
    )


def generate_dataset(
    scene: SceneConfig, out_dir: str, n_samples: int, seed: int, jobs: int = 1
) -> None:
    """Write the full dataset tree; byte-identical for a given seed.

    With jobs > 1 samples are rendered in parallel worker processes, but
    the parent performs every write in sample order, so the tree is
    identical to a sequential run.
    """
    import os

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rendered: list
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rendered = list(
                pool.map(_render_sample_worker, [(scene, seed, i) for i in range(n_samples)])
            )
    else:
        rendered = [render_sample_files(scene, seed, i) for i in range(n_samples)]
    for files in rendered:
        for rel, text in sorted(files.items()):
            atomic_write_text(os.path.join(out_dir, rel), text)
    for rel, text in sorted(render_calibration_files(scene, seed).items()):
        atomic_write_text(os.path.join(out_dir, rel), text)
    atomic_write_text(
        os.path.join(out_dir, "manifest.json"), manifest_json(scene, seed, n_samples)
    )
