"""Label generation: oriented boxes from beacon poses and their projections.

The 3D pipeline is: beacon pair -> IPS-frame box (object center is the
beacon midpoint dropped by half the object height) -> camera-frame
vertices via the calibrated chain -> LiDAR-frame yaw box. The 2D pipeline
projects the camera-frame vertices and takes pixel extrema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calib import MIN_DEPTH, CameraIntrinsics, _project_cam
from .errors import AllVerticesBehindCamera, FrameMismatch
from .geom import BeaconPair, RigidTransform, beacon_yaw, compose

# Vertex order: bottom face counter-clockwise (viewed from +z) starting at
# front-left, then the top face in the same x/y order.
#   0 FL-bottom  1 RL-bottom  2 RR-bottom  3 FR-bottom
#   4 FL-top     5 RL-top     6 RR-top     7 FR-top
_CORNER_SIGNS = np.array(
    [
        [+1.0, +1.0, -1.0],
        [-1.0, +1.0, -1.0],
        [-1.0, -1.0, -1.0],
        [+1.0, -1.0, -1.0],
        [+1.0, +1.0, +1.0],
        [-1.0, +1.0, +1.0],
        [-1.0, -1.0, +1.0],
        [+1.0, -1.0, +1.0],
    ]
)
_FRONT = (0, 3, 4, 7)
_REAR = (1, 2, 5, 6)
_LEFT = (0, 1, 4, 5)
_RIGHT = (2, 3, 6, 7)
_TOP = (4, 5, 6, 7)
_BOTTOM = (0, 1, 2, 3)


def normalize_yaw(yaw: float) -> float:
    """Wrap into (-pi, pi]."""
    y = yaw - 2.0 * math.pi * math.floor((yaw + math.pi) / (2.0 * math.pi))
    if y <= -math.pi:
        y = math.pi
    return float(y)


@dataclass(frozen=True)
class ObjectSpec:
    """Measured object class and dimensions (meters)."""

    class_name: str
    length: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError("object dimensions must be positive")

    @property
    def dims(self) -> tuple:
        return (self.length, self.width, self.height)


@dataclass(frozen=True)
class OrientedBox3:
    """Yaw-only oriented box: center, (l, w, h) dims, rotation about +z."""

    center: np.ndarray
    dims: np.ndarray
    yaw: float
    frame: str = "lidar"

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        d = np.array(self.dims, dtype=float).reshape(3)
        if not np.all(d > 0):
            raise ValueError(f"box dims must be positive, got {d}")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def vertices(self) -> np.ndarray:
        """The 8 corners in the documented order, shape (8, 3)."""
        local = _CORNER_SIGNS * (self.dims / 2.0)
        return local @ self.rotation.T + self.center

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express points in the box frame (center at origin, yaw removed)."""
        p = np.asarray(points, dtype=float)
        return (p - self.center) @ self.rotation

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "dims": [float(v) for v in self.dims],
            "yaw": float(self.yaw),
        }

    @classmethod
    def from_dict(cls, d: dict, frame: str = "lidar") -> "OrientedBox3":
        return cls(d["center"], d["dims"], d["yaw"], frame=frame)


def box_from_vertices(vertices, frame: str) -> OrientedBox3:
    """Refit a yaw box from 8 corners in the documented vertex order.

    Dims come from opposing face-center distances and yaw from the
    horizontal direction of the length axis, so small roll/pitch picked up
    through a transform chain is projected out (center and footprint yaw
    are preserved; this is a lossy re-levelling). The result is also
    independent of the handedness of the transform that produced the
    vertices.
    """
    v = np.asarray(vertices, dtype=float).reshape(8, 3)
    center = v.mean(axis=0)
    length_vec = v[list(_FRONT)].mean(axis=0) - v[list(_REAR)].mean(axis=0)
    width_vec = v[list(_LEFT)].mean(axis=0) - v[list(_RIGHT)].mean(axis=0)
    height_vec = v[list(_TOP)].mean(axis=0) - v[list(_BOTTOM)].mean(axis=0)
    dims = (
        float(np.linalg.norm(length_vec)),
        float(np.linalg.norm(width_vec)),
        float(np.linalg.norm(height_vec)),
    )
    if np.hypot(length_vec[0], length_vec[1]) < 1e-12:
        raise ValueError("length axis is vertical; yaw undefined")
    yaw = math.atan2(length_vec[1], length_vec[0])
    return OrientedBox3(center, dims, yaw, frame=frame)


@dataclass(frozen=True)
class Box2:
    """Axis-aligned pixel box, clamped to the image."""

    u0: float
    v0: float
    u1: float
    v1: float
    is_truncated: bool = False
    behind_camera_vertices: int = 0

    def __post_init__(self):
        if self.u0 > self.u1 or self.v0 > self.v1:
            raise ValueError("Box2 corners must satisfy u0 <= u1, v0 <= v1")

    @property
    def area(self) -> float:
        return (self.u1 - self.u0) * (self.v1 - self.v0)

    def to_dict(self) -> dict:
        return {
            "u0": float(self.u0),
            "v0": float(self.v0),
            "u1": float(self.u1),
            "v1": float(self.v1),
        }

    @classmethod
    def from_dict(cls, d: dict, is_truncated=False, behind_camera_vertices=0) -> "Box2":
        return cls(
            d["u0"], d["v0"], d["u1"], d["v1"],
            is_truncated=is_truncated,
            behind_camera_vertices=behind_camera_vertices,
        )


def object_box_ips(pair: BeaconPair, spec: ObjectSpec) -> OrientedBox3:
    """IPS-frame box from an object's beacon pair and measured dims.

    Beacons sit on the top surface along the object's x axis, so the
    center is the beacon midpoint dropped by height/2, and yaw is the
    rear-to-front beacon heading.
    """
    mid = 0.5 * (pair.front + pair.rear)
    center = mid - np.array([0.0, 0.0, spec.height / 2.0])
    return OrientedBox3(center, spec.dims, beacon_yaw(pair), frame="ips")


def box_to_camera(
    box: OrientedBox3,
    t_cam_from_robot: RigidTransform,
    t_robot_from_ips: RigidTransform,
) -> np.ndarray:
    """All 8 box vertices expressed in the camera frame, shape (8, 3)."""
    if box.frame != t_robot_from_ips.src:
        raise FrameMismatch(
            f"box is in frame {box.frame!r}, transform consumes {t_robot_from_ips.src!r}"
        )
    chain = compose(t_cam_from_robot, t_robot_from_ips)
    return chain.apply(box.vertices())


def project_box(vertices_cam, intr: CameraIntrinsics) -> Box2:
    """2D box from pixel extrema of the projected vertices.

    Vertices behind the camera are excluded from the extrema and counted;
    the box is clamped to the image bounds with ``is_truncated`` set when
    clamping changed anything.
    """
    v = np.asarray(vertices_cam, dtype=float).reshape(-1, 3)
    front = v[:, 2] > MIN_DEPTH
    behind = int((~front).sum())
    if not front.any():
        raise AllVerticesBehindCamera(f"all {len(v)} vertices have depth <= {MIN_DEPTH}")
    uv = _project_cam(intr, v[front])
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    cu0 = min(max(u0, 0.0), float(intr.width))
    cu1 = min(max(u1, 0.0), float(intr.width))
    cv0 = min(max(v0, 0.0), float(intr.height))
    cv1 = min(max(v1, 0.0), float(intr.height))
    truncated = (cu0, cv0, cu1, cv1) != (u0, v0, u1, v1)
    return Box2(
        cu0, cv0, cu1, cv1, is_truncated=bool(truncated), behind_camera_vertices=behind
    )


def box_to_lidar(vertices_cam, t_lidar_from_cam: RigidTransform) -> OrientedBox3:
    """LiDAR-frame yaw box refit from transformed camera-frame vertices."""
    v = t_lidar_from_cam.apply(np.asarray(vertices_cam, dtype=float).reshape(8, 3))
    return box_from_vertices(v, frame=t_lidar_from_cam.dst)


# ---------------------------------------------------------------------------
# Label JSON schema (one file per sample):
# {"sample": id, "objects": [{"class", "box3d_lidar": {center,dims,yaw},
#                             "box2d": {...}|null, "truncated", "refined", ...}]}


def labels_to_dict(sample_id: str, objects: list) -> dict:
    return {"sample": sample_id, "objects": objects}


def label_object_entry(
    class_name: str,
    box3d_lidar: OrientedBox3,
    box2d: Box2 | None,
    refined: bool = False,
    object_id: str | None = None,
    box2d_reason: str | None = None,
) -> dict:
    entry = {
        "class": class_name,
        "box3d_lidar": box3d_lidar.to_dict(),
        "box2d": box2d.to_dict() if box2d is not None else None,
        "truncated": bool(box2d.is_truncated) if box2d is not None else False,
        "behind_camera_vertices": (
            int(box2d.behind_camera_vertices) if box2d is not None else None
        ),
        "refined": bool(refined),
    }
    if object_id is not None:
        entry["id"] = object_id
    if box2d_reason is not None:
        entry["box2d_reason"] = box2d_reason
    return entry
