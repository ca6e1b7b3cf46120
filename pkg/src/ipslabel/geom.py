"""Rigid transforms and beacon-pair frame construction.

Conventions:
  - A ``RigidTransform`` with ``src=A, dst=B`` maps coordinates of a point
    expressed in frame A to coordinates in frame B: ``p_B = R @ p_A + t``.
  - Frames are named by strings: ``ips``, ``robot``, ``cam``, ``lidar``,
    ``obj0``, ``obj1``, ...
  - Beacon frames are 4-DOF: position plus yaw. Their z axis is the global
    IPS z axis by construction; roll and pitch are identically zero.

Beacon frames follow the literal two-beacon construction: both z
coordinates are replaced by their mean, x points from the rear beacon to
the front beacon, z is (0, 0, 1), and y = x × z. Note that this yields an
orthonormal basis with det = -1; consumers must not assume beacon-derived
rotations are proper. Calibrated transforms (camera, LiDAR mounts) are
proper rotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBeaconPair, EmptyReadings, FrameMismatch

ORTHONORMALITY_TOL = 1e-9
# compose() re-orthonormalizes only when drift exceeds this.
REORTHO_TRIGGER = 1e-7

EPS_BEACON = 1e-3  # meters; minimum planar beacon separation


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RigidTransform:
    """SE(3)-style transform tagged with source and destination frames.

    ``rotation`` is a 3x3 orthonormal matrix (R^T R = I within 1e-9).
    Beacon-derived frames may carry det(R) = -1; see module docstring.
    """

    rotation: np.ndarray
    translation: np.ndarray
    src: str
    dst: str

    def __post_init__(self):
        rot = _freeze(np.asarray(self.rotation, dtype=float).reshape(3, 3))
        tra = _freeze(_as_vec3(self.translation))
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls, frame: str) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), src=frame, dst=frame)

    @classmethod
    def from_matrix(cls, m, src: str, dst: str) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise ValueError("last row of a homogeneous transform must be [0 0 0 1]")
        return cls(m[:3, :3], m[:3, 3], src=src, dst=dst)

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Map points from ``src`` into ``dst``. Accepts (3,) or (N, 3)."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain two transforms: ``b`` maps X->Y, ``a`` maps Y->Z, result maps X->Z."""
    if b.dst != a.src:
        raise FrameMismatch(
            f"cannot chain {b.src}->{b.dst} into {a.src}->{a.dst}"
        )
    rot = a.rotation @ b.rotation
    tra = a.rotation @ b.translation + a.translation
    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift > REORTHO_TRIGGER:
        # Nearest orthonormal matrix, preserving handedness of the product.
        u, _, vt = np.linalg.svd(rot)
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidTransform(rot, tra, src=b.src, dst=a.dst)


def inverse(t: RigidTransform) -> RigidTransform:
    """Swap frames: R -> R^T, t -> -R^T t."""
    rot = t.rotation.T
    return RigidTransform(rot, -rot @ t.translation, src=t.dst, dst=t.src)


@dataclass(frozen=True)
class BeaconPair:
    """Front and rear beacon positions, meters, global IPS frame."""

    front: np.ndarray
    rear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "front", _freeze(_as_vec3(self.front)))
        object.__setattr__(self, "rear", _freeze(_as_vec3(self.rear)))

    def planar_separation(self) -> float:
        """Distance between the beacons in the xy-plane."""
        d = self.front[:2] - self.rear[:2]
        return float(np.hypot(d[0], d[1]))


def frame_from_beacons(
    pair: BeaconPair,
    frame: str = "frame",
    eps_beacon: float = EPS_BEACON,
) -> RigidTransform:
    """Build the 4-DOF beacon frame; returns the frame->ips transform.

    Both z coordinates are first replaced by their mean, so the frame's
    xy-plane is parallel to the IPS xy-plane. The x axis points from the
    rear beacon to the front beacon, z is (0, 0, 1), y = x cross z, and
    the front beacon is the frame origin.
    """
    z_mean = 0.5 * (pair.front[2] + pair.rear[2])
    front = np.array([pair.front[0], pair.front[1], z_mean])
    rear = np.array([pair.rear[0], pair.rear[1], z_mean])
    delta = front - rear
    norm = np.linalg.norm(delta)
    if norm <= eps_beacon:
        raise DegenerateBeaconPair(
            f"planar beacon separation {norm:.3e} m <= {eps_beacon:.3e} m"
        )
    x_axis = delta / norm
    z_axis = np.array([0.0, 0.0, 1.0])
    y_axis = np.cross(x_axis, z_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    return RigidTransform(rot, front, src=frame, dst="ips")


def beacon_yaw(pair: BeaconPair) -> float:
    """Heading of the rear-to-front direction, radians in (-pi, pi]."""
    d = pair.front[:2] - pair.rear[:2]
    if np.hypot(d[0], d[1]) <= 0.0:
        raise DegenerateBeaconPair("coincident beacons have no heading")
    return float(np.arctan2(d[1], d[0]))


def average_beacon_readings(readings, n: int | None = None) -> BeaconPair:
    """Component-wise mean of the first ``n`` readings (all by default)."""
    readings = list(readings)
    if not readings:
        raise EmptyReadings("no beacon readings")
    if n is None:
        n = len(readings)
    if n < 1:
        raise EmptyReadings(f"cannot average {n} readings")
    if n > len(readings):
        raise EmptyReadings(f"requested {n} readings, only {len(readings)} available")
    use = readings[:n]
    front = np.mean([r.front for r in use], axis=0)
    rear = np.mean([r.rear for r in use], axis=0)
    return BeaconPair(front, rear)
