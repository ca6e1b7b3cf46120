"""Camera extrinsic calibration from beacon-pixel correspondences.

Estimates the camera-from-robot transform with a direct linear transform
(DLT) initialization followed by damped Gauss-Newton reprojection
minimization, wrapped in a RANSAC loop. The planar constraint snaps
measured beacon heights to their per-plane group mean before solving,
exploiting the fact that calibration beacons sit on two parallel planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    EmptySubset,
    MissingPlaneTag,
    NoConvergence,
    TooFewInliers,
)
from .geom import RigidTransform, compose
from .rng import NS_CALIB_RANSAC, substream

MIN_PNP_POINTS = 6
MIN_DEPTH = 1e-6  # meters; camera-frame z below this counts as behind the camera


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; images are assumed rectified (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Correspondence:
    """A beacon position (global IPS frame, meters) and its image pixel."""

    beacon_ips: np.ndarray
    pixel: np.ndarray
    plane_tag: str | None = None

    def __post_init__(self):
        b = np.array(self.beacon_ips, dtype=float).reshape(3)
        p = np.array(self.pixel, dtype=float).reshape(2)
        b.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "beacon_ips", b)
        object.__setattr__(self, "pixel", p)


@dataclass(frozen=True)
class CalibrationResult:
    extrinsic: RigidTransform  # cam <- robot
    inlier_indices: tuple
    rmse_px: float
    solver: str = "dlt+gauss-newton"
    delta_px: float | None = None
    planar: bool = False

    def __post_init__(self):
        if self.rmse_px < 0:
            raise ValueError("rmse_px must be >= 0")
        if len(self.inlier_indices) == 0:
            raise ValueError("inlier set must be non-empty")


def apply_planar_constraint(corrs) -> list:
    """Replace each beacon z by the mean z of its plane_tag group.

    x, y and pixels are untouched. Idempotent: a second application is a
    no-op because every group already has constant z.
    """
    corrs = list(corrs)
    for i, c in enumerate(corrs):
        if not c.plane_tag:
            raise MissingPlaneTag(f"correspondence {i} has no plane_tag")
    mean_z = {}
    for tag in {c.plane_tag for c in corrs}:
        mean_z[tag] = float(
            np.mean([c.beacon_ips[2] for c in corrs if c.plane_tag == tag])
        )
    out = []
    for c in corrs:
        b = np.array([c.beacon_ips[0], c.beacon_ips[1], mean_z[c.plane_tag]])
        out.append(Correspondence(b, c.pixel, c.plane_tag))
    return out


def project(intr: CameraIntrinsics, t_cam_from_ips: RigidTransform, p) -> tuple:
    """Pinhole-project an IPS-frame point; raises BehindCamera when z <= 1e-6."""
    pc = t_cam_from_ips.apply(np.asarray(p, dtype=float))
    if pc[2] <= MIN_DEPTH:
        raise BehindCamera(f"point has camera-frame depth {pc[2]:.3e} m")
    u = intr.fx * pc[0] / pc[2] + intr.cx
    v = intr.fy * pc[1] / pc[2] + intr.cy
    return float(u), float(v)


def _project_cam(intr: CameraIntrinsics, pts_cam: np.ndarray):
    """Vectorized pinhole projection of camera-frame points. No depth checks."""
    z = pts_cam[:, 2]
    u = intr.fx * pts_cam[:, 0] / z + intr.cx
    v = intr.fy * pts_cam[:, 1] / z + intr.cy
    return np.column_stack([u, v])


def _pixel_errors(intr, rotation, translation, pts_robot, pixels) -> np.ndarray:
    """Per-point reprojection distances; inf for points behind the camera."""
    pc = pts_robot @ rotation.T + translation
    err = np.full(len(pts_robot), np.inf)
    front = pc[:, 2] > MIN_DEPTH
    if front.any():
        uv = _project_cam(intr, pc[front])
        d = uv - pixels[front]
        err[front] = np.hypot(d[:, 0], d[:, 1])
    return err


def _rmse(errors: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(errors))))


def _exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    k = w / theta
    kx = _skew(k)
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _dlt_pose(pts_robot: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics):
    """Initial pose from the direct linear transform on normalized pixels."""
    n = len(pts_robot)
    xn = (pixels[:, 0] - intr.cx) / intr.fx
    yn = (pixels[:, 1] - intr.cy) / intr.fy
    xh = np.hstack([pts_robot, np.ones((n, 1))])
    a = np.zeros((2 * n, 12))
    a[0::2, 4:8] = -xh
    a[0::2, 8:12] = yn[:, None] * xh
    a[1::2, 0:4] = xh
    a[1::2, 8:12] = -xn[:, None] * xh
    _, s, vt = np.linalg.svd(a)
    if s[10] < 1e-9 * s[0]:
        raise DegenerateConfiguration(
            "DLT system is rank-deficient (points nearly collinear or coincident)"
        )
    p = vt[-1].reshape(3, 4)
    # Cheirality: most points must land in front of the camera.
    if np.median(xh @ p[2]) < 0:
        p = -p
    m = p[:, :3]
    u, sv, vt_m = np.linalg.svd(m)
    scale = float(np.mean(sv))
    if scale < 1e-12:
        raise DegenerateConfiguration("DLT rotation block has zero scale")
    rot = u @ vt_m
    if np.linalg.det(rot) < 0:
        rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt_m
    return rot, p[:, 3] / scale


def _refine_pose(rot, tra, pts_robot, pixels, intr, max_iter=100, tol=1e-10):
    """Damped Gauss-Newton on the 6 pose parameters.

    Left-multiplicative axis-angle increment on the rotation; iterates
    until the per-iteration RMSE decrease drops below ``tol`` pixels or
    ``max_iter`` iterations.
    """

    def residual_state(r, t):
        pc = pts_robot @ r.T + t
        front = pc[:, 2] > MIN_DEPTH
        if front.sum() < MIN_PNP_POINTS:
            return None
        uv = _project_cam(intr, pc[front])
        res = (uv - pixels[front]).ravel()
        rmse = float(np.sqrt(np.mean(np.square(res.reshape(-1, 2)).sum(axis=1))))
        return pc, front, res, rmse

    state = residual_state(rot, tra)
    if state is None or not np.isfinite(state[3]):
        raise NoConvergence("initial pose leaves too few points in front of the camera")
    pc, front, res, rmse = state
    lam = 0.0
    for _ in range(max_iter):
        pf = pc[front]
        z = pf[:, 2]
        m = len(pf)
        apix = np.zeros((m, 2, 3))
        apix[:, 0, 0] = intr.fx / z
        apix[:, 0, 2] = -intr.fx * pf[:, 0] / z**2
        apix[:, 1, 1] = intr.fy / z
        apix[:, 1, 2] = -intr.fy * pf[:, 1] / z**2
        q = pf - tra  # = R @ X, the lever arm of the rotation increment
        sk = np.zeros((m, 3, 3))
        sk[:, 0, 1] = -q[:, 2]
        sk[:, 0, 2] = q[:, 1]
        sk[:, 1, 0] = q[:, 2]
        sk[:, 1, 2] = -q[:, 0]
        sk[:, 2, 0] = -q[:, 1]
        sk[:, 2, 1] = q[:, 0]
        jw = -np.einsum("nij,njk->nik", apix, sk)
        jac = np.concatenate([jw, apix], axis=2).reshape(2 * m, 6)
        jtj = jac.T @ jac
        jtr = jac.T @ res
        accepted = False
        for _try in range(25):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -jtr)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                cand_r = _exp_so3(step[:3]) @ rot
                cand_t = tra + step[3:]
                cand = residual_state(cand_r, cand_t)
                if cand is not None and cand[3] < rmse:
                    improvement = rmse - cand[3]
                    rot, tra = cand_r, cand_t
                    pc, front, res, rmse = cand
                    lam = 0.0 if lam < 1e-10 else lam / 3.0
                    accepted = True
                    break
            lam = 1e-6 if lam == 0.0 else lam * 10.0
        if not accepted:
            break
        if improvement < tol:
            break
    # Undo accumulated floating-point drift from the incremental updates.
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    return rot, tra


def solve_pnp(corrs, intr: CameraIntrinsics, t_robot_from_ips: RigidTransform) -> RigidTransform:
    """Estimate cam<-robot from >= 6 beacon-pixel correspondences.

    DLT initialization on intrinsics-normalized pixels, then Gauss-Newton
    refinement of the reprojection RMSE.
    """
    corrs = list(corrs)
    if len(corrs) < MIN_PNP_POINTS:
        raise DegenerateConfiguration(
            f"need at least {MIN_PNP_POINTS} correspondences, got {len(corrs)}"
        )
    beacons = np.stack([c.beacon_ips for c in corrs])
    pixels = np.stack([c.pixel for c in corrs])
    pts_robot = t_robot_from_ips.apply(beacons)
    rot, tra = _dlt_pose(pts_robot, pixels, intr)
    rot, tra = _refine_pose(rot, tra, pts_robot, pixels, intr)
    return RigidTransform(rot, tra, src=t_robot_from_ips.dst, dst="cam")


def reprojection_rmse(corrs, intr, extrinsic, t_robot_from_ips, subset=None) -> float:
    """RMSE in pixels over ``subset`` (all correspondences by default).

    Points behind the camera contribute an infinite error.
    """
    corrs = list(corrs)
    idx = np.arange(len(corrs)) if subset is None else np.asarray(list(subset), dtype=int)
    if idx.size == 0:
        raise EmptySubset("empty correspondence subset")
    t_cam_from_ips = compose(extrinsic, t_robot_from_ips)
    beacons = np.stack([corrs[i].beacon_ips for i in idx])
    pixels = np.stack([corrs[i].pixel for i in idx])
    pc = t_cam_from_ips.apply(beacons)
    err = np.full(idx.size, np.inf)
    front = pc[:, 2] > MIN_DEPTH
    if front.any():
        uv = _project_cam(intr, pc[front])
        d = uv - pixels[front]
        err[front] = np.hypot(d[:, 0], d[:, 1])
    return _rmse(err)


def solve_pnp_ransac(
    corrs,
    intr: CameraIntrinsics,
    t_robot_from_ips: RigidTransform,
    delta_px: float = 8.0,
    iterations: int = 2000,
    seed: int = 0,
    planar: bool = False,
) -> CalibrationResult:
    """RANSAC over 6-point PnP hypotheses.

    Each iteration samples 6 correspondences without replacement, solves
    PnP on them, and counts points with reprojection error strictly below
    ``delta_px``. Ties break toward lower inlier RMSE, then the earlier
    iteration. The final model is a PnP refit on the winning inlier set;
    ``rmse_px`` is reported over those inliers only.

    ``planar`` is result metadata recording whether the caller applied
    the planar constraint to ``corrs``; it does not change the solve.
    """
    corrs = list(corrs)
    n = len(corrs)
    if n < MIN_PNP_POINTS:
        raise TooFewInliers(f"need at least {MIN_PNP_POINTS} correspondences, got {n}")
    if delta_px <= 0:
        raise ValueError("delta_px must be positive")
    beacons = np.stack([c.beacon_ips for c in corrs])
    pixels = np.stack([c.pixel for c in corrs])
    pts_robot = t_robot_from_ips.apply(beacons)

    best_key = None
    best_mask = None
    for i in range(iterations):
        rng = substream(seed, NS_CALIB_RANSAC, i)
        sample = rng.choice(n, size=MIN_PNP_POINTS, replace=False)
        try:
            hyp = solve_pnp([corrs[j] for j in sample], intr, t_robot_from_ips)
        except (DegenerateConfiguration, NoConvergence):
            continue
        err = _pixel_errors(intr, hyp.rotation, hyp.translation, pts_robot, pixels)
        mask = err < delta_px
        count = int(mask.sum())
        if count == 0:
            continue
        key = (count, -_rmse(err[mask]))
        if best_key is None or key > best_key:
            best_key = key
            best_mask = mask
    if best_mask is None or int(best_mask.sum()) < MIN_PNP_POINTS:
        found = 0 if best_mask is None else int(best_mask.sum())
        raise TooFewInliers(
            f"best hypothesis has {found} inliers, need {MIN_PNP_POINTS}"
        )
    inliers = tuple(int(j) for j in np.flatnonzero(best_mask))
    final = solve_pnp([corrs[j] for j in inliers], intr, t_robot_from_ips)
    rmse = reprojection_rmse(corrs, intr, final, t_robot_from_ips, subset=inliers)
    return CalibrationResult(
        extrinsic=final,
        inlier_indices=inliers,
        rmse_px=rmse,
        delta_px=float(delta_px),
        planar=bool(planar),
    )
