"""Evaluation: 2D/3D IoU, label-set comparison, down-sampling study.

3D IoU is exact for yaw-only boxes: the bird's-eye-view footprints are
convex polygons, so their intersection comes from Sutherland-Hodgman
clipping, and the vertical extent overlaps as an interval.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .cloud import PointCloud
from .errors import ClassMismatch, FrameMismatch, IpsLabelError, MissingSample
from .fileio import read_text
from .labelgen import Box2, ObjectSpec, OrientedBox3
from .refine import RefineConfig, fitness, kinds_for_class, refine_label
from .rng import NS_DOWNSAMPLE, derive_seed, substream

MATCH_GATE = 2.0  # meters; max center distance when pairing labels


def iou_2d(a: Box2, b: Box2) -> float:
    iw = min(a.u1, b.u1) - max(a.u0, b.u0)
    ih = min(a.v1, b.v1) - max(a.v0, b.v0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def _footprint(box: OrientedBox3) -> np.ndarray:
    """BEV corners (4, 2), counter-clockwise."""
    return box.vertices()[:4, :2]


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex CCW polygon."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        if not output:
            break
        polygon = output
        output = []
        prev = polygon[-1]
        prev_inside = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0]) >= 0
        for cur in polygon:
            cur_inside = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0]) >= 0
            if cur_inside != prev_inside:
                d = cur - prev
                denom = edge[0] * d[1] - edge[1] * d[0]
                if abs(denom) > 1e-15:
                    t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                    output.append(prev + t * d)
            if cur_inside:
                output.append(cur)
            prev = cur
            prev_inside = cur_inside
    return np.array(output) if output else np.zeros((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def iou_3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """Volume IoU of two yaw-only boxes sharing a frame."""
    if a.frame != b.frame:
        raise FrameMismatch(f"boxes live in different frames: {a.frame!r} vs {b.frame!r}")
    fa, fb = _footprint(a), _footprint(b)
    inter_area = _polygon_area(_clip_polygon(fa, fb))
    za0, za1 = a.center[2] - a.dims[2] / 2.0, a.center[2] + a.dims[2] / 2.0
    zb0, zb1 = b.center[2] - b.dims[2] / 2.0, b.center[2] + b.dims[2] / 2.0
    dz = min(za1, zb1) - max(za0, zb0)
    inter = inter_area * max(dz, 0.0)
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Down-sampling study


def downsample_study(
    pcd: PointCloud,
    unrefined: OrientedBox3,
    spec: ObjectSpec,
    proportions,
    trials: int,
    cfg: RefineConfig,
) -> list:
    """Refinement robustness vs point density.

    For each proportion p, each trial keeps a random fraction p of the
    points within cfg.radius of the unrefined label (the rest of the cloud
    is untouched), refines on the down-sampled cloud, and reports the best
    box plus its fitness evaluated on the original full cloud. Refinement
    failures are recorded per trial instead of aborting the study.
    """
    proportions = [float(p) for p in proportions]
    if any(not (0.0 < p <= 1.0) for p in proportions):
        raise ValueError("proportions must lie in (0, 1]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kinds = kinds_for_class(spec.class_name)
    pts = pcd.points
    near_idx = np.flatnonzero(np.linalg.norm(pts - unrefined.center, axis=1) <= cfg.radius)
    far_idx = np.flatnonzero(np.linalg.norm(pts - unrefined.center, axis=1) > cfg.radius)
    rows = []
    for pi, proportion in enumerate(proportions):
        for trial in range(trials):
            rng = substream(cfg.seed, NS_DOWNSAMPLE, pi, trial)
            keep_n = max(1, int(round(proportion * near_idx.size))) if near_idx.size else 0
            keep = rng.choice(near_idx.size, size=keep_n, replace=False)
            sub = PointCloud(
                np.vstack([pts[near_idx[np.sort(keep)]], pts[far_idx]]), frame=pcd.frame
            )
            trial_cfg = replace(cfg, seed=derive_seed(cfg.seed, NS_DOWNSAMPLE, pi, trial, 1))
            row = {"proportion": proportion, "trial": trial}
            try:
                box = refine_label(sub, unrefined, spec, kinds, trial_cfg)
                row["box3d"] = box.to_dict()
                row["fitness"] = fitness(box, pcd, trial_cfg.shell_delta)
            except IpsLabelError as e:
                row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
    return rows


def study_means(rows) -> dict:
    """Mean fitness per proportion over successful trials."""
    sums, counts = {}, {}
    for row in rows:
        if "fitness" not in row:
            continue
        p = row["proportion"]
        sums[p] = sums.get(p, 0.0) + row["fitness"]
        counts[p] = counts.get(p, 0) + 1
    return {p: sums[p] / counts[p] for p in sums}


# ---------------------------------------------------------------------------
# Label-set comparison


@dataclass(frozen=True)
class EvalReport:
    per_sample: tuple
    mean_iou_2d: float | None
    mean_iou_3d: float
    matched: int
    unmatched_auto: int

    def to_dict(self) -> dict:
        return {
            "per_sample": list(self.per_sample),
            "mean_iou_2d": self.mean_iou_2d,
            "mean_iou_3d": self.mean_iou_3d,
            "matched": self.matched,
            "unmatched_auto": self.unmatched_auto,
        }


def _load_label_dir(path: str) -> dict:
    import json

    out = {}
    for name in sorted(os.listdir(path)):
        if name.endswith(".json"):
            out[name[: -len(".json")]] = json.loads(read_text(os.path.join(path, name)))
    return out


def _entry_box3(entry: dict) -> OrientedBox3:
    return OrientedBox3.from_dict(entry["box3d_lidar"], frame="lidar")


def _entry_box2(entry: dict) -> Box2 | None:
    if entry.get("box2d") is None:
        return None
    return Box2.from_dict(entry["box2d"])


def compare_labels(auto_dir: str, reference_dir: str) -> EvalReport:
    """Pair labels by (sample id, class, nearest center within 2 m) and
    aggregate IoUs."""
    auto = _load_label_dir(auto_dir)
    ref = _load_label_dir(reference_dir)
    if not set(ref) & set(auto):
        raise MissingSample(
            f"no common sample ids between {auto_dir!r} and {reference_dir!r}"
        )
    per_sample = []
    all_3d, all_2d = [], []
    matched = 0
    unmatched_auto = 0
    for sid in sorted(ref):
        if sid not in auto:
            raise MissingSample(f"reference sample {sid!r} has no auto labels")
        ref_objs = ref[sid]["objects"]
        auto_objs = list(auto[sid]["objects"])
        used = [False] * len(auto_objs)
        matches = []
        for robj in ref_objs:
            rbox = _entry_box3(robj)
            best_j, best_d = None, MATCH_GATE
            for j, aobj in enumerate(auto_objs):
                if used[j] or aobj["class"] != robj["class"]:
                    continue
                d = float(np.linalg.norm(_entry_box3(aobj).center - rbox.center))
                if d <= best_d:
                    best_j, best_d = j, d
            if best_j is None:
                raise ClassMismatch(
                    f"sample {sid!r}: no auto label of class {robj['class']!r} "
                    f"within {MATCH_GATE} m of the reference box"
                )
            used[best_j] = True
            matched += 1
            aobj = auto_objs[best_j]
            i3 = iou_3d(_entry_box3(aobj), rbox)
            rbox2, abox2 = _entry_box2(robj), _entry_box2(aobj)
            i2 = iou_2d(abox2, rbox2) if (rbox2 is not None and abox2 is not None) else None
            all_3d.append(i3)
            if i2 is not None:
                all_2d.append(i2)
            matches.append(
                {"class": robj["class"], "iou_3d": i3, "iou_2d": i2}
            )
        unmatched_auto += used.count(False)
        per_sample.append({"sample": sid, "matches": matches})
    return EvalReport(
        per_sample=tuple(per_sample),
        mean_iou_2d=float(np.mean(all_2d)) if all_2d else None,
        mean_iou_3d=float(np.mean(all_3d)),
        matched=matched,
        unmatched_auto=unmatched_auto,
    )
