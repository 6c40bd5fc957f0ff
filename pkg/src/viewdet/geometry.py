"""Cameras, rigid transforms, point sampling, and axis-aligned box arithmetic.

Coordinate conventions: pinhole camera with +z forward, +x right, +y down;
pixel (u, v) = (fx * x / z + cx, fy * y / z + cy). Poses map camera frame to
world frame (p_world = R @ p_cam + t). The coordinate (0, 0, 0) is reserved
as the invalid-point sentinel; valid masks travel alongside coordinates so
real points that would alias the sentinel are perturbed at ingestion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptySceneError, EmptyViewError, ValidationError

SENTINEL_EPS = 1e-6


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the raster")

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics after resizing the raster to width x height."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height
        )


@dataclass
class Pose:
    """Rigid camera-to-world transform."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        validate_rotation(self.r)

    def inverse(self) -> "Pose":
        return Pose(self.r.T.copy(), -self.r.T @ self.t)


def validate_rotation(r: np.ndarray, tol: float = 1e-9) -> None:
    if r.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got {r.shape}")
    dev = np.max(np.abs(r.T @ r - np.eye(3)))
    if dev > tol:
        raise ValidationError(f"rotation not orthonormal (|R^T R - I| = {dev:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > max(tol, 1e-9):
        raise ValidationError(f"rotation determinant {det:.12f} != 1")


@dataclass
class PointCloud:
    coords: np.ndarray
    feats: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if self.valid is None:
            self.valid = np.ones(len(self.coords), dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.feats is not None:
            self.feats = np.asarray(self.feats, dtype=np.float64)
            if len(self.feats) != len(self.coords):
                raise DimensionError("feats and coords length mismatch")
        if len(self.valid) != len(self.coords):
            raise DimensionError("valid flags and coords length mismatch")

    def __len__(self) -> int:
        return len(self.coords)

    def valid_subset(self) -> "PointCloud":
        m = self.valid
        return PointCloud(
            self.coords[m],
            None if self.feats is None else self.feats[m],
            np.ones(int(m.sum()), dtype=bool),
        )


@dataclass
class Box3D:
    """Axis-aligned box: center and full extents in meters."""

    center: np.ndarray
    size: np.ndarray
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0):
            raise ValidationError(f"box size must be positive, got {self.size}")

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.size / 2.0

    def volume(self) -> float:
        return float(np.prod(self.size))


def desentinelize(coords: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Nudge valid points that sit exactly at the (0,0,0) sentinel."""
    hits = valid & np.all(coords == 0.0, axis=1)
    if np.any(hits):
        coords = coords.copy()
        coords[hits] = SENTINEL_EPS
    return coords


def unproject_depth(
    depth: np.ndarray, intr: CameraIntrinsics, k: int, rng
) -> PointCloud:
    """Sample k valid pixels and lift them to camera-frame 3D points.

    Pixels with depth 0 are invalid. Sampling is uniform without replacement;
    if fewer than k pixels are valid the draw switches to with-replacement so
    per-view tensor shapes stay fixed.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise DimensionError(
            f"depth raster {depth.shape} does not match intrinsics "
            f"({intr.height}, {intr.width})"
        )
    vs, us = np.nonzero(depth > 0)
    if len(vs) == 0:
        raise EmptyViewError("depth raster has no valid pixels")
    if len(vs) >= k:
        pick = rng.choice(len(vs), size=k, replace=False)
    else:
        pick = rng.choice(len(vs), size=k, replace=True)
    u = us[pick].astype(np.float64)
    v = vs[pick].astype(np.float64)
    d = depth[vs[pick], us[pick]]
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    coords = np.stack([x, y, d], axis=1)
    return PointCloud(coords)


def project_point(p_world: np.ndarray, pose: Pose, intr: CameraIntrinsics):
    """World point -> (u, v, z_cam). z_cam <= 0 means behind the camera."""
    p_cam = pose.r.T @ (np.asarray(p_world, dtype=np.float64) - pose.t)
    z = p_cam[2]
    if z <= 0:
        return None, None, z
    u = intr.fx * p_cam[0] / z + intr.cx
    v = intr.fy * p_cam[1] / z + intr.cy
    return u, v, z


def transform_points(pc: PointCloud, pose: Pose) -> PointCloud:
    """Apply p -> R p + t to valid points; sentinel rows stay put."""
    out = np.zeros_like(pc.coords)
    m = pc.valid
    out[m] = pc.coords[m] @ pose.r.T + pose.t
    out = desentinelize(out, m)
    return PointCloud(out, None if pc.feats is None else pc.feats.copy(), m.copy())


def fuse_views(clouds: list[PointCloud], poses: list[Pose]) -> PointCloud:
    """Concatenate world-frame valid points from every view."""
    if len(clouds) != len(poses):
        raise DimensionError("clouds and poses length mismatch")
    parts = []
    for pc, pose in zip(clouds, poses):
        world = transform_points(pc, pose)
        parts.append(world.coords[world.valid])
    if not parts:
        return PointCloud(np.zeros((0, 3)))
    coords = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3))
    return PointCloud(coords)


def _lex_smallest(coords: np.ndarray, candidates: np.ndarray) -> int:
    """Index (into the full array) of the lexicographically smallest candidate."""
    sub = coords[candidates]
    order = np.lexsort((sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(candidates[order[0]])


def farthest_point_sample(pc: PointCloud | np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min subset selection.

    Deterministic: the seed point is the lexicographically smallest coordinate
    and distance ties break lexicographically, so the selected coordinate set
    (and its order) is invariant to input permutation for distinct points.
    For k > n the selection repeats cyclically.
    """
    coords = pc.coords if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    n = len(coords)
    if n == 0:
        raise EmptySceneError("farthest_point_sample on an empty cloud")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_pick = min(k, n)
    selected = np.empty(n_pick, dtype=np.int64)
    selected[0] = _lex_smallest(coords, np.arange(n))
    d2 = np.sum((coords - coords[selected[0]]) ** 2, axis=1)
    for step in range(1, n_pick):
        far = d2.max()
        candidates = np.nonzero(d2 == far)[0]
        nxt = candidates[0] if len(candidates) == 1 else _lex_smallest(coords, candidates)
        selected[step] = nxt
        d2 = np.minimum(d2, np.sum((coords - coords[nxt]) ** 2, axis=1))
    if k > n:
        reps = np.arange(k) % n_pick
        return selected[reps]
    return selected


def ball_query(
    centers: np.ndarray, pc: PointCloud | np.ndarray, radius: float, max_samples: int
) -> list[np.ndarray]:
    """Per center: up to max_samples point indices within `radius`, nearest first.

    A center with no in-radius points gets a single-element group holding its
    nearest point so no group is ever empty.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    coords = pc.coords if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    d2 = np.sum((centers[:, None, :] - coords[None, :, :]) ** 2, axis=2)
    r2 = radius * radius
    groups = []
    for row in d2:
        inside = np.nonzero(row <= r2)[0]
        if len(inside) == 0:
            groups.append(np.array([int(np.argmin(row))], dtype=np.int64))
            continue
        order = np.argsort(row[inside], kind="stable")
        groups.append(inside[order[:max_samples]].astype(np.int64))
    return groups


def box_iou_3d(a: Box3D, b: Box3D) -> float:
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    edges = np.maximum(hi - lo, 0.0)
    inter = float(np.prod(edges))
    union = a.volume() + b.volume() - inter
    return inter / union if union > 0 else 0.0


def nms_3d(boxes: list[Box3D], iou_threshold: float = 0.25) -> list[int]:
    """Greedy per-class suppression; returns kept indices in descending-score order.

    Score ties break toward the lower original index.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        for j in order:
            if j == i or suppressed[j]:
                continue
            if boxes[j].class_id != boxes[i].class_id:
                continue
            if box_iou_3d(boxes[i], boxes[j]) > iou_threshold:
                suppressed[j] = True
    return kept


def boxes_in_view(gt: list[Box3D], frame) -> list[Box3D]:
    """Keep boxes whose center projects inside the frame's raster with z > 0."""
    kept = []
    for box in gt:
        u, v, z = project_point(box.center, frame.pose, frame.intrinsics)
        if u is None:
            continue
        if 0 <= u < frame.intrinsics.width and 0 <= v < frame.intrinsics.height:
            kept.append(box)
    return kept
