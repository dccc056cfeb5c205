"""Articulated 24-joint body model: pose types, rotation math, forward
kinematics, orbit-camera geometry, and the 6-part body decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from scipy.spatial.transform import Rotation as _ScipyRotation

PART_NAMES = ("torso", "head", "left_arm", "right_arm", "left_leg", "right_leg")
NUM_JOINTS = 24
POSE_DIM = 3 * (NUM_JOINTS - 1)

_MIRROR_PARTS = {"left_arm": "right_arm", "left_leg": "right_leg"}


# ---------------------------------------------------------------------------
# Skeleton definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonDef:
    """Fixed body skeleton: parent tree, rest offsets and part labels.

    ``parent[0] == -1`` marks the root; every other joint stores its parent
    index and the rest-pose offset (meters) from that parent. ``part_of``
    maps joints 1..23 onto the six canonical parts; the root carries -1.
    """

    parent: np.ndarray
    rest_offsets: np.ndarray
    part_of: np.ndarray
    joint_count: int = NUM_JOINTS
    _tensor_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.int64))
        object.__setattr__(self, "rest_offsets", np.asarray(self.rest_offsets, dtype=np.float64))
        object.__setattr__(self, "part_of", np.asarray(self.part_of, dtype=np.int64))
        self._validate()

    def _validate(self) -> None:
        n = self.joint_count
        if self.parent.shape != (n,) or self.rest_offsets.shape != (n, 3):
            raise ValueError("skeleton arrays have wrong shape")
        if self.parent[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j in range(1, n):
            if not 0 <= self.parent[j] < j:
                raise ValueError(f"parent of joint {j} must precede it in the tree")
        # Every non-root joint in exactly one part; together they cover 1..n-1.
        if self.part_of[0] != -1:
            raise ValueError("root joint belongs to no part")
        if not np.all((self.part_of[1:] >= 0) & (self.part_of[1:] < len(PART_NAMES))):
            raise ValueError("non-root joints must map to one of the 6 parts")
        # Mirror symmetry across the sagittal plane for paired limbs.
        for left, right in _MIRROR_PARTS.items():
            lj = self.part_joints(left)
            rj = self.part_joints(right)
            if len(lj) != len(rj):
                raise ValueError(f"{left}/{right} have unequal joint counts")
            lo, ro = self.rest_offsets[lj], self.rest_offsets[rj]
            if not np.allclose(lo * np.array([-1.0, 1.0, 1.0]), ro, atol=1e-12):
                raise ValueError(f"{left}/{right} rest offsets are not mirrored")
        for j in range(1, n):
            if PART_NAMES[self.part_of[j]] in ("torso", "head") and abs(self.rest_offsets[j, 0]) > 1e-12:
                raise ValueError(f"midline joint {j} is off the sagittal plane")

    def part_joints(self, part: str) -> np.ndarray:
        """Joint indices belonging to ``part``, ascending."""
        idx = PART_NAMES.index(part)
        return np.where(self.part_of == idx)[0]

    def part_components(self, part: str) -> np.ndarray:
        """Indices into the 69-vector for ``part``'s axis-angle triples."""
        joints = self.part_joints(part)
        return np.concatenate([np.arange(3 * (j - 1), 3 * j) for j in joints])

    @property
    def bone_lengths(self) -> np.ndarray:
        """Length of the bone ending at each non-root joint, shape (23,)."""
        return np.linalg.norm(self.rest_offsets[1:], axis=1)

    def offsets_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        key = ("offsets", dtype)
        if key not in self._tensor_cache:
            self._tensor_cache[key] = torch.from_numpy(self.rest_offsets).to(dtype)
        return self._tensor_cache[key]


def load_skeleton(path: str | Path | None = None) -> SkeletonDef:
    """Load a skeleton data file (one joint per line, '#' comments).

    With no path, loads the packaged 24-joint body.
    """
    if path is None:
        with resources.files("poseforge.data").joinpath("skeleton24.txt").open() as fh:
            lines = fh.readlines()
    else:
        lines = Path(path).read_text().splitlines()
    rows = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 6:
            raise ValueError(f"malformed skeleton line: {line!r}")
        rows.append((int(tok[0]), int(tok[1]), float(tok[2]), float(tok[3]), float(tok[4]), tok[5]))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("joint indices must be 0..N-1 without gaps")
    parent = np.array([r[1] for r in rows])
    offsets = np.array([[r[2], r[3], r[4]] for r in rows])
    part_of = np.array([-1 if r[5] == "-" else PART_NAMES.index(r[5]) for r in rows])
    return SkeletonDef(parent=parent, rest_offsets=offsets, part_of=part_of, joint_count=len(rows))


# ---------------------------------------------------------------------------
# Pose / view / joint-set value types (I/O boundary; batch code uses arrays)
# ---------------------------------------------------------------------------


def wrap_axis_angle(v: np.ndarray) -> np.ndarray:
    """Wrap axis-angle 3-vectors (last axis groups of 3) to norm <= pi.

    The returned vectors encode the same rotations; angles are reduced to
    the canonical [0, pi] range, flipping the axis where needed.
    """
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(-1, 3)
    theta = np.linalg.norm(flat, axis=1)
    wrapped = theta - 2.0 * math.pi * np.round(theta / (2.0 * math.pi))
    scale = np.ones_like(theta)
    nz = theta > 0
    scale[nz] = wrapped[nz] / theta[nz]
    return (flat * scale[:, None]).reshape(v.shape)


@dataclass(frozen=True)
class PoseVector:
    """69 axis-angle body-pose values (23 joints x 3), canonicalized."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.shape != (POSE_DIM,):
            raise ValueError(f"pose must have {POSE_DIM} values")
        if not np.all(np.isfinite(theta)):
            raise ValueError("pose values must be finite")
        object.__setattr__(self, "theta", wrap_axis_angle(theta.reshape(23, 3)).reshape(-1))


@dataclass(frozen=True)
class CameraView:
    """Axis-angle camera orientation on the fixed-radius orbit."""

    k: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64).reshape(-1)
        if k.shape != (3,):
            raise ValueError("camera view must have 3 values")
        if not np.all(np.isfinite(k)):
            raise ValueError("camera view must be finite")
        object.__setattr__(self, "k", wrap_axis_angle(k))


@dataclass(frozen=True)
class JointSet:
    """24 root-relative 3D joint positions in meters."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (NUM_JOINTS, 3):
            raise ValueError(f"joint set must be ({NUM_JOINTS}, 3)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("joint positions must be finite")
        object.__setattr__(self, "positions", pos)


# ---------------------------------------------------------------------------
# Rotation math
# ---------------------------------------------------------------------------


def _skew(v: torch.Tensor) -> torch.Tensor:
    z = torch.zeros_like(v[..., :1])
    row0 = torch.cat([z, -v[..., 2:3], v[..., 1:2]], dim=-1)
    row1 = torch.cat([v[..., 2:3], z, -v[..., 0:1]], dim=-1)
    row2 = torch.cat([-v[..., 1:2], v[..., 0:1], z], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def rodrigues(axis_angle) -> torch.Tensor:
    """Exponential map: axis-angle (..., 3) -> rotation matrices (..., 3, 3).

    Smooth everywhere (series expansion near zero), so autograd gradients
    are valid through the identity.
    """
    v = torch.as_tensor(axis_angle)
    if v.shape[-1] != 3:
        raise ValueError("axis-angle input must have last dimension 3")
    theta_sq = (v * v).sum(dim=-1, keepdim=True)
    theta = torch.sqrt(theta_sq.clamp(min=0))
    small = theta < 1e-6
    safe = torch.where(small, torch.ones_like(theta), theta)
    # sin(t)/t and (1-cos(t))/t^2 with their Taylor limits at t -> 0.
    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(safe) / safe)
    b = torch.where(small, 0.5 - theta_sq / 24.0, (1.0 - torch.cos(safe)) / (safe * safe))
    k = _skew(v)
    eye = torch.eye(3, dtype=v.dtype, device=v.device).expand(k.shape)
    return eye + a[..., None] * k + b[..., None] * (k @ k)


def axis_angle_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Log map: rotation matrices (..., 3, 3) -> axis-angle (..., 3)."""
    rot = np.asarray(rot, dtype=np.float64)
    flat = rot.reshape(-1, 3, 3)
    out = _ScipyRotation.from_matrix(flat).as_rotvec()
    return out.reshape(rot.shape[:-2] + (3,))


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------


def fk_transforms(skel: SkeletonDef, theta: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Pose the skeleton: theta (..., 69) -> (positions (..., 24, 3),
    global rotations (..., 24, 3, 3)).

    The root sits at the origin with identity orientation (global pose is
    carried by the camera). A joint's position is its parent's position
    plus the parent's accumulated rotation applied to the rest offset.
    """
    theta = torch.as_tensor(theta)
    if theta.shape[-1] != POSE_DIM:
        raise ValueError(f"pose must have {POSE_DIM} values")
    batch = theta.shape[:-1]
    dtype = theta.dtype
    offsets = skel.offsets_tensor(dtype).to(theta.device)
    local = rodrigues(theta.reshape(*batch, NUM_JOINTS - 1, 3))

    eye = torch.eye(3, dtype=dtype, device=theta.device).expand(*batch, 3, 3)
    zero = torch.zeros(*batch, 3, dtype=dtype, device=theta.device)
    rots = [eye]
    pos = [zero]
    for j in range(1, skel.joint_count):
        p = skel.parent[j]
        r_parent = rots[p]
        pos.append(pos[p] + (r_parent @ offsets[j]))
        rots.append(r_parent @ local[..., j - 1, :, :])
    return torch.stack(pos, dim=-2), torch.stack(rots, dim=-3)


def forward_kinematics(skel: SkeletonDef, theta) -> torch.Tensor:
    """Joint positions (..., 24, 3) for poses theta (..., 69)."""
    return fk_transforms(skel, torch.as_tensor(theta))[0]


def forward_kinematics_np(skel: SkeletonDef, theta: np.ndarray) -> np.ndarray:
    """NumPy convenience wrapper around :func:`forward_kinematics`."""
    t = torch.from_numpy(np.asarray(theta, dtype=np.float64))
    return forward_kinematics(skel, t).numpy()


# ---------------------------------------------------------------------------
# Orbit camera
# ---------------------------------------------------------------------------

# Canonical world-to-camera axes for the identity view: the camera sits on
# +z looking at the origin, +x_cam = +x_world, +y_cam = image-down.
_CANONICAL_AXES = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def camera_extrinsics(k, radius: float) -> torch.Tensor:
    """World-to-camera rigid transform (..., 4, 4) for orbit orientation k.

    The whole camera rig (position and axes) is the identity view rotated
    by ``rodrigues(k)``, which keeps the camera looking at the skeleton
    root from distance ``radius`` for every k and makes body/camera
    rotation duality exact. The up direction is the rotated canonical up,
    which stays well-defined even when the view axis passes the poles.
    """
    if radius <= 0:
        raise ValueError("orbit radius must be positive")
    k = torch.as_tensor(k)
    rot = rodrigues(k)
    axes = torch.as_tensor(_CANONICAL_AXES, dtype=k.dtype, device=k.device)
    center = rot @ torch.tensor([0.0, 0.0, radius], dtype=k.dtype, device=k.device)
    r_wc = axes @ rot.transpose(-1, -2)
    t = -(r_wc @ center[..., None])[..., 0]
    out = torch.zeros(*k.shape[:-1], 4, 4, dtype=k.dtype, device=k.device)
    out[..., :3, :3] = r_wc
    out[..., :3, 3] = t
    out[..., 3, 3] = 1.0
    return out


def camera_center(extrinsic: torch.Tensor) -> torch.Tensor:
    r = extrinsic[..., :3, :3]
    t = extrinsic[..., :3, 3]
    return -(r.transpose(-1, -2) @ t[..., None])[..., 0]


def camera_rays(extrinsic: torch.Tensor, height: int, width: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-center rays for a pinhole camera with focal length = width.

    Returns (origin (..., 3), directions (..., H*W, 3)), directions unit.
    """
    dtype = extrinsic.dtype
    device = extrinsic.device
    f = float(width)
    us = (torch.arange(width, dtype=dtype, device=device) + 0.5 - width / 2.0) / f
    vs = (torch.arange(height, dtype=dtype, device=device) + 0.5 - height / 2.0) / f
    grid_v, grid_u = torch.meshgrid(vs, us, indexing="ij")
    dirs_cam = torch.stack([grid_u, grid_v, torch.ones_like(grid_u)], dim=-1).reshape(-1, 3)
    dirs_cam = dirs_cam / dirs_cam.norm(dim=-1, keepdim=True)
    dirs = dirs_cam @ extrinsic[..., :3, :3]
    return camera_center(extrinsic), dirs


def project_points(points: torch.Tensor, extrinsic: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Project world points (..., N, 3) to pixel coordinates (..., N, 2)."""
    r = extrinsic[..., :3, :3]
    t = extrinsic[..., :3, 3]
    cam = points @ r.transpose(-1, -2) + t[..., None, :]
    f = float(width)
    u = f * cam[..., 0] / cam[..., 2] + width / 2.0 - 0.5
    v = f * cam[..., 1] / cam[..., 2] + height / 2.0 - 0.5
    return torch.stack([u, v], dim=-1)


def view_from_angles(elevation: float, azimuth: float, roll: float = 0.0) -> np.ndarray:
    """Axis-angle orbit orientation whose camera sits at the given
    elevation/azimuth (radians) with in-plane roll."""
    r = (
        _ScipyRotation.from_euler("y", azimuth)
        * _ScipyRotation.from_euler("x", -elevation)
        * _ScipyRotation.from_euler("z", roll)
    )
    return r.as_rotvec()


def view_angles(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(elevation, azimuth) in radians of the camera position for views
    k (..., 3); roll does not affect the position."""
    k = np.asarray(k, dtype=np.float64)
    rot = rodrigues(torch.from_numpy(k)).numpy()
    p = rot @ np.array([0.0, 0.0, 1.0])
    elev = np.arcsin(np.clip(p[..., 1], -1.0, 1.0))
    az = np.arctan2(p[..., 0], p[..., 2])
    return elev, az


# ---------------------------------------------------------------------------
# 6-part decomposition
# ---------------------------------------------------------------------------


def split_parts(theta, skel: SkeletonDef) -> list:
    """Slice poses (..., 69) into the six part sub-vectors, canonical order.

    Works on NumPy arrays and torch tensors alike; concatenating the
    pieces back with :func:`merge_parts` reproduces the input exactly.
    """
    return [theta[..., skel.part_components(p)] for p in PART_NAMES]


def merge_parts(parts: list, skel: SkeletonDef):
    """Inverse of :func:`split_parts`."""
    first = parts[0]
    if isinstance(first, torch.Tensor):
        out = torch.zeros(*first.shape[:-1], POSE_DIM, dtype=first.dtype, device=first.device)
    else:
        out = np.zeros(first.shape[:-1] + (POSE_DIM,), dtype=np.asarray(first).dtype)
    for name, sub in zip(PART_NAMES, parts):
        out[..., skel.part_components(name)] = sub
    return out
