"""Image synthesis for the articulated body: an analytic capsule rasterizer
(the deterministic oracle that stands in for real footage) and a
differentiable skeleton-conditioned radiance field rendered by ray
marching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import skeleton as sk

# Per-part capsule radii and albedos for the oracle body (meters / gray).
# Left/right pairs share values so rest-pose renders are mirror symmetric.
_PART_RADIUS = {"torso": 0.10, "head": 0.09, "left_arm": 0.05, "right_arm": 0.05,
                "left_leg": 0.065, "right_leg": 0.065}
_PART_ALBEDO = {"torso": 1.0, "head": 0.85, "left_arm": 0.7, "right_arm": 0.7,
                "left_leg": 0.55, "right_leg": 0.55}
_EDGE_WIDTH = 0.02

DEFAULT_ORBIT_RADIUS = 2.5


class RendererTrainingError(RuntimeError):
    """Raised when field training stalls or misses its quality floor."""


@dataclass
class RenderConfig:
    """Ray-marching geometry shared by the oracle and the neural renderer."""

    height: int = 64
    width: int = 64
    samples_per_ray: int = 32
    near: float = 1.3
    far: float = 3.7
    background: float = 0.0
    channels: int = 1
    sphere_clip: bool = True
    bound_radius: float = 1.15
    chunk_points: int = 262144

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")
        if not self.near < self.far:
            raise ValueError("near must be < far")
        if self.height < 8 or self.width < 8:
            raise ValueError("image dimensions must be >= 8")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background must be in [0, 1]")


@dataclass
class FieldConfig:
    """Architecture of the density/color network."""

    depth: int = 6
    width: int = 128
    density_cutoff: float = 0.35
    cutoff_sharpness: float = 0.02

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("field depth/width must be positive")


@dataclass
class NerfTrainConfig:
    epochs: int = 12
    steps_per_epoch: int = 150
    rays_per_batch: int = 1024
    images_per_batch: int = 8
    lr: float = 2e-3
    lambda_theta: float = 0.0
    lambda_t: float = 0.0
    pose_refinement: bool = False
    jitter: bool = False
    foreground_fraction: float = 0.5
    holdout_every: int = 60
    min_psnr: float | None = None
    patience_epochs: int = 4

    def __post_init__(self):
        if self.lambda_theta < 0 or self.lambda_t < 0:
            raise ValueError("smoothness weights must be >= 0")


# ---------------------------------------------------------------------------
# Volume compositing (ray marching)
# ---------------------------------------------------------------------------


def composite(sigmas: torch.Tensor, deltas: torch.Tensor, colors: torch.Tensor):
    """Composite samples along rays into colors.

    ``sigmas``/``deltas`` have shape (..., Q) and ``colors`` (..., Q, C).
    Returns (color (..., C), weights (..., Q)) where weight i is
    T_i * (1 - exp(-sigma_i * delta_i)) with transmittance
    T_i = exp(-sum_{j<i} sigma_j * delta_j).
    """
    if sigmas.shape[-1] < 1:
        raise ValueError("need at least one sample per ray")
    if bool((deltas <= 0).any()):
        raise ValueError("deltas must be positive")
    if bool((sigmas < 0).any()):
        raise ValueError("densities must be non-negative")
    weights = _composite_weights(sigmas, deltas)
    return (weights[..., None] * colors).sum(dim=-2), weights


def _composite_weights(sigmas: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    tau = sigmas * deltas
    accum = torch.cumsum(tau, dim=-1)
    trans = torch.exp(-(accum - tau))  # exclusive prefix sum: T_1 = 1
    return trans * (1.0 - torch.exp(-tau))


# ---------------------------------------------------------------------------
# Skeleton-relative point encoding
# ---------------------------------------------------------------------------


def encoding_dim(skel: sk.SkeletonDef) -> int:
    return 4 * (skel.joint_count - 1)


def _encode_points(points, joints, rots, skel, offsets):
    """Encode points (..., P, 3) given posed joints/rotations.

    Per bone: the point in the bone's parent-anchored local frame (3) plus
    its distance to the bone segment (1).
    """
    par = skel.parent[1:]
    origins = joints[..., par, :]
    frames = rots[..., par, :, :]
    rel = points[..., :, None, :] - origins[..., None, :, :]
    local = torch.einsum("...pjc,...jcd->...pjd", rel, frames)
    lens_sq = (offsets[1:] ** 2).sum(dim=-1)
    tt = ((local * offsets[1:]).sum(dim=-1) / lens_sq).clamp(0.0, 1.0)
    dvec = local - tt[..., None] * offsets[1:]
    dist = torch.sqrt((dvec * dvec).sum(dim=-1) + 1e-12)
    feats = torch.cat([local, dist[..., None]], dim=-1)
    return feats.reshape(*feats.shape[:-2], -1), dist


def bone_relative_encode_posed(points, joints, rotations, skel: sk.SkeletonDef) -> torch.Tensor:
    """Features for points (..., P, 3) given an already-posed body
    (joints (..., 24, 3), global rotations (..., 24, 3, 3))."""
    points = torch.as_tensor(points)
    offsets = skel.offsets_tensor(points.dtype).to(points.device)
    return _encode_points(points, torch.as_tensor(joints), torch.as_tensor(rotations),
                          skel, offsets)[0]


def bone_relative_encode(points, theta, skel: sk.SkeletonDef) -> torch.Tensor:
    """Skeleton-conditioned features for query points (..., P, 3) under
    pose theta (..., 69); invariant to rigid transforms applied to body
    and points together."""
    points = torch.as_tensor(points)
    theta = torch.as_tensor(theta, dtype=points.dtype)
    joints, rots = sk.fk_transforms(skel, theta)
    return bone_relative_encode_posed(points, joints, rots, skel)


# ---------------------------------------------------------------------------
# Radiance field network
# ---------------------------------------------------------------------------


class FieldNetwork(nn.Module):
    """MLP mapping skeleton-relative features to (density, color).

    Density is softplus-constrained (>= 0 by construction) and further
    attenuated by a smooth cutoff in the distance to the skeleton, which
    pins empty space to zero and lets renders skip far samples.
    """

    def __init__(self, skel: sk.SkeletonDef, cfg: FieldConfig, channels: int = 1,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        dims = [encoding_dim(skel)] + [cfg.width] * cfg.depth
        layers: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.SiLU()]
        layers.append(nn.Linear(dims[-1], 1 + channels))
        self.net = nn.Sequential(*layers)
        if generator is not None:
            seed_module(self.net, generator)

    def forward(self, feats: torch.Tensor, dist_min: torch.Tensor):
        out = self.net(feats)
        falloff = torch.sigmoid((self.cfg.density_cutoff - dist_min) / self.cfg.cutoff_sharpness)
        sigma = nn.functional.softplus(out[..., 0]) * falloff
        color = torch.sigmoid(out[..., 1:])
        return sigma, color

    @property
    def skip_distance(self) -> float:
        # sigmoid((cutoff - d)/sharp) < 1e-7 beyond this distance
        return self.cfg.density_cutoff + 16.0 * self.cfg.cutoff_sharpness


def seed_module(module: nn.Module, generator: torch.Generator) -> None:
    """Re-initialize all linear/conv weights from an explicit generator so
    model construction never touches global RNG state."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight.shape[1] if isinstance(m, nn.Linear) else int(np.prod(m.weight.shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)


# ---------------------------------------------------------------------------
# Neural renderer
# ---------------------------------------------------------------------------


class NeuralRenderer:
    """Differentiable renderer: pose + orbit view -> image.

    Bundles the field network with the skeleton and camera geometry. The
    forward pass is pure and deterministic; gradients flow to the pose,
    the view, and the field parameters.
    """

    def __init__(self, skel: sk.SkeletonDef, field: FieldNetwork, cfg: RenderConfig,
                 radius: float = DEFAULT_ORBIT_RADIUS):
        if field.channels != cfg.channels:
            raise ValueError("field channel count does not match the render config")
        self.skel = skel
        self.field = field
        self.cfg = cfg
        self.radius = radius

    def parameters(self):
        return self.field.parameters()

    def render(self, theta, k, jitter_generator: torch.Generator | None = None) -> torch.Tensor:
        theta = torch.as_tensor(theta)
        img = self.render_batch(theta[None, :], torch.as_tensor(k, dtype=theta.dtype)[None, :],
                                jitter_generator=jitter_generator)
        return img[0]

    def render_batch(self, thetas, ks, prune: bool = False,
                     jitter_generator: torch.Generator | None = None) -> torch.Tensor:
        """Render poses (B, 69) from views (B, 3) to images (B, H, W, C)."""
        thetas = torch.as_tensor(thetas)
        ks = torch.as_tensor(ks, dtype=thetas.dtype)
        cfg = self.cfg
        bsz = thetas.shape[0]
        hw = cfg.height * cfg.width
        joints, rots = sk.fk_transforms(self.skel, thetas)
        extr = sk.camera_extrinsics(ks, self.radius)
        origins, dirs = sk.camera_rays(extr, cfg.height, cfg.width)

        near, far, hit = self._ray_bounds(origins, dirs)
        colors = thetas.new_full((bsz, hw, cfg.channels), cfg.background)
        if hit.any():
            q = cfg.samples_per_ray
            span = (far - near) / q
            frac = torch.arange(q, dtype=thetas.dtype, device=thetas.device) + 0.5
            if jitter_generator is not None:
                frac = frac + (torch.rand(near.shape + (q,), dtype=thetas.dtype,
                                          generator=jitter_generator) - 0.5)
            ts = near[..., None] + frac * span[..., None]
            pts = origins[:, None, None, :] + ts[..., None] * dirs[..., None, :]

            sigma, color = self._field_on_points(pts, joints, rots, prune)
            deltas = span[..., None].expand_as(sigma)
            ray_color, weights = composite(sigma.clamp(min=0), deltas.clamp(min=1e-12), color)
            ray_color = ray_color + (1.0 - weights.sum(dim=-1, keepdim=True)) * cfg.background
            colors = torch.where(hit[..., None], ray_color, colors)
        return colors.reshape(bsz, cfg.height, cfg.width, cfg.channels)

    def _ray_bounds(self, origins, dirs):
        cfg = self.cfg
        if not cfg.sphere_clip:
            shape = dirs.shape[:-1]
            near = dirs.new_full(shape, cfg.near)
            far = dirs.new_full(shape, cfg.far)
            return near, far, torch.ones(shape, dtype=torch.bool, device=dirs.device)
        do = (dirs * origins[:, None, :]).sum(dim=-1)
        oo = (origins * origins).sum(dim=-1)[:, None]
        disc = do * do - (oo - cfg.bound_radius**2)
        hit = disc > 1e-9
        root = torch.sqrt(disc.clamp(min=1e-12))
        near = (-do - root).clamp(min=1e-3)
        far = torch.maximum(-do + root, near + 1e-6)
        return near, far, hit

    def _field_on_points(self, pts, joints, rots, prune):
        """Evaluate the field on (B, R, Q, 3) points, optionally skipping
        points too far from the skeleton to contribute."""
        cfg = self.cfg
        offsets = self.skel.offsets_tensor(pts.dtype)
        bsz, nray, q, _ = pts.shape
        flat = pts.reshape(bsz, nray * q, 3)
        sigma = pts.new_zeros(bsz, nray * q)
        color = pts.new_zeros(bsz, nray * q, cfg.channels)
        chunk = max(1, cfg.chunk_points // max(q, 1))
        for lo in range(0, nray * q, chunk * q):
            hi = min(nray * q, lo + chunk * q)
            feats, dist = _encode_points(flat[:, lo:hi], joints, rots, self.skel, offsets)
            dmin = dist.min(dim=-1).values
            if prune:
                keep = (dmin < self.field.skip_distance).detach()
                if keep.any():
                    s_k, c_k = self.field(feats[keep], dmin[keep])
                    s_buf = torch.zeros_like(dmin)
                    s_buf[keep] = s_k
                    c_buf = torch.zeros(*dmin.shape, cfg.channels, dtype=pts.dtype)
                    c_buf[keep] = c_k
                    sigma[:, lo:hi] = s_buf
                    color[:, lo:hi] = c_buf
            else:
                s, c = self.field(feats, dmin)
                sigma[:, lo:hi] = s
                color[:, lo:hi] = c
        return sigma.reshape(bsz, nray, q), color.reshape(bsz, nray, q, cfg.channels)


def render(theta, k, field: FieldNetwork, cfg: RenderConfig, skel: sk.SkeletonDef,
           radius: float = DEFAULT_ORBIT_RADIUS) -> torch.Tensor:
    """Render a single pose/view with the given field parameters."""
    return NeuralRenderer(skel, field, cfg, radius).render(theta, k)


# ---------------------------------------------------------------------------
# Analytic oracle renderer
# ---------------------------------------------------------------------------


def _ray_segment_distance(origins, dirs, a, b):
    """Closest distance between rays (R, 3) and one segment [a, b], plus
    the ray parameter at the closest point. Vectorized over rays."""
    u = b - a
    cc = float(u @ u)
    w0 = origins - a
    dd = dirs @ u
    de = (dirs * w0).sum(axis=1)
    ue = w0 @ u
    denom = cc - dd * dd
    s = np.where(np.abs(denom) > 1e-12, (ue - dd * de) / np.where(np.abs(denom) > 1e-12, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = dd * s - de
    neg = t < 0.0
    if np.any(neg):
        t = np.where(neg, 0.0, t)
        s = np.where(neg, np.clip(ue / cc, 0.0, 1.0), s)
    closest_ray = origins + t[:, None] * dirs
    closest_seg = a + s[:, None] * u
    return np.linalg.norm(closest_ray - closest_seg, axis=1), t


def rasterize_capsules(joints: np.ndarray, extrinsic: torch.Tensor, cfg: RenderConfig,
                       skel: sk.SkeletonDef) -> np.ndarray:
    """Rasterize an already-posed capsule body seen by ``extrinsic``."""
    origin, dirs = sk.camera_rays(extrinsic, cfg.height, cfg.width)
    origin = origin.numpy()
    dirs = dirs.numpy()
    nray = dirs.shape[0]
    origins = np.broadcast_to(origin, (nray, 3))

    radii = np.array([_PART_RADIUS[sk.PART_NAMES[skel.part_of[j]]] for j in range(1, skel.joint_count)])
    albedo = np.array([_PART_ALBEDO[sk.PART_NAMES[skel.part_of[j]]] for j in range(1, skel.joint_count)])

    dist = np.empty((nray, skel.joint_count - 1))
    tpar = np.empty_like(dist)
    for j in range(1, skel.joint_count):
        dist[:, j - 1], tpar[:, j - 1] = _ray_segment_distance(
            origins, dirs, joints[skel.parent[j]], joints[j])

    soft = albedo * np.clip(1.0 - (dist - radii) / _EDGE_WIDTH, 0.0, 1.0)
    solid = dist <= radii
    depth = np.where(solid, tpar, np.inf)
    front = np.argmin(depth, axis=1)
    any_solid = solid.any(axis=1)
    img = np.where(any_solid, albedo[front], soft.max(axis=1))
    img = np.maximum(img, cfg.background)
    return np.repeat(img.reshape(cfg.height, cfg.width, 1), cfg.channels, axis=2)


def oracle_render(theta, k, cfg: RenderConfig, skel: sk.SkeletonDef,
                  radius: float = DEFAULT_ORBIT_RADIUS) -> np.ndarray:
    """Deterministic analytic rasterization of the capsule body.

    Each bone is a capsule with a per-part radius and albedo; pixels take
    the albedo of the nearest solidly-hit capsule (correct occlusion) and
    a soft distance-field edge elsewhere. No gradient contract.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    joints = sk.forward_kinematics_np(skel, theta)
    extr = sk.camera_extrinsics(torch.from_numpy(k), radius)
    return rasterize_capsules(joints, extr, cfg, skel)


def oracle_render_batch(thetas, ks, cfg: RenderConfig, skel: sk.SkeletonDef,
                        radius: float = DEFAULT_ORBIT_RADIUS) -> np.ndarray:
    return np.stack([oracle_render(t, v, cfg, skel, radius) for t, v in zip(thetas, ks)])


# ---------------------------------------------------------------------------
# Image quality
# ---------------------------------------------------------------------------

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) in dB, capped at 99 (identical images)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse <= 10 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


# ---------------------------------------------------------------------------
# Field training
# ---------------------------------------------------------------------------


def train_nerf(images: np.ndarray, thetas: np.ndarray, ks: np.ndarray,
               cfg: NerfTrainConfig, render_cfg: RenderConfig, skel: sk.SkeletonDef,
               seed: int, field_cfg: FieldConfig | None = None,
               radius: float = DEFAULT_ORBIT_RADIUS):
    """Fit the radiance field to labeled images by ray-sampled descent.

    The loss is L1 reconstruction plus (when pose refinement is enabled) a
    squared-L2 penalty keeping refined poses near their initial estimates
    and a squared second-difference smoothness term over the frame index.

    Returns (renderer, history, holdout_psnr, refined_thetas). Raises
    RendererTrainingError if the reconstruction loss plateaus for
    ``patience_epochs`` or the held-out PSNR misses ``min_psnr``.
    """
    if len(images) < 2:
        raise ValueError("need at least two views to fit the field")
    images = np.asarray(images, dtype=np.float32)
    thetas = np.asarray(thetas, dtype=np.float64)
    ks = np.asarray(ks, dtype=np.float64)
    if not (len(images) == len(thetas) == len(ks)):
        raise ValueError("images and labels must align")

    gen = torch.Generator().manual_seed(seed)
    field_cfg = field_cfg or FieldConfig()
    fieldnet = FieldNetwork(skel, field_cfg, render_cfg.channels, generator=gen)
    renderer = NeuralRenderer(skel, fieldnet, render_cfg, radius)

    holdout = np.zeros(len(images), dtype=bool)
    holdout[:: max(cfg.holdout_every, 2)] = True
    if holdout.all():
        raise ValueError("holdout_every leaves no training images")
    train_idx = np.where(~holdout)[0]

    tgt = torch.from_numpy(images)
    theta_t = torch.from_numpy(thetas.astype(np.float32))
    theta_init = theta_t.clone()
    if cfg.pose_refinement:
        theta_t = nn.Parameter(theta_t)
        params = list(fieldnet.parameters()) + [theta_t]
    else:
        params = list(fieldnet.parameters())
    ks_t = torch.from_numpy(ks.astype(np.float32))
    extr = sk.camera_extrinsics(ks_t, radius)

    # Foreground pixel lists give balanced ray sampling on mostly-empty frames.
    fg_lists = [np.where(images[i, :, :, 0].reshape(-1) > render_cfg.background + 0.02)[0]
                for i in range(len(images))]

    opt = torch.optim.Adam(params, lr=cfg.lr)
    history: list[tuple[int, float, float]] = []
    best = math.inf
    stale = 0
    hw = render_cfg.height * render_cfg.width
    rays_per_img = max(1, cfg.rays_per_batch // cfg.images_per_batch)

    for epoch in range(cfg.epochs):
        recon_sum = total_sum = 0.0
        for _ in range(cfg.steps_per_epoch):
            img_pick = train_idx[torch.randint(len(train_idx), (cfg.images_per_batch,), generator=gen).numpy()]
            pix_rows = []
            for i in img_pick:
                n_fg = int(rays_per_img * cfg.foreground_fraction)
                fg = fg_lists[i]
                if len(fg) == 0:
                    n_fg = 0
                rand_pix = torch.randint(hw, (rays_per_img - n_fg,), generator=gen)
                if n_fg:
                    fg_pix = torch.from_numpy(fg[torch.randint(len(fg), (n_fg,), generator=gen).numpy()])
                    rand_pix = torch.cat([fg_pix, rand_pix])
                pix_rows.append(rand_pix)
            loss_recon = _ray_batch_l1(renderer, theta_t, extr, tgt, img_pick, pix_rows,
                                       gen if cfg.jitter else None)
            loss = loss_recon
            if cfg.pose_refinement:
                batch_theta = theta_t[torch.from_numpy(np.asarray(img_pick))]
                batch_init = theta_init[torch.from_numpy(np.asarray(img_pick))]
                loss = loss + cfg.lambda_theta * ((batch_theta - batch_init) ** 2).sum(dim=-1).mean()
                if cfg.lambda_t > 0 and len(theta_t) > 2:
                    d2 = theta_t[:-2] - 2 * theta_t[1:-1] + theta_t[2:]
                    loss = loss + cfg.lambda_t * (d2**2).sum(dim=-1).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            recon_sum += float(loss_recon.detach())
            total_sum += float(loss.detach())
        mean_recon = recon_sum / cfg.steps_per_epoch
        history.append((epoch, mean_recon, total_sum / cfg.steps_per_epoch))
        if mean_recon < best - 1e-6:
            best = mean_recon
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience_epochs:
                raise RendererTrainingError(
                    f"reconstruction loss plateaued at {best:.5f} for "
                    f"{cfg.patience_epochs} epochs (epoch {epoch})")

    holdout_idx = np.where(holdout)[0]
    scores = []
    with torch.no_grad():
        for i in holdout_idx:
            pred = renderer.render_batch(theta_t[i: i + 1].detach(), ks_t[i: i + 1], prune=True)
            scores.append(psnr(pred[0].numpy(), images[i]))
    holdout_psnr = float(np.mean(scores))
    if cfg.min_psnr is not None and holdout_psnr < cfg.min_psnr:
        raise RendererTrainingError(
            f"held-out PSNR {holdout_psnr:.2f} dB below floor {cfg.min_psnr:.2f} dB "
            f"(final reconstruction loss {best:.5f}, {len(holdout_idx)} holdout frames)")
    refined = theta_t.detach().numpy().astype(np.float64) if cfg.pose_refinement else None
    return renderer, history, holdout_psnr, refined


def _ray_batch_l1(renderer: NeuralRenderer, theta_t, extr, targets, img_pick, pix_rows,
                  jitter_gen) -> torch.Tensor:
    """L1 reconstruction on a batch of (image, pixel) rays."""
    cfg = renderer.cfg
    skel = renderer.skel
    img_idx = torch.from_numpy(np.asarray(img_pick))
    joints, rots = sk.fk_transforms(skel, theta_t[img_idx])
    origins_full, dirs_full = sk.camera_rays(extr[img_idx], cfg.height, cfg.width)

    pix = torch.stack(pix_rows)  # (B, rays)
    dirs = torch.gather(dirs_full, 1, pix[..., None].expand(-1, -1, 3))
    tgt = targets[img_idx].reshape(len(img_pick), -1, cfg.channels)
    tgt = torch.gather(tgt, 1, pix[..., None].expand(-1, -1, cfg.channels))

    near, far, hit = renderer._ray_bounds(origins_full, dirs)
    q = cfg.samples_per_ray
    span = (far - near) / q
    frac = torch.arange(q, dtype=theta_t.dtype) + 0.5
    if jitter_gen is not None:
        frac = frac + (torch.rand(near.shape + (q,), generator=jitter_gen) - 0.5)
    ts = near[..., None] + frac * span[..., None]
    pts = origins_full[:, None, None, :] + ts[..., None] * dirs[..., None, :]
    sigma, color = renderer._field_on_points(pts, joints, rots, prune=False)
    ray_color, weights = composite(sigma, span[..., None].expand_as(sigma).clamp(min=1e-12), color)
    ray_color = ray_color + (1.0 - weights.sum(dim=-1, keepdim=True)) * cfg.background
    pred = torch.where(hit[..., None], ray_color, torch.full_like(ray_color, cfg.background))
    return (pred - tgt).abs().mean()
