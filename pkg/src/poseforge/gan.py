"""Adversarial pose/viewpoint generation: latent-conditioned generator,
6-part pose discriminator, least-squares adversarial losses, and the
estimator-feedback term that steers generation in- or out-of-distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import priors
from . import skeleton as sk
from .renderer import seed_module

FEEDBACK_MODES = ("ind", "ood")


class GanTrainingError(RuntimeError):
    """Raised when adversarial training hits a non-finite loss; carries a
    diagnostic snapshot of the failing step."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class FeedbackConfig:
    mode: str = "ood"
    c: float = 0.5

    def __post_init__(self):
        if self.mode not in FEEDBACK_MODES:
            raise ValueError(f"feedback mode must be one of {FEEDBACK_MODES}")
        if not self.c > 0:
            raise ValueError("error cap c must be positive")


@dataclass
class GanConfig:
    w1: float = 1.0
    w2: float = 0.1
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    batch_size: int = 64
    feedback_batch: int = 6
    steps: int = 200
    k_max: float = math.pi
    latent_dim: int = 32
    prior_kind: str = "normal"
    gen_hidden: tuple[int, ...] = (256, 256, 256, 256)
    disc_hidden: tuple[int, ...] = (128, 128)
    feedback: FeedbackConfig = dc_field(default_factory=FeedbackConfig)
    interleave_estimator_every: int = 0
    interleave_estimator_lr: float = 1e-4

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or (self.w1 == 0 and self.w2 == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


def _mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for a, b in zip(dims[:-1], dims[1:-1]):
        layers += [nn.Linear(a, b), nn.Tanh()]
    layers.append(nn.Linear(dims[-2], dims[-1]))
    return nn.Sequential(*layers)


class PoseGenerator(nn.Module):
    """Latent vector -> (body pose, camera view), tanh-squashed so every
    pose component lies in (-pi, pi) and every view component in
    (-k_max, k_max)."""

    def __init__(self, cfg: GanConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.latent_dim = cfg.latent_dim
        self.k_max = cfg.k_max
        self.net = _mlp([cfg.latent_dim, *cfg.gen_hidden, sk.POSE_DIM + 3])
        if generator is not None:
            seed_module(self, generator)

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dimension mismatch: expected {self.latent_dim}, "
                             f"got {z.shape[-1]}")
        raw = self.net(z)
        theta = math.pi * torch.tanh(raw[..., : sk.POSE_DIM])
        k = self.k_max * torch.tanh(raw[..., sk.POSE_DIM:])
        return theta, k


class PartDiscriminator(nn.Module):
    """Seven sub-networks (six body parts + whole body) scoring an
    axis-angle pose; the final score is their mean."""

    def __init__(self, skel: sk.SkeletonDef, cfg: GanConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self._comp_idx = [torch.from_numpy(skel.part_components(p)) for p in sk.PART_NAMES]
        heads = [_mlp([len(idx), *cfg.disc_hidden, 1]) for idx in self._comp_idx]
        heads.append(_mlp([sk.POSE_DIM, *cfg.disc_hidden, 1]))
        self.heads = nn.ModuleList(heads)
        if generator is not None:
            seed_module(self, generator)

    def forward(self, theta: torch.Tensor) -> torch.Tensor:
        scores = [head(theta[..., idx]) for head, idx in zip(self.heads, self._comp_idx)]
        scores.append(self.heads[-1](theta))
        return torch.cat(scores, dim=-1).mean(dim=-1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def adv_loss_g(scores_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss: mean (D(G(z)) - 1)^2."""
    scores_fake = torch.as_tensor(scores_fake)
    if scores_fake.numel() == 0:
        raise ValueError("empty score batch")
    return ((scores_fake - 1.0) ** 2).mean()


def disc_loss(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss: mean (D(real) - 1)^2 + mean D(fake)^2."""
    scores_real = torch.as_tensor(scores_real)
    scores_fake = torch.as_tensor(scores_fake)
    if scores_real.numel() == 0 or scores_fake.numel() == 0:
        raise ValueError("empty score batch")
    return ((scores_real - 1.0) ** 2).mean() + (scores_fake**2).mean()


def mean_joint_error(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean over samples and joints of per-joint Euclidean error (meters)."""
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"joint batches must match: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    diff = x - x_hat
    return torch.sqrt((diff * diff).sum(dim=-1).clamp(min=1e-24)).mean()


def feedback_loss(x: torch.Tensor, x_hat: torch.Tensor, cfg: FeedbackConfig) -> torch.Tensor:
    """Estimator-feedback term: the mean joint error E in ``ind`` mode
    (minimizing it seeks in-distribution data) or c - E in ``ood`` mode
    (minimizing it drives the error up toward the cap)."""
    err = mean_joint_error(x, x_hat)
    return err if cfg.mode == "ind" else cfg.c - err


def generator_loss(adv, fb, cfg: GanConfig) -> torch.Tensor:
    """Weighted generator objective: w1 * adversarial + w2 * feedback."""
    return cfg.w1 * torch.as_tensor(adv) + cfg.w2 * torch.as_tensor(fb)


# ---------------------------------------------------------------------------
# Real-pose corpus (desk-scale stand-in for a motion-capture archive)
# ---------------------------------------------------------------------------


def load_joint_limits(path: str | Path | None = None) -> np.ndarray:
    """Per-joint axis-angle limits, shape (23, 3, 2) as [lo, hi]."""
    if path is None:
        with resources.files("poseforge.data").joinpath("joint_limits.txt").open() as fh:
            lines = fh.readlines()
    else:
        lines = Path(path).read_text().splitlines()
    out = np.zeros((sk.NUM_JOINTS - 1, 3, 2))
    seen = set()
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 7:
            raise ValueError(f"malformed limits line: {line!r}")
        j = int(tok[0])
        vals = [float(t) for t in tok[1:]]
        out[j - 1] = np.array(vals).reshape(3, 2)
        seen.add(j)
    if seen != set(range(1, sk.NUM_JOINTS)):
        raise ValueError("limits file must cover joints 1..23")
    if np.any(out[..., 0] > out[..., 1]):
        raise ValueError("limit lows must not exceed highs")
    return out


class RealPoseCorpus:
    """Fixed-seed pool of plausible poses sampled within joint limits.

    ``restriction`` shrinks every limit interval toward its midpoint,
    which carves out the narrower sub-distribution used to pre-train the
    estimator while the discriminator keeps the full range as "real".
    """

    def __init__(self, size: int, seed: int, restriction: float = 1.0,
                 limits: np.ndarray | None = None):
        if not 0.0 < restriction <= 1.0:
            raise ValueError("restriction must be in (0, 1]")
        if size < 1:
            raise ValueError("corpus size must be >= 1")
        self.limits = load_joint_limits() if limits is None else np.asarray(limits, dtype=np.float64)
        mid = self.limits.mean(axis=-1)
        half = restriction * (self.limits[..., 1] - self.limits[..., 0]) / 2.0
        self.effective_limits = np.stack([mid - half, mid + half], axis=-1)
        rng = np.random.Generator(np.random.PCG64(seed))
        u = rng.uniform(size=(size, sk.NUM_JOINTS - 1, 3))
        lo = self.effective_limits[..., 0]
        hi = self.effective_limits[..., 1]
        self.poses = (lo + u * (hi - lo)).reshape(size, sk.POSE_DIM)
        self.restriction = restriction

    def __len__(self) -> int:
        return len(self.poses)

    def validate(self) -> bool:
        p = self.poses.reshape(-1, sk.NUM_JOINTS - 1, 3)
        return bool(np.all(p >= self.effective_limits[..., 0] - 1e-12)
                    and np.all(p <= self.effective_limits[..., 1] + 1e-12))

    def sample(self, n: int, generator: torch.Generator) -> torch.Tensor:
        idx = torch.randint(len(self.poses), (n,), generator=generator)
        return torch.from_numpy(self.poses[idx.numpy()]).to(torch.float32)


# ---------------------------------------------------------------------------
# Min-max training
# ---------------------------------------------------------------------------


def train_gan(gen: PoseGenerator, disc: PartDiscriminator, estimator, renderer,
              corpus: RealPoseCorpus, cfg: GanConfig, seed: int, skel: sk.SkeletonDef,
              fixed_view_sampler=None):
    """Alternating discriminator/generator updates (one each per step).

    The estimator and renderer stay frozen; the feedback gradient flows
    through rendering and estimation into the generator. When
    ``fixed_view_sampler`` is given (callable n -> (n, 3) views) generated
    views are replaced by its samples, which pins the view distribution
    while poses keep training.

    Returns (gen, disc, history) where history rows are
    (step, loss_g, loss_d, mean_err); mean_err is NaN on steps without a
    rendered feedback batch.
    """
    torch_gen = torch.Generator().manual_seed(seed)
    if estimator is not None:
        for p in estimator.parameters():
            p.requires_grad_(False)
    if renderer is not None:
        for p in renderer.parameters():
            p.requires_grad_(False)

    use_feedback = cfg.w2 > 0
    if use_feedback and (estimator is None or renderer is None):
        raise ValueError("feedback training requires an estimator and a renderer")

    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr_g)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_d)
    opt_p = None
    if cfg.interleave_estimator_every > 0:
        if not use_feedback:
            raise ValueError("interleaved estimator updates need feedback batches")
        for p in estimator.parameters():
            p.requires_grad_(True)
        opt_p = torch.optim.Adam(estimator.parameters(), lr=cfg.interleave_estimator_lr)

    latent_seed = int(torch.randint(2**31 - 1, (1,), generator=torch_gen))
    history: list[tuple[int, float, float, float]] = []

    for step in range(cfg.steps):
        # Discriminator: real poses from the corpus vs detached fakes.
        z = _latents(cfg, latent_seed, 2 * step, cfg.batch_size)
        with torch.no_grad():
            fake_theta, _ = gen(z)
        real_theta = corpus.sample(cfg.batch_size, torch_gen)
        l_d = disc_loss(disc(real_theta), disc(fake_theta))
        opt_d.zero_grad()
        l_d.backward()
        opt_d.step()

        # Generator: adversarial term on a full batch, feedback on the
        # small rendered sub-batch (rendering dominates the step cost).
        z = _latents(cfg, latent_seed, 2 * step + 1, cfg.batch_size)
        theta, k = gen(z)
        adv = adv_loss_g(disc(theta))
        mean_err = float("nan")
        if use_feedback:
            nfb = min(cfg.feedback_batch, cfg.batch_size)
            theta_fb = theta[:nfb]
            if fixed_view_sampler is not None:
                k_fb = torch.as_tensor(fixed_view_sampler(nfb), dtype=theta.dtype)
            else:
                k_fb = k[:nfb]
            images = renderer.render_batch(theta_fb, k_fb)
            theta_hat = estimator(images)
            x = sk.forward_kinematics(skel, theta_fb)
            x_hat = sk.forward_kinematics(skel, theta_hat)
            fb = feedback_loss(x, x_hat, cfg.feedback)
            mean_err = float(mean_joint_error(x, x_hat).detach())
        else:
            fb = torch.zeros((), dtype=theta.dtype)
        l_g = generator_loss(adv, fb, cfg)
        if not (torch.isfinite(l_g) and torch.isfinite(l_d)):
            snapshot = {
                "step": step,
                "loss_g": float(l_g.detach()),
                "loss_d": float(l_d.detach()),
                "adv": float(adv.detach()),
                "fb": float(fb.detach()),
                "gen_param_norm": float(sum(p.norm() ** 2 for p in gen.parameters()) ** 0.5),
            }
            raise GanTrainingError(f"non-finite loss at step {step}: {snapshot}", snapshot)
        opt_g.zero_grad()
        l_g.backward()
        opt_g.step()

        if opt_p is not None and (step + 1) % cfg.interleave_estimator_every == 0:
            pred = estimator(images.detach())
            w = torch.sqrt(((theta_fb.detach() - pred) ** 2).sum(dim=-1).clamp(min=1e-24))
            loss_p = w.mean()
            opt_p.zero_grad()
            loss_p.backward()
            opt_p.step()

        history.append((step, float(l_g.detach()), float(l_d.detach()), mean_err))
    return gen, disc, history


def _latents(cfg: GanConfig, base_seed: int, stream: int, n: int) -> torch.Tensor:
    z = priors.sample_latent(cfg.prior_kind, cfg.latent_dim, n,
                             (base_seed + 0x9E3779B1 * stream) % (2**63))
    return torch.from_numpy(z).to(torch.float32)
