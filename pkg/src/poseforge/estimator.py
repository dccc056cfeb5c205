"""Convolutional pose regressor: image -> 69 axis-angle values, with the
threshold-clipped training loss that drops high-error samples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .renderer import seed_module
from .skeleton import POSE_DIM


class EstimatorTrainingError(RuntimeError):
    """Raised when estimator training produces a non-finite loss."""


@dataclass
class EstimatorConfig:
    height: int = 32
    width: int = 32
    channels: int = 1
    conv_channels: tuple[int, ...] = (24, 48, 96, 128)
    fc_dim: int = 256


@dataclass
class EstimatorLossConfig:
    """Pose-space L2 cutoff; samples at or above it are excluded."""

    d_threshold: float = 2.0

    def __post_init__(self):
        if not self.d_threshold > 0:
            raise ValueError("d_threshold must be positive")


@dataclass
class EstimatorTrainSettings:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 40
    loss: EstimatorLossConfig = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.loss is None:
            self.loss = EstimatorLossConfig()


class PoseEstimator(nn.Module):
    """Strided conv stack plus a small head, output squashed to (-pi, pi).

    All activations are smooth so finite-difference gradient checks hold.
    """

    def __init__(self, cfg: EstimatorConfig | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg or EstimatorConfig()
        c = self.cfg
        blocks: list[nn.Module] = []
        ch_in = c.channels
        for ch in c.conv_channels:
            blocks += [nn.Conv2d(ch_in, ch, 3, stride=2, padding=1),
                       nn.GroupNorm(math.gcd(4, ch), ch), nn.SiLU()]
            ch_in = ch
        self.conv = nn.Sequential(*blocks)
        down = 2 ** len(c.conv_channels)
        flat = ch_in * max(1, c.height // down) * max(1, c.width // down)
        self.head = nn.Sequential(nn.Linear(flat, c.fc_dim), nn.SiLU(),
                                  nn.Linear(c.fc_dim, POSE_DIM))
        if generator is not None:
            seed_module(self, generator)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """images (B, H, W, C) -> poses (B, 69)."""
        c = self.cfg
        if images.ndim != 4 or images.shape[1:] != (c.height, c.width, c.channels):
            raise ValueError(
                f"expected images of shape (B, {c.height}, {c.width}, {c.channels}), "
                f"got {tuple(images.shape)}")
        x = images.permute(0, 3, 1, 2)
        feats = self.conv(x).flatten(1)
        return math.pi * torch.tanh(self.head(feats))


def estimate(model: PoseEstimator, image) -> torch.Tensor:
    """Single-image forward pass; image (H, W, C) -> pose (69,)."""
    image = torch.as_tensor(image, dtype=next(model.parameters()).dtype)
    if image.ndim != 3:
        raise ValueError("estimate expects one (H, W, C) image")
    return model(image[None])[0]


def pose_errors(theta: torch.Tensor, theta_hat: torch.Tensor) -> torch.Tensor:
    """Per-sample pose-space L2 distances w = ||theta - theta_hat||_2."""
    theta = torch.as_tensor(theta)
    theta_hat = torch.as_tensor(theta_hat)
    if theta.shape != theta_hat.shape:
        raise ValueError("pose batches must have matching shapes")
    diff = theta - theta_hat
    # Clamp keeps the zero-error gradient finite (and exactly zero) without
    # perturbing any representable nonzero distance.
    return torch.sqrt((diff * diff).sum(dim=-1).clamp(min=1e-24))


def clipped_loss(theta, theta_hat, cfg: EstimatorLossConfig) -> torch.Tensor:
    """Mean over samples of f(w), f(w) = w if w < d else 0 (strict).

    Samples at or above the threshold contribute exactly zero loss and
    exactly zero gradient.
    """
    theta = torch.as_tensor(theta)
    theta_hat = torch.as_tensor(theta_hat)
    single = theta.ndim == 1
    if single:
        theta, theta_hat = theta[None], theta_hat[None]
    w = pose_errors(theta, theta_hat)
    mask = (w < cfg.d_threshold).to(w.dtype).detach()
    return (w * mask).mean()


def train_estimator(model: PoseEstimator, images: np.ndarray, thetas: np.ndarray,
                    settings: EstimatorTrainSettings, seed: int):
    """Mini-batch descent on the clipped loss.

    Returns (model, history) with one (epoch, mean_err, excluded_frac) row
    per epoch; aborts with EstimatorTrainingError on non-finite loss.
    """
    if len(images) == 0:
        raise ValueError("training set is empty")
    images_t = torch.as_tensor(np.asarray(images, dtype=np.float32))
    thetas_t = torch.as_tensor(np.asarray(thetas, dtype=np.float32))
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    history: list[tuple[int, float, float]] = []
    n = len(images_t)
    for epoch in range(settings.epochs):
        order = torch.randperm(n, generator=gen)
        err_sum = 0.0
        excluded = 0
        for lo in range(0, n, settings.batch_size):
            idx = order[lo: lo + settings.batch_size]
            pred = model(images_t[idx])
            w = pose_errors(thetas_t[idx], pred)
            mask = (w < settings.loss.d_threshold).to(w.dtype).detach()
            loss = (w * mask).mean()
            if not torch.isfinite(loss):
                raise EstimatorTrainingError(
                    f"non-finite loss at epoch {epoch}, batch {lo // settings.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            err_sum += float(w.detach().sum())
            excluded += int((mask == 0).sum())
        history.append((epoch, err_sum / n, excluded / n))
    return model, history
