"""Latent-space samplers for the pose generator: normal, uniform on
[-1, 1]^d, and spherical (normalized normal) prior families."""

from __future__ import annotations

import numpy as np

PRIOR_KINDS = ("normal", "uniform", "spherical")


def spherical_projection(z: np.ndarray) -> np.ndarray:
    """Project rows of z onto the unit sphere: z / ||z||_2."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot project a zero vector onto the sphere")
    return z / norms


def sample_latent(kind: str, d: int, n: int, seed: int) -> np.ndarray:
    """Draw n latent vectors of dimension d, deterministically from seed.

    ``normal``: i.i.d. standard normal components. ``uniform``: i.i.d. on
    [-1, 1]. ``spherical``: a normal draw divided by its L2 norm (zero-norm
    draws are resampled, which keeps the stream deterministic).
    """
    if kind not in PRIOR_KINDS:
        raise ValueError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind == "normal":
        return rng.standard_normal((n, d))
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, d))
    z = rng.standard_normal((n, d))
    bad = np.linalg.norm(z, axis=1) == 0.0
    while np.any(bad):
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        bad = np.linalg.norm(z, axis=1) == 0.0
    return spherical_projection(z)
