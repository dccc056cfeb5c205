"""Pose-estimation evaluation: MPJPE, Procrustes-aligned MPJPE, PCK, and
viewpoint-distribution diagnostics. Joint positions are meters in, reports
are millimeters out."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

MM_PER_M = 1000.0


@dataclass
class MetricsReport:
    mpjpe: float
    pa_mpjpe: float
    pck: float
    n_samples: int
    threshold_mm: float = 150.0

    def __post_init__(self):
        if self.mpjpe < 0 or self.pa_mpjpe < 0:
            raise ValueError("position errors must be non-negative")
        if not 0.0 <= self.pck <= 100.0:
            raise ValueError("pck must be a percentage")

    def to_kv(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_kv(cls, text: str) -> "MetricsReport":
        vals = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, raw = line.split("=", 1)
            vals[key.strip()] = eval(raw.strip(), {"__builtins__": {}})  # literals only
        return cls(**vals)

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


def _check_batches(x: np.ndarray, x_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 3 or x.shape[-1] != 3:
        raise ValueError(f"expected matching (N, J, 3) batches, got {x.shape} vs {x_hat.shape}")
    return x, x_hat


def mpjpe(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean per-joint Euclidean error over samples and joints, in mm."""
    x, x_hat = _check_batches(x, x_hat)
    return float(np.linalg.norm(x - x_hat, axis=-1).mean() * MM_PER_M)


def procrustes_align(x: np.ndarray, x_hat: np.ndarray):
    """Optimal similarity transform of x_hat onto x (least squares).

    Returns (scale, rotation, translation, aligned) minimizing
    sum ||s R x_hat + t - x||^2, with det(R) = +1 so predictions are
    never mirrored. Rejects configurations of rank < 2 (collinear).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape or x.ndim != 2 or x.shape[1] != 3 or x.shape[0] < 3:
        raise ValueError("need matching (J, 3) sets with J >= 3")
    mu_x = x.mean(axis=0)
    mu_y = x_hat.mean(axis=0)
    xc = x - mu_x
    yc = x_hat - mu_y
    var_y = (yc**2).sum() / len(x_hat)
    if var_y == 0.0:
        raise ValueError("degenerate prediction: all points coincide")
    cov = xc.T @ yc / len(x)
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= 1e-12 * max(d[0], 1e-300):
        raise ValueError("degenerate configuration: rank < 2")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_y)
    trans = mu_x - scale * rot @ mu_y
    aligned = scale * x_hat @ rot.T + trans
    return scale, rot, trans, aligned


def pa_mpjpe(x: np.ndarray, x_hat: np.ndarray) -> float:
    """MPJPE after per-sample Procrustes alignment of the prediction, mm."""
    x, x_hat = _check_batches(x, x_hat)
    aligned = np.stack([procrustes_align(xi, yi)[3] for xi, yi in zip(x, x_hat)])
    return mpjpe(x, aligned)


def pck(x: np.ndarray, x_hat: np.ndarray, threshold_mm: float = 150.0) -> float:
    """Percentage of joints with Euclidean error below threshold_mm."""
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    x, x_hat = _check_batches(x, x_hat)
    err_mm = np.linalg.norm(x - x_hat, axis=-1) * MM_PER_M
    return float((err_mm < threshold_mm).mean() * 100.0)


def relative_improvement(baseline: float, improved: float) -> float:
    """Percent error reduction relative to the baseline."""
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    return 100.0 * (baseline - improved) / baseline


def compute_report(x: np.ndarray, x_hat: np.ndarray, threshold_mm: float = 150.0) -> MetricsReport:
    x, x_hat = _check_batches(x, x_hat)
    return MetricsReport(
        mpjpe=mpjpe(x, x_hat),
        pa_mpjpe=pa_mpjpe(x, x_hat),
        pck=pck(x, x_hat, threshold_mm),
        n_samples=len(x),
        threshold_mm=threshold_mm,
    )


def viewpoint_histogram(
    views: np.ndarray,
    bins: int = 18,
    ood_window_deg: tuple[float, float] = (30.0, 60.0),
    symmetric: bool = True,
) -> dict:
    """Normalized elevation/azimuth histograms of orbit camera views plus
    the probability mass inside the out-of-distribution elevation window.

    With ``symmetric`` the window applies to |elevation| (both
    hemispheres); otherwise to the signed elevation.
    """
    from . import skeleton as sk

    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[1] != 3 or len(views) == 0:
        raise ValueError("need a non-empty (N, 3) batch of views")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    elev, az = sk.view_angles(views)
    elev_hist, elev_edges = np.histogram(elev, bins=bins, range=(-np.pi / 2, np.pi / 2))
    az_hist, az_edges = np.histogram(az, bins=bins, range=(-np.pi, np.pi))
    lo, hi = np.deg2rad(ood_window_deg[0]), np.deg2rad(ood_window_deg[1])
    e = np.abs(elev) if symmetric else elev
    return {
        "elevation": elev_hist / len(views),
        "elevation_edges": elev_edges,
        "azimuth": az_hist / len(views),
        "azimuth_edges": az_edges,
        "ood_mass": float(((e >= lo) & (e <= hi)).mean()),
    }
