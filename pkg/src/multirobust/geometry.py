"""Norms, steepest-ascent directions, projections and image transforms.

Single-vector functions treat every entry of their argument as one vector.
The ``*_batch`` variants treat axis 0 as the batch and flatten the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class Lp:
    p: float
    eps: float

    def __post_init__(self):
        if self.p not in (1, 2, INF):
            raise ValueError(f"p must be 1, 2 or inf, got {self.p}")
        # eps == 0 only arises from scaling; user budgets are positive
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")


@dataclass(frozen=True)
class RotateTranslate:
    max_dx_px: int
    max_dy_px: int
    max_angle_deg: float
    grid_angles: int = 31

    def __post_init__(self):
        if self.max_dx_px < 0 or self.max_dy_px < 0 or self.max_angle_deg < 0:
            raise ValueError("rotation-translation extents must be non-negative")
        if self.grid_angles < 1:
            raise ValueError("grid_angles must be >= 1")

    def grid(self) -> list[tuple[int, int, float]]:
        """All (dx, dy, angle) triples of the exhaustive search."""
        if self.grid_angles == 1 or self.max_angle_deg == 0:
            angles = [0.0]
        else:
            angles = [float(a) for a in np.linspace(-self.max_angle_deg, self.max_angle_deg,
                                                    self.grid_angles)]
        return [(dx, dy, a)
                for dx in range(-self.max_dx_px, self.max_dx_px + 1)
                for dy in range(-self.max_dy_px, self.max_dy_px + 1)
                for a in angles]


@dataclass(frozen=True)
class PermutationRT:
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")


PerturbationBudget = Lp | RotateTranslate | PermutationRT


def _round_half_away(v: float) -> int:
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def scale(budget, beta: float):
    """The budget shrunk by ``beta`` in [0, 1]."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if isinstance(budget, Lp):
        return replace(budget, eps=beta * budget.eps)
    if isinstance(budget, RotateTranslate):
        return replace(budget,
                       max_dx_px=int(math.floor(beta * budget.max_dx_px + 1e-12)),
                       max_dy_px=int(math.floor(beta * budget.max_dy_px + 1e-12)),
                       max_angle_deg=beta * budget.max_angle_deg)
    if isinstance(budget, PermutationRT):
        return PermutationRT(max(1, _round_half_away(beta * budget.N)))
    raise TypeError(f"not a perturbation budget: {budget!r}")


# norms and directions --------------------------------------------------

def lp_norm(r, p) -> float:
    return float(lp_norm_batch(np.asarray(r, dtype=np.float64).reshape(1, -1), p)[0])


def lp_norm_batch(r, p) -> np.ndarray:
    flat = np.abs(np.asarray(r, dtype=np.float64).reshape(len(r), -1))
    if p == 1:
        return flat.sum(axis=1)
    if p == 2:
        return np.sqrt((flat * flat).sum(axis=1))
    if p == INF:
        return flat.max(axis=1) if flat.shape[1] else np.zeros(len(flat))
    raise ValueError(f"unsupported p={p}")


def dual_exponent(p):
    return {1: INF, 2: 2, INF: 1}[p]


def steepest_direction(g, p) -> np.ndarray:
    """argmax of v.g over the unit l_p ball; zero when g is zero."""
    g = np.asarray(g, dtype=np.float64)
    return steepest_direction_batch(g.reshape(1, -1), p).reshape(g.shape)


def steepest_direction_batch(g, p) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    flat = g.reshape(len(g), -1)
    if p == INF:
        out = np.sign(flat)
    elif p == 2:
        norms = np.sqrt((flat * flat).sum(axis=1, keepdims=True))
        out = np.divide(flat, norms, out=np.zeros_like(flat), where=norms > 0)
    elif p == 1:
        out = np.zeros_like(flat)
        # np.argmax returns the lowest index among ties
        idx = np.argmax(np.abs(flat), axis=1)
        rows = np.arange(len(flat))
        out[rows, idx] = np.sign(flat[rows, idx])
    else:
        raise ValueError(f"unsupported p={p}")
    return out.reshape(g.shape)


# projections -----------------------------------------------------------

def project_l1(r, eps: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of radius ``eps``."""
    r = np.asarray(r, dtype=np.float64)
    return project_l1_batch(r.reshape(1, -1), eps).reshape(r.shape)


def project_l1_batch(r, eps) -> np.ndarray:
    """Row-wise l1-ball projection by sorting (Duchi et al. 2008).

    ``eps`` may be a scalar or one radius per row.
    """
    r = np.asarray(r, dtype=np.float64)
    flat = r.reshape(len(r), -1)
    n, d = flat.shape
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (n,))
    out = flat.copy()
    a = np.abs(flat)
    outside = a.sum(axis=1) > eps
    if outside.any() and d:
        rows = np.nonzero(outside)[0]
        u = -np.sort(-a[rows], axis=1)
        css = np.cumsum(u, axis=1)
        ks = np.arange(1, d + 1)
        e = eps[rows][:, None]
        cond = u * ks > css - e
        # last index where the condition holds; index 0 always qualifies
        rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = (css[np.arange(len(rows)), rho] - eps[rows]) / (rho + 1)
        shrunk = np.maximum(a[rows] - theta[:, None], 0.0)
        out[rows] = np.sign(flat[rows]) * shrunk
    return out.reshape(r.shape)


def project_lp(r, budget: Lp) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return project_lp_batch(r.reshape(1, -1), budget.p, budget.eps).reshape(r.shape)


def project_lp_batch(r, p, eps) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if p == INF:
        return np.clip(r, -eps, eps)
    if p == 1:
        return project_l1_batch(r, eps)
    if p == 2:
        flat = r.reshape(len(r), -1)
        norms = np.sqrt((flat * flat).sum(axis=1))
        factor = np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)
        return (flat * factor[:, None]).reshape(r.shape)
    raise ValueError(f"unsupported p={p}")


def clip_to_box(x_adv, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    return np.clip(np.asarray(x_adv, dtype=np.float64), lo, hi)


# rotation-translation --------------------------------------------------

def _rotation(angle_deg: float) -> tuple[float, float]:
    q, rem = divmod(angle_deg, 90.0)
    if rem == 0.0:
        # exact values at right angles so that such rotations permute pixels
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    t = math.radians(angle_deg)
    return math.cos(t), math.sin(t)


def apply_rotation_translation(img, dx: float, dy: float, angle_deg: float,
                               interpolation: str = "bilinear") -> np.ndarray:
    """Rotate ``img`` about its center by ``angle_deg`` then shift by (dx, dy).

    ``img`` is ``(H, W, C)`` or a batch ``(n, H, W, C)``; the same transform is
    applied to every image. Positive ``dx`` moves content right (+column),
    positive ``dy`` moves content down (+row), and positive angles rotate
    counter-clockwise as displayed. Pixels sampled from outside the image are
    black (0).
    """
    img = np.asarray(img, dtype=np.float64)
    single = img.ndim == 3
    batch = img[None] if single else img
    n, h, w, c = batch.shape
    cos_t, sin_t = _rotation(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
    # inverse map: output pixel -> source location
    u = cols - dx - cx
    v = rows - dy - cy
    # displayed CCW rotation by t: (u, v_up) rotates, with v_up = -v
    src_x = cos_t * u - sin_t * v + cx
    src_y = sin_t * u + cos_t * v + cy
    src_x = np.round(src_x, 9)
    src_y = np.round(src_y, 9)
    if interpolation == "nearest":
        xi = np.floor(src_x + 0.5).astype(np.int64)
        yi = np.floor(src_y + 0.5).astype(np.int64)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.zeros_like(batch)
        out[:, valid] = batch[:, yi[valid], xi[valid]]
    elif interpolation == "bilinear":
        x0 = np.floor(src_x).astype(np.int64)
        y0 = np.floor(src_y).astype(np.int64)
        fx = (src_x - x0)[..., None]
        fy = (src_y - y0)[..., None]
        out = np.zeros_like(batch)
        for oy, ox, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                            (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            yy, xx = y0 + oy, x0 + ox
            valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h) & (wgt[..., 0] != 0)
            out[:, valid] += wgt[valid] * batch[:, yy[valid], xx[valid]]
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return out[0] if single else out
