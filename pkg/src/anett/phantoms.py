"""Synthetic ellipse phantoms, measurement noise and the adversarial disc."""
from __future__ import annotations

import numpy as np

from .grid import meshgrid

SUPPORT_RADIUS = 0.95
DEFAULT_COUNTS = (400, 50, 50)
SPLITS = ("train", "val", "test")


def _ellipse_mask(x, y, cx, cy, a, b, rot):
    c, s = np.cos(rot), np.sin(rot)
    xr = (x - cx) * c + (y - cy) * s
    yr = -(x - cx) * s + (y - cy) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def random_phantom(rng: np.random.Generator, n: int = 128, k: tuple[int, int] = (3, 12)) -> np.ndarray:
    """Random piecewise-constant ellipse image with values in ``[0, 1]``.

    A background ellipse (semi-axes at most 0.9, so inside the radius-0.95
    support) carries ``k`` random ellipses with intensities in
    ``[-0.4, 0.6]``; negatives are clipped and the result divided by its
    maximum.
    """
    if n < 8:
        raise ValueError("phantom side must be >= 8")
    x, y = meshgrid(n)
    a0 = rng.uniform(0.7, 0.9)
    b0 = rng.uniform(0.6, 0.9)
    body = _ellipse_mask(x, y, 0.0, 0.0, a0, b0, rng.uniform(0, np.pi))
    img = np.where(body, rng.uniform(0.2, 0.5), 0.0)
    for _ in range(int(rng.integers(k[0], k[1] + 1))):
        r = 0.8 * np.sqrt(rng.uniform())
        t = rng.uniform(0, 2 * np.pi)
        a, b = rng.uniform(0.05, 0.6, size=2)
        m = _ellipse_mask(x, y, r * np.cos(t), r * np.sin(t), a, b, rng.uniform(0, np.pi))
        img = img + np.where(m, rng.uniform(-0.4, 0.6), 0.0)
    img = np.clip(img, 0.0, None) * body
    img[x**2 + y**2 >= SUPPORT_RADIUS**2] = 0.0
    peak = img.max()
    return img / peak if peak > 0 else img


def add_noise(y: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """``y + level * mean(y) * delta`` with i.i.d. standard normal ``delta``."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    y = np.asarray(y, dtype=float)
    if level == 0:
        return y.copy()
    return y + level * y.mean() * rng.standard_normal(y.shape)


def disc_mask(n: int, center, radius: float) -> np.ndarray:
    x, y = meshgrid(n)
    return (x - center[0]) ** 2 + (y - center[1]) ** 2 < radius**2


def add_disc(u: np.ndarray, center=(0.3, 0.3), radius: float = 0.08, intensity: float = 1.0) -> np.ndarray:
    """Overwrite the pixels whose centers fall inside the disc."""
    u = np.asarray(u, dtype=float)
    cx, cy = center
    if radius <= 0 or min(cx - radius, cy - radius) < -1.0 or max(cx + radius, cy + radius) > 1.0:
        raise ValueError(f"disc at {center} radius {radius} leaves the image square")
    out = u.copy()
    out[disc_mask(u.shape[0], center, radius)] = intensity
    return out


def flattest_center(u: np.ndarray, radius: float = 0.08, max_center_radius: float = 0.6) -> tuple[float, float]:
    """Disc center inside the body where the image varies least.

    Scans candidate centers on a coarse grid and picks the one whose
    surrounding ``2 * radius`` neighbourhood has the smallest variance.
    """
    n = u.shape[0]
    cands = np.linspace(-max_center_radius, max_center_radius, 13)
    best, best_var = (0.0, 0.0), np.inf
    for cy in cands:
        for cx in cands:
            if cx**2 + cy**2 > max_center_radius**2:
                continue
            m = disc_mask(n, (cx, cy), 2 * radius)
            vals = u[m]
            if vals.min() <= 0:
                continue
            v = vals.var()
            if v < best_var - 1e-15:
                best, best_var = (float(cx), float(cy)), v
    return best


def split_seeds(master_seed: int) -> dict[str, np.random.SeedSequence]:
    """One independent seed stream per split."""
    children = np.random.SeedSequence(master_seed).spawn(len(SPLITS))
    return dict(zip(SPLITS, children))


def phantom_seed(stream: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(stream.entropy, spawn_key=stream.spawn_key + (index,))


def seed_label(ss: np.random.SeedSequence) -> str:
    return f"{ss.entropy}:{'.'.join(str(k) for k in ss.spawn_key)}"


def make_dataset(master_seed: int, counts=DEFAULT_COUNTS, n: int = 128):
    """Train, validation and test phantom stacks of shape ``(count, n, n)``."""
    if len(counts) != 3 or min(counts) < 1:
        raise ValueError("need three positive counts")
    streams = split_seeds(master_seed)
    out = []
    for split, count in zip(SPLITS, counts):
        imgs = [random_phantom(np.random.default_rng(phantom_seed(streams[split], i)), n) for i in range(count)]
        out.append(np.stack(imgs))
    return tuple(out)
