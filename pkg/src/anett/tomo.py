"""Parallel-beam Radon transform with Joseph interpolation, its transpose, and FBP."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import pixel_centers


@dataclass(frozen=True)
class Geometry:
    """Sparse-view parallel-beam geometry on the image square ``[-1, 1]^2``.

    Angles are ``k * pi / n_angles`` for ``k = 0 .. n_angles - 1``; detector
    bins are equal cells partitioning ``[-det_extent, det_extent]`` and
    sampled at their centers.
    """

    n: int = 128
    n_angles: int = 60
    n_detectors: int | None = None
    det_extent: float = 1.5

    def __post_init__(self):
        if self.n_detectors is None:
            object.__setattr__(self, "n_detectors", math.ceil(1.5 * self.n))
        if self.n < 8:
            raise ValueError("image side must be >= 8")
        if self.n_angles < 1:
            raise ValueError("need at least one angle")
        if self.n_detectors < 2:
            raise ValueError("need at least two detector bins")
        if self.det_extent <= 0:
            raise ValueError("detector extent must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (math.pi / self.n_angles)

    @property
    def det_spacing(self) -> float:
        return 2.0 * self.det_extent / self.n_detectors

    @property
    def detectors(self) -> np.ndarray:
        return -self.det_extent + (np.arange(self.n_detectors) + 0.5) * self.det_spacing

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    @property
    def sino_extent(self) -> tuple[float, float, float, float]:
        return (0.0, math.pi, -self.det_extent, self.det_extent)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_angles": self.n_angles,
            "n_detectors": self.n_detectors,
            "det_extent": self.det_extent,
        }


def _interp_triplets(rays, base, t, n, weight, stride_t, stride_base):
    """COO entries for linear interpolation at fractional index ``t``."""
    t0 = np.floor(t).astype(np.int64)
    frac = t - t0
    out = []
    for idx, w in ((t0, 1.0 - frac), (t0 + 1, frac)):
        ok = (idx >= 0) & (idx < n) & (w > 0)
        r = np.broadcast_to(rays, t.shape)[ok]
        c = (np.broadcast_to(base, t.shape) * stride_base + idx * stride_t)[ok]
        out.append((r, c, (w * weight)[ok]))
    return out


@lru_cache(maxsize=8)
def projection_matrix(geom: Geometry) -> sp.csr_matrix:
    """Joseph system matrix of shape ``(n_angles * n_detectors, n * n)``.

    For each ray the driving axis is the image axis most aligned with the
    ray direction; one sample is taken per pixel row (or column), the value
    is linearly interpolated along the transverse axis and weighted by the
    path length between consecutive samples.
    """
    n = geom.n
    h = 2.0 / n
    c = pixel_centers(n)
    s = geom.detectors
    rows, cols, vals = [], [], []
    for a, phi in enumerate(geom.angles):
        cs, sn = math.cos(phi), math.sin(phi)
        rays = (a * geom.n_detectors + np.arange(geom.n_detectors))[:, None]
        if abs(cs) >= abs(sn):
            # one sample per row i (y = c[i]); x from the line equation
            x = (s[:, None] - c[None, :] * sn) / cs
            t = (x + 1.0) / h - 0.5
            base = np.arange(n)[None, :]
            parts = _interp_triplets(rays, base, t, n, h / abs(cs), 1, n)
        else:
            y = (s[:, None] - c[None, :] * cs) / sn
            t = (y + 1.0) / h - 0.5
            base = np.arange(n)[None, :]
            parts = _interp_triplets(rays, base, t, n, h / abs(sn), n, 1)
        for r, col, v in parts:
            rows.append(r)
            cols.append(col)
            vals.append(v)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.n_angles * geom.n_detectors, n * n),
    ).tocsr()
    mat.sum_duplicates()
    return mat


@lru_cache(maxsize=8)
def _adjoint_matrix(geom: Geometry) -> sp.csr_matrix:
    return projection_matrix(geom).T.tocsr()


@lru_cache(maxsize=8)
def backprojection_matrix(geom: Geometry) -> sp.csr_matrix:
    """Pixel-driven backprojection with linear interpolation in ``s``.

    Shape ``(n * n, n_angles * n_detectors)``; no angular weight applied.
    """
    n = geom.n
    c = pixel_centers(n)
    yy, xx = np.meshgrid(c, c, indexing="ij")
    xx, yy = xx.ravel(), yy.ravel()
    pix = np.arange(n * n)
    rows, cols, vals = [], [], []
    for a, phi in enumerate(geom.angles):
        s = xx * math.cos(phi) + yy * math.sin(phi)
        t = (s + geom.det_extent) / geom.det_spacing - 0.5
        for r, col, v in _interp_triplets(pix, a, t, geom.n_detectors, 1.0, 1, geom.n_detectors):
            rows.append(r)
            cols.append(col)
            vals.append(v)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, geom.n_angles * geom.n_detectors),
    ).tocsr()


def _check_image(u, geom):
    u = np.asarray(u, dtype=float)
    if u.shape[-2:] != (geom.n, geom.n):
        raise ValueError(f"image shape {u.shape} does not match geometry side {geom.n}")
    return u


def _check_sino(y, geom):
    y = np.asarray(y, dtype=float)
    if y.shape[-2:] != geom.sino_shape:
        raise ValueError(f"sinogram shape {y.shape} does not match geometry {geom.sino_shape}")
    return y


def _apply(mat, arr, in_shape, out_shape):
    # leading batch axes are flattened into matrix columns
    lead = arr.shape[: arr.ndim - len(in_shape)]
    flat = arr.reshape(-1, int(np.prod(in_shape))).T
    res = mat @ flat
    return np.ascontiguousarray(res.T).reshape(lead + out_shape)


def radon_forward(u: np.ndarray, geom: Geometry) -> np.ndarray:
    """Line integrals of ``u``; accepts ``(n, n)`` or a stack ``(..., n, n)``."""
    u = _check_image(u, geom)
    return _apply(projection_matrix(geom), u, (geom.n, geom.n), geom.sino_shape)


def radon_adjoint(y: np.ndarray, geom: Geometry) -> np.ndarray:
    """Exact transpose of :func:`radon_forward`."""
    y = _check_sino(y, geom)
    return _apply(_adjoint_matrix(geom), y, geom.sino_shape, (geom.n, geom.n))


def _padded_length(n_det: int) -> int:
    return 1 << int(math.ceil(math.log2(2 * n_det)))


@lru_cache(maxsize=16)
def ramp_response(geom: Geometry, filter: str = "ram-lak") -> np.ndarray:
    """Frequency response of the discrete ramp filter on the padded grid.

    Built from the band-limited spatial kernel ``h(0) = 1/(4 tau^2)``,
    ``h(k) = -1/(pi k tau)^2`` for odd ``k`` and zero otherwise, scaled by the
    detector spacing ``tau`` so the discrete convolution approximates the
    continuous one.
    """
    tau = geom.det_spacing
    npad = _padded_length(geom.n_detectors)
    k = np.arange(npad)
    k = np.where(k <= npad // 2, k, k - npad)
    kern = np.zeros(npad)
    kern[0] = 1.0 / (4.0 * tau**2)
    odd = k % 2 != 0
    kern[odd] = -1.0 / (math.pi * k[odd] * tau) ** 2
    resp = np.real(np.fft.rfft(kern)) * tau
    if filter == "hann-apodized":
        freq = np.fft.rfftfreq(npad)
        resp = resp * 0.5 * (1.0 + np.cos(2.0 * math.pi * freq))
    elif filter != "ram-lak":
        raise ValueError(f"unknown filter {filter!r}")
    return resp


def ramp_filter(y: np.ndarray, geom: Geometry, filter: str = "ram-lak") -> np.ndarray:
    y = _check_sino(y, geom)
    npad = _padded_length(geom.n_detectors)
    spec = np.fft.rfft(y, n=npad, axis=-1) * ramp_response(geom, filter)
    return np.fft.irfft(spec, n=npad, axis=-1)[..., : geom.n_detectors]


def fbp(y: np.ndarray, geom: Geometry, filter: str = "ram-lak") -> np.ndarray:
    """Filtered backprojection; approximate inverse of :func:`radon_forward`."""
    q = ramp_filter(y, geom, filter)
    img = _apply(backprojection_matrix(geom), q, geom.sino_shape, (geom.n, geom.n))
    return img * (math.pi / geom.n_angles)


class RadonOperator:
    """Bundles forward, transpose and FBP for one geometry."""

    def __init__(self, geom: Geometry, filter: str = "ram-lak"):
        self.geom = geom
        self.filter = filter
        self.image_shape = (geom.n, geom.n)
        self.data_shape = geom.sino_shape

    def forward(self, u):
        return radon_forward(u, self.geom)

    def adjoint(self, y):
        return radon_adjoint(y, self.geom)

    def pseudo_inverse(self, y):
        return fbp(y, self.geom, self.filter)


class IdentityOperator:
    """``K = I`` on images of a given shape; used by the closed-form checks."""

    def __init__(self, shape):
        self.image_shape = tuple(shape)
        self.data_shape = tuple(shape)

    def forward(self, u):
        return np.array(u, dtype=float)

    def adjoint(self, y):
        return np.array(y, dtype=float)

    def pseudo_inverse(self, y):
        return np.array(y, dtype=float)
