"""Dense 2-D grids: pixel geometry, arithmetic helpers, metrics and file IO.

Images are square ``(n, n)`` float arrays covering ``[-1, 1]^2``.  Row index
``i`` runs along the y axis and column index ``j`` along the x axis, both
increasing with the coordinate.  Sinograms are ``(n_angles, n_detectors)``
arrays.  All arithmetic is carried out in float64; the on-disk payload is
little-endian float32.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

PSNR_CAP = 300.0

GRID_MAGIC = "ANETT-GRID"
GRID_VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")
_PAYLOAD_TAG = "float32-le"


class GridFileError(ValueError):
    """Base class for grid file problems."""


class MalformedHeaderError(GridFileError):
    pass


class TruncatedPayloadError(GridFileError):
    pass


class DtypeMismatchError(GridFileError):
    pass


# -- pixel geometry ---------------------------------------------------------


def pixel_size(n: int) -> float:
    return 2.0 / n


def pixel_centers(n: int) -> np.ndarray:
    """Coordinates of the ``n`` pixel centers along one axis."""
    return -1.0 + (np.arange(n) + 0.5) * (2.0 / n)


def index_to_coord(idx, n: int):
    return -1.0 + (np.asarray(idx, dtype=float) + 0.5) * (2.0 / n)


def coord_to_index(x, n: int):
    """Inverse of :func:`index_to_coord`; fractional for off-center points."""
    return (np.asarray(x, dtype=float) + 1.0) * (n / 2.0) - 0.5


def meshgrid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(x, y)`` coordinate arrays of shape ``(n, n)`` indexed ``[i, j]``."""
    c = pixel_centers(n)
    y, x = np.meshgrid(c, c, indexing="ij")
    return x, y


def check_image(u: np.ndarray, min_side: int = 8) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"image must be square 2-D, got shape {u.shape}")
    if u.shape[0] < min_side:
        raise ValueError(f"image side {u.shape[0]} < {min_side}")
    if not np.all(np.isfinite(u)):
        raise ValueError("image contains non-finite values")
    return u


# -- arithmetic ---------------------------------------------------------------


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return a * x + y


def l2_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float).ravel()))


def mean(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("mean of empty grid")
    return float(x.mean())


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0, mask=None) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` for MSE 0.

    ``mask`` restricts the comparison to a boolean region.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    diff = x - ref
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


# -- file IO ------------------------------------------------------------------


def default_extent(shape) -> tuple[float, float, float, float]:
    return (-1.0, 1.0, -1.0, 1.0)


def write_grid(values: np.ndarray, path, extent=None) -> None:
    """Write a 2-D grid as text header plus raw little-endian float32 payload.

    ``extent`` is ``(axis0_lo, axis0_hi, axis1_lo, axis1_hi)`` in physical
    units; images default to ``[-1, 1]^2``.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"grid must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid contains non-finite values")
    if extent is None:
        extent = default_extent(values.shape)
    extent = tuple(float(e) for e in extent)
    if len(extent) != 4:
        raise ValueError("extent needs four numbers")
    header = (
        f"{GRID_MAGIC} {GRID_VERSION}\n"
        f"dtype {_PAYLOAD_TAG}\n"
        f"shape {values.shape[0]} {values.shape[1]}\n"
        f"extent {' '.join(repr(e) for e in extent)}\n"
        "end\n"
    )
    payload = np.ascontiguousarray(values, dtype=_PAYLOAD_DTYPE).tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def _parse_header(blob: bytes) -> tuple[dict, int]:
    lines = []
    pos = 0
    for _ in range(5):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise MalformedHeaderError("header ended prematurely")
        try:
            lines.append(blob[pos:end].decode("ascii"))
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError("header is not ASCII") from exc
        pos = end + 1
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != GRID_MAGIC:
        raise MalformedHeaderError(f"bad magic line {lines[0]!r}")
    if magic[1] != str(GRID_VERSION):
        raise MalformedHeaderError(f"unsupported version {magic[1]!r}")
    fields = {}
    for line in lines[1:4]:
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    if lines[4] != "end" or set(fields) != {"dtype", "shape", "extent"}:
        raise MalformedHeaderError("header fields missing or out of order")
    if fields["dtype"] != [_PAYLOAD_TAG]:
        raise DtypeMismatchError(f"payload dtype {' '.join(fields['dtype'])!r}, expected {_PAYLOAD_TAG}")
    try:
        shape = tuple(int(v) for v in fields["shape"])
        extent = tuple(float(v) for v in fields["extent"])
    except ValueError as exc:
        raise MalformedHeaderError("non-numeric shape or extent") from exc
    if len(shape) != 2 or min(shape) < 1 or len(extent) != 4:
        raise MalformedHeaderError(f"bad shape {shape} or extent {extent}")
    return {"shape": shape, "extent": extent}, pos


def read_grid_header(path) -> dict:
    blob = Path(path).read_bytes()
    return _parse_header(blob)[0]


def read_grid(path) -> np.ndarray:
    """Read a grid written by :func:`write_grid`; returns a float64 array."""
    blob = Path(path).read_bytes()
    header, offset = _parse_header(blob)
    shape = header["shape"]
    nbytes = shape[0] * shape[1] * _PAYLOAD_DTYPE.itemsize
    payload = blob[offset:]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header promises {nbytes}")
    if len(payload) > nbytes:
        raise MalformedHeaderError(f"{len(payload) - nbytes} trailing bytes after payload")
    values = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(shape)
    return values.astype(np.float64)


def write_pgm(values: np.ndarray, path, peak: float = 1.0) -> None:
    """16-bit binary PGM export, values clamped to ``[0, peak]``.

    Row 0 of the array (lowest y) is written last so the picture is upright.
    """
    values = np.asarray(values, dtype=float)
    q = np.round(np.clip(values / peak, 0.0, 1.0) * 65535.0).astype(">u2")
    q = q[::-1]
    head = f"P5\n{q.shape[1]} {q.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(head + q.tobytes())
