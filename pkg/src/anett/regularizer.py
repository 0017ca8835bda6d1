"""The learned regularizer ``R_c(u) = ||E(u)||_{q,w} + c/2 ||u - N(u)||^2``.

A *prior* bundles the encoder ``E`` and the full network ``N``.  Codes are
handled as flat vectors together with a matching per-entry weight vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net


class NetworkPrior:
    """``E = E_theta`` and ``N = U_kappa o D_theta o E_theta`` in float64."""

    def __init__(self, theta: net.NetworkParams, kappa: net.NetworkParams | None = None):
        self.theta = theta.astype(np.float64)
        self.kappa = None if kappa is None else kappa.astype(np.float64)
        self._weights = {}

    def weights(self, n: int) -> np.ndarray:
        if n not in self._weights:
            code = net.encode(np.zeros((n, n)), self.theta)
            self._weights[n] = code.weight_vector()
        return self._weights[n]

    @staticmethod
    def _flat(codes):
        return np.concatenate([c[0].transpose(2, 0, 1).ravel() for c in codes])

    def forward(self, u):
        """``(E(u) flattened, N(u), cache)``."""
        codes, out, cache = net.model_fwd(np.asarray(u, dtype=np.float64)[None, :, :, None], self.theta, self.kappa)
        return self._flat(codes), out[0, :, :, 0], (cache, [c.shape for c in codes])

    def backward(self, cache, d_code, d_out):
        """``J_E^T d_code + J_N^T d_out``; either argument may be ``None``."""
        fcache, shapes = cache
        dcodes = None
        if d_code is not None:
            dcodes, pos = [], 0
            for shp in shapes:
                size = int(np.prod(shp))
                k = shp[-1]
                dcodes.append(d_code[pos : pos + size].reshape(k, shp[1], shp[2]).transpose(1, 2, 0)[None])
                pos += size
        dout = None if d_out is None else np.asarray(d_out)[None, :, :, None]
        dx, _, _ = net.model_bwd(dcodes, dout, fcache)
        return dx[0, :, :, 0]

    def encode(self, u):
        return self.forward(u)[0]

    def network(self, u):
        return self.forward(u)[1]


class IdentityPrior:
    """``E = N = I`` with unit weights, for closed-form reference problems."""

    def weights(self, n: int) -> np.ndarray:
        return np.ones(n * n)

    def forward(self, u):
        u = np.asarray(u, dtype=float)
        return u.ravel().copy(), u.copy(), u.shape

    def backward(self, shape, d_code, d_out):
        du = np.zeros(shape)
        if d_code is not None:
            du += np.asarray(d_code).reshape(shape)
        if d_out is not None:
            du += d_out
        return du

    def encode(self, u):
        return np.asarray(u, dtype=float).ravel().copy()

    def network(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class RegParams:
    c: float
    q: float = 1.0
    smoothing: float = 0.0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")


def weighted_lq(code, q: float = 1.0, weights=None) -> float:
    """``sum_l w_l sum_{lambda in level l} |xi_lambda|^q``.

    ``code`` is a :class:`net.LatentCode` (its own weights are used unless
    ``weights`` is given) or a flat vector with an explicit weight vector.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if isinstance(code, net.LatentCode):
        w = code.weight_vector() if weights is None else np.asarray(weights, dtype=float)
        vals = code.flat()
    else:
        vals = np.asarray(code, dtype=float).ravel()
        w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.sum(w * np.abs(vals) ** q))


def reg_value(u, prior, p: RegParams) -> float:
    code, nu, _ = prior.forward(u)
    w = prior.weights(np.shape(u)[0])
    r = np.asarray(u, dtype=float) - nu
    return weighted_lq(code, p.q, w) + 0.5 * p.c * float(np.sum(r * r))


def grad_augmented(u, prior, c: float) -> np.ndarray:
    """Gradient of ``c/2 ||u - N(u)||^2``: ``c (r - J_N^T r)``, ``r = u - N(u)``."""
    _, nu, cache = prior.forward(u)
    r = np.asarray(u, dtype=float) - nu
    return c * (r - prior.backward(cache, None, r))


def _smoothed(u, prior, c, eps):
    code, nu, cache = prior.forward(u)
    w = prior.weights(np.shape(u)[0])
    root = np.sqrt(code * code + eps * eps)
    r = np.asarray(u, dtype=float) - nu
    value = float(np.sum(w * root)) + 0.5 * c * float(np.sum(r * r))
    return value, (cache, w * code / root, r)


def smoothed_reg_value(u, prior, c: float, eps: float) -> float:
    """``R_c`` with ``|x|`` replaced by ``sqrt(x^2 + eps^2)``."""
    return _smoothed(u, prior, c, eps)[0]


def smoothed_reg_grad(u, prior, c: float, eps: float) -> np.ndarray:
    _, (cache, dcode, r) = _smoothed(u, prior, c, eps)
    return prior.backward(cache, dcode, -c * r) + c * r


def bregman_distance(u, u_ref, prior, p: RegParams) -> float:
    """Absolute Bregman distance of the smoothed regularizer at ``u_ref``."""
    if p.smoothing <= 0:
        raise ValueError("the Bregman distance needs smoothing > 0")
    if p.q != 1:
        raise ValueError("only q = 1 is supported here")
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    r_u = smoothed_reg_value(u, prior, p.c, p.smoothing)
    r_ref = smoothed_reg_value(u_ref, prior, p.c, p.smoothing)
    g_ref = smoothed_reg_grad(u_ref, prior, p.c, p.smoothing)
    return abs(r_u - r_ref - float(np.sum(g_ref * (u - u_ref))))
