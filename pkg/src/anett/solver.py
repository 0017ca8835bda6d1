"""ADMM for the aNETT functional with a scaled dual variable.

Splitting ``xi = E(u)`` turns

    ||K u - y||^2 + alpha ||E(u)||_{1,w} + alpha c / 2 ||u - N(u)||^2

into alternating updates: a smooth ``u`` step solved by heavy-ball gradient
descent, an explicit soft-thresholding step for ``xi`` and a dual ascent
step for ``eta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

TABLE1 = {
    "noise-free": dict(alpha=1e-5, c=1e2, rho=2.0, outer=50, inner=10, stepsize=5e-1),
    "noisy-5pct": dict(alpha=5e-4, c=1e1, rho=2.0, outer=100, inner=10, stepsize=1e-1),
    "adversarial": dict(alpha=1e-5, c=1e1, rho=2.0, outer=50, inner=10, stepsize=5e-1),
}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    alpha: float
    c: float
    rho: float = 2.0
    outer: int = 50
    inner: int = 10
    stepsize: float = 0.5
    momentum: float = 0.8
    max_halvings: int = 20

    def __post_init__(self):
        if min(self.alpha, self.c, self.rho) < 0:
            raise ValueError("alpha, c and rho must be >= 0")
        if self.stepsize <= 0:
            raise ValueError("stepsize must be > 0")
        if self.outer < 1 or self.inner < 1:
            raise ValueError("outer and inner must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def for_scenario(cls, tag: str, **overrides) -> "SolverConfig":
        if tag not in TABLE1:
            raise ValueError(f"no default parameters for scenario {tag!r}")
        return cls(**{**TABLE1[tag], **overrides})

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``, elementwise."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if out.ndim == 0 else out


def xi_update(code_u, eta, weights, cfg: SolverConfig):
    """Prox of ``alpha ||.||_{1,w}`` with parameter ``1 / rho`` at ``E(u) + eta``."""
    code_u = np.asarray(code_u, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if code_u.shape != eta.shape or code_u.shape != np.shape(weights):
        raise ValueError("code, dual variable and weights differ in shape")
    if cfg.rho <= 0:
        raise ValueError("rho must be > 0 for the xi-update")
    if cfg.alpha == 0:
        return code_u + eta
    return soft_threshold(code_u + eta, cfg.alpha * np.asarray(weights) / cfg.rho)


@dataclass
class _Point:
    u: np.ndarray
    ku: np.ndarray
    code: np.ndarray
    nu: np.ndarray
    cache: object
    value: float


class _Subproblem:
    """Objective of the u-update and its gradient."""

    def __init__(self, y, op, prior, xi, eta, cfg: SolverConfig):
        self.y, self.op, self.prior = y, op, prior
        self.shift = xi - eta
        self.ac = cfg.alpha * cfg.c
        self.rho = cfg.rho

    def at(self, u) -> _Point:
        ku = self.op.forward(u)
        code, nu, cache = self.prior.forward(u)
        d = ku - self.y
        r = u - nu
        e = code - self.shift
        value = float(np.sum(d * d)) + 0.5 * self.ac * float(np.sum(r * r)) + 0.5 * self.rho * float(np.sum(e * e))
        return _Point(u, ku, code, nu, cache, value)

    def grad(self, pt: _Point) -> np.ndarray:
        r = pt.u - pt.nu
        d_code = self.rho * (pt.code - self.shift) if self.rho else None
        d_out = -self.ac * r if self.ac else None
        g = 2.0 * self.op.adjoint(pt.ku - self.y) + self.ac * r
        if d_code is not None or d_out is not None:
            g = g + self.prior.backward(pt.cache, d_code, d_out)
        return g


def _descend(sub: _Subproblem, pt: _Point, cfg: SolverConfig):
    """Heavy-ball steps with monotone backtracking; returns the best point.

    A trial that raises the objective restarts the momentum from the plain
    gradient and halves the step, at most ``max_halvings`` times per call.
    """
    if not np.isfinite(pt.value):
        raise SolverError(f"u-update objective is {pt.value} at entry")
    step = cfg.stepsize
    m = np.zeros_like(pt.u)
    halvings = 0
    steps = 0
    for _ in range(cfg.inner):
        g = sub.grad(pt)
        if not np.all(np.isfinite(g)):
            raise SolverError("non-finite gradient in u-update")
        if not np.any(g):
            break
        m = cfg.momentum * m + g
        while True:
            trial = sub.at(pt.u - step * m)
            if np.isnan(trial.value):
                raise SolverError(f"u-update objective became NaN (step {step:g})")
            if trial.value <= pt.value:
                break
            halvings += 1
            if halvings > cfg.max_halvings:
                return pt, steps, halvings
            step *= 0.5
            m = g
        pt = trial
        steps += 1
    return pt, steps, halvings


def u_update(u, xi, eta, y, op, prior, cfg: SolverConfig) -> np.ndarray:
    """Approximate minimizer of the u-subproblem, never worse than ``u``."""
    sub = _Subproblem(np.asarray(y, dtype=float), op, prior, np.asarray(xi), np.asarray(eta), cfg)
    pt, _, _ = _descend(sub, sub.at(np.asarray(u, dtype=float)), cfg)
    return pt.u


def subproblem_value(u, xi, eta, y, op, prior, cfg: SolverConfig) -> float:
    sub = _Subproblem(np.asarray(y, dtype=float), op, prior, np.asarray(xi), np.asarray(eta), cfg)
    return sub.at(np.asarray(u, dtype=float)).value


def subproblem_grad(u, xi, eta, y, op, prior, cfg: SolverConfig) -> np.ndarray:
    sub = _Subproblem(np.asarray(y, dtype=float), op, prior, np.asarray(xi), np.asarray(eta), cfg)
    return sub.grad(sub.at(np.asarray(u, dtype=float)))


def anett_objective(u, y, op, prior, alpha, c) -> float:
    """``||Ku - y||^2 + alpha (||E(u)||_{1,w} + c/2 ||u - N(u)||^2)``."""
    u = np.asarray(u, dtype=float)
    code, nu, _ = prior.forward(u)
    d = op.forward(u) - y
    r = u - nu
    w = prior.weights(u.shape[0])
    return float(np.sum(d * d)) + alpha * (float(np.sum(w * np.abs(code))) + 0.5 * c * float(np.sum(r * r)))


@dataclass
class Diagnostics:
    objective: list = field(default_factory=list)
    data_residual: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    inner_steps: list = field(default_factory=list)
    halvings: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = ["iteration objective data_residual primal_residual"]
        for k, rec in enumerate(zip(self.objective, self.data_residual, self.primal_residual), start=1):
            out.append(f"{k} {rec[0]!r} {rec[1]!r} {rec[2]!r}")
        return out


def admm_solve(y, op, prior, cfg: SolverConfig, u0=None):
    """Run ``cfg.outer`` ADMM iterations; returns ``(u, Diagnostics)``.

    Starts from ``u0 = N(K# y)`` unless given, with ``xi0 = E(u0)`` and a
    zero dual variable.
    """
    if cfg.rho <= 0:
        raise ValueError("rho must be > 0")
    y = np.asarray(y, dtype=float)
    if u0 is None:
        u0 = prior.network(op.pseudo_inverse(y))
    u = np.asarray(u0, dtype=float)
    w = prior.weights(u.shape[0])
    xi = prior.encode(u)
    eta = np.zeros_like(xi)
    diag = Diagnostics()
    for k in range(cfg.outer):
        sub = _Subproblem(y, op, prior, xi, eta, cfg)
        pt, steps, halvings = _descend(sub, sub.at(u), cfg)
        u = pt.u
        xi = xi_update(pt.code, eta, w, cfg)
        primal = pt.code - xi
        eta = eta + primal
        r = u - pt.nu
        d = pt.ku - y
        data = float(np.sum(d * d))
        obj = data + cfg.alpha * (float(np.sum(w * np.abs(pt.code))) + 0.5 * cfg.c * float(np.sum(r * r)))
        diag.objective.append(obj)
        diag.data_residual.append(float(np.sqrt(data)))
        diag.primal_residual.append(float(np.linalg.norm(primal)))
        diag.inner_steps.append(steps)
        diag.halvings.append(halvings)
        log.debug("admm %d objective %.6g data %.6g primal %.6g", k + 1, obj, diag.data_residual[-1],
                  diag.primal_residual[-1])
    return u, diag
