"""Training of the sparse denoising autoencoder and the operator adapter."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import net
from .tomo import Geometry, fbp, radon_forward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    eta: float = 1e-3
    beta: float = 1e-5
    gamma: float = 1e-5
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    perturbation: str = "gaussian-mean-scaled"
    max_noise: float = 0.1

    def __post_init__(self):
        if min(self.eta, self.beta, self.gamma) < 0:
            raise ValueError("eta, beta, gamma must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.perturbation != "gaussian-mean-scaled":
            raise ValueError(f"unknown perturbation scheme {self.perturbation!r}")


@dataclass
class TrainResult:
    params: net.NetworkParams
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch][2]

    def log_lines(self) -> list[str]:
        lines = ["epoch train_loss val_loss"]
        lines += [f"{e} {t!r} {v!r}" for e, t, v in self.history]
        return lines


def perturb(u: np.ndarray, rng: np.random.Generator, p: float | None = None, max_p: float = 0.1) -> np.ndarray:
    """Add white Gaussian noise with std ``p * mean(u)``, ``p ~ U[0, max_p]``.

    A fresh ``p`` is drawn per call unless one is forced.  Works on a single
    image or a stack, with one ``p`` per image.
    """
    u = np.asarray(u)
    stack = u if u.ndim == 3 else u[None]
    if p is None:
        p = rng.uniform(0.0, max_p, size=len(stack))
    p = np.broadcast_to(np.asarray(p, dtype=float), (len(stack),))
    std = p * stack.reshape(len(stack), -1).mean(axis=1)
    noise = rng.standard_normal(stack.shape) * std[:, None, None]
    out = stack + noise.astype(stack.dtype, copy=False)
    return out if u.ndim == 3 else out[0]


def _weighted_l1(codes, weights):
    """Per-example weighted l1 norm of batched NHWC codes."""
    return sum(w * np.abs(c).reshape(len(c), -1).sum(axis=1, dtype=np.float64) for c, w in zip(codes, weights))


def ae_loss(u, theta: net.NetworkParams, eta: float, beta: float = 0.0, rng=None, eps=None):
    """Denoising-autoencoder objective and its parameter gradient.

    ``mean_i ||N(u_i + e_i) - u_i||^2 + eta ||E(u_i + e_i)||_{1,w}`` plus
    ``beta ||theta||^2``.  ``eps`` fixes the perturbation; otherwise one is
    drawn with :func:`perturb`.  Returns ``(loss, grads, terms)`` where
    ``terms`` holds the batch means of the reconstruction and sparsity terms.
    """
    u = np.asarray(u)
    batch = u if u.ndim == 3 else u[None]
    if eps is None:
        x = perturb(batch, rng)
    else:
        x = batch + np.broadcast_to(eps, batch.shape).astype(batch.dtype, copy=False)
    codes, out, cache = net.model_fwd(x[..., None], theta)
    resid = out[..., 0] - batch
    m = len(batch)
    weights = net.level_weights(theta.n_levels)
    recon = np.sum(resid.reshape(m, -1).astype(np.float64) ** 2, axis=1)
    sparse = _weighted_l1(codes, weights)
    loss = float(np.mean(recon + eta * sparse) + beta * theta.sq_norm())
    dout = (2.0 / m) * resid[..., None]
    dcodes = [(eta * w / m) * np.sign(c) for c, w in zip(codes, weights)]
    _, grads, _ = net.model_bwd(dcodes, dout, cache, need_input=False)
    grads = net._ordered(grads, theta)
    if beta:
        grads = {k: g + 2.0 * beta * theta.arrays[k] for k, g in grads.items()}
    return loss, grads, {"recon": float(recon.mean()), "sparsity": float(sparse.mean())}


def ae_objective(u, theta, eta, beta, eps, batch_size=16) -> float:
    """Value of the autoencoder objective over a fixed set of perturbations."""
    total = 0.0
    for s in range(0, len(u), batch_size):
        x = u[s : s + batch_size] + eps[s : s + batch_size]
        codes, out, _ = net.model_fwd(x[..., None], theta)
        resid = out[..., 0] - u[s : s + batch_size]
        recon = np.sum(resid.reshape(len(x), -1).astype(np.float64) ** 2, axis=1)
        total += float(np.sum(recon + eta * _weighted_l1(codes, net.level_weights(theta.n_levels))))
    return total / len(u) + beta * theta.sq_norm()


def _streams(seed):
    init, shuffle, val = np.random.SeedSequence(seed).spawn(3)
    return int(init.generate_state(1)[0]), np.random.default_rng(shuffle), np.random.default_rng(val)


def _run(params, loss_fn, val_fn, n_train, cfg: TrainConfig, rng, label):
    t0 = time.perf_counter()
    state = net.AdamState.zeros(params)
    best = params.copy()
    val0 = val_fn(params)
    if not np.isfinite(val0):
        raise TrainingDiverged(f"{label}: initial validation loss is {val0}")
    history = [(0, float("nan"), val0)]
    best_epoch, best_val = 0, val0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        losses = []
        for s in range(0, n_train, cfg.batch_size):
            loss, grads = loss_fn(params, order[s : s + cfg.batch_size])
            params, state = net.adam_step(params, grads, state, cfg.lr)
            losses.append(loss)
        val = val_fn(params)
        if not np.isfinite(val):
            raise TrainingDiverged(f"{label}: validation loss {val} at epoch {epoch} (last train loss {losses[-1]})")
        history.append((epoch, float(np.mean(losses)), val))
        log.info("%s epoch %d train %.6g val %.6g", label, epoch, history[-1][1], val)
        if val < best_val:
            best_epoch, best_val, best = epoch, val, params.copy()
    return TrainResult(best, history, best_epoch, time.perf_counter() - t0)


def train_autoencoder(train, val, cfg: TrainConfig, arch: dict | None = None) -> TrainResult:
    """Minibatch Adam on the denoising objective with validation-best selection.

    Perturbations of the training set are redrawn every epoch; the
    validation set uses one fixed draw so the selection criterion is
    deterministic.
    """
    train = np.asarray(train, dtype=np.float32)
    val = np.asarray(val, dtype=np.float32)
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    init_seed, rng, val_rng = _streams(cfg.seed)
    params = net.init_params(arch or net.DEFAULT_AE_ARCH, seed=init_seed)
    val_eps = (perturb(val, val_rng, max_p=cfg.max_noise) - val).astype(np.float32)

    def loss_fn(p, idx):
        loss, grads, _ = ae_loss(train[idx], p, cfg.eta, cfg.beta, rng=rng)
        return loss, grads

    def val_fn(p):
        return ae_objective(val, p, cfg.eta, cfg.beta, val_eps)

    return _run(params, loss_fn, val_fn, len(train), cfg, rng, "autoencoder")


def make_adapter_dataset(images, geom: Geometry):
    """Inputs ``v`` and targets ``u``: first half FBP-of-Radon, second half clean."""
    images = np.asarray(images, dtype=float)
    if len(images) == 0:
        raise ValueError("need at least one image")
    if images.shape[1:] != (geom.n, geom.n):
        raise ValueError(f"images of side {images.shape[1:]} do not match geometry side {geom.n}")
    artifacts = fbp(radon_forward(images, geom), geom)
    return np.concatenate([artifacts, images]), np.concatenate([images, images])


def autoencode_stack(v, theta, batch_size=16, dtype=np.float32):
    out = []
    for s in range(0, len(v), batch_size):
        x = np.asarray(v[s : s + batch_size], dtype=dtype)[..., None]
        _, rec, _ = net.model_fwd(x, theta)
        out.append(rec[..., 0])
    return np.concatenate(out)


def adapter_loss(z, u, kappa: net.NetworkParams, gamma: float):
    """``mean_i ||U(z_i) - u_i||^2 + gamma ||kappa||^2`` with ``z_i = N^a(v_i)``."""
    out, cache = net.adapter_fwd(z[..., None], kappa)
    resid = out[..., 0] - u
    m = len(u)
    loss = float(np.mean(np.sum(resid.reshape(m, -1).astype(np.float64) ** 2, axis=1)) + gamma * kappa.sq_norm())
    _, grads = net.adapter_bwd((2.0 / m) * resid[..., None], cache)
    grads = net._ordered(grads, kappa)
    if gamma:
        grads = {k: g + 2.0 * gamma * kappa.arrays[k] for k, g in grads.items()}
    return loss, grads


def train_adapter(v, u, val_v, val_u, theta: net.NetworkParams, cfg: TrainConfig,
                  arch: dict | None = None) -> TrainResult:
    """Fit ``U`` on ``N^a(v_i) -> u_i`` with the autoencoder held fixed."""
    if len(v) == 0 or len(val_v) == 0:
        raise ValueError("training and validation pairs must be nonempty")
    init_seed, rng, _ = _streams(cfg.seed)
    z = autoencode_stack(v, theta)
    val_z = autoencode_stack(val_v, theta)
    u = np.asarray(u, dtype=np.float32)
    val_u = np.asarray(val_u, dtype=np.float32)
    params = net.init_params(arch or net.DEFAULT_ADAPTER_ARCH, seed=init_seed)

    def loss_fn(p, idx):
        return adapter_loss(z[idx], u[idx], p, cfg.gamma)

    def val_fn(p):
        total = 0.0
        for s in range(0, len(val_z), 16):
            out, _ = net.adapter_fwd(val_z[s : s + 16, ..., None], p)
            r = out[..., 0] - val_u[s : s + 16]
            total += float(np.sum(r.astype(np.float64) ** 2))
        return total / len(val_z) + cfg.gamma * p.sq_norm()

    return _run(params, loss_fn, val_fn, len(z), cfg, rng, "adapter")


def code_sparsity(images, theta, tol=1e-3) -> np.ndarray:
    """Fraction of latent coefficients with magnitude below ``tol``, per image."""
    out = []
    for s in range(0, len(images), 16):
        codes, _ = net.encoder_fwd(np.asarray(images[s : s + 16], dtype=np.float64)[..., None], theta)
        small = sum((np.abs(c) < tol).reshape(len(c), -1).sum(axis=1) for c in codes)
        total = sum(c[0].size for c in codes)
        out.append(small / total)
    return np.concatenate(out)
