"""Multi-scale sparse autoencoder and residual adapter with hand-written backprop.

Activations are NHWC arrays (batch, height, width, channel); convolutions
accumulate one matrix product per kernel tap over shifted windows.  Each network has a ``_*_fwd`` function that
returns its output and a cache, and a matching ``_*_bwd`` that maps output
cotangents back to input cotangents and parameter gradients.  Computation
runs in the promoted dtype of the input and the parameters, so float32
training and float64 gradient checks share one code path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

PARAMS_MAGIC = "ANETT-NET"
PARAMS_VERSION = 1

DEFAULT_AE_ARCH = {
    "kind": "autoencoder",
    "channels": [8, 16, 32],
    "latent_channels": [4, 8, 16],
    "kernel": 3,
    "encoder_bias": False,
}
DEFAULT_ADAPTER_ARCH = {
    "kind": "adapter",
    "channels": [8, 16, 16],
    "kernel": 3,
}


class ArchitectureMismatch(ValueError):
    pass


# -- layer primitives ---------------------------------------------------------


def _pad(x, p):
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _shift_conv(xp, wk, h, w):
    """Sum over kernel taps of shifted-window matrix products.

    ``xp`` is the padded (B, H+2p, W+2p, C) input, ``wk`` is (k, k, C, O).
    """
    k = wk.shape[0]
    c = xp.shape[-1]
    if c * k * k <= 16:
        cols = np.empty(xp.shape[:1] + (h, w, k * k, c), dtype=xp.dtype)
        for a in range(k):
            for d in range(k):
                cols[:, :, :, a * k + d] = xp[:, a : a + h, d : d + w]
        return cols.reshape(-1, k * k * c) @ wk.reshape(k * k * c, -1)
    out = None
    for a in range(k):
        for d in range(k):
            t = xp[:, a : a + h, d : d + w] @ wk[a, d]
            out = t if out is None else out + t
    return out.reshape(-1, wk.shape[-1])


def conv_fwd(x, w, bias):
    """'Same'-padded stride-1 convolution (cross-correlation) on NHWC input.

    ``w`` has shape (O, C, k, k) and ``bias`` may be ``None``.  Returns the output and the padded input,
    which the backward pass needs.
    """
    b, h, wd, c = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = _pad(x, p) if p else x
    wk = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    out = _shift_conv(xp, wk, h, wd).reshape(b, h, wd, o)
    return (out if bias is None else out + bias), xp


def conv_bwd(g, x, w, xp, need_dx=True):
    b, h, wd, o = g.shape
    _, c, k, _ = w.shape
    db = g.sum(axis=(0, 1, 2))
    gm = g.reshape(-1, o)
    dw = np.empty_like(w)
    for a in range(k):
        for d in range(k):
            win = xp[:, a : a + h, d : d + wd].reshape(-1, c)
            dw[:, :, a, d] = gm.T @ win
    dx = None
    if need_dx:
        # transpose of a same-padded correlation: correlate with the flipped kernel
        wt = w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        dx, _ = conv_fwd(g, wt, None)
    return dx, dw, db


def swish(z):
    return z * expit(z)


def swish_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def pool2(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def pool2_bwd(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25


def up2(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def up2_bwd(g):
    b, h, w, c = g.shape
    return g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# -- parameters ---------------------------------------------------------------


def param_shapes(arch: dict) -> list[tuple[str, tuple]]:
    """Ordered ``(name, shape)`` list; the descriptor fixes every array."""
    k = arch["kernel"]
    ch = list(arch["channels"])
    shapes = []
    if arch["kind"] == "autoencoder":
        lat = list(arch["latent_channels"])
        if len(lat) != len(ch):
            raise ArchitectureMismatch("latent_channels and channels differ in length")
        L = len(ch)
        bias = arch.get("encoder_bias", True)
        for l in range(L):
            cin = 1 if l == 0 else ch[l - 1]
            shapes.append((f"enc{l}.w", (ch[l], cin, k, k)))
            if bias:
                shapes.append((f"enc{l}.b", (ch[l],)))
            shapes.append((f"lat{l}.w", (lat[l], ch[l], 1, 1)))
            if bias:
                shapes.append((f"lat{l}.b", (lat[l],)))
        for l in reversed(range(L)):
            cin = lat[l] if l == L - 1 else ch[l + 1] + lat[l]
            shapes += [(f"dec{l}.w", (ch[l], cin, k, k)), (f"dec{l}.b", (ch[l],))]
        shapes += [("out.w", (1, ch[0], k, k)), ("out.b", (1,))]
    elif arch["kind"] == "adapter":
        S = len(ch)
        for i in range(S):
            cin = 1 if i == 0 else ch[i - 1]
            shapes += [(f"e{i}.w", (ch[i], cin, k, k)), (f"e{i}.b", (ch[i],))]
        for i in reversed(range(S - 1)):
            shapes += [(f"d{i}.w", (ch[i], ch[i + 1] + ch[i], k, k)), (f"d{i}.b", (ch[i],))]
        shapes += [("head.w", (1, ch[0], k, k)), ("head.b", (1,))]
    else:
        raise ArchitectureMismatch(f"unknown network kind {arch['kind']!r}")
    return shapes


@dataclass
class NetworkParams:
    arch: dict
    arrays: dict[str, np.ndarray]
    seed: int = 0

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if [n for n, _ in expected] != list(self.arrays):
            raise ArchitectureMismatch("parameter names do not match descriptor")
        for name, shape in expected:
            if self.arrays[name].shape != shape:
                raise ArchitectureMismatch(f"{name}: shape {self.arrays[name].shape} != {shape}")

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    @property
    def n_levels(self) -> int:
        return len(self.arch["channels"])

    def copy(self) -> "NetworkParams":
        return NetworkParams(dict(self.arch), {k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(dict(self.arch), {k: v.astype(dtype) for k, v in self.arrays.items()}, self.seed)

    def sq_norm(self) -> float:
        return float(sum(np.sum(np.asarray(a, dtype=np.float64) ** 2) for a in self.arrays.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def with_flat(self, vec) -> "NetworkParams":
        out, pos = {}, 0
        for name, a in self.arrays.items():
            out[name] = np.asarray(vec[pos : pos + a.size], dtype=a.dtype).reshape(a.shape)
            pos += a.size
        return NetworkParams(dict(self.arch), out, self.seed)


def init_params(arch: dict, seed: int = 0, zero_bias: bool = True) -> NetworkParams:
    """Fan-in-scaled uniform weights, zero biases, zero adapter head."""
    rng = np.random.default_rng(seed)
    arrays = {}
    linear_outputs = {"lat", "out"}
    for name, shape in param_shapes(arch):
        layer, kind = name.split(".")
        if kind == "b" or layer == "head":
            arrays[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 3.0 if layer.rstrip("0123456789") in linear_outputs else 6.0
        bound = np.sqrt(gain / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    if not zero_bias:
        for name in arrays:
            if name.endswith(".b") and not name.startswith("head"):
                arrays[name] = rng.uniform(-0.1, 0.1, size=arrays[name].shape).astype(np.float32)
    return NetworkParams(dict(arch), arrays, seed)


def save_params(params: NetworkParams, path) -> None:
    header = (
        f"{PARAMS_MAGIC} {PARAMS_VERSION}\n"
        f"arch {json.dumps(params.arch, sort_keys=True)}\n"
        f"seed {params.seed}\n"
        "end\n"
    )
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays.values())
    Path(path).write_bytes(header.encode("ascii") + payload)


def load_params(path, expected_arch: dict | None = None) -> NetworkParams:
    blob = Path(path).read_bytes()
    lines, pos = [], 0
    for _ in range(4):
        end = blob.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated header")
        lines.append(blob[pos:end].decode("ascii"))
        pos = end + 1
    if lines[0] != f"{PARAMS_MAGIC} {PARAMS_VERSION}" or lines[3] != "end":
        raise ValueError(f"{path}: not a parameter file")
    if not lines[1].startswith("arch ") or not lines[2].startswith("seed "):
        raise ValueError(f"{path}: malformed header")
    arch = json.loads(lines[1][5:])
    seed = int(lines[2][5:])
    if expected_arch is not None and json.dumps(arch, sort_keys=True) != json.dumps(expected_arch, sort_keys=True):
        raise ArchitectureMismatch(f"{path}: descriptor {arch} does not match expected {expected_arch}")
    arrays = {}
    for name, shape in param_shapes(arch):
        nbytes = int(np.prod(shape)) * 4
        chunk = blob[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: payload truncated at {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after payload")
    return NetworkParams(arch, arrays, seed)


# -- latent codes -------------------------------------------------------------


def level_weights(n_levels: int) -> tuple[float, ...]:
    """``w_l = 2**-l`` for downsampling step ``l = 1 .. L``."""
    return tuple(2.0 ** -(l + 1) for l in range(n_levels))


@dataclass
class LatentCode:
    """Per-level coefficient stacks; level ``l`` has side ``n / 2**(l+1)``."""

    levels: list[np.ndarray]
    weights: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = level_weights(len(self.levels))
        if len(self.weights) != len(self.levels):
            raise ValueError("one weight per level required")
        if min(self.weights) <= 0:
            raise ValueError("level weights must be positive")

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in self.levels])

    def weight_vector(self) -> np.ndarray:
        return np.concatenate([np.full(a.size, w) for a, w in zip(self.levels, self.weights)])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.levels)

    def from_flat(self, vec) -> "LatentCode":
        out, pos = [], 0
        for a in self.levels:
            out.append(np.asarray(vec[pos : pos + a.size]).reshape(a.shape))
            pos += a.size
        return LatentCode(out, self.weights)

    def zeros_like(self) -> "LatentCode":
        return LatentCode([np.zeros_like(a) for a in self.levels], self.weights)


# -- networks -----------------------------------------------------------------


def _as_batch(u):
    u = np.asarray(u)
    if u.ndim == 2:
        return u[None, :, :, None]
    if u.ndim == 3:
        return u[..., None]
    return u


def _dtype(x, params):
    return np.result_type(x.dtype, *(a.dtype for a in params.arrays.values()))


def _arrays(params, dtype):
    return {k: v.astype(dtype, copy=False) for k, v in params.arrays.items()}


def _check_side(x, n_down):
    side = x.shape[1]
    if x.ndim != 4 or x.shape[2] != side or side % (2**n_down) != 0:
        raise ValueError(f"image shape {x.shape[1:3]} not square or not divisible by {2**n_down}")


def encoder_fwd(x, params):
    """``x``: (B, n, n, 1).  Returns list of level codes (B, s_l, s_l, k_l)."""
    if params.arch["kind"] != "autoencoder":
        raise ArchitectureMismatch("encoder needs autoencoder parameters")
    L = params.n_levels
    _check_side(x, L)
    dt = _dtype(x, params)
    p = _arrays(params, dt)
    h = x.astype(dt, copy=False)
    codes, cache = [], []
    for l in range(L):
        z, cols = conv_fwd(h, p[f"enc{l}.w"], p.get(f"enc{l}.b"))
        pooled = pool2(swish(z))
        code, _ = conv_fwd(pooled, p[f"lat{l}.w"], p.get(f"lat{l}.b"))
        codes.append(code)
        cache.append((h, z, cols, pooled))
        h = pooled
    return codes, (cache, p)


def encoder_bwd(dcodes, fcache, need_input=True):
    cache, p = fcache
    grads = {}
    dh = None
    for l in reversed(range(len(cache))):
        h, z, cols, pooled = cache[l]
        dpooled, dw, db = conv_bwd(dcodes[l], pooled, p[f"lat{l}.w"], pooled)
        grads[f"lat{l}.w"] = dw
        if f"lat{l}.b" in p:
            grads[f"lat{l}.b"] = db
        if dh is not None:
            dpooled = dpooled + dh
        dz = pool2_bwd(dpooled) * swish_grad(z)
        dh, dw, db = conv_bwd(dz, h, p[f"enc{l}.w"], cols, need_dx=need_input or l > 0)
        grads[f"enc{l}.w"] = dw
        if f"enc{l}.b" in p:
            grads[f"enc{l}.b"] = db
    return dh, grads


def decoder_fwd(codes, params):
    L = params.n_levels
    dt = np.result_type(codes[0].dtype, *(a.dtype for a in params.arrays.values()))
    p = _arrays(params, dt)
    cache = []
    g = None
    for l in reversed(range(L)):
        inp = codes[l].astype(dt, copy=False) if g is None else np.concatenate([up2(g), codes[l]], axis=-1)
        z, cols = conv_fwd(inp, p[f"dec{l}.w"], p[f"dec{l}.b"])
        g = swish(z)
        cache.append((l, inp, z, cols))
    top = up2(g)
    out, cols = conv_fwd(top, p["out.w"], p["out.b"])
    return out, (cache, top, cols, p)


def decoder_bwd(dout, fcache):
    cache, top, cols, p = fcache
    grads = {}
    dtop, grads["out.w"], grads["out.b"] = conv_bwd(dout, top, p["out.w"], cols)
    dg = up2_bwd(dtop)
    L = len(cache)
    dcodes = [None] * L
    for l, inp, z, cols_l in reversed(cache):
        dz = dg * swish_grad(z)
        dinp, grads[f"dec{l}.w"], grads[f"dec{l}.b"] = conv_bwd(dz, inp, p[f"dec{l}.w"], cols_l)
        if l == L - 1:
            dcodes[l] = dinp
        else:
            c_up = p[f"dec{l + 1}.w"].shape[0]
            dcodes[l] = dinp[..., c_up:]
            dg = up2_bwd(dinp[..., :c_up])
    return dcodes, grads


def adapter_fwd(x, params):
    if params.arch["kind"] != "adapter":
        raise ArchitectureMismatch("adapter needs adapter parameters")
    S = params.n_levels
    _check_side(x, S - 1)
    dt = _dtype(x, params)
    p = _arrays(params, dt)
    x = x.astype(dt, copy=False)
    enc = []
    h = x
    for i in range(S):
        inp = h if i == 0 else pool2(enc[-1][3])
        z, cols = conv_fwd(inp, p[f"e{i}.w"], p[f"e{i}.b"])
        enc.append((inp, z, cols, swish(z)))
    d = enc[-1][3]
    dec = []
    for i in reversed(range(S - 1)):
        inp = np.concatenate([up2(d), enc[i][3]], axis=-1)
        z, cols = conv_fwd(inp, p[f"d{i}.w"], p[f"d{i}.b"])
        d = swish(z)
        dec.append((i, inp, z, cols))
    corr, cols = conv_fwd(d, p["head.w"], p["head.b"])
    return x + corr, (enc, dec, d, cols, p)


def adapter_bwd(dout, fcache):
    enc, dec, d, cols, p = fcache
    grads = {}
    dd, grads["head.w"], grads["head.b"] = conv_bwd(dout, d, p["head.w"], cols)
    S = len(enc)
    denc = [None] * S
    for i, inp, z, cols_i in reversed(dec):
        dz = dd * swish_grad(z)
        dinp, grads[f"d{i}.w"], grads[f"d{i}.b"] = conv_bwd(dz, inp, p[f"d{i}.w"], cols_i)
        c_skip = enc[i][3].shape[-1]
        denc[i] = dinp[..., -c_skip:]
        dd = up2_bwd(dinp[..., :-c_skip])
    denc[S - 1] = dd
    dx = dout
    carry = None
    for i in reversed(range(S)):
        inp, z, cols_i, _ = enc[i]
        da = denc[i] if carry is None else denc[i] + carry
        dz = da * swish_grad(z)
        dinp, grads[f"e{i}.w"], grads[f"e{i}.b"] = conv_bwd(dz, inp, p[f"e{i}.w"], cols_i)
        if i == 0:
            dx = dx + dinp
        else:
            carry = pool2_bwd(dinp)
    return dx, grads


def _ordered(grads, params):
    out = {}
    for name, _ in param_shapes(params.arch):
        g = grads.get(name)
        out[name] = np.zeros_like(params.arrays[name]) if g is None else g
    return out


# -- public single-image API --------------------------------------------------


def encode(u, theta: NetworkParams) -> LatentCode:
    codes, _ = encoder_fwd(_as_batch(u), theta)
    return LatentCode([c[0].transpose(2, 0, 1) for c in codes], level_weights(theta.n_levels))


def decode(code: LatentCode, theta: NetworkParams) -> np.ndarray:
    _check_code(code, theta)
    out, _ = decoder_fwd(_code_batch(code), theta)
    return out[0, :, :, 0]


def autoencode(u, theta: NetworkParams) -> np.ndarray:
    return decode(encode(u, theta), theta)


def adapt(u, kappa: NetworkParams) -> np.ndarray:
    out, _ = adapter_fwd(_as_batch(u), kappa)
    return out[0, :, :, 0]


def full_network(u, theta: NetworkParams, kappa: NetworkParams | None = None) -> np.ndarray:
    """``N = U o D o E``; without an adapter this is the plain autoencoder."""
    rec = autoencode(u, theta)
    return rec if kappa is None else adapt(rec, kappa)


def _code_batch(code: LatentCode):
    return [np.asarray(a).transpose(1, 2, 0)[None] for a in code.levels]


def _check_code(code: LatentCode, theta: NetworkParams):
    lat = theta.arch["latent_channels"]
    if len(code.levels) != len(lat) or any(a.shape[0] != k for a, k in zip(code.levels, lat)):
        raise ValueError("latent code does not match the autoencoder descriptor")


def model_fwd(x, theta, kappa=None):
    """Batched ``(E(x), N(x))`` sharing one encoder pass."""
    codes, ecache = encoder_fwd(x, theta)
    rec, dcache = decoder_fwd(codes, theta)
    acache = None
    out = rec
    if kappa is not None:
        out, acache = adapter_fwd(rec, kappa)
    return codes, out, (ecache, dcache, acache)


def model_bwd(dcodes, dout, cache, need_input=True):
    """Reverse pass of :func:`model_fwd`; either cotangent may be ``None``.

    Returns ``(dx, theta_grads, kappa_grads)``.
    """
    ecache, dcache, acache = cache
    kgrads = None
    dgrads = {}
    if dout is not None:
        if acache is not None:
            dout, kgrads = adapter_bwd(dout, acache)
        dcodes_d, dgrads = decoder_bwd(dout, dcache)
        if dcodes is not None:
            dcodes = [a + b for a, b in zip(dcodes, dcodes_d)]
        else:
            dcodes = dcodes_d
    dx, egrads = encoder_bwd(dcodes, ecache, need_input=need_input)
    tgrads = dict(egrads)
    tgrads.update(dgrads)
    return dx, tgrads, kgrads


_KINDS = ("encode", "decode", "autoencode", "adapt", "full")


def _split(kind, params):
    if kind == "full":
        theta, kappa = params
        return theta, kappa
    return params, None


def _run(kind, x, params):
    theta, kappa = _split(kind, params)
    if kind == "encode":
        codes, cache = encoder_fwd(x, theta)
        return codes, cache
    if kind == "decode":
        return decoder_fwd(x, theta)
    if kind == "adapt":
        return adapter_fwd(x, theta)
    if kind == "autoencode":
        _, out, cache = model_fwd(x, theta)
        return out, cache
    _, out, cache = model_fwd(x, theta, kappa)
    return out, cache


def _back(kind, cot, cache, params, need_input=True):
    theta, kappa = _split(kind, params)
    if kind == "encode":
        dx, g = encoder_bwd(cot, cache, need_input=need_input)
        return dx, _ordered(g, theta)
    if kind == "decode":
        dx, g = decoder_bwd(cot, cache)
        return dx, _ordered(g, theta)
    if kind == "adapt":
        dx, g = adapter_bwd(cot, cache)
        return dx, _ordered(g, theta)
    dx, tg, kg = model_bwd(None, cot, cache, need_input=need_input)
    if kind == "autoencode":
        return dx, _ordered(tg, theta)
    return dx, (_ordered(tg, theta), _ordered(kg, kappa))


def _prep(kind, u, cotangent, params):
    if kind not in _KINDS:
        raise ValueError(f"unknown network function {kind!r}")
    if kind == "decode":
        theta, _ = _split(kind, params)
        _check_code(u, theta)
        x = _code_batch(u)
    else:
        x = _as_batch(u)
    if kind == "encode":
        cot = _code_batch(cotangent)
    else:
        cot = _as_batch(cotangent)
    return x, cot


def vjp_input(kind: str, u, params, cotangent):
    """``J^T cotangent`` for the network function ``kind`` at input ``u``.

    ``kind`` is one of ``encode``, ``decode``, ``autoencode``, ``adapt`` or
    ``full``; ``params`` is ``(theta, kappa)`` for ``full``.  Codes enter and
    leave as :class:`LatentCode`.
    """
    x, cot = _prep(kind, u, cotangent, params)
    out, cache = _run(kind, x, params)
    shapes = [o.shape for o in out] if isinstance(out, list) else [out.shape]
    cshapes = [c.shape for c in cot] if isinstance(cot, list) else [cot.shape]
    if shapes != cshapes:
        raise ValueError(f"cotangent shapes {cshapes} do not match output {shapes}")
    dx, _ = _back(kind, cot, cache, params)
    if kind == "decode":
        return LatentCode([a[0].transpose(2, 0, 1) for a in dx], u.weights)
    return dx[0, :, :, 0]


def vjp_params(kind: str, u, params, cotangent):
    """Parameter gradients of ``<cotangent, f(u)>``, one array per parameter."""
    x, cot = _prep(kind, u, cotangent, params)
    out, cache = _run(kind, x, params)
    shapes = [o.shape for o in out] if isinstance(out, list) else [out.shape]
    cshapes = [c.shape for c in cot] if isinstance(cot, list) else [cot.shape]
    if shapes != cshapes:
        raise ValueError(f"cotangent shapes {cshapes} do not match output {shapes}")
    _, grads = _back(kind, cot, cache, params, need_input=False)
    return grads


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()}, 0)


def adam_step(params: NetworkParams, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if list(grads) != list(params.arrays):
        raise ValueError("gradient names do not match parameters")
    t = state.t + 1
    new_arrays, m_new, v_new = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, a in params.arrays.items():
        g = np.asarray(grads[name])
        if g.shape != a.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {a.shape}")
        g = g.astype(a.dtype, copy=False)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_arrays[name] = (a - step).astype(a.dtype, copy=False)
        m_new[name] = m.astype(a.dtype, copy=False)
        v_new[name] = v.astype(a.dtype, copy=False)
    return NetworkParams(dict(params.arch), new_arrays, params.seed), AdamState(m_new, v_new, t)
