"""Differentiable MLP kernel, frequency encoding, Adam optimizer and LR schedule.

Everything downstream trains through this module. The networks used here are
fixed-topology fully connected nets with optional input skip connections, so
instead of a general autodiff graph we implement the three passes we actually
need, all batched over the leading axis:

* ``forward`` / ``backward``: standard reverse mode for scalar losses.
* ``input_gradient``: gradient of one output channel w.r.t. the input.
* ``gradient_param_backward``: reverse-over-forward second order pass, giving
  d/d(params) of ``sum_n <a_n, grad_x y(x_n)>`` for an arbitrary per-point
  cotangent ``a`` (expressed as an input tangent). This is what the Eikonal
  loss and the normal-input path of the radiance network need.

Parameters live in a single flat array per network (row-major weights followed
by the bias, layer by layer), which keeps the optimizer and checkpointing
trivial. Training runs in float32; verification against finite differences is
only meaningful in float64, so every pass follows the dtype of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("softplus", "relu", "none", "sigmoid")


# ---------------------------------------------------------------------------
# Frequency encoding
# ---------------------------------------------------------------------------

def encoded_dim(d: int, bands: int, include_input: bool = True) -> int:
    return d * (int(include_input) + 2 * bands)


def frequency_encode(x: np.ndarray, bands: int, include_input: bool = True) -> np.ndarray:
    """NeRF-style encoding: [x?, sin(2^k pi x), cos(2^k pi x) for k < bands]."""
    x = np.asarray(x)
    blocks = []
    if include_input:
        blocks.append(x)
    for k in range(bands):
        arg = (2.0 ** k) * np.pi * x
        blocks.append(np.sin(arg))
        blocks.append(np.cos(arg))
    if not blocks:
        return x[..., :0]
    return np.concatenate(blocks, axis=-1)


def frequency_encode_with_deriv(x, bands, include_input=True):
    """Encoding plus elementwise derivative d enc_m / d x_{j(m)}.

    Each encoded component depends on exactly one input component, so the
    derivative has the same shape as the encoding.
    """
    x = np.asarray(x)
    blocks, dblocks = [], []
    if include_input:
        blocks.append(x)
        dblocks.append(np.ones_like(x))
    for k in range(bands):
        f = (2.0 ** k) * np.pi
        arg = f * x
        s, c = np.sin(arg), np.cos(arg)
        blocks.append(s)
        dblocks.append(f * c)
        blocks.append(c)
        dblocks.append(-f * s)
    return np.concatenate(blocks, axis=-1), np.concatenate(dblocks, axis=-1)


def frequency_encode_second_deriv(x, bands, include_input=True):
    """Elementwise second derivative d^2 enc_m / d x_{j(m)}^2."""
    x = np.asarray(x)
    blocks = []
    if include_input:
        blocks.append(np.zeros_like(x))
    for k in range(bands):
        f = (2.0 ** k) * np.pi
        arg = f * x
        blocks.append(-(f * f) * np.sin(arg))
        blocks.append(-(f * f) * np.cos(arg))
    return np.concatenate(blocks, axis=-1)


def encode_vjp(cotangent, deriv, d):
    """Pull an encoding-space cotangent back to input space."""
    shape = cotangent.shape[:-1]
    blocks = cotangent.shape[-1] // d
    prod = (cotangent * deriv).reshape(shape + (blocks, d))
    return prod.sum(axis=-2)


def encode_jvp(tangent, deriv, d):
    """Push an input-space tangent forward through the encoding."""
    shape = tangent.shape[:-1]
    blocks = deriv.shape[-1] // d
    tiled = np.broadcast_to(tangent[..., None, :], shape + (blocks, d))
    return (deriv.reshape(shape + (blocks, d)) * tiled).reshape(shape + (blocks * d,))


# ---------------------------------------------------------------------------
# Activations (value, first and second derivative from the pre-activation)
# ---------------------------------------------------------------------------

# The softplus family is written in terms of exp(-|beta z|), which is both
# overflow-safe and much faster in numpy than logaddexp/expit.

def _act(name, z, beta):
    if name == "none":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        bz = beta * z
        return (np.maximum(bz, 0.0) + np.log1p(np.exp(-np.abs(bz)))) / beta
    if name == "sigmoid":
        return expit(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name, z, beta):
    if name == "none":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "softplus":
        bz = beta * z
        e = np.exp(-np.abs(bz))
        d = 1.0 / (1.0 + e)
        return np.where(bz >= 0.0, d, 1.0 - d)
    if name == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv2(name, z, beta):
    if name in ("none", "relu"):
        return np.zeros_like(z)
    if name == "softplus":
        e = np.exp(-np.abs(beta * z))
        return beta * e / np.square(1.0 + e)
    if name == "sigmoid":
        s = expit(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    raise ValueError(f"unknown activation {name!r}")


def _layer_d1(cache, spec, l):
    """Activation derivative for layer l, memoized on the forward cache."""
    d1s = cache.setdefault("d1s", {})
    if l not in d1s:
        d1s[l] = _act_deriv(spec.activations[l], cache["zs"][l], spec.softplus_beta)
    return d1s[l]


# ---------------------------------------------------------------------------
# MLP spec / parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected net with optional input skips.

    ``layer_widths`` lists the output width of every linear layer (hidden
    layers plus the output layer); ``activations`` gives one tag per layer.
    A layer index in ``skip_layers`` receives ``concat(h_prev, x)`` as input
    (index 0 is the first layer and may not be a skip).
    """

    input_dim: int
    layer_widths: tuple
    activations: tuple
    skip_layers: frozenset = frozenset()
    softplus_beta: float = 100.0

    def __post_init__(self):
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        if len(self.layer_widths) != len(self.activations):
            raise ValueError("one activation tag per layer required")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for s in self.skip_layers:
            if not 0 < s < len(self.layer_widths):
                raise ValueError("skip indices must be in [1, n_layers)")

    @property
    def n_layers(self):
        return len(self.layer_widths)

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    def to_json(self):
        return {
            "input_dim": self.input_dim,
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "skip_layers": sorted(self.skip_layers),
            "softplus_beta": self.softplus_beta,
        }

    @staticmethod
    def from_json(obj):
        return MlpSpec(
            input_dim=int(obj["input_dim"]),
            layer_widths=tuple(obj["layer_widths"]),
            activations=tuple(obj["activations"]),
            skip_layers=frozenset(obj["skip_layers"]),
            softplus_beta=float(obj.get("softplus_beta", 100.0)),
        )


@lru_cache(maxsize=None)
def layer_shapes(spec: MlpSpec):
    """(out_width, in_width) of each linear layer."""
    shapes = []
    prev = spec.input_dim
    for l, w in enumerate(spec.layer_widths):
        fan_in = prev + (spec.input_dim if l in spec.skip_layers else 0)
        shapes.append((w, fan_in))
        prev = w
    return tuple(shapes)


@lru_cache(maxsize=None)
def param_layout(spec: MlpSpec):
    """(weight_slice, bias_slice) per layer into the flat parameter array."""
    layout, off = [], 0
    for out_w, in_w in layer_shapes(spec):
        ws = slice(off, off + out_w * in_w)
        off += out_w * in_w
        bs = slice(off, off + out_w)
        off += out_w
        layout.append((ws, bs))
    return tuple(layout)


def param_count(spec: MlpSpec) -> int:
    return sum(o * i + o for o, i in layer_shapes(spec))


def param_views(params: np.ndarray, spec: MlpSpec):
    """Per-layer (W, b) views into the flat array (no copies)."""
    views = []
    for (ws, bs), (out_w, in_w) in zip(param_layout(spec), layer_shapes(spec)):
        views.append((params[ws].reshape(out_w, in_w), params[bs]))
    return views


def init_params(spec, mode="standard", seed=0, r0=0.5, raw_input_dim=3,
                dtype=np.float32):
    """Initialize a flat parameter array.

    ``standard``: zero-mean normal with 1/sqrt(fan_in) scale, zero biases.

    ``geometric-sdf``: biases the first output channel toward the SDF of an
    origin-centered sphere of radius ``r0`` (the usual geometric
    initialization for SDF nets). Assumes the first ``raw_input_dim`` input
    columns are the raw coordinates and the rest are frequency-encoded
    copies, whose first-layer (and skip) weights start at zero.
    """
    if mode not in ("standard", "geometric-sdf"):
        raise ValueError(f"unknown init mode {mode!r}")
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(spec), dtype=np.float64)
    shapes = layer_shapes(spec)
    n = spec.n_layers
    for l, ((ws, bs), (out_w, in_w)) in enumerate(zip(param_layout(spec), shapes)):
        W = rng.standard_normal((out_w, in_w))
        if mode == "standard":
            W /= np.sqrt(in_w)
        else:
            if l == n - 1:
                # SDF head approximates ||p|| - r0 at init.
                W = rng.normal(np.sqrt(np.pi) / np.sqrt(in_w), 1e-4, (out_w, in_w))
                if out_w > 1:
                    W[1:] = rng.standard_normal((out_w - 1, in_w)) / np.sqrt(in_w)
                params[bs.start] = -r0
            else:
                W *= np.sqrt(2.0) / np.sqrt(out_w)
                if l == 0:
                    W[:, raw_input_dim:] = 0.0
                elif l in spec.skip_layers:
                    W[:, in_w - spec.input_dim + raw_input_dim:] = 0.0
        params[ws] = W.ravel()
    return params.astype(dtype)


# ---------------------------------------------------------------------------
# Forward / backward passes
# ---------------------------------------------------------------------------

def forward(params, spec, x, want_cache=False, validate=True):
    """Batched forward pass. ``x`` has shape (N, input_dim).

    Returns (y, cache); the cache holds the pre- and post-activations needed
    by the backward and second-order passes.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of shape (N, {spec.input_dim}), got {x.shape}")
    if validate and not np.all(np.isfinite(x)):
        raise ValueError("non-finite MLP input")
    zs, hs = [], [x]
    h = x
    for l, (W, b) in enumerate(param_views(params, spec)):
        inp = np.concatenate([h, x], axis=1) if l in spec.skip_layers else h
        z = inp @ W.T + b
        h = _act(spec.activations[l], z, spec.softplus_beta)
        zs.append(z)
        hs.append(h)
    cache = {"zs": zs, "hs": hs} if want_cache else None
    return h, cache


def backward(params, spec, cache, output_grad, want_param_grads=True):
    """Gradient of ``sum(output_grad * y)`` w.r.t. params and input.

    ``want_param_grads=False`` skips the parameter accumulation (about half
    the work) and returns (None, gx); used when only the input gradient is
    needed, e.g. for normals.
    """
    zs, hs = cache["zs"], cache["hs"]
    x = hs[0]
    gy = np.asarray(output_grad)
    if gy.shape != zs[-1].shape:
        raise ValueError(f"output_grad shape {gy.shape} != output shape {zs[-1].shape}")
    gparams = np.zeros_like(params) if want_param_grads else None
    gviews = param_views(gparams, spec) if want_param_grads else None
    views = param_views(params, spec)
    gx = np.zeros_like(x)
    gh = gy
    for l in range(spec.n_layers - 1, -1, -1):
        W, _ = views[l]
        gz = gh * _layer_d1(cache, spec, l)
        if want_param_grads:
            gW, gb = gviews[l]
            inp = (np.concatenate([hs[l], x], axis=1) if l in spec.skip_layers else hs[l])
            gW += gz.T @ inp
            gb += gz.sum(axis=0)
        ginp = gz @ W
        if l in spec.skip_layers:
            prev_w = hs[l].shape[1]
            gh = ginp[:, :prev_w]
            gx += ginp[:, prev_w:]
        else:
            gh = ginp
        if l == 0:
            gx += gh
    return gparams, gx


def input_gradient(params, spec, x, out_index=0):
    """Per-point gradient of output channel ``out_index`` w.r.t. the input.

    Returns (grad (N, input_dim), cache); the cache doubles as the trace for
    ``gradient_param_backward``.
    """
    y, cache = forward(params, spec, x, want_cache=True)
    gy = np.zeros_like(y)
    gy[:, out_index] = 1.0
    _, gx = backward(params, spec, cache, gy, want_param_grads=False)
    return gx, cache


def forward_tangent(params, spec, cache, x_tangent):
    """Forward-mode pass reusing a cached forward. Returns (y_tangent, tcache)."""
    zs, hs = cache["zs"], cache["hs"]
    x = hs[0]
    xd = np.asarray(x_tangent)
    if xd.shape != x.shape:
        raise ValueError("tangent shape mismatch")
    zds, hds = [], [xd]
    hd = xd
    for l, (W, _) in enumerate(param_views(params, spec)):
        inpd = np.concatenate([hd, xd], axis=1) if l in spec.skip_layers else hd
        zd = inpd @ W.T
        hd = _layer_d1(cache, spec, l) * zd
        zds.append(zd)
        hds.append(hd)
    return hd, {"zds": zds, "hds": hds}


def gradient_param_backward(params, spec, cache, tcache, tangent_out_grad,
                            want_input_grad=False):
    """Parameter gradient of the directional derivative (second-order pass).

    Given a forward cache at points x and a tangent pass with input tangents
    a_n, this returns d/d(params) of ``sum_n <tangent_out_grad_n, yd_n>``
    where ``yd`` is the forward-mode output tangent. With input tangent
    ``a_n`` and ``tangent_out_grad`` selecting output channel c this equals
    d/d(params) of ``sum_n <a_n, grad_x y_c(x_n)>``.

    With ``want_input_grad`` also returns the gradient of the same quantity
    w.r.t. the inputs x_n (holding the tangents a_n fixed), i.e. the
    Hessian-vector products H(x_n) a_n.
    """
    zs, hs = cache["zs"], cache["hs"]
    zds, hds = tcache["zds"], tcache["hds"]
    x, xd = hs[0], hds[0]
    beta = spec.softplus_beta
    gparams = np.zeros_like(params)
    gviews = param_views(gparams, spec)
    views = param_views(params, spec)
    hbar = np.zeros_like(zs[-1])
    hdbar = np.asarray(tangent_out_grad)
    if hdbar.shape != zs[-1].shape:
        raise ValueError("tangent_out_grad shape mismatch")
    gx = np.zeros_like(x)
    for l in range(spec.n_layers - 1, -1, -1):
        W, _ = views[l]
        gW, gb = gviews[l]
        act = spec.activations[l]
        d1 = _layer_d1(cache, spec, l)
        zdbar = d1 * hdbar
        zbar = d1 * hbar
        if act in ("softplus", "sigmoid"):
            zbar = zbar + _act_deriv2(act, zs[l], beta) * zds[l] * hdbar
        if l in spec.skip_layers:
            inp = np.concatenate([hs[l], x], axis=1)
            inpd = np.concatenate([hds[l], xd], axis=1)
        else:
            inp, inpd = hs[l], hds[l]
        gW += zdbar.T @ inpd + zbar.T @ inp
        gb += zbar.sum(axis=0)
        ginp = zbar @ W
        ginpd = zdbar @ W
        if l in spec.skip_layers:
            prev_w = hs[l].shape[1]
            gx += ginp[:, prev_w:]
            hbar, hdbar = ginp[:, :prev_w], ginpd[:, :prev_w]
        else:
            hbar, hdbar = ginp, ginpd
    gx += hbar
    if want_input_grad:
        return gparams, gx
    return gparams


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params, beta1=0.9, beta2=0.999, eps=1e-8):
        return AdamState(m=np.zeros_like(params), v=np.zeros_like(params),
                         step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One in-place Adam update with bias correction. Returns (params, state)."""
    if grads.shape != params.shape:
        raise ValueError("gradient/parameter shape mismatch")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise FloatingPointError(
            f"non-finite gradients in adam_step (step {state.step}, {bad} bad entries)")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grads)
    mhat = state.m / (1.0 - b1 ** state.step)
    vhat = state.v / (1.0 - b2 ** state.step)
    params -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(params.dtype)
    return params, state


# ---------------------------------------------------------------------------
# Learning-rate schedule (linear warmup, cosine decay to end_factor * lr0)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleConfig:
    lr0: float
    warmup_iters: int
    total_iters: int
    end_factor: float = 0.05

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.end_factor <= 1:
            raise ValueError("end_factor must be in (0, 1]")
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup_iters must not exceed total_iters")


def lr_at(iteration: int, cfg: ScheduleConfig) -> float:
    if iteration < 0 or iteration > cfg.total_iters:
        raise ValueError("iteration outside schedule range")
    if cfg.warmup_iters > 0 and iteration < cfg.warmup_iters:
        return cfg.lr0 * iteration / cfg.warmup_iters
    span = cfg.total_iters - cfg.warmup_iters
    u = (iteration - cfg.warmup_iters) / span if span > 0 else 1.0
    cos_part = (np.cos(np.pi * u) + 1.0) / 2.0
    return cfg.lr0 * (cfg.end_factor + (1.0 - cfg.end_factor) * cos_part)
