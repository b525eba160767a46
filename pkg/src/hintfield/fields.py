"""The two neural fields and the SDF volume-rendering math.

The density field maps a position to (sdf, feature vector); the radiance
field maps (position, normal, view dir, light position, features, hints) to
rgb. Compositing follows the unbiased SDF weighting: opacity is derived from
the logistic CDF of the SDF so that weight mass peaks at the zero level-set.

``sample_ray`` and the compositing helpers only require ``sdf`` /
``sdf_and_features`` / ``sharpness`` from the field object, so analytic test
doubles can stand in for the neural field.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit, log_expit

from . import numerics as nm

DEGENERATE_NORMAL_EPS = 1e-8
MIN_VISIBLE_WEIGHT = 1e-4


# ---------------------------------------------------------------------------
# Density field
# ---------------------------------------------------------------------------

@dataclass
class DensityField:
    """SDF + feature MLP with a trainable logistic sharpness.

    ``log_sharpness`` is a length-1 array so the optimizer can update it in
    place alongside the network parameters.
    """

    spec: nm.MlpSpec
    params: np.ndarray
    feature_dim: int
    position_bands: int = 6
    log_sharpness: np.ndarray = dc_field(default_factory=lambda: np.array([np.log(20.0)], dtype=np.float32))
    degenerate_normal_count: int = 0

    @property
    def sharpness(self) -> float:
        return float(np.exp(self.log_sharpness[0]))

    def encode(self, p):
        return nm.frequency_encode(p, self.position_bands)

    def encode_with_deriv(self, p):
        return nm.frequency_encode_with_deriv(p, self.position_bands)

    def forward(self, p, want_cache=False):
        """(sdf (N,), features (N, F)) at points p (N, 3)."""
        enc = self.encode(p)
        y, cache = nm.forward(self.params, self.spec, enc, want_cache=want_cache)
        return y[:, 0], y[:, 1:], cache

    def sdf(self, p):
        return self.forward(p)[0]

    def sdf_and_features(self, p):
        f, feat, _ = self.forward(p)
        return f, feat

    def forward_traced(self, p):
        """Forward pass keeping everything needed to continue differentiating:
        returns (sdf, features, trace) with the encoding, its derivative and
        the MLP cache in params dtype."""
        enc, denc = self.encode_with_deriv(p)
        enc = enc.astype(self.params.dtype)
        y, cache = nm.forward(self.params, self.spec, enc, want_cache=True)
        return y[:, 0], y[:, 1:], {
            "enc": enc, "denc": denc.astype(self.params.dtype),
            "y": y, "cache": cache}

    def gradient(self, p):
        """Spatial SDF gradient at p, plus the traces needed for the
        second-order parameter pass (forward cache and encoding derivative)."""
        enc, denc = self.encode_with_deriv(p)
        gx, cache = nm.input_gradient(self.params, self.spec, enc, out_index=0)
        g = nm.encode_vjp(gx, denc, p.shape[-1])
        return g, cache, denc


def density_eval(field: DensityField, p):
    """Deterministic (sdf, features) evaluation; accepts (3,) or (N, 3)."""
    p = np.asarray(p)
    single = p.ndim == 1
    f, feat = field.sdf_and_features(np.atleast_2d(p))
    return (f[0], feat[0]) if single else (f, feat)


def normal_at(field, p):
    """Unit normal n = grad f / ||grad f||; accepts (3,) or (N, 3).

    Degenerate gradients fall back to (0, 0, 1) and bump the field's
    diagnostics counter.
    """
    p = np.asarray(p)
    single = p.ndim == 1
    g = field.gradient(np.atleast_2d(p))[0]
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    bad = nrm[..., 0] < DEGENERATE_NORMAL_EPS
    if np.any(bad):
        field.degenerate_normal_count += int(np.sum(bad))
    n = np.where(bad[..., None], np.array([0.0, 0.0, 1.0], dtype=g.dtype),
                 g / np.maximum(nrm, DEGENERATE_NORMAL_EPS))
    return n[0] if single else n


def build_density_field(hidden_layers=8, width=256, feature_dim=256,
                        position_bands=6, r0=0.5, init_sharpness=20.0,
                        seed=0, dtype=np.float32):
    """Softplus MLP with a skip connection into the middle hidden layer."""
    input_dim = nm.encoded_dim(3, position_bands)
    widths = (width,) * hidden_layers + (1 + feature_dim,)
    acts = ("softplus",) * hidden_layers + ("none",)
    skip = frozenset({hidden_layers // 2}) if hidden_layers >= 2 else frozenset()
    spec = nm.MlpSpec(input_dim=input_dim, layer_widths=widths, activations=acts,
                      skip_layers=skip)
    params = nm.init_params(spec, "geometric-sdf", seed=seed, r0=r0, dtype=dtype)
    return DensityField(spec=spec, params=params, feature_dim=feature_dim,
                        position_bands=position_bands,
                        log_sharpness=np.array([np.log(init_sharpness)], dtype=dtype))


# ---------------------------------------------------------------------------
# Radiance field
# ---------------------------------------------------------------------------

@dataclass
class RadianceField:
    spec: nm.MlpSpec
    params: np.ndarray
    feature_dim: int
    n_basis: int = 4
    dir_bands: int = 4

    @property
    def hint_dim(self):
        return 1 + self.n_basis


def radiance_input_dim(feature_dim, n_basis, dir_bands=4):
    per3 = nm.encoded_dim(3, dir_bands)
    return 3 + 3 + feature_dim + 2 * per3 + nm.encoded_dim(1 + n_basis, dir_bands)


def build_radiance_field(hidden_layers=4, width=256, feature_dim=256,
                         n_basis=4, dir_bands=4, seed=1, dtype=np.float32):
    """ReLU MLP with sigmoid rgb output; view/light/hints frequency encoded."""
    input_dim = radiance_input_dim(feature_dim, n_basis, dir_bands)
    widths = (width,) * hidden_layers + (3,)
    acts = ("relu",) * hidden_layers + ("sigmoid",)
    spec = nm.MlpSpec(input_dim=input_dim, layer_widths=widths, activations=acts)
    params = nm.init_params(spec, "standard", seed=seed, dtype=dtype)
    return RadianceField(spec=spec, params=params, feature_dim=feature_dim,
                         n_basis=n_basis, dir_bands=dir_bands)


def radiance_net_input(field: RadianceField, p, n, v, l, features, hints):
    """Position, normal and features enter raw; v, l and hints encoded."""
    return np.concatenate([
        p, n, features,
        nm.frequency_encode(v, field.dir_bands),
        nm.frequency_encode(l, field.dir_bands),
        nm.frequency_encode(hints, field.dir_bands),
    ], axis=-1)


def radiance_eval(field: RadianceField, p, n, v, l, features, hints):
    """rgb in (0,1)^3 at sample points. All arguments batched (N, .)."""
    x = radiance_net_input(field, p, n, v, l, features, hints)
    y, _ = nm.forward(field.params, field.spec, x)
    return y


# ---------------------------------------------------------------------------
# SDF -> opacity -> weights
# ---------------------------------------------------------------------------

def phi_s(x, s):
    """Logistic CDF with sharpness s."""
    return expit(s * np.asarray(x))


def alpha_from_sdf(f_i, f_next, s):
    """Section opacity max((Phi(f_i) - Phi(f_next)) / Phi(f_i), 0).

    Computed as 1 - Phi(f_next)/Phi(f_i) via log-CDFs for stability deep
    inside the surface where Phi underflows.
    """
    lp_i = log_expit(s * np.asarray(f_i))
    lp_n = log_expit(s * np.asarray(f_next))
    # a positive exponent would clip to zero opacity anyway; cap it so the
    # exp cannot overflow
    return np.clip(1.0 - np.exp(np.minimum(lp_n - lp_i, 0.0)), 0.0, 1.0)


def composite_weights(alphas):
    """Front-to-back compositing. Returns (weights, transmittances) with
    T_0 = 1, T_{i+1} = T_i (1 - a_i), w_i = T_i a_i."""
    alphas = np.asarray(alphas)
    one_minus = 1.0 - alphas
    trans = np.ones_like(alphas)
    if alphas.shape[-1] > 1:
        trans[..., 1:] = np.cumprod(one_minus[..., :-1], axis=-1)
    return trans * alphas, trans


# ---------------------------------------------------------------------------
# Ray sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleConfig:
    n_coarse: int = 64
    n_importance: int = 16
    n_rounds: int = 2
    upsample_s0: float = 64.0

    @property
    def n_points(self):
        return self.n_coarse + self.n_rounds * self.n_importance


@dataclass
class RaySamples:
    """Per-ray sample set; K+1 depths bounding K sections.

    ``alphas``/``weights``/``trans`` are per section; section i uses the SDF
    at depths i and i+1 and attributes color to the sample point at depth i.
    """

    origins: np.ndarray      # (B, 3)
    directions: np.ndarray   # (B, 3)
    depths: np.ndarray       # (B, K+1), strictly ascending
    sdf: np.ndarray          # (B, K+1)
    features: np.ndarray     # (B, K+1, F)
    alphas: np.ndarray       # (B, K)
    weights: np.ndarray      # (B, K)
    trans: np.ndarray        # (B, K)
    valid: np.ndarray        # (B,) rays with a non-empty [near, far] span
    trace: dict = None       # final-eval trace (see DensityField.forward_traced)

    @property
    def n_sections(self):
        return self.depths.shape[1] - 1

    def positions(self):
        """(B, K+1, 3) sample positions o + t v."""
        return (self.origins[:, None, :]
                + self.depths[..., None] * self.directions[:, None, :])

    def section_midpoints(self):
        return 0.5 * (self.depths[:, :-1] + self.depths[:, 1:])


def sample_section_depths(depths, weights, n, u):
    """Inverse-CDF draws from a per-section weight histogram.

    depths (B, K+1), weights (B, K), u (B, n) uniforms; returns (B, n).
    """
    w = weights + 1e-5
    cdf = np.cumsum(w, axis=-1)
    cdf = cdf / cdf[..., -1:]
    # index of the section each u falls into
    idx = (cdf[:, None, :] < u[..., None]).sum(axis=-1)
    idx = np.minimum(idx, w.shape[-1] - 1)
    lo = np.concatenate([np.zeros_like(cdf[..., :1]), cdf[..., :-1]], axis=-1)
    c_lo = np.take_along_axis(lo, idx, axis=-1)
    c_hi = np.take_along_axis(cdf, idx, axis=-1)
    t_lo = np.take_along_axis(depths, idx, axis=-1)
    t_hi = np.take_along_axis(depths, idx + 1, axis=-1)
    frac = (u - c_lo) / np.maximum(c_hi - c_lo, 1e-12)
    return t_lo + frac * (t_hi - t_lo)


def sample_ray(field, origins, directions, near, far, cfg: SampleConfig,
               rng: np.random.Generator, want_trace=False):
    """Stratified coarse sampling plus importance-resampling rounds.

    Each round re-evaluates the SDF with doubled fixed sharpness and draws
    ``n_importance`` extra depths from the current weight distribution; all
    depths are merged, sorted and epsilon-separated so every ray keeps an
    identical, strictly ascending sample count.
    """
    origins = np.atleast_2d(np.asarray(origins))
    directions = np.atleast_2d(np.asarray(directions))
    near = np.atleast_1d(np.asarray(near)).astype(float)
    far = np.atleast_1d(np.asarray(far)).astype(float)
    B = origins.shape[0]
    valid = far > near
    far_eff = np.where(valid, far, near + 1e-6)

    n = cfg.n_coarse
    u = (np.arange(n) + rng.random((B, n))) / n
    depths = near[:, None] + (far_eff - near)[:, None] * u

    for r in range(cfg.n_rounds):
        if cfg.n_importance <= 0:
            break
        pts = origins[:, None, :] + depths[..., None] * directions[:, None, :]
        f = field.sdf(pts.reshape(-1, 3)).reshape(depths.shape)
        s_up = cfg.upsample_s0 * (2.0 ** r)
        alphas = alpha_from_sdf(f[:, :-1], f[:, 1:], s_up)
        w, _ = composite_weights(alphas)
        m = cfg.n_importance
        u_imp = (np.arange(m) + rng.random((B, m))) / m
        new_t = sample_section_depths(depths, w, m, u_imp)
        depths = np.sort(np.concatenate([depths, new_t], axis=-1), axis=-1)

    # strictly ascending: deduplicate by epsilon separation (keeps the
    # sample count rectangular across rays)
    depths = np.maximum.accumulate(depths, axis=-1)
    span = np.maximum(far_eff - near, 1e-9)[:, None]
    depths = depths + np.arange(depths.shape[1])[None, :] * (1e-7 * span)

    pts = origins[:, None, :] + depths[..., None] * directions[:, None, :]
    trace = None
    if want_trace and hasattr(field, "forward_traced"):
        f, feat, trace = field.forward_traced(pts.reshape(-1, 3))
    else:
        f, feat = field.sdf_and_features(pts.reshape(-1, 3))
    f = f.reshape(depths.shape)
    feat = feat.reshape(depths.shape + (-1,))
    alphas = alpha_from_sdf(f[:, :-1], f[:, 1:], field.sharpness)
    alphas = alphas * valid[:, None]
    weights, trans = composite_weights(alphas)
    return RaySamples(origins=origins, directions=directions, depths=depths,
                      sdf=f, features=feat, alphas=alphas, weights=weights,
                      trans=trans, valid=valid, trace=trace)


def expected_depth(samples: RaySamples, min_weight=MIN_VISIBLE_WEIGHT):
    """Weight-averaged depth of the section midpoints, normalized by the
    accumulated weight. Returns (depth (B,), surface_found (B,)); depth is 0
    for flagged no-surface rays."""
    wsum = samples.weights.sum(axis=-1)
    found = (wsum > min_weight) & samples.valid
    num = (samples.weights * samples.section_midpoints()).sum(axis=-1)
    return np.where(found, num / np.maximum(wsum, min_weight), 0.0), found
