"""Shadow and highlight hints fed to the radiance network.

Hints are computed once per view ray at the expected-depth surface anchor and
are never part of the differentiation trace: the trainer consumes them as
constants. The shadow hint is a continuous transmittance (not a hard mask);
highlight hints are GGX microfacet lobes for a small basis of roughnesses,
evaluated with local shading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (alpha_from_sdf, expected_depth, normal_at,
                     sample_section_depths)

DEFAULT_ROUGHNESS_BASIS = (0.02, 0.05, 0.13, 0.34)

_BASIS_BY_SIZE = {
    1: (0.13,),
    2: (0.05, 0.13),
    4: DEFAULT_ROUGHNESS_BASIS,
    8: (0.01, 0.02, 0.035, 0.05, 0.08, 0.13, 0.21, 0.34),
}


def roughness_basis(n_basis: int):
    """Roughness basis with 1, 2, 4 or 8 entries (4 is the default set)."""
    try:
        return _BASIS_BY_SIZE[n_basis]
    except KeyError:
        raise ValueError(f"basis size must be one of {sorted(_BASIS_BY_SIZE)}, got {n_basis}")


@dataclass(frozen=True)
class HintConfig:
    n_shadow: int = 64
    shadow_rays: int = 1          # k importance-sampled shadow rays per view ray
    basis: tuple = DEFAULT_ROUGHNESS_BASIS
    surface_offset_scale: float = 3.0   # shadow origin offset = scale / sharpness
    march_bound: float = 0.0            # >0: clamp the march to this scene sphere
    use_shadow: bool = True
    use_highlight: bool = True

    def __post_init__(self):
        if self.shadow_rays < 1:
            raise ValueError("shadow_rays must be >= 1")
        if any(not 0 < r <= 1 for r in self.basis):
            raise ValueError("roughness values must lie in (0, 1]")


@dataclass
class HintVector:
    shadow: np.ndarray      # (B,) in [0, 1]
    highlights: np.ndarray  # (B, n_basis), >= 0

    def as_array(self):
        return np.concatenate([self.shadow[:, None], self.highlights], axis=-1)


def _normalize(v, eps=1e-12):
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), eps)


# ---------------------------------------------------------------------------
# GGX microfacet lobe (Trowbridge-Reitz D, Smith G, Schlick F, F0 = 0.04),
# including the local-shading cosine (n.l).
# ---------------------------------------------------------------------------

def ggx_ndf(ndh, roughness):
    """Trowbridge-Reitz normal distribution D(h); normalized so that the
    projected-solid-angle integral over the hemisphere is 1."""
    a2 = float(roughness) ** 2
    ndh = np.asarray(ndh, dtype=float)
    denom = ndh * ndh * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def ggx_eval(n, v, l, roughness, f0=0.04):
    """D(h) G(v,l) F(v,h) / (4 (n.v)(n.l)) * (n.l); zero when backfacing."""
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=float)
    l = np.asarray(l, dtype=float)
    a = float(roughness)
    a2 = a * a
    ndv = np.sum(n * v, axis=-1)
    ndl = np.sum(n * l, axis=-1)
    h = _normalize(v + l)
    ndh = np.sum(n * h, axis=-1)
    vdh = np.sum(v * h, axis=-1)
    d_term = ggx_ndf(ndh, a)
    def g1(cos_x):
        return 2.0 * cos_x / (cos_x + np.sqrt(a2 + (1.0 - a2) * cos_x * cos_x))
    g_term = g1(np.maximum(ndv, 1e-9)) * g1(np.maximum(ndl, 1e-9))
    f_term = f0 + (1.0 - f0) * np.clip(1.0 - vdh, 0.0, 1.0) ** 5
    val = d_term * g_term * f_term / np.maximum(4.0 * ndv, 1e-9)
    return np.where((ndl > 0.0) & (ndv > 0.0), val, 0.0)


# ---------------------------------------------------------------------------
# Shadow transmittance
# ---------------------------------------------------------------------------

def shadow_transmittance(field, x_surf, light, cfg: HintConfig,
                         rng: np.random.Generator):
    """Transmittance along a single stratified march from the surface anchor
    toward the light. Batched: x_surf (B, 3), light (3,) or (B, 3)."""
    x_surf = np.atleast_2d(np.asarray(x_surf))
    light = np.broadcast_to(np.asarray(light, dtype=float), x_surf.shape)
    B = x_surf.shape[0]
    to_light = light - x_surf
    dist = np.linalg.norm(to_light, axis=-1)
    d = to_light / np.maximum(dist[:, None], 1e-12)

    t0 = cfg.surface_offset_scale / field.sharpness
    t1 = dist.copy()
    if cfg.march_bound > 0.0:
        # the field is only meaningful inside the scene sphere
        b = np.sum(x_surf * d, axis=-1)
        c = np.sum(x_surf * x_surf, axis=-1) - cfg.march_bound ** 2
        disc = np.maximum(b * b - c, 0.0)
        t1 = np.minimum(t1, -b + np.sqrt(disc))
    t1 = np.maximum(t1, t0 + 1e-6)

    # render-cost audit hook: one march per call per ray
    field.shadow_march_count = getattr(field, "shadow_march_count", 0) + B

    m = cfg.n_shadow
    u = (np.arange(m + 1) + np.concatenate(
        [rng.random((B, m)), np.zeros((B, 1))], axis=-1)) / (m + 1)
    depths = t0 + (t1 - t0)[:, None] * np.sort(u, axis=-1)
    pts = x_surf[:, None, :] + depths[..., None] * d[:, None, :]
    f = field.sdf(pts.reshape(-1, 3)).reshape(depths.shape)
    alphas = alpha_from_sdf(f[:, :-1], f[:, 1:], field.sharpness)
    return np.prod(1.0 - alphas, axis=-1)


def shadow_hint_multi(field, samples, light, k, cfg: HintConfig,
                      rng: np.random.Generator):
    """Average transmittance over k positions importance-drawn from the
    view-ray weight distribution. k = 1 reduces to a single shadow ray at the
    expected depth."""
    depth, found = expected_depth(samples)
    if k == 1:
        anchors = samples.origins + depth[:, None] * samples.directions
        return shadow_transmittance(field, anchors, light, cfg, rng), found
    u = np.broadcast_to((np.arange(k) + 0.5) / k,
                        (samples.origins.shape[0], k)).copy()
    t = sample_section_depths(samples.depths, samples.weights, k, u)
    pts = samples.origins[:, None, :] + t[..., None] * samples.directions[:, None, :]
    light_b = np.broadcast_to(np.asarray(light, dtype=float),
                              samples.origins.shape)
    light_rep = np.repeat(light_b, k, axis=0)
    trans = shadow_transmittance(field, pts.reshape(-1, 3), light_rep, cfg, rng)
    return trans.reshape(-1, k).mean(axis=-1), found


# ---------------------------------------------------------------------------
# Highlight hints
# ---------------------------------------------------------------------------

def highlight_hints(n_surf, view_pos, x_surf, light, basis):
    """One GGX lobe value per basis roughness at the surface anchor."""
    x_surf = np.atleast_2d(np.asarray(x_surf))
    v = _normalize(np.broadcast_to(np.asarray(view_pos, dtype=float), x_surf.shape) - x_surf)
    l = _normalize(np.broadcast_to(np.asarray(light, dtype=float), x_surf.shape) - x_surf)
    return np.stack([ggx_eval(n_surf, v, l, r) for r in basis], axis=-1)


def compute_hints(field, samples, camera_pos, light, cfg: HintConfig,
                  rng: np.random.Generator) -> HintVector:
    """Hint vector for a batch of primary rays.

    No-surface rays get the open convention (shadow 1, highlights 0).
    Disabled hint channels are emitted as those same neutral constants so the
    radiance input layout is independent of the ablation flags.
    """
    B = samples.origins.shape[0]
    depth, found = expected_depth(samples)
    shadow = np.ones(B)
    highlights = np.zeros((B, len(cfg.basis)))
    if not np.any(found):
        return HintVector(shadow=shadow, highlights=highlights)

    if cfg.use_shadow:
        trans, _ = shadow_hint_multi(field, samples, light, cfg.shadow_rays, cfg, rng)
        shadow = np.where(found, trans, 1.0)
    if cfg.use_highlight:
        anchors = samples.origins + depth[:, None] * samples.directions
        n_surf = normal_at(field, anchors)
        hl = highlight_hints(n_surf, camera_pos, anchors, light, cfg.basis)
        highlights = np.where(found[:, None], hl, 0.0)
    return HintVector(shadow=shadow, highlights=highlights)
