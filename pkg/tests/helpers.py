"""Shared test doubles and small utilities for the suite."""

import numpy as np
from scipy.special import expit

from hintfield.fields import composite_weights


class AnalyticSphereField:
    """Closed-form sphere SDF standing in for the neural density field.

    Implements the protocol used by the sampler, the compositor and the hint
    module: sdf, sdf_and_features, gradient and sharpness.
    """

    def __init__(self, radius=0.5, sharpness=200.0, center=(0.0, 0.0, 0.0),
                 feature_dim=2):
        self.radius = radius
        self.center = np.asarray(center, dtype=float)
        self.log_sharpness = np.array([np.log(sharpness)])
        self.feature_dim = feature_dim
        self.shadow_march_count = 0

    @property
    def sharpness(self):
        return float(np.exp(self.log_sharpness[0]))

    def sdf(self, p):
        return np.linalg.norm(np.atleast_2d(p) - self.center, axis=-1) - self.radius

    def sdf_and_features(self, p):
        f = self.sdf(p)
        return f, np.zeros(f.shape + (self.feature_dim,))

    def gradient(self, p):
        d = np.atleast_2d(p) - self.center
        nrm = np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-12)
        return d / nrm, None, None


def sphere_hit_depth(origins, directions, radius=0.5, center=(0.0, 0.0, 0.0)):
    """Closed-form first-intersection depth; nan for missing rays."""
    o = np.atleast_2d(origins) - np.asarray(center, dtype=float)
    d = np.atleast_2d(directions)
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius * radius
    disc = b * b - c
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    return np.where((disc > 0.0) & (t > 0.0), t, np.nan)


def rays_toward_sphere(n, rng, radius=0.5, origin_dist=1.6, jitter=0.35):
    """Random rays guaranteed to hit the sphere (origins outside, aimed at a
    point well inside)."""
    o = rng.standard_normal((n, 3))
    o *= origin_dist / np.linalg.norm(o, axis=-1, keepdims=True)
    target = rng.standard_normal((n, 3))
    target /= np.linalg.norm(target, axis=-1, keepdims=True)
    target *= (jitter * radius) * rng.random((n, 1)) ** (1 / 3)
    d = target - o
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return o, d


def nerf_biased_depth(field, origins, directions, near, far, n_samples, rng):
    """Depth from the NeRF-style density sigma = s * phi_s(f) (scaled
    logistic pdf of the SDF), the classic biased construction the unbiased
    weighting replaces. Its weight mass peaks before the zero level-set, so
    the expected depth lands systematically early."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    B = origins.shape[0]
    s = field.sharpness
    u = (np.arange(n_samples) + rng.random((B, n_samples))) / n_samples
    t = near[:, None] + (far - near)[:, None] * u
    delta = np.diff(t, axis=-1)
    mid = 0.5 * (t[:, :-1] + t[:, 1:])
    pts = origins[:, None, :] + mid[..., None] * directions[:, None, :]
    f = field.sdf(pts.reshape(-1, 3)).reshape(mid.shape)
    sig = expit(s * f)
    sigma = s * s * sig * (1.0 - sig)
    alphas = 1.0 - np.exp(-sigma * delta)
    w, _ = composite_weights(alphas)
    wsum = w.sum(axis=-1)
    return (w * mid).sum(axis=-1) / np.maximum(wsum, 1e-12), wsum
