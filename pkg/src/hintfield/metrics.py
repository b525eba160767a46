"""Image quality metrics: PSNR (peak 1.0), single-scale SSIM on luma, and
the versioned evaluation-report JSON schema."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve

PSNR_CAP = 99.0
REPORT_SCHEMA_VERSION = 1

METRICS_REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "per_image", "mean_psnr", "min_psnr",
                 "mean_ssim", "min_ssim"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "split": {"type": "string"},
        "checkpoint": {"type": "string"},
        "per_image": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["file", "psnr", "ssim"],
                "properties": {
                    "file": {"type": "string"},
                    "psnr": {"type": "number", "minimum": 0.0},
                    "ssim": {"type": "number", "minimum": -1.0, "maximum": 1.0},
                    "shadow_l1": {"type": "number", "minimum": 0.0},
                },
            },
        },
        "mean_psnr": {"type": "number"},
        "min_psnr": {"type": "number"},
        "mean_ssim": {"type": "number"},
        "min_ssim": {"type": "number"},
        "mean_shadow_l1": {"type": "number"},
    },
}


def build_report(per_image, split=None, checkpoint=None):
    """Aggregate per-image entries ({file, psnr, ssim[, shadow_l1]}) into a
    schema-conforming report dict."""
    if not per_image:
        raise ValueError("report needs at least one image entry")
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "per_image": list(per_image),
        "mean_psnr": float(np.mean([e["psnr"] for e in per_image])),
        "min_psnr": float(np.min([e["psnr"] for e in per_image])),
        "mean_ssim": float(np.mean([e["ssim"] for e in per_image])),
        "min_ssim": float(np.min([e["ssim"] for e in per_image])),
    }
    if split is not None:
        report["split"] = split
    if checkpoint is not None:
        report["checkpoint"] = checkpoint
    shadow = [e["shadow_l1"] for e in per_image if "shadow_l1" in e]
    if shadow:
        report["mean_shadow_l1"] = float(np.mean(shadow))
    return report


def validate_report(report):
    import jsonschema
    jsonschema.validate(report, METRICS_REPORT_SCHEMA)
    return report


def psnr(a, b):
    """-10 log10(MSE) with peak 1.0, capped at 99 dB for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean(np.square(a - b))
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(-10.0 * np.log10(mse), PSNR_CAP))


def _gaussian_kernel(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def ssim(a, b, k1=0.01, k2=0.03, data_range=1.0):
    """Standard SSIM with an 11x11 Gaussian window (sigma 1.5) on the mean of
    the rgb channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=-1)
        b = b.mean(axis=-1)
    kernel = _gaussian_kernel()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def blur(x):
        return convolve(x, kernel, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
