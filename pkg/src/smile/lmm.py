"""Linear mixing model arithmetic.

Array conventions used throughout the package:

* cube -- ``H x W x C`` reflectances, pixel-major (band interleaved by pixel)
* endmembers -- ``p x C``, one spectrum per row
* abundance -- ``H x W x p`` per-pixel fractions
"""

import numpy as np

from .errors import DimensionError


def check_cube(y, name="cube"):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3:
        raise DimensionError(f"{name} must be H x W x C, got shape {y.shape}")
    return y


def mix(abundance, endmembers, noise=None):
    """Mix abundances with endmember spectra: ``Y = A E + N`` per pixel."""
    a = check_cube(abundance, "abundance")
    e = np.asarray(endmembers, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != a.shape[2]:
        raise DimensionError(
            f"abundance has p={a.shape[2]} but endmembers have shape {e.shape}")
    h, w, p = a.shape
    y = (a.reshape(h * w, p) @ e).reshape(h, w, e.shape[1])
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != y.shape:
            raise DimensionError(f"noise shape {noise.shape} != cube shape {y.shape}")
        y = y + noise
    return y


def reconstruction_error(y, a, e):
    """Mean squared error of ``Y - A E`` over all ``N * C`` entries."""
    y = check_cube(y)
    recon = mix(a, e)
    if recon.shape != y.shape:
        raise DimensionError(f"cube {y.shape} vs reconstruction {recon.shape}")
    diff = y - recon
    return float(np.mean(diff * diff))


def constraint_report(a):
    """Nonnegativity and sum-to-one diagnostics of an abundance map."""
    a = np.asarray(a, dtype=np.float64)
    return {
        "min_value": float(a.min()),
        "max_sum_deviation": float(np.max(np.abs(a.sum(axis=-1) - 1.0))),
    }
