"""Super-resolution branch: deep-image-prior abundance generator and blind kernel.

The abundance generator ``g_A2`` is three 3x3 reflect-padded convolutions
(``d -> 32 -> 32 -> p``, softplus after each) applied to a frozen
high-resolution noise tensor. The kernel generator ``g_k`` is an MLP
(``64 -> 64 -> k*k``) on a frozen noise vector followed by a softmax over
all entries, so the kernel is nonnegative with unit mass.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, DimensionError
from .unmix import decode, mse

GENERATOR_KEYS = ("c1.W", "c1.b", "c2.W", "c2.b", "c3.W", "c3.b")
KERNEL_KEYS = ("k.W1", "k.b1", "k.W2", "k.b2")


@dataclass(frozen=True)
class SrConfig:
    scale: int = 2
    kernel_size: int = 5
    noise_channels: int = 8
    hidden: int = 32
    kernel_noise: int = 64
    kernel_hidden: int = 64

    def __post_init__(self):
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.noise_channels < 1:
            raise ConfigError("noise_channels must be >= 1")


@dataclass
class NoiseInputs:
    """Frozen generator inputs, drawn once from the standard normal."""

    l_y: np.ndarray  # (s*H) x (s*W) x d
    l_k: np.ndarray  # kernel_noise


def sample_noise(rng, height, width, cfg):
    s = cfg.scale
    return NoiseInputs(
        l_y=rng.standard_normal((s * height, s * width, cfg.noise_channels)),
        l_k=rng.standard_normal(cfg.kernel_noise),
    )


def _uniform(rng, fan_in, shape):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_generator(rng, p, cfg):
    d, h = cfg.noise_channels, cfg.hidden
    params = {}
    for i, (cin, cout) in enumerate([(d, h), (h, h), (h, p)], start=1):
        params[f"c{i}.W"] = _uniform(rng, 9 * cin, (3, 3, cin, cout))
        params[f"c{i}.b"] = np.zeros(cout)
    return params


def init_kernel_net(rng, cfg):
    k2 = cfg.kernel_size ** 2
    return {
        "k.W1": _uniform(rng, cfg.kernel_noise, (cfg.kernel_noise, cfg.kernel_hidden)),
        "k.b1": np.zeros(cfg.kernel_hidden),
        "k.W2": _uniform(rng, cfg.kernel_hidden, (cfg.kernel_hidden, k2)),
        "k.b2": np.zeros(k2),
    }


def generate_hr_abundance(noise, params):
    """High-resolution abundance Tensor, ``(s H) x (s W) x p``, entries > 0."""
    z = dc.as_tensor(noise.l_y)
    for i in (1, 2, 3):
        w = dc.as_tensor(params[f"c{i}.W"])
        if w.shape[2] != z.shape[2]:
            raise DimensionError(f"layer c{i} expects {w.shape[2]} channels, got {z.shape[2]}")
        z = dc.activation(dc.conv2d(z, w, params[f"c{i}.b"]), "softplus")
    return z


def generate_kernel(noise, params):
    """``k x k`` downsampling kernel Tensor, nonnegative and summing to one."""
    lk = dc.reshape(dc.as_tensor(noise.l_k), (1, -1))
    hidden = dc.activation(dc.matmul(lk, params["k.W1"]) + params["k.b1"], "softplus")
    logits = dc.matmul(hidden, params["k.W2"]) + params["k.b2"]
    k = math.isqrt(logits.size)
    return dc.reshape(dc.activation(logits, "softmax_over_all"), (k, k))


def downsample(hr, kernel, scale):
    """Blur each band with ``kernel`` (reflect padding) and keep every ``scale``-th pixel."""
    hr = dc.as_tensor(hr)
    if hr.shape[0] % scale or hr.shape[1] % scale:
        raise DimensionError(f"HR size {hr.shape[:2]} is not divisible by scale {scale}")
    return dc.conv2d_stride(hr, kernel, scale)


def sr_forward(noise, params, endmembers, cfg):
    """Return ``(A_hr, K_hat, Y2)`` with ``Y2 = downsample(A_hr E, K_hat)``.

    The blur-and-subsample acts on each band independently and decoding is
    a per-pixel linear map, so the two commute; downsampling the ``p``
    abundance channels before decoding gives the same ``Y2`` as the literal
    order at a fraction of the cost.
    """
    a_hr = generate_hr_abundance(noise, params)
    kernel = generate_kernel(noise, params)
    y2 = decode(downsample(a_hr, kernel, cfg.scale), endmembers)
    return a_hr, kernel, y2


def loss_L2(y, noise, params, endmembers, cfg, raw=False):
    """Mean squared error between ``y`` and the downsampled HR reconstruction."""
    y = dc.as_tensor(y)
    _, _, y2 = sr_forward(noise, params, endmembers, cfg)
    if y2.shape != y.shape:
        raise DimensionError(f"SR reconstruction {y2.shape} vs cube {y.shape}")
    return mse(y, y2, raw)
