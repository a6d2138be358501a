"""Unmixing autoencoder branch: pixelwise encoder, shared linear decoder, L1/L3/L4.

Encoder parameters live in a dict with keys ``W1, b1, W2, b2, W3, b3``
(a ``C -> h -> h -> p`` MLP, softplus after every layer). The decoder weight
is the ``p x C`` endmember matrix itself and has no bias.
"""

import math

import numpy as np

from . import diffcore as dc
from .errors import DimensionError

ENCODER_KEYS = ("W1", "b1", "W2", "b2", "W3", "b3")


def init_encoder(rng, channels, p, hidden=64):
    """He-style uniform fan-in initialization, zero biases."""
    sizes = [(channels, hidden), (hidden, hidden), (hidden, p)]
    params = {}
    for i, (fan_in, fan_out) in enumerate(sizes, start=1):
        bound = math.sqrt(6.0 / fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def encode_abundance(y, params):
    """Map an ``H x W x C`` cube to an ``H x W x p`` abundance Tensor (> 0)."""
    y = dc.as_tensor(y)
    if y.ndim != 3:
        raise DimensionError(f"expected an H x W x C cube, got {y.shape}")
    h, w, c = y.shape
    w1 = dc.as_tensor(params["W1"])
    if w1.shape[0] != c:
        raise DimensionError(f"cube has {c} bands but encoder expects {w1.shape[0]}")
    z = dc.reshape(y, (h * w, c))
    for i in (1, 2, 3):
        z = dc.activation(dc.matmul(z, params[f"W{i}"]) + params[f"b{i}"], "softplus")
    return dc.reshape(z, (h, w, z.shape[1]))


def decode(a, endmembers):
    """``Y_hat = A E`` per pixel; differentiable in both arguments."""
    a = dc.as_tensor(a)
    e = dc.as_tensor(endmembers)
    if a.ndim != 3 or e.ndim != 2 or a.shape[2] != e.shape[0]:
        raise DimensionError(f"abundance {a.shape} and endmembers {e.shape} do not match")
    h, w, p = a.shape
    out = dc.matmul(dc.reshape(a, (h * w, p)), e)
    return dc.reshape(out, (h, w, e.shape[1]))


def mse(y, y_hat, raw=False):
    d = dc.sub(y, y_hat)
    return dc.tsum(dc.square(d)) if raw else dc.tmean(dc.square(d))


def loss_L1(y, params, endmembers, raw=False):
    """Reconstruction error of the unmixing branch (mean over ``N * C``)."""
    return mse(y, decode(encode_abundance(y, params), endmembers), raw)


def loss_L3_nuclear(a, raw=False, eps=1e-12):
    """Nuclear norm of the ``N x p`` abundance matrix, divided by ``sqrt(N p)``.

    Computed as ``tr sqrt(A^T A)`` through an eigendecomposition of the
    ``p x p`` Gram matrix.
    """
    a = dc.as_tensor(a)
    p = a.shape[-1]
    n = a.size // p
    mat = dc.reshape(a, (n, p))
    val = dc.trace_sqrt_psd(dc.matmul(dc.transpose(mat), mat), eps)
    return val if raw else val / math.sqrt(n * p)


def loss_L4_asc(a, raw=False):
    """Per-pixel ``|1 - sum_j a_j|`` averaged over pixels."""
    a = dc.as_tensor(a)
    p = a.shape[-1]
    n = a.size // p
    dev = dc.absolute(dc.sub(1.0, dc.tsum(dc.reshape(a, (n, p)), axis=1)))
    return dc.tsum(dev) if raw else dc.tmean(dev)
