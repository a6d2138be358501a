"""Vertex Component Analysis (Nascimento & Bioucas-Dias, 2005).

Selects ``p`` pixels lying at the vertices of the data simplex by repeated
projection onto a random direction orthogonal to the span of the vertices
found so far. The data are first reduced to ``p`` dimensions, either by a
projective projection (high SNR) or by an affine projection onto the
``p - 1`` leading principal directions (low SNR).
"""

import math

import numpy as np

from .errors import ContractError, DegenerateDataError
from .lmm import check_cube


def estimate_snr(y, mean, x_proj):
    """Data SNR estimate in dB used to pick the projection variant.

    ``y`` is ``C x N``, ``mean`` the band means (``C x 1``) and ``x_proj``
    the zero-mean data projected on the ``p`` leading directions.
    """
    c, n = y.shape
    p = x_proj.shape[0]
    p_y = np.sum(y ** 2) / n
    p_x = np.sum(x_proj ** 2) / n + np.sum(mean ** 2)
    denom = p_y - p_x
    num = p_x - p / c * p_y
    if denom <= 0 or num <= 0:
        return math.inf
    return 10.0 * math.log10(num / denom)


def _leading_directions(mat, d):
    u, _, _ = np.linalg.svd(mat, full_matrices=False)
    return u[:, :d]


def vca_extract(cube, p, seed=0, snr_db=None, return_indices=False):
    """Extract ``p`` endmember spectra (rows) from an ``H x W x C`` cube.

    The returned rows are actual pixel spectra of ``cube``. ``snr_db``
    overrides the internal SNR estimate.
    """
    y_cube = check_cube(cube)
    h, w, c = y_cube.shape
    n = h * w
    if p < 1 or p > min(c, n):
        raise ContractError(f"p={p} must lie in [1, min(C={c}, N={n})]")
    y = y_cube.reshape(n, c).T  # C x N
    sv = np.linalg.svd(y, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(c, n) * np.finfo(float).eps)) if sv[0] > 0 else 0
    if rank < p:
        raise DegenerateDataError(f"data rank {rank} is below the requested p={p}")

    if p == 1:
        u1 = _leading_directions(y @ y.T / n, 1)
        idx = np.array([int(np.argmax(np.abs(u1[:, 0] @ y)))])
        out = y[:, idx].T.copy()
        return (out, idx) if return_indices else out

    mean = y.mean(axis=1, keepdims=True)
    y0 = y - mean
    ud = _leading_directions(y0 @ y0.T / n, p)
    x_p = ud.T @ y0
    snr = estimate_snr(y, mean, x_p) if snr_db is None else snr_db
    snr_th = 15.0 + 10.0 * math.log10(p)

    if snr < snr_th:
        d = p - 1
        x = x_p[:d]
        scale = math.sqrt(np.max(np.sum(x ** 2, axis=0)))
        proj = np.vstack([x, scale * np.ones((1, n))])
    else:
        d = p
        ud = _leading_directions(y @ y.T / n, d)
        x = ud.T @ y
        u = x.mean(axis=1, keepdims=True)
        denom = np.sum(x * u, axis=0)
        proj = x / denom

    rng = np.random.default_rng(seed)
    idx = np.zeros(p, dtype=int)
    basis = np.zeros((p, p))
    basis[-1, 0] = 1.0
    for i in range(p):
        wdir = rng.random((p, 1))
        f = wdir - basis @ (np.linalg.pinv(basis) @ wdir)
        f /= np.linalg.norm(f)
        v = f.T @ proj
        idx[i] = int(np.argmax(np.abs(v)))
        basis[:, i] = proj[:, idx[i]]
    out = y[:, idx].T.copy()
    return (out, idx) if return_indices else out
