"""Evaluation metrics: RMSE, AAD, SAD with endmember permutation alignment.

All angles are in degrees.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError, DimensionError


@dataclass
class MetricsReport:
    rmse: float
    aad: float
    sad_mean: float
    sad_per_endmember: list
    permutation: list
    snr_realized: float = None
    aad_excluded_pixels: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        if d["snr_realized"] is not None and math.isinf(d["snr_realized"]):
            d["snr_realized"] = "inf"
        return d


def sad(est, truth):
    """Spectral angle between two vectors."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    ne, nt = np.linalg.norm(est), np.linalg.norm(truth)
    if ne == 0 or nt == 0:
        raise ContractError("spectral angle is undefined for a zero vector")
    c = float(np.dot(est, truth) / (ne * nt))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def sad_matrix(est, truth):
    """``out[i, j]`` is the angle between estimated row ``i`` and true row ``j``."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    ne = np.linalg.norm(est, axis=1, keepdims=True)
    nt = np.linalg.norm(truth, axis=1, keepdims=True)
    if np.any(ne == 0) or np.any(nt == 0):
        raise ContractError("spectral angle is undefined for a zero vector")
    cos = (est / ne) @ (truth / nt).T
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def align_permutation(est, truth):
    """Permutation ``perm`` minimizing total SAD; ``est[perm[j]]`` matches ``truth[j]``."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise DimensionError(f"endmember shapes differ: {est.shape} vs {truth.shape}")
    cost = sad_matrix(est, truth)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(cols), dtype=int)
    perm[cols] = rows
    return perm


def sad_mean(est, truth):
    """Mean and per-endmember SAD of already aligned endmember matrices."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise DimensionError(f"endmember shapes differ: {est.shape} vs {truth.shape}")
    per = [sad(est[i], truth[i]) for i in range(len(truth))]
    return float(np.mean(per)), per


def rmse(est, truth):
    """``sqrt(1/N sum_i ||a_i - a_hat_i||^2)`` over pixels (not ``N * p``)."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise DimensionError(f"abundance shapes differ: {est.shape} vs {truth.shape}")
    p = truth.shape[-1]
    d = (est - truth).reshape(-1, p)
    return math.sqrt(float(np.sum(d * d)) / d.shape[0])


def aad(est, truth, return_excluded=False):
    """Mean over pixels of the angle between true and estimated abundance vectors.

    Pixels where either vector is zero are skipped.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise DimensionError(f"abundance shapes differ: {est.shape} vs {truth.shape}")
    p = truth.shape[-1]
    e = est.reshape(-1, p)
    t = truth.reshape(-1, p)
    ne = np.linalg.norm(e, axis=1)
    nt = np.linalg.norm(t, axis=1)
    keep = (ne > 0) & (nt > 0)
    if not np.any(nt > 0):
        raise ContractError("abundance angle is undefined for an all-zero truth map")
    if not np.any(keep):
        raise ContractError("no pixel has nonzero estimated and true abundances")
    cos = np.sum(e[keep] * t[keep], axis=1) / (ne[keep] * nt[keep])
    value = float(np.mean(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))))
    excluded = int(keep.size - keep.sum())
    return (value, excluded) if return_excluded else value


def snr_realized(clean, noisy):
    """``10 log10(||clean||^2 / ||noisy - clean||^2)``; ``inf`` for identical cubes."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise DimensionError(f"cube shapes differ: {clean.shape} vs {noisy.shape}")
    noise = float(np.sum((noisy - clean) ** 2))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(clean * clean)) / noise)


def evaluate(est_abundance, est_endmembers, truth_abundance, truth_endmembers,
             clean=None, noisy=None):
    """Align estimates to truth by SAD and compute every metric."""
    perm = align_permutation(est_endmembers, truth_endmembers)
    e = np.asarray(est_endmembers)[perm]
    a = np.asarray(est_abundance)[..., perm]
    mean_sad, per = sad_mean(e, truth_endmembers)
    aad_value, excluded = aad(a, truth_abundance, return_excluded=True)
    snr = snr_realized(clean, noisy) if clean is not None and noisy is not None else None
    return MetricsReport(
        rmse=rmse(a, truth_abundance),
        aad=aad_value,
        sad_mean=mean_sad,
        sad_per_endmember=per,
        permutation=[int(i) for i in perm],
        snr_realized=snr,
        aad_excluded_pixels=excluded,
    )
