"""Synthetic hyperspectral scenes: Dirichlet abundances, smooth spectra, Gaussian noise."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError, GenerationError
from .lmm import mix


@dataclass(frozen=True)
class DatasetSpec:
    height: int = 64
    width: int = 64
    channels: int = 224
    p: int = 5
    snr_db: float = 30.0
    dirichlet_alpha: float = 1.0
    seed: int = 0
    pure_pixel_injection: bool = False

    def __post_init__(self):
        for name in ("height", "width", "channels", "p"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.p > self.channels:
            raise ConfigError(f"p={self.p} exceeds channel count {self.channels}")
        if self.channels < 2:
            raise ConfigError("need at least two bands")
        if not self.dirichlet_alpha > 0:
            raise ConfigError("dirichlet_alpha must be positive")
        if self.pure_pixel_injection and self.p > self.height * self.width:
            raise ConfigError("not enough pixels for pure pixel injection")

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["snr_db"]):
            d["snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("snr_db") == "inf":
            d["snr_db"] = math.inf
        return cls(**d)


def dataset1(p=5, snr_db=30.0, seed=0, **kw):
    """64 x 64 pixels, 224 bands, ``p`` in 3..10, SNR 20/30/40 dB."""
    return DatasetSpec(height=64, width=64, channels=224, p=p, snr_db=snr_db, seed=seed, **kw)


def dataset2(seed=0, **kw):
    """100 x 100 pixels, 4 endmembers, 30 dB (dimensions only)."""
    kw.setdefault("channels", 224)
    return DatasetSpec(height=100, width=100, p=4, snr_db=30.0, seed=seed, **kw)


PRESETS = {"dataset1": dataset1, "dataset2": dataset2}


def _rng(spec, stream):
    # independent streams per component keep each part reproducible on its own
    return np.random.default_rng([spec.seed, stream])


def sample_dirichlet_abundance(spec):
    rng = _rng(spec, 1)
    n = spec.height * spec.width
    a = rng.dirichlet(np.full(spec.p, spec.dirichlet_alpha), size=n)
    if spec.pure_pixel_injection:
        where = rng.choice(n, size=spec.p, replace=False)
        a[where] = np.eye(spec.p)
    return a.reshape(spec.height, spec.width, spec.p)


def spectral_angle(u, v):
    """Angle in degrees between two spectra."""
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def _bump_spectrum(rng, c):
    bands = np.arange(c, dtype=np.float64)
    s = np.zeros(c)
    for _ in range(rng.integers(3, 7)):
        centre = rng.uniform(-0.1 * c, 1.1 * c)
        width = rng.uniform(0.06, 0.2) * c
        s += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((bands - centre) / width) ** 2)
    s += rng.uniform(0.0, 0.2)
    return s / s.max()


def generate_endmembers(spec, min_angle=10.0, max_tries=1000):
    """Smooth spectra in ``[0, 1]`` with pairwise spectral angle >= ``min_angle`` degrees."""
    rng = _rng(spec, 2)
    chosen = []
    tries = 0
    while len(chosen) < spec.p:
        if tries >= max_tries:
            raise GenerationError(
                f"could not place {spec.p} spectra {min_angle} deg apart in {max_tries} draws")
        tries += 1
        cand = _bump_spectrum(rng, spec.channels)
        if all(spectral_angle(cand, e) >= min_angle for e in chosen):
            chosen.append(cand)
    return np.array(chosen)


def load_library(path):
    """Read an endmember CSV: one spectrum per row, ``#`` lines are comments."""
    e = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return e.astype(np.float64)


def add_noise_to_snr(clean, snr_db, seed):
    """Add white Gaussian noise so the expected SNR equals ``snr_db``.

    ``snr_db = inf`` returns the input unchanged.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return clean.copy()
    power = float(np.mean(clean * clean))
    if power == 0.0:
        raise ContractError("cannot calibrate noise against a zero-energy cube")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng([seed, 3])
    return clean + sigma * rng.standard_normal(clean.shape)


def build_dataset(spec, endmembers=None):
    """Return ``{"cube", "truth_abundance", "truth_endmembers"}`` for ``spec``.

    ``endmembers`` overrides the synthesized spectra (e.g. from
    :func:`load_library`); its row count must equal ``spec.p``.
    """
    a = sample_dirichlet_abundance(spec)
    if endmembers is None:
        e = generate_endmembers(spec)
    else:
        e = np.asarray(endmembers, dtype=np.float64)
        if e.shape != (spec.p, spec.channels):
            raise ConfigError(f"library shape {e.shape} != ({spec.p}, {spec.channels})")
    cube = add_noise_to_snr(mix(a, e), spec.snr_db, spec.seed)
    return {"cube": cube, "truth_abundance": a, "truth_endmembers": e}
