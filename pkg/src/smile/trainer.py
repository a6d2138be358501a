"""Joint training of both branches under a convex combination of four losses.

The total objective is ``a1 L1 + a2 L2 + a3 L3 + a4 L4``: unmixing
reconstruction, super-resolution reconstruction, nuclear norm of the
abundances and the sum-to-one penalty. The endmember matrix ``E`` is the
decoder weight shared by both branches. ``mode="single_task"`` drops the
super-resolution branch entirely (the ablation baseline).
"""

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, DivergenceError
from .sr import (GENERATOR_KEYS, KERNEL_KEYS, SrConfig, init_generator, init_kernel_net,
                 sample_noise, sr_forward)
from .unmix import ENCODER_KEYS, decode, encode_abundance, init_encoder, loss_L3_nuclear, loss_L4_asc, mse
from .vca import vca_extract

log = logging.getLogger(__name__)

UNMIX = tuple(f"unmix.{k}" for k in ENCODER_KEYS)
SR = tuple(f"sr.{k}" for k in GENERATOR_KEYS) + tuple(f"sr.{k}" for k in KERNEL_KEYS)
SHARED = ("E",)
TERMS = ("L1", "L2", "L3", "L4")


@dataclass(frozen=True)
class ScalarizationWeights:
    # the regularizers are O(1) while the reconstruction MSEs are O(1e-3);
    # larger a3 lets the nuclear norm flatten the abundances
    a1: float = 0.49
    a2: float = 0.49
    a3: float = 0.01
    a4: float = 0.01

    def __post_init__(self):
        vals = self.as_tuple()
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ConfigError(f"weights must be nonnegative, got {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ConfigError(f"weights must sum to 1, got sum {sum(vals)!r}")

    def as_tuple(self):
        return (self.a1, self.a2, self.a3, self.a4)

    @classmethod
    def from_sequence(cls, seq):
        if len(seq) != 4:
            raise ConfigError("need exactly four weights")
        return cls(*map(float, seq))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    iters: int = 4000
    optimizer: str = "adam"
    weights: ScalarizationWeights = field(default_factory=ScalarizationWeights)
    sr: SrConfig = field(default_factory=SrConfig)
    seed: int = 0
    endmember_projection: bool = True
    mode: str = "smile"
    hidden: int = 64
    raw_losses: bool = False
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.iters < 0:
            raise ConfigError("iters must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("smile", "single_task"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def diagnostics(self):
        """Copy with plain gradient steps and no endmember clamping."""
        return replace(self, optimizer="sgd", endmember_projection=False)


@dataclass
class ParamState:
    """All trainable arrays (flat, namespaced keys) plus frozen inputs and optimizer moments."""

    params: dict
    noise: object
    step: int = 0
    moments: dict = field(default_factory=dict)

    @property
    def endmembers(self):
        return self.params["E"]

    def group(self, names):
        return {n: self.params[n] for n in names}

    def copy(self):
        return copy.deepcopy(self)

    def n_params(self, names=None):
        names = self.params if names is None else names
        return int(sum(self.params[n].size for n in names))


def initialize(cube, p, cfg):
    """VCA endmembers, random branch weights, frozen noise inputs.

    Each component draws from its own seeded stream so the unmixing branch
    starts identically whichever mode is used.
    """
    cube = np.asarray(cube, dtype=np.float64)
    h, w, c = cube.shape
    rng = lambda k: np.random.default_rng([cfg.seed, k])  # noqa: E731
    params = {"E": vca_extract(cube, p, seed=cfg.seed)}
    for k, v in init_encoder(rng(11), c, p, cfg.hidden).items():
        params[f"unmix.{k}"] = v
    for k, v in init_generator(rng(12), p, cfg.sr).items():
        params[f"sr.{k}"] = v
    for k, v in init_kernel_net(rng(13), cfg.sr).items():
        params[f"sr.{k}"] = v
    noise = sample_noise(rng(14), h, w, cfg.sr)
    return ParamState(params=params, noise=noise)


def _strip(tensors, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in tensors.items() if k.startswith(prefix)}


def trainable(state, cfg):
    names = UNMIX + SHARED
    return names + SR if cfg.mode == "smile" else names


def forward_terms(state, cube, cfg, tensors=None):
    """Evaluate the loss terms on Tensors built from ``state``.

    Returns ``(terms, outputs)``; ``terms`` maps ``L1..L4`` to scalar
    Tensors (``L2`` only in smile mode) and ``outputs`` holds ``A1``, and in
    smile mode ``A_hr`` and ``K``.
    """
    if tensors is None:
        tensors = {k: dc.Tensor(v) for k, v in state.params.items()}
    raw = cfg.raw_losses
    e = tensors["E"]
    a1 = encode_abundance(cube, _strip(tensors, "unmix."))
    terms = {
        "L1": mse(cube, decode(a1, e), raw),
        "L3": loss_L3_nuclear(a1, raw),
        "L4": loss_L4_asc(a1, raw),
    }
    outputs = {"A1": a1}
    if cfg.mode == "smile":
        a_hr, kern, y2 = sr_forward(state.noise, _strip(tensors, "sr."), e, cfg.sr)
        terms["L2"] = mse(cube, y2, raw)
        outputs.update(A_hr=a_hr, K=kern)
    return terms, outputs


def total_loss(state, cube, cfg, tensors=None):
    """Weighted sum of the loss terms and their float values.

    In single-task mode the super-resolution term is neither evaluated nor
    weighted.
    """
    terms, _ = forward_terms(state, cube, cfg, tensors)
    alphas = dict(zip(TERMS, cfg.weights.as_tuple()))
    total = None
    for name in TERMS:
        if name not in terms:
            continue
        piece = terms[name] * alphas[name]
        total = piece if total is None else total + piece
    breakdown = {name: terms[name].item() for name in terms}
    breakdown.setdefault("L2", float("nan"))
    return total, breakdown


def gradients(state, cube, cfg):
    """Loss breakdown and ``{name: grad}`` of the total loss over trainable arrays."""
    names = trainable(state, cfg)
    tensors = {k: dc.Tensor(v, requires_grad=k in names) for k, v in state.params.items()}
    with dc.Tape() as tape:
        total, breakdown = total_loss(state, cube, cfg, tensors)
    grads = dc.backward(total, tape, wrt=[tensors[n] for n in names])
    breakdown["total"] = total.item()
    return breakdown, dict(zip(names, grads))


def apply_update(state, grads, cfg):
    """One optimizer step in place on ``state.params``."""
    state.step += 1
    if cfg.optimizer == "sgd":
        for name, g in grads.items():
            state.params[name] -= cfg.lr * g
    else:
        b1, b2 = cfg.betas
        t = state.step
        for name, g in grads.items():
            m, v = state.moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            state.moments[name] = (m, v)
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            state.params[name] -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
    if cfg.endmember_projection:
        np.maximum(state.params["E"], 0.0, out=state.params["E"])


def _check_finite(breakdown, iteration, history):
    for name in TERMS + ("total",):
        val = breakdown.get(name)
        if val is not None and not (name == "L2" and math.isnan(val)) and not math.isfinite(val):
            raise DivergenceError(iteration, name, history)


def train_step(state, cube, cfg, history=None):
    """Forward/backward of the total loss and one parameter update (in place).

    Returns the step log: the loss terms evaluated before the update.
    """
    breakdown, grads = gradients(state, cube, cfg)
    breakdown["iteration"] = state.step
    _check_finite(breakdown, state.step, history)
    apply_update(state, grads, cfg)
    return breakdown


@dataclass
class TrainResult:
    endmembers: np.ndarray
    abundance: np.ndarray
    history: list
    state: ParamState
    reconstruction: np.ndarray = None
    hr_abundance: np.ndarray = None
    hr_cube: np.ndarray = None
    kernel: np.ndarray = None


def estimates(state, cube, cfg):
    """Final abundance, reconstruction and (smile mode) SR estimates as arrays."""
    _, out = forward_terms(state, cube, cfg)
    e = state.params["E"]
    a1 = out["A1"].data
    res = {"abundance": a1, "reconstruction": decode(a1, e).data}
    if "A_hr" in out:
        res["hr_abundance"] = out["A_hr"].data
        res["hr_cube"] = decode(out["A_hr"].data, e).data
        res["kernel"] = out["K"].data
    return res


def train(cube, p, cfg, state=None, callback=None, log_every=0):
    """Run ``cfg.iters`` iterations from a fresh (or given) state.

    ``callback(state, log)`` is invoked before each step. Raises
    :class:`DivergenceError` with the partial history attached.
    """
    cube = np.asarray(cube, dtype=np.float64)
    if state is None:
        state = initialize(cube, p, cfg)
    history = []
    for it in range(cfg.iters):
        if callback is not None:
            callback(state, history)
        history.append(train_step(state, cube, cfg, history))
        if log_every and it % log_every == 0:
            log.info("iter %d total %.6g", it, history[-1]["total"])
    est = estimates(state, cube, cfg)
    return TrainResult(
        endmembers=state.params["E"].copy(),
        abundance=est["abundance"],
        history=history,
        state=state,
        reconstruction=est["reconstruction"],
        hr_abundance=est.get("hr_abundance"),
        hr_cube=est.get("hr_cube"),
        kernel=est.get("kernel"),
    )
