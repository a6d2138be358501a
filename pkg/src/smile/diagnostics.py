"""Empirical checks of task affinity and gradient alignment between the two branches.

Task 1 is unmixing (loss ``L1``), task 2 is super-resolution (loss ``L2``);
they interact only through the shared endmember matrix ``E``. Every check
is written against a small two-task interface so the closed-form quadratic
toys and the real model go through identical code:

* ``params`` -- ``{name: ndarray}`` of current values
* ``shared`` -- names of the shared arrays
* ``specific`` -- ``{1: names, 2: names}``
* ``loss(task, params)`` -> float
* ``loss_and_grad(task, params)`` -> ``(float, {name: grad})`` over the
  task's specific and shared names

Gradients of different tasks live in one concatenated coordinate space;
a task's gradient is zero on the other task's specific coordinates, so the
inner product ``G1 . G2`` reduces to the shared block. The reported cosine
is normalized over that common block; the cosine of the full padded
vectors is kept alongside as ``padded_cos``.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DivergenceError
from .sr import loss_L2
from .trainer import SHARED, SR, UNMIX, apply_update, initialize, trainable
from .unmix import decode, encode_abundance, loss_L3_nuclear, loss_L4_asc, mse

log = logging.getLogger(__name__)


def _strip(d, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in d.items() if k.startswith(prefix)}


class SmileTasks:
    """Two-task view of a model state; never mutates ``state``."""

    def __init__(self, state, cube, cfg):
        self.state = state
        self.cube = np.asarray(cube, dtype=np.float64)
        self.cfg = cfg
        self.params = state.params
        self.shared = SHARED
        self.specific = {1: UNMIX, 2: SR}

    def _loss(self, task, tensors):
        raw = self.cfg.raw_losses
        if task == 1:
            a1 = encode_abundance(self.cube, _strip(tensors, "unmix."))
            return mse(self.cube, decode(a1, tensors["E"]), raw)
        return loss_L2(self.cube, self.state.noise, _strip(tensors, "sr."), tensors["E"],
                       self.cfg.sr, raw)

    def loss(self, task, params=None):
        params = self.params if params is None else params
        tensors = {k: dc.Tensor(v) for k, v in params.items()}
        return self._loss(task, tensors).item()

    def loss_and_grad(self, task, params=None):
        params = self.params if params is None else params
        names = self.specific[task] + self.shared
        tensors = {k: dc.Tensor(v, requires_grad=k in names) for k, v in params.items()}
        with dc.Tape() as tape:
            loss = self._loss(task, tensors)
        grads = dc.backward(loss, tape, wrt=[tensors[n] for n in names])
        return loss.item(), dict(zip(names, grads))


class QuadraticTasks:
    """``l_i(w) = (w - target_i)^2`` sharing a single scalar ``w``.

    Second order Taylor expansion is exact, so every diagnostic has a closed
    form.
    """

    def __init__(self, w, target1, target2):
        self.params = {"w": np.array([float(w)])}
        self.targets = {1: float(target1), 2: float(target2)}
        self.shared = ("w",)
        self.specific = {1: (), 2: ()}

    def loss(self, task, params=None):
        w = (self.params if params is None else params)["w"][0]
        return (w - self.targets[task]) ** 2

    def loss_and_grad(self, task, params=None):
        w = (self.params if params is None else params)["w"][0]
        return self.loss(task, params), {"w": np.array([2.0 * (w - self.targets[task])])}


def _stepped(params, grads, eta, names):
    out = dict(params)
    for n in names:
        out[n] = params[n] - eta * grads[n]
    return out


def _dot(g1, g2):
    return float(sum(np.vdot(g1[n], g2[n]) for n in g1.keys() & g2.keys()))


def _norm(g):
    return math.sqrt(sum(float(np.vdot(v, v)) for v in g.values()))


def task_affinity(tasks, eta, source=2, target=1):
    """``1 - l_target(after) / l_target(before)`` for a shared-only step on ``l_source``.

    The step moves only the shared parameters, by ``-eta`` times the source
    task's gradient; the target's specific parameters stay fixed.
    """
    base = tasks.loss(target)
    if base == 0.0:
        raise ContractError("task affinity is undefined when the target loss is zero")
    _, g = tasks.loss_and_grad(source)
    after = tasks.loss(target, _stepped(tasks.params, g, eta, tasks.shared))
    return 1.0 - after / base


def theorem1_bound(tasks, eta):
    """Lower bound ``eta |G1|^2 / l1`` that affinity is claimed to exceed."""
    l1, g1 = tasks.loss_and_grad(1)
    return eta * _norm(g1) ** 2 / l1


@dataclass
class GradientGeometry:
    dot: float
    cos: float
    norm1: float
    norm2: float
    padded_cos: float
    degenerate: bool = False


def _geometry(g1, g2):
    # the dot product only sees coordinates both gradients carry; the cosine
    # is normalized over that common block, the padded variant over everything
    n1, n2 = _norm(g1), _norm(g2)
    dot = _dot(g1, g2)
    shared = g1.keys() & g2.keys()
    s1 = _norm({k: g1[k] for k in shared})
    s2 = _norm({k: g2[k] for k in shared})
    degenerate = s1 == 0.0 or s2 == 0.0
    cos = 0.0 if degenerate else dot / (s1 * s2)
    padded = 0.0 if n1 == 0.0 or n2 == 0.0 else dot / (n1 * n2)
    return GradientGeometry(dot, cos, n1, n2, padded, degenerate)


def gradient_geometry(tasks):
    """Inner product, cosine and norms of the two task gradients.

    ``cos`` is normalized over the coordinates common to both gradients
    (the shared block); ``padded_cos`` uses the norms of the full
    zero-padded vectors. A zero-norm shared gradient reports ``cos = 0``
    with ``degenerate=True``.
    """
    _, g1 = tasks.loss_and_grad(1)
    _, g2 = tasks.loss_and_grad(2)
    return _geometry(g1, g2)


@dataclass
class Theorem2Result:
    l1_base: float
    l1_mtl: float
    l1_single: float
    margin: float


def _theorem2(tasks, g1, g2, eta, base):
    p = tasks.params
    single = _stepped(p, g1, eta, tasks.specific[1] + tasks.shared)
    mtl = dict(single)
    for n in tasks.shared:
        mtl[n] = p[n] - eta * (g1[n] + g2[n])
    l_mtl = tasks.loss(1, mtl)
    l_single = tasks.loss(1, single)
    return Theorem2Result(base, l_mtl, l_single, l_single - l_mtl)


def theorem2_check(tasks, eta):
    """Compare ``l1`` after the combined step and after the single-task step.

    Both steps update the unmixing-specific parameters by ``-eta G1``; the
    shared parameters move by ``-eta (G1 + G2)`` (multitask) or ``-eta G1``
    (single task). ``margin = l1(single) - l1(mtl)``.
    """
    base, g1 = tasks.loss_and_grad(1)
    _, g2 = tasks.loss_and_grad(2)
    return _theorem2(tasks, g1, g2, eta, base)


@dataclass
class Lemma1Report:
    n_params: int
    n_tasks: int
    over_parameterized: bool
    conflict_free_fraction: float
    no_conflicts: bool
    weights: tuple
    convex_weights: bool

    @property
    def passed(self):
        return self.over_parameterized and self.no_conflicts and self.convex_weights


def lemma1_preconditions(state, weights, conflict_free_fraction=None, n_tasks=2,
                         ratio=100, conflict_threshold=0.9):
    """Check over-parameterization, absence of gradient conflict and convex weights.

    ``weights`` may be any four numbers; invalid ones are reported, not
    raised. ``conflict_free_fraction`` is the share of iterations with
    ``G1 . G2 >= 0`` from an affinity trace (``None`` leaves that item
    unverified and failing).
    """
    w = tuple(float(x) for x in getattr(weights, "as_tuple", lambda: weights)())
    q = state.n_params() if hasattr(state, "n_params") else int(state)
    convex = len(w) == 4 and all(x >= 0 for x in w) and abs(sum(w) - 1.0) <= 1e-9
    frac = float("nan") if conflict_free_fraction is None else float(conflict_free_fraction)
    return Lemma1Report(
        n_params=q,
        n_tasks=n_tasks,
        over_parameterized=q >= ratio * n_tasks,
        conflict_free_fraction=frac,
        no_conflicts=conflict_free_fraction is not None and frac >= conflict_threshold,
        weights=w,
        convex_weights=convex,
    )


@dataclass
class AffinityRecord:
    iteration: int
    affinity: float
    bound: float
    dot: float
    cos: float
    l1_before: float
    l1_mtl_step: float
    l1_single_step: float
    padded_cos: float = float("nan")


TRACE_FIELDS = ("iteration", "affinity", "bound", "dot", "cos", "l1_before",
                "l1_mtl_step", "l1_single_step")


@dataclass
class AffinityRun:
    records: list
    history: list
    state: object
    summary: dict


def _branch_gradients(tasks, cfg):
    """``(l1, G1, l2, G2, breakdown, step_grads)`` for one training iteration.

    The total gradient is assembled by linearity from ``G2`` and the
    gradient of the unmixing-only part, saving a second pass through the
    super-resolution branch.
    """
    state, cube = tasks.state, tasks.cube
    a = cfg.weights
    raw = cfg.raw_losses
    names = UNMIX + SHARED
    tensors = {k: dc.Tensor(v, requires_grad=k in names) for k, v in state.params.items()}
    with dc.Tape() as tape:
        a1 = encode_abundance(cube, _strip(tensors, "unmix."))
        l1 = mse(cube, decode(a1, tensors["E"]), raw)
        l3 = loss_L3_nuclear(a1, raw)
        l4 = loss_L4_asc(a1, raw)
        part = l1 * a.a1 + l3 * a.a3 + l4 * a.a4
    wrt = [tensors[n] for n in names]
    g1 = dict(zip(names, dc.backward(l1, tape, wrt=wrt)))
    gpart = dict(zip(names, dc.backward(part, tape, wrt=wrt)))
    l2, g2 = tasks.loss_and_grad(2)
    step = dict(gpart)
    for n in SR:
        step[n] = a.a2 * g2[n]
    step["E"] = gpart["E"] + a.a2 * g2["E"]
    breakdown = {"L1": l1.item(), "L2": l2, "L3": l3.item(), "L4": l4.item()}
    breakdown["total"] = a.a1 * breakdown["L1"] + a.a2 * l2 + a.a3 * breakdown["L3"] + a.a4 * breakdown["L4"]
    return l1.item(), g1, l2, g2, breakdown, step


def affinity_trace(cube, p, cfg, probe_eta=1e-4, state=None):
    """Train in plain gradient-descent mode, recording the diagnostics each iteration.

    The configuration is switched to sgd without endmember clamping (with a
    warning) when needed. Each record is taken at the pre-step parameters;
    ``affinity`` and ``bound`` use the training step size ``cfg.lr``, the
    theorem-2 columns use ``probe_eta``.
    """
    if cfg.mode != "smile":
        raise ContractError("affinity tracing needs both branches (mode='smile')")
    diag = cfg.diagnostics()
    if diag != cfg:
        log.warning("affinity tracing forces optimizer=sgd and endmember_projection=False")
    cfg = diag
    cube = np.asarray(cube, dtype=np.float64)
    if state is None:
        state = initialize(cube, p, cfg)
    tasks = SmileTasks(state, cube, cfg)
    eta = cfg.lr
    records, history = [], []
    for _ in range(cfg.iters):
        l1, g1, _, g2, breakdown, step = _branch_gradients(tasks, cfg)
        geo = _geometry(g1, g2)
        if l1 == 0.0:
            raise ContractError("task affinity is undefined when the unmixing loss is zero")
        after = tasks.loss(1, _stepped(state.params, g2, eta, SHARED))
        t2 = _theorem2(tasks, g1, g2, probe_eta, l1)
        records.append(AffinityRecord(
            iteration=state.step,
            affinity=1.0 - after / l1,
            bound=eta * geo.norm1 ** 2 / l1,
            dot=geo.dot,
            cos=geo.cos,
            l1_before=l1,
            l1_mtl_step=t2.l1_mtl,
            l1_single_step=t2.l1_single,
            padded_cos=geo.padded_cos,
        ))
        breakdown["iteration"] = state.step
        history.append(breakdown)
        if not all(math.isfinite(v) for v in breakdown.values()):
            bad = next(k for k, v in breakdown.items() if not math.isfinite(v))
            raise DivergenceError(state.step, bad, history)
        apply_update(state, {n: step[n] for n in trainable(state, cfg)}, cfg)
    return AffinityRun(records, history, state, summarize(records))


def sample_indices(n, k):
    """``k`` evenly spaced indices in ``range(n)`` (all of them if ``n <= k``)."""
    if n <= k:
        return list(range(n))
    return sorted({int(round(i)) for i in np.linspace(0, n - 1, k)})


def summarize(records, n_probe=50, rel_tol=1e-6):
    """Aggregate statistics of an affinity trace.

    Theorem-2 dominance is assessed at ``n_probe`` evenly spaced iterations:
    wherever ``G1 . G2 >= 0`` it requires
    ``l1_mtl <= l1_single + rel_tol * l1_before``.
    """
    if not records:
        return {"iterations": 0}
    cos = np.array([r.cos for r in records])
    dots = np.array([r.dot for r in records])
    idx = sample_indices(len(records), n_probe)
    checked = [records[i] for i in idx if records[i].dot >= 0]
    violations = [r.iteration for r in checked
                  if r.l1_mtl_step > r.l1_single_step + rel_tol * r.l1_before]
    margins = [(r.l1_single_step - r.l1_mtl_step) / r.l1_before for r in checked]
    above = [r.affinity >= r.bound for r in records]
    return {
        "iterations": len(records),
        "mean_cos": float(cos.mean()),
        "min_cos": float(cos.min()),
        "mean_padded_cos": float(np.mean([r.padded_cos for r in records])),
        "conflict_free_fraction": float(np.mean(dots >= 0)),
        "positive_cos_fraction": float(np.mean(cos >= 0)),
        "affinity_above_bound_fraction": float(np.mean(above)),
        "theorem2_sampled": len(idx),
        "theorem2_checked": len(checked),
        "theorem2_violations": violations,
        "theorem2_min_rel_margin": float(min(margins)) if margins else float("nan"),
        "theorem2_mean_rel_margin": float(np.mean(margins)) if margins else float("nan"),
    }


def record_dict(r):
    return asdict(r)
