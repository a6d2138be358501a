"""Command line front end: ``gen``, ``train``, ``eval``, ``affinity``, ``sweep``.

Every flag can also come from a JSON config file (``--config``) whose keys
are the flag names with dashes or underscores; explicit flags win. The
``SMILE_SEED`` environment variable is the seed fallback when neither
provides one. Exit codes: 0 success, 2 usage or I/O error, 3 divergence.
"""

import argparse
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import io
from .datagen import PRESETS, DatasetSpec, build_dataset, load_library
from .diagnostics import TRACE_FIELDS, affinity_trace, lemma1_preconditions, record_dict, summarize
from .errors import ContractError, DivergenceError, SmileError
from .lmm import mix
from .metrics import evaluate
from .sr import SrConfig
from .trainer import TERMS, ScalarizationWeights, TrainConfig, train

log = logging.getLogger("smile")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3

CUBE, TRUTH_A, TRUTH_E, MANIFEST = "cube", "truth_abundance", "truth_endmembers.csv", "manifest.json"
HISTORY_FIELDS = ("iteration",) + TERMS + ("total",)

class UsageError(Exception):
    pass

def _env_seed():
    raw = os.environ.get("SMILE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SMILE_SEED must be an integer, got {raw!r}") from None

# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--config", help="JSON file with flag values (flags override it)")
    p.add_argument("--seed", type=int, help="random seed (default: $SMILE_SEED or 0)")
    p.add_argument("--out", help="output directory")

def _train_flags(p):
    p.add_argument("--data", help="directory written by `gen` (cube + optional truth)")
    p.add_argument("--cube", help="cube path (header or .bin); overrides --data")
    p.add_argument("--endmembers", type=int, help="number of endmembers p (default: from manifest)")
    p.add_argument("--mode", choices=("smile", "single_task"), default="smile")
    p.add_argument("--iters", type=int, default=4000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--alpha", type=float, nargs=4, metavar=("A1", "A2", "A3", "A4"),
                   help="loss weights, nonnegative and summing to one")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--kernel-size", type=int, default=5)
    p.add_argument("--no-projection", action="store_true", help="do not clamp endmembers at zero")
    p.add_argument("--raw-losses", action="store_true", help="use sums instead of means")
    p.add_argument("--log-every", type=int, default=0)

def build_parser():
    parser = argparse.ArgumentParser(prog="smile", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize a scene with ground truth")
    _common(g)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--channels", type=int)
    g.add_argument("--endmembers", type=int)
    g.add_argument("--snr-db", type=float, help="target SNR in dB ('inf' for noiseless)")
    g.add_argument("--dirichlet-alpha", type=float)
    g.add_argument("--pure-pixels", action="store_true", help="inject one pure pixel per endmember")
    g.add_argument("--library", help="endmember CSV to use instead of synthetic spectra")

    t = sub.add_parser("train", help="fit endmembers and abundances")
    _common(t)
    _train_flags(t)
    t.add_argument("--no-emit-hr", action="store_true", help="skip HR abundance/cube/kernel dumps")
    t.add_argument("--no-emit-maps", action="store_true", help="skip PGM abundance images")

    e = sub.add_parser("eval", help="align estimates to truth and print metrics JSON")
    e.add_argument("--config")
    e.add_argument("--pred", help="directory written by `train`")
    e.add_argument("--truth", help="directory written by `gen`")
    e.add_argument("--pred-abundance")
    e.add_argument("--pred-endmembers")
    e.add_argument("--truth-abundance")
    e.add_argument("--truth-endmembers")

    a = sub.add_parser("affinity", help="record gradient geometry while training (sgd)")
    _common(a)
    _train_flags(a)
    a.add_argument("--probe-eta", type=float, default=1e-4)
    a.add_argument("--n-probe", type=int, default=50)
    a.set_defaults(iters=500, optimizer="sgd")

    s = sub.add_parser("sweep", help="grid search over the loss weights")
    _common(s)
    _train_flags(s)
    s.add_argument("--step", type=float, default=0.1, help="grid spacing on the simplex")
    s.add_argument("--jobs", type=int, default=1)
    return parser

def parse_args(argv):
    """Parse with config-file defaults layered under explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = io.read_json(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if hasattr(args, "seed") and args.seed is None:
        args.seed = _env_seed()
    return args

# ---------------------------------------------------------------- helpers

def _require(value, what):
    if value is None:
        raise UsageError(f"missing {what}")
    return value

def _out_dir(args):
    out = Path(_require(args.out, "--out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"{out} is not writable")
    return out

def _spec_from_args(args):
    base = PRESETS[args.preset](seed=args.seed).to_dict() if args.preset else DatasetSpec(seed=args.seed).to_dict()
    overrides = {"height": args.height, "width": args.width, "channels": args.channels,
                 "p": args.endmembers, "snr_db": args.snr_db, "dirichlet_alpha": args.dirichlet_alpha}
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    base["seed"] = args.seed
    base["pure_pixel_injection"] = bool(args.pure_pixels)
    return DatasetSpec.from_dict(base)

def _train_config(args):
    weights = ScalarizationWeights.from_sequence(args.alpha) if args.alpha else ScalarizationWeights()
    return TrainConfig(
        lr=args.lr, iters=args.iters, optimizer=args.optimizer, weights=weights,
        sr=SrConfig(scale=args.scale, kernel_size=args.kernel_size), seed=args.seed,
        endmember_projection=not args.no_projection, mode=args.mode,
        raw_losses=args.raw_losses,
    )

def _config_dict(cfg):
    return {
        "lr": cfg.lr, "iters": cfg.iters, "optimizer": cfg.optimizer,
        "alpha": list(cfg.weights.as_tuple()), "scale": cfg.sr.scale,
        "kernel_size": cfg.sr.kernel_size, "seed": cfg.seed,
        "endmember_projection": cfg.endmember_projection, "mode": cfg.mode,
        "raw_losses": cfg.raw_losses,
    }

def _load_inputs(args):
    """Cube, endmember count and optional truth from ``--data``/``--cube``."""
    data = Path(args.data) if args.data else None
    cube_path = Path(args.cube) if args.cube else (data / CUBE if data else None)
    cube_path = _require(cube_path, "--data or --cube")
    if not io.cube_exists(cube_path):
        raise UsageError(f"no cube at {cube_path} (.json + .bin)")
    cube = io.read_cube(cube_path)
    p = args.endmembers
    truth = None
    if data is not None:
        if (data / MANIFEST).exists() and p is None:
            p = int(io.read_json(data / MANIFEST)["spec"]["p"])
        if io.cube_exists(data / TRUTH_A) and (data / TRUTH_E).exists():
            truth = (io.read_cube(data / TRUTH_A), io.read_matrix_csv(data / TRUTH_E))
    p = _require(p, "--endmembers (no manifest to read it from)")
    return cube, p, truth

def _write_history(path, history):
    io.write_rows_csv(path, history, HISTORY_FIELDS)

# ---------------------------------------------------------------- commands

def cmd_gen(args):
    spec = _spec_from_args(args)
    library = None
    if args.library:
        try:
            library = load_library(args.library)
        except OSError as exc:
            raise UsageError(f"cannot read library {args.library}: {exc}") from exc
    out = _out_dir(args)
    d = build_dataset(spec, endmembers=library)
    io.write_cube(out / CUBE, d["cube"])
    io.write_cube(out / TRUTH_A, d["truth_abundance"])
    io.write_matrix_csv(out / TRUTH_E, d["truth_endmembers"])
    io.write_json(out / MANIFEST, {"command": "gen", "spec": spec.to_dict(), "seed": spec.seed,
                                   "library": args.library})
    print(f"wrote {out}")
    return EXIT_OK

def _metrics_for(a, e, truth, cube):
    """Metrics on the values exactly as written to disk."""
    ta, te = truth
    return evaluate(io.quantize(a), e, ta, te, clean=mix(ta, te), noisy=cube)

def cmd_train(args):
    cfg = _train_config(args)
    cube, p, truth = _load_inputs(args)
    out = _out_dir(args)
    manifest = {"command": "train", "config": _config_dict(cfg), "endmembers": p,
                "data": args.data, "cube": args.cube,
                "ablation": cfg.mode == "single_task"}
    try:
        res = train(cube, p, cfg, log_every=args.log_every)
    except DivergenceError as exc:
        _write_history(out / "history.csv", exc.history or [])
        manifest["diverged"] = {"iteration": exc.iteration, "term": exc.term}
        io.write_json(out / MANIFEST, manifest)
        raise
    io.write_matrix_csv(out / "endmembers.csv", res.endmembers)
    io.write_cube(out / "abundance", res.abundance)
    _write_history(out / "history.csv", res.history)
    if not args.no_emit_maps:
        for j in range(p):
            io.write_pgm(out / f"abundance_{j}.pgm", res.abundance[..., j])
    if cfg.mode == "smile" and not args.no_emit_hr:
        io.write_cube(out / "hr_abundance", res.hr_abundance)
        io.write_cube(out / "hr_cube", res.hr_cube)
        io.write_matrix_csv(out / "kernel.csv", res.kernel)
    if truth is not None:
        try:
            report = _metrics_for(res.abundance, res.endmembers, truth, cube)
        except ContractError as exc:  # e.g. an all-zero abundance estimate
            log.warning("metrics undefined: %s", exc)
            io.write_json(out / "metrics.json", {"error": str(exc)})
        else:
            io.write_json(out / "metrics.json", report.to_dict())
            manifest["rmse"] = report.rmse
    io.write_json(out / MANIFEST, manifest)
    print(f"wrote {out}")
    return EXIT_OK

def cmd_eval(args):
    pred = Path(args.pred) if args.pred else None
    truth = Path(args.truth) if args.truth else None
    paths = {
        "pred_abundance": args.pred_abundance or (pred and pred / "abundance"),
        "pred_endmembers": args.pred_endmembers or (pred and pred / "endmembers.csv"),
        "truth_abundance": args.truth_abundance or (truth and truth / TRUTH_A),
        "truth_endmembers": args.truth_endmembers or (truth and truth / TRUTH_E),
    }
    for k, v in paths.items():
        _require(v, "--" + k.replace("_", "-"))
    try:
        ea = io.read_cube(paths["pred_abundance"])
        ta = io.read_cube(paths["truth_abundance"])
        ee = io.read_matrix_csv(paths["pred_endmembers"])
        te = io.read_matrix_csv(paths["truth_endmembers"])
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    clean = noisy = None
    if truth is not None and io.cube_exists(truth / CUBE):
        clean, noisy = mix(ta, te), io.read_cube(truth / CUBE)
    report = evaluate(ea, ee, ta, te, clean=clean, noisy=noisy)
    print(io.dumps(report.to_dict()))
    return EXIT_OK

def cmd_affinity(args):
    cfg = _train_config(args)
    if cfg.mode != "smile":
        raise UsageError("affinity needs --mode smile")
    cube, p, _ = _load_inputs(args)
    out = _out_dir(args)
    try:
        run = affinity_trace(cube, p, cfg, probe_eta=args.probe_eta)
    except DivergenceError as exc:
        _write_history(out / "history.csv", exc.history or [])
        raise
    rows = [record_dict(r) for r in run.records]
    io.write_rows_csv(out / "affinity_trace.csv", rows, TRACE_FIELDS + ("padded_cos",))
    _write_history(out / "history.csv", run.history)
    summary = summarize(run.records, n_probe=args.n_probe)
    lemma = lemma1_preconditions(run.state, cfg.weights, summary.get("conflict_free_fraction"))
    summary["lemma1"] = {**lemma.__dict__, "passed": lemma.passed}
    summary["config"] = _config_dict(cfg.diagnostics())
    summary["probe_eta"] = args.probe_eta
    io.write_json(out / "summary.json", summary)
    print(io.dumps({k: v for k, v in summary.items() if k != "config"}))
    return EXIT_OK

def simplex_grid(step):
    """All weight vectors on the probability simplex with spacing ``step``."""
    n = round(1.0 / step)
    if n < 1 or not math.isclose(n * step, 1.0, rel_tol=1e-9):
        raise UsageError(f"--step must divide 1 evenly, got {step}")
    grid = []
    for i, j, k in itertools.product(range(n + 1), repeat=3):
        rest = n - i - j - k
        if rest >= 0:
            grid.append((i / n, j / n, k / n, rest / n))
    return grid

def _sweep_one(job):
    cube, p, truth, cfg = job
    row = {f"a{i + 1}": w for i, w in enumerate(cfg.weights.as_tuple())}
    try:
        res = train(cube, p, cfg)
    except DivergenceError as exc:
        row["status"] = f"diverged at {exc.iteration} ({exc.term})"
        return row
    row.update(res.history[-1] if res.history else {})
    row["status"] = "ok"
    if truth is not None:
        m = evaluate(res.abundance, res.endmembers, *truth)
        row.update(rmse=m.rmse, aad=m.aad, sad=m.sad_mean)
    return row

def cmd_sweep(args):
    base = _train_config(args)
    cube, p, truth = _load_inputs(args)
    out = _out_dir(args)
    jobs = [(cube, p, truth, replace(base, weights=ScalarizationWeights(*w)))
            for w in simplex_grid(args.step)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    fields = ("a1", "a2", "a3", "a4", "status") + TERMS + ("total", "rmse", "aad", "sad")
    io.write_rows_csv(out / "sweep.csv", rows, fields)
    io.write_json(out / MANIFEST, {"command": "sweep", "config": _config_dict(base),
                                   "step": args.step, "runs": len(rows)})
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} runs)")
    return EXIT_OK

COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "affinity": cmd_affinity, "sweep": cmd_sweep}

def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_USAGE if exc.code else EXIT_OK
    except UsageError as exc:
        print(f"smile: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"smile: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, OSError, ValueError, SmileError, json.JSONDecodeError) as exc:
        print(f"smile: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
