"""Config-driven experiment runner: seeded trials, traces, CSV summaries.

A single TOML file describes the problem (synthetic instance or rating
dataset plus split), the solver, and the run (trial count, base seed,
output directory). Each trial t runs with seed ``seed_base + t``: data
generation / mask sampling, parameter derivation, initialization and the
solve are all driven by that one seed, so a run is reproducible end to end.

Outputs per run directory:

* ``trial_XXX_trace.jsonl``: one record per solver iteration;
* ``trial_XXX_result.json``: metrics, solver stats, certificates and the
  resolved parameters of that trial;
* ``summary.csv``: mean metrics across trials, deterministic
  (byte-identical across re-runs with the same manifest);
* ``summary_timing.csv``: mean wall-clock runtime (kept out of
  summary.csv, which is the determinism surface);
* ``manifest.json``: schema version, library version, resolved
  config and the trial seeds; re-running from the manifest reproduces
  summary.csv byte for byte.

All files are written atomically (temp file + rename), so partial results
from a failed run never corrupt earlier trials.
"""

import concurrent.futures
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .data import SyntheticSpec, generate_synthetic, load_jester, load_movielens, sample_mask
from .loss import LossKind
from .metrics import evaluate
from .model import ConstraintSpec, ProblemDims, RelaxationParams, derive_params
from .solver import Regularizer, SolverConfig, default_init, solve_ajapg, solve_japg
from .stationarity import stationarity_report

SCHEMA_VERSION = 1

_PROBLEM_KEYS = {
    "kind", "loss", "huber_delta", "d", "beta", "lam", "tau", "a1", "a2",
    "s_lower", "s_upper", "synthetic", "dataset",
}
_SYNTHETIC_KEYS = {"n", "true_rank", "corruption_fraction", "noise_factor",
                   "sampling_ratio"}
_DATASET_KEYS = {"path", "format", "n_users", "sr", "scheme"}
_SOLVER_KEYS = {"algorithm", "k_max", "eta_tilde", "r", "s", "max_iters",
                "rel_tol", "iota_lo", "iota_hi", "varrho", "c_min", "c_max",
                "max_backtracks", "base_step_rule"}
_RUN_KEYS = {"trials", "seed_base", "out_dir"}


class ConfigError(ValueError):
    """A configuration file failed validation."""


def _reject_unknown(section, allowed, where):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")


def load_config(path):
    """Parse a TOML config or a manifest.json produced by an earlier run."""
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            manifest = json.load(fh)
        if "config" not in manifest:
            raise ConfigError("manifest file lacks a 'config' block")
        raw = manifest["config"]
    else:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    return _validate_raw(raw)


@dataclass
class ExperimentConfig:
    """Validated, resolved experiment description."""

    problem: dict
    solver: dict
    run: dict

    def as_dict(self):
        return {"schema_version": SCHEMA_VERSION, "problem": self.problem,
                "solver": self.solver, "run": self.run}


def _validate_raw(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _reject_unknown(raw, {"schema_version", "problem", "solver", "run"}, "root")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for name in ("problem", "run"):
        if name not in raw:
            raise ConfigError(f"missing [{name}] section")

    prob = dict(raw["problem"])
    _reject_unknown(prob, _PROBLEM_KEYS, "problem")
    kind = prob.get("kind")
    if kind not in ("synthetic", "movielens", "jester"):
        raise ConfigError(f"problem.kind must be synthetic|movielens|jester, got {kind!r}")
    if prob.get("loss", "squared") not in ("squared", "huber"):
        raise ConfigError("problem.loss must be 'squared' or 'huber'")
    if prob.get("loss") == "huber" and not prob.get("huber_delta", 0) > 0:
        raise ConfigError("huber loss needs problem.huber_delta > 0")
    if "d" not in prob or int(prob["d"]) < 1:
        raise ConfigError("problem.d (factorization width) must be a positive integer")
    if "beta" not in prob or prob["beta"] < 0:
        raise ConfigError("problem.beta must be present and nonnegative")
    if prob["beta"] == 0:
        if raw.get("solver", {}).get("s") is not None:
            raise ConfigError("beta = 0 disables the entry scale s")
        if prob.get("lam") is None:
            raise ConfigError("beta = 0 requires an explicit problem.lam")
    if kind == "synthetic":
        if "synthetic" not in prob:
            raise ConfigError("synthetic problems need a [problem.synthetic] table")
        syn = dict(prob["synthetic"])
        _reject_unknown(syn, _SYNTHETIC_KEYS, "problem.synthetic")
        SyntheticSpec(n=int(syn["n"]), true_rank=int(syn["true_rank"]),
                      corruption_fraction=float(syn.get("corruption_fraction", 0.0)),
                      noise_factor=float(syn.get("noise_factor", 0.0)),
                      sampling_ratio=float(syn.get("sampling_ratio", 1.0)))
        if "a1" not in prob:
            raise ConfigError("synthetic problems must pin problem.a1 (the entry "
                              "bound of the corruption box; 5.0 matches the "
                              "corruption value range)")
    else:
        if "dataset" not in prob:
            raise ConfigError(f"{kind} problems need a [problem.dataset] table")
        ds = dict(prob["dataset"])
        _reject_unknown(ds, _DATASET_KEYS, "problem.dataset")
        if "path" not in ds:
            raise ConfigError("problem.dataset.path is required")
        sr = ds.get("sr")
        if sr is None or not 0 < sr < 1:
            raise ConfigError("problem.dataset.sr must lie strictly in (0, 1)")
        if ds.get("scheme", "nonuniform") not in ("uniform", "nonuniform"):
            raise ConfigError("problem.dataset.scheme must be uniform|nonuniform")
        if kind == "movielens" and ds.get("format", "tab_100k") not in (
                "tab_100k", "colon_1m"):
            raise ConfigError("movielens format must be tab_100k|colon_1m")

    solver = dict(raw.get("solver", {}))
    _reject_unknown(solver, _SOLVER_KEYS, "solver")
    if solver.get("algorithm", "ajapg") not in ("ajapg", "japg_exact",
                                                "japg_relaxed"):
        raise ConfigError("solver.algorithm must be ajapg|japg_exact|japg_relaxed")

    run = dict(raw["run"])
    _reject_unknown(run, _RUN_KEYS, "run")
    if int(run.get("trials", 0)) < 1:
        raise ConfigError("run.trials must be >= 1")
    if "seed_base" not in run:
        raise ConfigError("run.seed_base is required (reproducibility contract)")
    return ExperimentConfig(problem=prob, solver=solver, run=run)


def _loss_kind(prob):
    if prob.get("loss", "squared") == "huber":
        return LossKind.huber(float(prob["huber_delta"]))
    return LossKind.squared()


def _solver_config(solver):
    kwargs = {k: solver[k] for k in
              ("iota_lo", "iota_hi", "varrho", "c_min", "c_max", "max_iters",
               "rel_tol", "max_backtracks", "base_step_rule") if k in solver}
    if "max_iters" in kwargs:
        kwargs["max_iters"] = int(kwargs["max_iters"])
    if "max_backtracks" in kwargs:
        kwargs["max_backtracks"] = int(kwargs["max_backtracks"])
    return SolverConfig(**kwargs)


def _load_trial_data(cfg, seed):
    """Build (train, test, Z_true, rating range, a1_default, size_label)."""
    prob = cfg.problem
    if prob["kind"] == "synthetic":
        syn = prob["synthetic"]
        spec = SyntheticSpec(
            n=int(syn["n"]), true_rank=int(syn["true_rank"]),
            corruption_fraction=float(syn.get("corruption_fraction", 0.0)),
            noise_factor=float(syn.get("noise_factor", 0.0)),
            sampling_ratio=float(syn.get("sampling_ratio", 1.0)), seed=seed)
        truth, observed = generate_synthetic(spec)
        return observed, None, truth.Z_low, None, None, str(syn["n"])
    ds = prob["dataset"]
    if prob["kind"] == "movielens":
        rating = load_movielens(ds["path"], ds.get("format", "tab_100k"))
    else:
        n_users = ds.get("n_users")
        rating = load_jester(ds["path"], None if n_users is None else int(n_users))
    train, test = sample_mask(rating.matrix, float(ds["sr"]),
                              ds.get("scheme", "nonuniform"), seed)
    a1_default = max(abs(rating.rating_min), abs(rating.rating_max))
    return (train, test, None, (rating.rating_min, rating.rating_max),
            a1_default, str(ds["sr"]))


def resolve_parameters(cfg, train, a1_default):
    """Derive (dims, penalties, constraints, relaxation) for one dataset."""
    prob = cfg.problem
    solver = cfg.solver
    d = int(prob["d"])
    dims = ProblemDims(train.m, train.n, d)
    a1 = float(prob.get("a1", a1_default if a1_default is not None else 0))
    if not a1 > 0:
        raise ConfigError("problem.a1 must resolve to a positive bound")
    a2_cfg = prob.get("a2", "auto")
    a2 = float(np.abs(train.vals).max()) if a2_cfg == "auto" else float(a2_cfg)
    derived = derive_params(
        dims, beta=float(prob["beta"]), a1=a1, a2=a2,
        lam=None if prob.get("lam") is None else float(prob["lam"]),
        eta_tilde=float(solver.get("eta_tilde", 1.0)),
        k_max=int(solver.get("k_max", 10)),
        tau=None if prob.get("tau") is None else float(prob["tau"]))
    constraints = derived.constraints
    if prob.get("s_lower") is not None or prob.get("s_upper") is not None:
        constraints = ConstraintSpec(
            tau=constraints.tau,
            s_lower=float(prob.get("s_lower", -a1)),
            s_upper=float(prob.get("s_upper", a1)))
    relaxation = derived.relaxation
    if solver.get("r") is not None or solver.get("s") is not None:
        r_val = float(solver["r"]) if solver.get("r") is not None else relaxation.r
        s_val = float(solver["s"]) if solver.get("s") is not None else relaxation.s
        relaxation = RelaxationParams(
            r=r_val, s=s_val,
            eta_tilde=relaxation.eta_tilde, k_max=relaxation.k_max,
            r0=None if r_val is None else max(
                math.sqrt(2 * derived.penalties.lam), r_val),
            s0=None if s_val is None else max(
                math.sqrt(2 * derived.penalties.beta), s_val))
        relaxation.validate(derived.penalties, derived.lipschitz, constraints.tau)
    return dims, derived.penalties, constraints, relaxation, derived.lipschitz, a1, a2


def run_trial(cfg, trial, out_dir):
    """Run one seeded trial and write its trace and result files."""
    seed = int(cfg.run["seed_base"]) + trial
    train, test, Z_true, rating_range, a1_default, size_label = \
        _load_trial_data(cfg, seed)
    t0 = time.perf_counter()
    dims, penalties, constraints, relaxation, lips, a1, a2 = \
        resolve_parameters(cfg, train, a1_default)
    loss_kind = _loss_kind(cfg.problem)
    solver_cfg = _solver_config(cfg.solver)
    init = default_init(train, dims, constraints, seed=seed)
    algorithm = cfg.solver.get("algorithm", "ajapg")
    if algorithm == "ajapg":
        state, trace = solve_ajapg(train, dims, penalties, constraints,
                                   loss_kind, relaxation, solver_cfg, init)
    elif algorithm == "japg_exact":
        state, trace = solve_japg(train, dims, penalties, constraints,
                                  loss_kind, Regularizer.exact_l0(),
                                  solver_cfg, init)
    else:
        state, trace = solve_japg(train, dims, penalties, constraints,
                                  loss_kind,
                                  Regularizer.relaxed(relaxation.r, relaxation.s),
                                  solver_cfg, init)
    runtime = time.perf_counter() - t0

    rating_min, rating_max = rating_range if rating_range else (None, None)
    metrics = evaluate(state, runtime, Z_true=Z_true, test=test,
                       rating_min=rating_min, rating_max=rating_max)
    report = stationarity_report(state, train, penalties, constraints,
                                 relaxation, loss_kind)
    result = {
        "trial": trial,
        "seed": seed,
        "size_label": size_label,
        "method": algorithm,
        "metrics": {
            "rse": metrics.rse,
            "nmae": metrics.nmae,
            "recovered_rank": metrics.recovered_rank,
            "recovered_sparsity": metrics.recovered_sparsity,
            "runtime_seconds": metrics.runtime_seconds,
        },
        "solver": {
            "iterations": trace.iterations,
            "converged": trace.converged,
            "objective": trace.records[-1]["objective"],
            "objective_relaxed": trace.records[-1]["objective_relaxed"],
        },
        "stationarity": {
            "consistency_ok": report.consistency_ok,
            "isolation_ok": report.isolation_ok,
            "kkt_residual": report.kkt_residual,
            "grad_norm": report.grad_norm,
            "passes": report.passes(),
        },
        "resolved": {
            "dims": [dims.m, dims.n, dims.d],
            "lam": penalties.lam, "beta": penalties.beta,
            "a1": a1, "a2": a2, "tau": constraints.tau,
            "r": relaxation.r, "s": relaxation.s,
            "r0": relaxation.r0, "s0": relaxation.s0,
            "k_max": relaxation.k_max, "K": relaxation.K,
            "K_tilde": relaxation.K_tilde,
        },
    }
    _write_atomic(os.path.join(out_dir, f"trial_{trial:03d}_result.json"),
                  json.dumps(result, indent=1) + "\n")
    buf = io.StringIO()
    for rec in trace.records:
        buf.write(json.dumps(rec) + "\n")
    _write_atomic(os.path.join(out_dir, f"trial_{trial:03d}_trace.jsonl"),
                  buf.getvalue())
    return result


def _write_atomic(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _mean(values):
    vals = [float(v) for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def aggregate(results):
    """Mean metrics across trials; pure function of the per-trial results."""
    size = results[0]["size_label"]
    method = results[0]["method"]
    rows = []

    def add(metric, value):
        if value is not None:
            rows.append((metric, size, method, value))

    add("trials", len(results))
    add("rse_mean", _mean([r["metrics"]["rse"] for r in results]))
    add("nmae_mean", _mean([r["metrics"]["nmae"] for r in results]))
    add("rank_mean", _mean([r["metrics"]["recovered_rank"] for r in results]))
    add("sparsity_mean",
        _mean([r["metrics"]["recovered_sparsity"] for r in results]))
    add("iterations_mean", _mean([r["solver"]["iterations"] for r in results]))
    add("converged_fraction",
        _mean([1.0 if r["solver"]["converged"] else 0.0 for r in results]))
    add("certificate_fraction",
        _mean([1.0 if r["stationarity"]["passes"] else 0.0 for r in results]))
    timing = [("runtime_seconds_mean", size, method,
               _mean([r["metrics"]["runtime_seconds"] for r in results]))]
    return rows, timing


def _write_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "size_or_sr", "method", "value"])
    for metric, size, method, value in rows:
        if isinstance(value, float):
            value = repr(value)
        writer.writerow([metric, size, method, value])
    _write_atomic(path, buf.getvalue())


def _dataset_fingerprint(cfg):
    prob = cfg.problem
    if prob["kind"] == "synthetic":
        return None
    path = prob["dataset"]["path"]
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            while True:
                block = fh.read(1 << 20)
                if not block:
                    break
                h.update(block)
    except OSError:
        return {"path": path, "sha256": None}
    return {"path": path, "sha256": h.hexdigest()}


def run_experiment(config_path, out=None, seed=None, trials_parallel=False):
    """Run all trials of a config; returns the output directory.

    ``seed`` overrides run.seed_base; ``out`` overrides run.out_dir. With
    ``trials_parallel`` trials run in separate processes (independent seeds;
    per-trial files are written atomically, aggregation happens after all
    trials finish).
    """
    cfg = load_config(config_path)
    if seed is not None:
        cfg.run["seed_base"] = int(seed)
    out_dir = out or cfg.run.get("out_dir")
    if not out_dir:
        raise ConfigError("no output directory (run.out_dir or --out)")
    os.makedirs(out_dir, exist_ok=True)
    trials = int(cfg.run["trials"])

    if trials_parallel and trials > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(trials, os.cpu_count() or 1)) as pool:
            futures = [pool.submit(run_trial, cfg, t, out_dir)
                       for t in range(trials)]
            results = [f.result() for f in futures]
    else:
        results = [run_trial(cfg, t, out_dir) for t in range(trials)]

    rows, timing = aggregate(results)
    _write_csv(os.path.join(out_dir, "summary.csv"), rows)
    _write_csv(os.path.join(out_dir, "summary_timing.csv"), timing)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "facrpca_version": __version__,
        "config": cfg.as_dict(),
        "seeds": [int(cfg.run["seed_base"]) + t for t in range(trials)],
        "dataset": _dataset_fingerprint(cfg),
    }
    _write_atomic(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=1) + "\n")
    return out_dir


def report(out_dir):
    """Re-aggregate summary.csv (and timing) from the per-trial result files."""
    results = []
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("trial_") and name.endswith("_result.json"):
            with open(os.path.join(out_dir, name)) as fh:
                results.append(json.load(fh))
    if not results:
        raise FileNotFoundError(f"no trial result files under {out_dir}")
    rows, timing = aggregate(results)
    _write_csv(os.path.join(out_dir, "summary.csv"), rows)
    _write_csv(os.path.join(out_dir, "summary_timing.csv"), timing)
    return out_dir


def validate_config(config_path, stream=None):
    """Resolve and print all derived parameters without running; 0 iff valid.

    Loads (or generates, for synthetic specs, at the base seed) the trial-0
    data so that data-dependent scales (a2, hence the Lipschitz moduli and
    the capped scales) can be resolved and checked exactly.
    """
    stream = stream or sys.stdout
    try:
        cfg = load_config(config_path)
        seed = int(cfg.run["seed_base"])
        train, test, _, _, a1_default, size_label = _load_trial_data(cfg, seed)
        dims, penalties, constraints, relaxation, lips, a1, a2 = \
            resolve_parameters(cfg, train, a1_default)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"INVALID: {exc}", file=stream)
        return 1
    print(f"OK: {cfg.problem['kind']} ({size_label}), "
          f"dims = {dims.m} x {dims.n}, d = {dims.d}, "
          f"|train| = {train.nnz}" +
          (f", |test| = {test.nnz}" if test is not None else ""), file=stream)
    print(f"  lam = {penalties.lam!r}, beta = {penalties.beta!r}", file=stream)
    print(f"  a1 = {a1!r}, a2 = {a2!r}, tau = {constraints.tau!r}", file=stream)
    print(f"  L_X = {lips.L_X!r}, L_Y = {lips.L_Y!r}, L_S = {lips.L_S!r}",
          file=stream)
    print(f"  r = {relaxation.r!r} (plateau {relaxation.r0!r}, frozen from "
          f"K = {relaxation.K})", file=stream)
    print(f"  s = {relaxation.s!r} (plateau {relaxation.s0!r}, frozen from "
          f"K~ = {relaxation.K_tilde})", file=stream)
    print(f"  schedules plateau for k_max = {relaxation.k_max} iterations",
          file=stream)
    return 0
