"""Staged analysis runs and benchmark table replication.

A run is configured by a JSON file validated against a fixed schema (unknown
keys are rejected before anything is computed or written). run_pipeline then
executes the stages in order

    load -> screen -> select -> initial -> covariance -> refined

writing one CSV per artifact plus a JSON manifest recording the configuration,
chosen tuning values, timings, and output paths. A stage failure aborts the
run with the stage name attached; artifacts written by earlier stages stay on
disk.

replicate_table recomputes the two benchmark summary tables (selection
metrics and estimation errors) over seeded replicates and emits them with the
reference values alongside for comparison. The manifest written next to the
table is a complete request record: rerunning from it reproduces every number
bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bspline import default_dimension, make_basis
from .covariance import (
    estimate_covariance,
    write_covariance_csv,
    write_eigenvalues_csv,
)
from .data import load_long_csv
from .exceptions import ConfigError, DataError, NumericError
from .kernels import KERNEL_FAMILIES
from .scad import (
    ScadConfig,
    bic_path,
    default_lambda_grid,
    write_scad_curves_csv,
    write_structure_csv,
)
from .screening import mmms, screen, write_screen_csv
from .semivarying import (
    SemiVaryingSpec,
    fit_semivarying,
    write_constants_csv,
    write_profile_curves_csv,
)
from .simulate import (
    CASE_IDS,
    estimation_metrics,
    gen_case,
    make_case,
    replicate_rng,
    selection_metrics,
    truth_record,
)

__all__ = [
    "PipelineConfig",
    "PipelineReport",
    "load_config",
    "run_pipeline",
    "run_screen_only",
    "replicate_table",
    "replicate_table_from_manifest",
    "resolve_workers",
]

_REL_CHANGE_STOP = 1e-4
WORKERS_ENV_VAR = "LONGVC_WORKERS"


# ---------------------------------------------------------------------------
# configuration


def _reject_unknown(section, mapping, allowed):
    extra = sorted(set(mapping) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _opt(mapping, key, kind, default=None, positive=False):
    value = mapping.get(key, default)
    if value is None:
        return None
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    return value


def _opt_grid(mapping, key):
    value = mapping.get(key)
    if value is None:
        return None
    try:
        grid = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a sequence of numbers")
    if not grid or any(not g > 0 for g in grid):
        raise ConfigError(f"{key} must contain positive values")
    return grid


@dataclass(frozen=True)
class PipelineConfig:
    """Validated knobs for one analysis run.

    Exactly one input source is set: a long-format CSV path, or a generator
    case (id plus sizes) sampled with ``case_seed``. Tuning values left as
    None are chosen automatically: basis dimension from the subject count,
    the penalty grid from the response scale, bandwidths by
    leave-one-subject-out cross validation.
    """

    input_csv: str | None
    case: dict | None
    case_seed: int | None
    basis_dimension: int | None
    basis_order: int
    screen_alpha: float
    screen_keep: int | None
    scad_a0: float
    lambda_grid: tuple | None
    lambda_size: int
    lambda_min: float
    lambda_max: float
    scad_max_iter: int
    scad_conv_tol: float
    scad_zero_tol: float | None
    h1: float | None
    h2: float | None
    h3: float | None
    h1_grid: tuple | None
    h2_grid: tuple | None
    h3_grid: tuple | None
    refine: bool
    iterate: int
    bootstrap: int
    output_dir: str
    seed: int
    workers: int | None
    kernel: str
    grid_size: int

    @staticmethod
    def from_dict(raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        _reject_unknown(
            "configuration",
            raw,
            ("input", "basis", "screening", "scad", "bandwidths", "refine",
             "output_dir", "seed", "workers", "kernel", "grid_size"),
        )

        inp = raw.get("input")
        if not isinstance(inp, dict):
            raise ConfigError("input section is required and must be an object")
        _reject_unknown("input", inp, ("csv", "case"))
        input_csv = inp.get("csv")
        case_raw = inp.get("case")
        if (input_csv is None) == (case_raw is None):
            raise ConfigError("input must set exactly one of csv, case")
        case = case_seed = None
        if case_raw is not None:
            if not isinstance(case_raw, dict):
                raise ConfigError("input.case must be an object")
            _reject_unknown("input.case", case_raw,
                            ("id", "n", "m", "p", "rho", "s0", "seed"))
            cid = case_raw.get("id")
            if cid not in CASE_IDS:
                raise ConfigError(f"input.case.id must be one of {CASE_IDS}")
            case = {
                "id": cid,
                "n": _opt(case_raw, "n", int, 100, positive=True),
                "m": _opt(case_raw, "m", int, 20, positive=True),
                "p": _opt(case_raw, "p", int, 500, positive=True),
                "rho": float(_opt(case_raw, "rho", float, 0.1)),
                "s0": _opt(case_raw, "s0", int, 10),
            }
            case_seed = _opt(case_raw, "seed", int)

        basis = raw.get("basis", {})
        _reject_unknown("basis", basis, ("dimension", "order"))
        screening = raw.get("screening", {})
        _reject_unknown("screening", screening, ("alpha", "keep_count"))
        scad = raw.get("scad", {})
        _reject_unknown("scad", scad, ("a0", "grid", "grid_size", "grid_min",
                                       "grid_max", "max_iter", "conv_tol",
                                       "zero_tol"))
        bw = raw.get("bandwidths", {})
        _reject_unknown("bandwidths", bw, ("h1", "h2", "h3", "h1_grid",
                                           "h2_grid", "h3_grid"))
        refine = raw.get("refine", {})
        _reject_unknown("refine", refine, ("enabled", "iterate", "bootstrap"))
        enabled = refine.get("enabled", True)
        if not isinstance(enabled, bool):
            raise ConfigError("refine.enabled must be true or false")

        kernel = raw.get("kernel", "epanechnikov")
        if kernel not in KERNEL_FAMILIES:
            raise ConfigError(f"unknown kernel {kernel!r}; expected one of "
                              f"{tuple(KERNEL_FAMILIES)}")
        output_dir = raw.get("output_dir", "longvc-output")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("output_dir must be a nonempty string")

        return PipelineConfig(
            input_csv=input_csv,
            case=case,
            case_seed=case_seed,
            basis_dimension=_opt(basis, "dimension", int, positive=True),
            basis_order=_opt(basis, "order", int, 3, positive=True),
            screen_alpha=_opt(screening, "alpha", float, 1.0, positive=True),
            screen_keep=_opt(screening, "keep_count", int, positive=True),
            scad_a0=_opt(scad, "a0", float, 3.7),
            lambda_grid=_opt_grid(scad, "grid"),
            lambda_size=_opt(scad, "grid_size", int, 30, positive=True),
            lambda_min=_opt(scad, "grid_min", float, 1e-3, positive=True),
            lambda_max=_opt(scad, "grid_max", float, 1.0, positive=True),
            scad_max_iter=_opt(scad, "max_iter", int, 100, positive=True),
            scad_conv_tol=_opt(scad, "conv_tol", float, 1e-6, positive=True),
            scad_zero_tol=_opt(scad, "zero_tol", float),
            h1=_opt(bw, "h1", float, positive=True),
            h2=_opt(bw, "h2", float, positive=True),
            h3=_opt(bw, "h3", float, positive=True),
            h1_grid=_opt_grid(bw, "h1_grid"),
            h2_grid=_opt_grid(bw, "h2_grid"),
            h3_grid=_opt_grid(bw, "h3_grid"),
            refine=enabled,
            iterate=_opt(refine, "iterate", int, 1, positive=True),
            bootstrap=max(0, _opt(refine, "bootstrap", int, 0)),
            output_dir=output_dir,
            seed=_opt(raw, "seed", int, 0),
            workers=_opt(raw, "workers", int, positive=True),
            kernel=kernel,
            grid_size=_opt(raw, "grid_size", int, 101, positive=True),
        )

    def to_dict(self):
        """Normalized echo of the configuration, manifest-ready."""
        inp = ({"csv": self.input_csv} if self.input_csv is not None
               else {"case": dict(self.case, seed=self.case_seed)})
        return {
            "input": inp,
            "basis": {"dimension": self.basis_dimension, "order": self.basis_order},
            "screening": {"alpha": self.screen_alpha, "keep_count": self.screen_keep},
            "scad": {"a0": self.scad_a0,
                     "grid": list(self.lambda_grid) if self.lambda_grid else None,
                     "grid_size": self.lambda_size, "grid_min": self.lambda_min,
                     "grid_max": self.lambda_max, "max_iter": self.scad_max_iter,
                     "conv_tol": self.scad_conv_tol, "zero_tol": self.scad_zero_tol},
            "bandwidths": {"h1": self.h1, "h2": self.h2, "h3": self.h3,
                           "h1_grid": list(self.h1_grid) if self.h1_grid else None,
                           "h2_grid": list(self.h2_grid) if self.h2_grid else None,
                           "h3_grid": list(self.h3_grid) if self.h3_grid else None},
            "refine": {"enabled": self.refine, "iterate": self.iterate,
                       "bootstrap": self.bootstrap},
            "output_dir": self.output_dir,
            "seed": self.seed,
            "workers": self.workers,
            "kernel": self.kernel,
            "grid_size": self.grid_size,
        }


def load_config(path, overrides=None):
    """Parse and validate a JSON config file; overrides win over file values.

    overrides is a mapping of dotted paths (for example "refine.bootstrap")
    to values, applied before validation.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if overrides:
        for dotted, value in overrides.items():
            keys = dotted.split(".")
            node = raw
            for k in keys[:-1]:
                node = node.setdefault(k, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"cannot override {dotted}: {k} is not a section")
            node[keys[-1]] = value
    return PipelineConfig.from_dict(raw)


def resolve_workers(explicit=None):
    """Parallelism degree: explicit value, else environment, else 1."""
    if explicit is not None:
        if explicit < 1:
            raise ConfigError("workers must be at least 1")
        return int(explicit)
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be at least 1")
        return value
    return 1


# ---------------------------------------------------------------------------
# staged pipeline


@dataclass
class PipelineReport:
    """Everything a run produced, for callers that want objects not files."""

    config: PipelineConfig
    dataset: object = None
    basis: object = None
    screen_result: object = None
    scad_path: object = None
    structure: object = None
    initial: object = None
    covariance: object = None
    refined: object = None
    passes: int = 0
    stages: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    manifest_path: str = None


class _StageRunner:
    def __init__(self, report):
        self.report = report

    def __call__(self, name, fn):
        t0 = time.perf_counter()
        try:
            value = fn()
        except (ConfigError, DataError, NumericError) as exc:
            self.report.stages.append({"name": name, "seconds": None,
                                       "error": str(exc)})
            _write_manifest(self.report, status="failed", failed_stage=name,
                            error=str(exc))
            raise type(exc)(f"stage '{name}' failed: {exc}") from exc
        self.report.stages.append(
            {"name": name, "seconds": round(time.perf_counter() - t0, 4)})
        return value


def _versions():
    import scipy

    from . import __version__

    return {"longvc": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


def _write_manifest(report, status="ok", failed_stage=None, error=None,
                    extra=None):
    manifest = {
        "tool": "longvc",
        "kind": "fit",
        "status": status,
        "config": report.config.to_dict(),
        "stages": report.stages,
        "outputs": report.outputs,
        "versions": _versions(),
    }
    if failed_stage:
        manifest["failed_stage"] = failed_stage
        manifest["error"] = error
    if extra:
        manifest.update(extra)
    path = os.path.join(report.config.output_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    report.manifest_path = path
    return path


def _load_stage(config):
    if config.input_csv is not None:
        return load_long_csv(config.input_csv), None
    c = config.case
    spec = make_case(c["id"], n=c["n"], m=c["m"], p=c["p"], rho=c["rho"],
                     s0=c["s0"])
    seed = config.case_seed if config.case_seed is not None else config.seed
    dataset, truth = gen_case(spec, np.random.default_rng(
        np.random.SeedSequence((int(seed), 0))))
    return dataset, truth


def _rel_change(prev, cur):
    db = 0.0
    if prev.beta1.size:
        db = float(np.max(np.abs(cur.beta1 - prev.beta1)
                          / (1.0 + np.abs(prev.beta1))))
    dc = float(np.max(np.abs(cur.curves - prev.curves))
               / (1.0 + float(np.max(np.abs(prev.curves)))))
    return max(db, dc)


def run_pipeline(config, _stop_after=None):
    """Execute the staged analysis described by config.

    Returns a PipelineReport; all artifacts are also written under
    config.output_dir along with manifest.json. Stage failures re-raise the
    underlying error with the stage name prefixed, after dumping a failure
    manifest (earlier artifacts are left in place).
    """
    report = PipelineReport(config=config)
    stage = _StageRunner(report)
    os.makedirs(config.output_dir, exist_ok=True)

    def out(fname):
        return os.path.join(config.output_dir, fname)

    dataset, _ = stage("load", lambda: _load_stage(config))
    report.dataset = dataset

    def do_screen():
        L = config.basis_dimension
        basis = make_basis(L if L else default_dimension(dataset.n),
                           config.basis_order)
        result = screen(dataset, basis, alpha=config.screen_alpha,
                        keep_count=config.screen_keep)
        write_screen_csv(result, out("screening.csv"))
        return basis, result

    report.basis, report.screen_result = stage("screen", do_screen)
    report.outputs["screening"] = out("screening.csv")
    if _stop_after == "screen":
        _write_manifest(report, extra={"kind": "screen-only"})
        return report

    def do_select():
        kept = report.screen_result.ranked[: report.screen_result.keep_count]
        scad_cfg = ScadConfig(lam1=0.0, lam2=0.0, a0=config.scad_a0,
                              zero_tol=config.scad_zero_tol,
                              max_iter=config.scad_max_iter,
                              conv_tol=config.scad_conv_tol)
        if config.lambda_grid is not None:
            lam_grid = np.asarray(config.lambda_grid, dtype=float)
        else:
            lam_grid = default_lambda_grid(dataset, size=config.lambda_size,
                                           lo=config.lambda_min,
                                           hi=config.lambda_max)
        path = bic_path(dataset, report.basis, active=kept,
                        lam_grid=lam_grid, config=scad_cfg)
        best = path.fits[path.best_index]
        write_structure_csv(best, out("structure.csv"), names=dataset.names)
        write_scad_curves_csv(best, out("scad_curves.csv"), names=dataset.names,
                              grid_size=config.grid_size)
        return path

    report.scad_path = stage("select", do_select)
    best_fit = report.scad_path.fits[report.scad_path.best_index]
    report.structure = best_fit.structure
    report.outputs["structure"] = out("structure.csv")
    report.outputs["scad_curves"] = out("scad_curves.csv")

    h1_grid = np.asarray(config.h1_grid, dtype=float) if config.h1_grid else None

    def do_initial():
        spec = SemiVaryingSpec.from_structure(report.structure)
        fit = fit_semivarying(dataset, spec, h1_grid=h1_grid, h1=config.h1,
                              grid_size=config.grid_size,
                              kernel_family=config.kernel)
        write_constants_csv(fit, out("initial_constants.csv"),
                            names=dataset.names)
        write_profile_curves_csv(fit, out("initial_curves.csv"),
                                 names=dataset.names)
        return fit

    report.initial = stage("initial", do_initial)
    report.outputs["initial_constants"] = out("initial_constants.csv")
    report.outputs["initial_curves"] = out("initial_curves.csv")

    chosen = {"lambda": float(report.scad_path.lam_grid[report.scad_path.best_index]),
              "h1_initial": report.initial.h1}

    if not config.refine:
        _write_manifest(report, extra={"chosen": chosen,
                                       "structure": _structure_dict(report)})
        return report

    def do_covariance(fit):
        model = estimate_covariance(
            dataset, fit, h2=config.h2, h3=config.h3,
            h2_grid=(np.asarray(config.h2_grid, dtype=float)
                     if config.h2_grid else None),
            h3_grid=(np.asarray(config.h3_grid, dtype=float)
                     if config.h3_grid else None),
            grid_size=config.grid_size, kernel_family=config.kernel)
        write_covariance_csv(model, out("covariance.csv"))
        write_eigenvalues_csv(model, out("eigenvalues.csv"))
        return model

    report.covariance = stage("covariance", lambda: do_covariance(report.initial))
    report.outputs["covariance"] = out("covariance.csv")
    report.outputs["eigenvalues"] = out("eigenvalues.csv")

    def refined_fit(model, h1, bootstrap):
        return fit_semivarying(
            dataset, SemiVaryingSpec.from_structure(report.structure),
            h1_grid=h1_grid, h1=h1, covariance=model,
            bootstrap_B=bootstrap, grid_size=config.grid_size,
            kernel_family=config.kernel, seed=config.seed)

    def do_refined():
        model = report.covariance
        fit = refined_fit(model, config.h1, 0)
        passes = 1
        while passes < config.iterate:
            model = do_covariance(fit)
            nxt = refined_fit(model, config.h1, 0)
            passes += 1
            done = _rel_change(fit, nxt) < _REL_CHANGE_STOP
            fit = nxt
            if done:
                break
        if config.bootstrap > 0:
            fit = refined_fit(model, fit.h1, config.bootstrap)
        report.covariance = model
        write_constants_csv(fit, out("constants.csv"), names=dataset.names)
        write_profile_curves_csv(fit, out("curves.csv"), names=dataset.names)
        return fit, passes

    report.refined, report.passes = stage("refined", do_refined)
    report.outputs["constants"] = out("constants.csv")
    report.outputs["curves"] = out("curves.csv")

    chosen.update({"h1_refined": report.refined.h1,
                   "h2": report.covariance.h2, "h3": report.covariance.h3,
                   "refinement_passes": report.passes})
    _write_manifest(report, extra={"chosen": chosen,
                                   "structure": _structure_dict(report)})
    return report


def _structure_dict(report):
    st = report.structure
    names = report.dataset.names
    return {
        "varying": [names[k] for k in st.varying],
        "constant": {names[k]: float(v)
                     for k, v in zip(st.constant, st.constant_values)},
        "size": len(st.varying) + len(st.constant),
    }


def run_screen_only(config):
    """Load and screen, write screening.csv and a manifest, and stop."""
    return run_pipeline(config, _stop_after="screen")


# ---------------------------------------------------------------------------
# benchmark reference values, reported alongside recomputed metrics

_SELECTION_METRIC_ORDER = ("Cvar", "Cfix", "Size", "U", "O", "TP", "FP",
                           "TPvar", "FPvar", "TPfix", "FPfix", "MMMS")

# Table 1 designs share m=20, p=500, s0=10; columns are (case, n, rho).
TABLE1_COLUMNS = (
    ("I", 100, 0.1), ("I", 100, 0.5), ("I", 200, 0.5),
    ("II", 100, 0.3), ("II", 200, 0.3),
    ("III", 100, 0.4), ("III", 200, 0.4),
    ("IV", 100, 0.4), ("IV", 200, 0.5),
    ("V", 100, 0.4), ("V", 200, 0.5),
)

_NA = (None, None)
# metric -> (value, robust sd); None marks entries the source table leaves out.
_TABLE1_REFERENCE = {
    ("I", 100, 0.1): {
        "Cvar": (0.965, None), "Cfix": (0.926, None), "Size": (5.01, 0.79),
        "U": (0.00, None), "O": (0.01, None), "TP": (5.00, 0.79),
        "FP": (0.01, 0.06), "TPvar": (2.93, 0.54), "FPvar": (0.10, 0.04),
        "TPfix": (1.92, 0.33), "FPfix": (0.04, 0.28), "MMMS": (5, 0),
    },
    ("I", 100, 0.5): {
        "Cvar": (0.904, None), "Cfix": (0.812, None), "Size": (6.43, 1.23),
        "U": (0.05, None), "O": (0.19, None), "TP": (4.99, 1.18),
        "FP": (0.81, 0.25), "TPvar": (2.87, 0.75), "FPvar": (0.15, 0.09),
        "TPfix": (1.84, 0.48), "FPfix": (0.80, 0.42), "MMMS": (5, 0),
    },
    ("I", 200, 0.5): {
        "Cvar": (0.996, None), "Cfix": (0.912, None), "Size": (5.02, 0.54),
        "U": (0.00, None), "O": (0.02, None), "TP": (5.00, 0.54),
        "FP": (0.02, 0.01), "TPvar": (2.97, 0.42), "FPvar": (0.09, 0.06),
        "TPfix": (1.92, 0.22), "FPfix": (0.14, 0.21), "MMMS": (5, 0),
    },
    ("II", 100, 0.3): {
        "Cvar": (0.952, None), "Cfix": _NA, "Size": (5.12, 0.13),
        "U": (0.00, None), "O": (0.08, None), "TP": (4.97, 0.13),
        "FP": (0.09, 0.01), "TPvar": (4.98, 0.11), "FPvar": (0.03, 0.08),
        "TPfix": _NA, "FPfix": (0.06, 0.14), "MMMS": (5, 0),
    },
    ("II", 200, 0.3): {
        "Cvar": (0.986, None), "Cfix": _NA, "Size": (5.04, 0.01),
        "U": (0.00, None), "O": (0.01, None), "TP": (5.00, 0.01),
        "FP": (0.04, 0.00), "TPvar": (5.00, 0.04), "FPvar": (0.01, 0.00),
        "TPfix": _NA, "FPfix": (0.03, 0.04), "MMMS": (5, 0),
    },
    ("III", 100, 0.4): {
        "Cvar": _NA, "Cfix": (0.938, None), "Size": (5.25, 0.13),
        "U": (0.00, None), "O": (0.11, None), "TP": (4.96, 0.12),
        "FP": (0.15, 0.01), "TPvar": _NA, "FPvar": (0.03, 0.08),
        "TPfix": (4.93, 0.15), "FPfix": (0.10, 0.12), "MMMS": (5, 0),
    },
    ("III", 200, 0.4): {
        "Cvar": _NA, "Cfix": (0.969, None), "Size": (5.01, 0.01),
        "U": (0.00, None), "O": (0.03, None), "TP": (5.00, 0.01),
        "FP": (0.05, 0.01), "TPvar": _NA, "FPvar": (0.01, 0.01),
        "TPfix": (5.00, 0.04), "FPfix": (0.02, 0.01), "MMMS": (5, 0),
    },
    ("IV", 100, 0.4): {
        "Cvar": (0.976, None), "Cfix": (0.854, None), "Size": (4.95, 0.63),
        "U": (0.02, None), "O": (0.03, None), "TP": (4.93, 0.59),
        "FP": (0.03, 0.19), "TPvar": (2.82, 0.48), "FPvar": (0.01, 0.08),
        "TPfix": (1.96, 0.26), "FPfix": (0.16, 0.40), "MMMS": (5, 0),
    },
    ("IV", 200, 0.5): {
        "Cvar": (0.992, None), "Cfix": (0.936, None), "Size": (4.98, 0.40),
        "U": (0.01, None), "O": (0.00, None), "TP": (4.97, 0.40),
        "FP": (0.00, 0.00), "TPvar": (2.92, 0.34), "FPvar": (0.00, 0.00),
        "TPfix": (1.98, 0.17), "FPfix": (0.06, 0.23), "MMMS": (5, 0),
    },
    ("V", 100, 0.4): {
        "Cvar": (0.925, None), "Cfix": (0.810, None), "Size": (4.87, 0.96),
        "U": (0.03, None), "O": (0.04, None), "TP": (4.81, 0.93),
        "FP": (0.05, 0.19), "TPvar": (2.79, 0.65), "FPvar": (0.04, 0.21),
        "TPfix": (1.88, 0.43), "FPfix": (0.20, 0.42), "MMMS": (5, 0),
    },
    ("V", 200, 0.5): {
        "Cvar": (0.998, None), "Cfix": (0.914, None), "Size": (4.99, 0.22),
        "U": (0.00, None), "O": (0.00, None), "TP": (4.99, 0.22),
        "FP": (0.00, 0.00), "TPvar": (2.97, 0.31), "FPvar": (0.01, 0.05),
        "TPfix": (1.99, 0.09), "FPfix": (0.08, 0.27), "MMMS": (5, 0),
    },
}

# Table 2: cases I-III at n=100, m=20, rho=0.1 (p=500, s0=10). Values are
# (variant, stage) -> error pairs in the order (mae, rmse) for constants and
# (miae, rmise) for curves; targets are positional within the true structure.
TABLE2_CASES = ("I", "II", "III")
_T2 = {}


def _t2(case, component, position, oi, orf, pi, prf):
    _T2[(case, component, position)] = {
        ("oracle", "initial"): oi, ("oracle", "refined"): orf,
        ("practical", "initial"): pi, ("practical", "refined"): prf,
    }


_t2("I", "constant", 0, (0.0374, 0.0623), (0.0253, 0.0387), (0.0572, 0.0806), (0.0266, 0.0458))
_t2("I", "constant", 1, (0.0507, 0.0642), (0.0296, 0.0417), (0.0662, 0.0768), (0.0330, 0.0500))
_t2("I", "curve", 0, (0.1678, 0.2410), (0.0872, 0.1526), (0.1922, 0.2863), (0.1020, 0.1902))
_t2("I", "curve", 1, (0.1697, 0.2497), (0.1098, 0.1805), (0.2066, 0.2819), (0.1243, 0.2111))
_t2("I", "curve", 2, (0.1526, 0.2433), (0.1151, 0.1568), (0.1815, 0.2760), (0.1261, 0.1957))
_t2("I", "curve", 3, (0.1804, 0.2819), (0.1241, 0.2007), (0.2119, 0.2939), (0.1317, 0.2293))
_t2("II", "curve", 0, (0.1748, 0.2571), (0.1042, 0.1794), (0.2254, 0.3179), (0.1220, 0.2535))
_t2("II", "curve", 1, (0.1939, 0.2703), (0.0859, 0.1389), (0.2316, 0.3315), (0.1015, 0.2220))
_t2("II", "curve", 2, (0.1532, 0.2357), (0.1029, 0.1473), (0.1964, 0.3003), (0.1221, 0.2088))
_t2("II", "curve", 3, (0.1710, 0.2381), (0.1019, 0.1462), (0.2156, 0.2901), (0.1215, 0.2383))
_t2("II", "curve", 4, (0.2074, 0.3352), (0.1181, 0.1889), (0.2473, 0.3880), (0.1243, 0.2565))
_t2("II", "curve", 5, (0.2425, 0.3562), (0.1252, 0.2441), (0.2680, 0.4055), (0.1362, 0.2590))
_t2("III", "constant", 0, (0.0136, 0.0264), (0.0109, 0.0223), (0.0142, 0.0402), (0.0136, 0.0387))
_t2("III", "constant", 1, (0.0125, 0.0200), (0.0118, 0.0141), (0.0144, 0.0458), (0.0138, 0.0374))
_t2("III", "constant", 2, (0.0256, 0.0400), (0.0162, 0.0332), (0.0352, 0.0538), (0.0286, 0.0469))
_t2("III", "constant", 3, (0.0206, 0.0360), (0.0175, 0.0282), (0.0327, 0.0565), (0.0249, 0.0489))
_t2("III", "constant", 4, (0.0300, 0.0400), (0.0265, 0.0346), (0.0525, 0.0648), (0.0430, 0.0608))
_t2("III", "curve", 0, (0.1067, 0.0985), (0.1038, 0.0938), (0.1215, 0.1126), (0.1156, 0.1101))


# ---------------------------------------------------------------------------
# table replication


def _column_seed(seed, table_id, case_id, n, rho):
    """Deterministic per-column master seed, stable across column subsets."""
    key = (int(seed), int(table_id), CASE_IDS.index(case_id), int(n),
           int(round(1000 * rho)))
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _selection_replicate(payload):
    """One seeded screen -> penalized-selection replicate (table 1)."""
    (case_id, n, rho, column_seed, rep) = payload
    spec = make_case(case_id, n=n, m=20, p=500, rho=rho, s0=10)
    rng = replicate_rng(column_seed, rep)
    dataset, truth = gen_case(spec, rng)
    basis = make_basis(default_dimension(dataset.n), 3)
    sr = screen(dataset, basis)
    min_size = mmms(sr.ranked, truth.selected)
    path = bic_path(dataset, basis, active=sr.ranked[: sr.keep_count])
    st = path.fits[path.best_index].structure
    return {"varying": tuple(st.varying), "constant": tuple(st.constant),
            "mmms": int(min_size)}


class _StructureView:
    """Adapter giving selection_metrics the index tuples it expects."""

    def __init__(self, varying, constant):
        self.varying = tuple(varying)
        self.constant = tuple(constant)
        self.selected = self.constant + self.varying


def _fit_pair(dataset, spec, h_kw):
    """Initial (working-independence) and refined fits for one structure."""
    initial = fit_semivarying(dataset, spec, **h_kw)
    model = estimate_covariance(dataset, initial, grid_size=101)
    refined = fit_semivarying(dataset, spec, covariance=model, **h_kw)
    return initial, refined


def _table2_summaries(fit, truth, grid):
    """Map one fitted structure onto the true components.

    Constants that were classified as varying contribute their curve average;
    dropped components contribute zero. True curves classified constant
    contribute a flat line at the estimated value.
    """
    spec = fit.spec
    beta1 = dict(zip(spec.constant_idx, fit.beta1))
    curve = {k: fit.curves[1 + j] for j, k in enumerate(spec.varying_idx)}
    constants = []
    for k in truth.constant:
        if k in beta1:
            constants.append(beta1[k])
        elif k in curve:
            constants.append(float(np.trapezoid(curve[k], grid)))
        else:
            constants.append(0.0)
    curves = [fit.curves[0]]
    for k in truth.varying:
        if k in curve:
            curves.append(curve[k])
        elif k in beta1:
            curves.append(np.full(grid.size, beta1[k]))
        else:
            curves.append(np.zeros(grid.size))
    return np.array(constants), np.stack(curves)


def _estimation_replicate(payload):
    """One seeded estimation replicate (table 2), all requested variants."""
    (case_id, column_seed, rep, variants) = payload
    spec = make_case(case_id, n=100, m=20, p=500, rho=0.1, s0=10)
    rng = replicate_rng(column_seed, rep)
    dataset, truth = gen_case(spec, rng)
    grid = np.linspace(0.0, 1.0, 101)
    out = {}
    for variant in variants:
        if variant == "oracle":
            vspec = SemiVaryingSpec(constant_idx=truth.constant,
                                    varying_idx=truth.varying)
        else:
            basis = make_basis(default_dimension(dataset.n), 3)
            sr = screen(dataset, basis)
            path = bic_path(dataset, basis, active=sr.ranked[: sr.keep_count])
            vspec = SemiVaryingSpec.from_structure(
                path.fits[path.best_index].structure)
        initial, refined = _fit_pair(dataset, vspec, {})
        for stage, fit in (("initial", initial), ("refined", refined)):
            consts, curves = _table2_summaries(fit, truth, grid)
            out[(variant, stage)] = (consts, curves)
    return out


def _format(value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return ""
    return f"{value:.10g}"


def _metric_value(metrics, name):
    attr = {"Cvar": ("cvar", None), "Cfix": ("cfix", None),
            "Size": ("size", "size_sd"), "U": ("under", None),
            "O": ("over", None), "TP": ("tp", "tp_sd"), "FP": ("fp", "fp_sd"),
            "TPvar": ("tpvar", "tpvar_sd"), "FPvar": ("fpvar", "fpvar_sd"),
            "TPfix": ("tpfix", "tpfix_sd"), "FPfix": ("fpfix", "fpfix_sd"),
            "MMMS": ("mmms_median", "mmms_sd")}[name]
    value = getattr(metrics, attr[0])
    sd = getattr(metrics, attr[1]) if attr[1] else None
    return value, sd


def _map_replicates(worker, payloads, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, payloads))
    return [worker(p) for p in payloads]


def _replicate_table1(cases, reps, seed, workers):
    columns = [c for c in TABLE1_COLUMNS if c[0] in cases]
    rows = []
    for case_id, n, rho in columns:
        cseed = _column_seed(seed, 1, case_id, n, rho)
        payloads = [(case_id, n, rho, cseed, r) for r in range(reps)]
        results = _map_replicates(_selection_replicate, payloads, workers)
        truth = truth_record(make_case(case_id, n=n, m=20, p=500, rho=rho, s0=10))
        metrics = selection_metrics(
            [_StructureView(r["varying"], r["constant"]) for r in results],
            truth, mmms_values=[r["mmms"] for r in results])
        reference = _TABLE1_REFERENCE[(case_id, n, rho)]
        for name in _SELECTION_METRIC_ORDER:
            value, sd = _metric_value(metrics, name)
            ref, ref_sd = reference[name]
            rows.append({"case": case_id, "n": n, "rho": rho, "metric": name,
                         "value": value, "robust_sd": sd,
                         "reference": ref, "reference_sd": ref_sd})
    header = ("case", "n", "rho", "metric", "value", "robust_sd",
              "reference", "reference_sd")
    return header, rows


def _replicate_table2(cases, reps, seed, workers, variants):
    rows = []
    for case_id in [c for c in TABLE2_CASES if c in cases]:
        cseed = _column_seed(seed, 2, case_id, 100, 0.1)
        payloads = [(case_id, cseed, r, tuple(variants)) for r in range(reps)]
        results = _map_replicates(_estimation_replicate, payloads, workers)
        truth = truth_record(make_case(case_id, n=100, m=20, p=500, rho=0.1,
                                       s0=10))
        grid = np.linspace(0.0, 1.0, 101)
        for variant in variants:
            for stage in ("initial", "refined"):
                consts = np.array([r[(variant, stage)][0] for r in results])
                curves = np.stack([r[(variant, stage)][1] for r in results])
                em = estimation_metrics(consts if truth.constant else None,
                                        curves, truth, grid)
                for pos, k in enumerate(truth.constant):
                    err = em.constants[k]
                    ref = _T2.get((case_id, "constant", pos), {}).get(
                        (variant, stage), _NA)
                    for metric, value, sd, rv in (
                            ("mae", err.mae, err.mae_sd, ref[0]),
                            ("rmse", err.rmse, err.rmse_sd, ref[1])):
                        rows.append({"case": case_id, "variant": variant,
                                     "stage": stage, "component": "constant",
                                     "target": f"x{k + 1}", "metric": metric,
                                     "value": value, "robust_sd": sd,
                                     "reference": rv})
                curve_keys = [-1] + list(truth.varying)
                for pos, k in enumerate(curve_keys):
                    err = em.curves[k]
                    label = "intercept" if k == -1 else f"x{k + 1}"
                    ref = _T2.get((case_id, "curve", pos), {}).get(
                        (variant, stage), _NA)
                    for metric, value, sd, rv in (
                            ("miae", err.miae, err.miae_sd, ref[0]),
                            ("rmise", err.rmise, err.rmise_sd, ref[1])):
                        rows.append({"case": case_id, "variant": variant,
                                     "stage": stage, "component": "curve",
                                     "target": label, "metric": metric,
                                     "value": value, "robust_sd": sd,
                                     "reference": rv})
    header = ("case", "variant", "stage", "component", "target", "metric",
              "value", "robust_sd", "reference")
    return header, rows


def replicate_table(table_id, reps, seed, cases=None, variants=("oracle",
                                                                "practical"),
                    out_dir=None, workers=None):
    """Recompute one benchmark summary table over seeded replicates.

    Returns (header, rows, manifest). When out_dir is given, writes
    table<k>.csv and table<k>_manifest.json there; the manifest records the
    full request so the run can be reproduced bit for bit.
    """
    if table_id not in (1, 2):
        raise ConfigError("table id must be 1 or 2")
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    all_cases = (tuple(dict.fromkeys(c for c, _, _ in TABLE1_COLUMNS))
                 if table_id == 1 else TABLE2_CASES)
    cases = all_cases if cases is None else tuple(cases)
    unknown = [c for c in cases if c not in all_cases]
    if unknown:
        raise ConfigError(f"no reference column for case(s) {unknown} "
                          f"in table {table_id}")
    variants = tuple(variants)
    if table_id == 2:
        bad = [v for v in variants if v not in ("oracle", "practical")]
        if bad or not variants:
            raise ConfigError("variants must be a nonempty subset of "
                              "{'oracle', 'practical'}")
    workers = resolve_workers(workers)

    if table_id == 1:
        header, rows = _replicate_table1(cases, reps, seed, workers)
    else:
        header, rows = _replicate_table2(cases, reps, seed, workers, variants)

    manifest = {
        "tool": "longvc",
        "kind": "replicate-table",
        "request": {"table_id": table_id, "reps": int(reps), "seed": int(seed),
                    "cases": list(cases),
                    "variants": list(variants) if table_id == 2 else None},
        "versions": _versions(),
    }
    if reps == 1:
        manifest["notes"] = ["single replication: robust SDs are degenerate "
                             "(reported as 0)"]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        table_path = os.path.join(out_dir, f"table{table_id}.csv")
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[h] if isinstance(row[h], (str, int))
                                 else _format(row[h]) for h in header])
        manifest["outputs"] = {"table": table_path}
        mpath = os.path.join(out_dir, f"table{table_id}_manifest.json")
        with open(mpath, "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        manifest["manifest_path"] = mpath
    return header, rows, manifest


def replicate_table_from_manifest(path, out_dir=None, workers=None):
    """Re-execute a replicate-table run exactly as its manifest records it."""
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}")
    if manifest.get("kind") != "replicate-table" or "request" not in manifest:
        raise ConfigError(f"{path} is not a replicate-table manifest")
    req = manifest["request"]
    return replicate_table(
        req["table_id"], req["reps"], req["seed"], cases=req.get("cases"),
        variants=tuple(req.get("variants") or ("oracle", "practical")),
        out_dir=out_dir, workers=workers)
