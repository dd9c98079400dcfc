"""Batch front-end: JSON run configurations, CSV/SVG artifacts, presets.

``shom run`` executes one scheme and writes the effective operator, the
iteration trace (streamed row by row) and optional field dumps and plots.
``shom compare`` runs several schemes on the same problem from identical
initialization rules and adds overlay and trajectory artifacts.  All plotted
series are also present in a CSV; plots are derived artifacts.

Exit codes: 0 converged, 1 configuration error (no partial outputs),
2 solver stopped on the iteration budget or broke down (partial traces are
preserved).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .constitutive import (
    PhaseMap,
    PowerLawPotential,
    QuadraticPotential,
    raster_ids_from_dump,
    read_pgm_ids,
)
from .fields import read_dump, write_dump
from .grid import Grid, Physics, component_count
from .homogenize import (
    assemble_effective,
    build_problem,
    make_benchmark,
    obnosov_exact,
)
from .solvers import (
    SchemeConfig,
    SolveResult,
    SolverError,
    leff_label,
    solve,
)
from .svgplot import line_plot, trajectory_plot


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------------

_TOP_KEYS = {"problem", "physics", "load", "schemes", "output"}
_PROBLEM_KEYS = {
    "benchmark", "grid", "contrast", "matrix_modulus", "axis", "fractions",
    "moduli", "raster", "phase_table", "cell_size",
}
_SCHEME_KEYS = {
    "scheme", "functional", "max_iter", "tol_grad", "tol_value", "tol_div",
    "reference", "init", "beta_rule",
}
_OUTPUT_KEYS = {"trace", "fields", "convergence_svg", "trajectory_svg", "assemble"}
_PHASE_KINDS = {"conductivity", "elasticity", "power_law"}


def _reject_unknown(section, mapping, allowed):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


def _potential_from_config(spec, physics, dim):
    _reject_unknown("phase", spec, {"kind", "modulus", "bulk", "shear", "exponent"})
    kind = spec.get("kind")
    if kind not in _PHASE_KINDS:
        raise ConfigError(f"phase kind must be one of {sorted(_PHASE_KINDS)}, got {kind!r}")
    try:
        if kind == "conductivity":
            return QuadraticPotential.isotropic(Physics.CONDUCTIVITY, dim, float(spec["modulus"]))
        if kind == "elasticity":
            return QuadraticPotential.isotropic(
                Physics.ELASTICITY, dim, float(spec["bulk"]), float(spec["shear"])
            )
        return PowerLawPotential(float(spec["modulus"]), float(spec["exponent"]))
    except KeyError as exc:
        raise ConfigError(f"phase spec {spec} is missing {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


class RunConfig:
    """Validated run configuration; construction performs full validation."""

    def __init__(self, raw: dict, base_dir: Path):
        if not isinstance(raw, dict):
            raise ConfigError("the configuration must be a JSON object")
        _reject_unknown("config", raw, _TOP_KEYS)
        if "problem" not in raw or "schemes" not in raw:
            raise ConfigError("config needs 'problem' and 'schemes' sections")

        self.physics = Physics(raw.get("physics", "conductivity"))
        self.phases = self._build_phases(raw["problem"], base_dir)
        dim = self.phases.grid.dim
        m = component_count(self.physics, dim)

        load = raw.get("load")
        if load is None:
            load = [0.0] * m
            load[0] = 1.0
        self.load = np.asarray(load, dtype=float)
        if self.load.shape != (m,) or not np.all(np.isfinite(self.load)):
            raise ConfigError(f"load must be {m} finite numbers")

        schemes = raw["schemes"]
        if not isinstance(schemes, list) or not schemes:
            raise ConfigError("'schemes' must be a non-empty list")
        self.schemes = [self._build_scheme(s) for s in schemes]
        labels = [c.label() for c in self.schemes]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate scheme labels: {labels}")

        out = raw.get("output", {})
        _reject_unknown("output", out, _OUTPUT_KEYS)
        self.emit_trace = bool(out.get("trace", True))
        self.emit_fields = bool(out.get("fields", False))
        self.emit_convergence = bool(out.get("convergence_svg", True))
        self.emit_trajectory = bool(out.get("trajectory_svg", False))
        self.assemble = bool(out.get("assemble", False))
        self.benchmark = raw["problem"].get("benchmark")
        self.exact_reference = self._exact_reference(raw["problem"])

    def _build_phases(self, spec, base_dir) -> PhaseMap:
        if not isinstance(spec, dict):
            raise ConfigError("'problem' must be an object")
        _reject_unknown("problem", spec, _PROBLEM_KEYS)
        if ("benchmark" in spec) == ("raster" in spec):
            raise ConfigError("problem needs exactly one of 'benchmark' or 'raster'")
        cell_size = spec.get("cell_size")

        if "benchmark" in spec:
            if self.physics != Physics.CONDUCTIVITY:
                raise ConfigError("built-in benchmarks are conductivity microstructures")
            dims = spec.get("grid")
            if not isinstance(dims, list) or len(dims) not in (2, 3):
                raise ConfigError("problem.grid must be [N1, N2] or [N1, N2, N3]")
            try:
                grid = Grid(tuple(int(n) for n in dims), cell_size)
                options = {
                    k: spec[k] for k in ("axis", "fractions", "moduli") if k in spec
                }
                return make_benchmark(
                    spec["benchmark"], grid,
                    contrast=float(spec.get("contrast", 1.0)),
                    matrix_modulus=float(spec.get("matrix_modulus", 1.0)),
                    **options,
                )
            except (ValueError, TypeError) as exc:
                raise ConfigError(str(exc)) from exc

        raster = base_dir / str(spec["raster"])
        if not raster.exists():
            raise ConfigError(f"raster file {raster} does not exist")
        table_spec = spec.get("phase_table")
        if not isinstance(table_spec, dict) or not table_spec:
            raise ConfigError("raster problems need a non-empty 'phase_table'")
        try:
            if raster.suffix.lower() == ".pgm":
                ids = read_pgm_ids(raster)
            else:
                ids = raster_ids_from_dump(read_dump(raster))
            grid = Grid(ids.shape, cell_size)
            table = {
                int(pid): _potential_from_config(p, self.physics, grid.dim)
                for pid, p in table_spec.items()
            }
            return PhaseMap(grid, self.physics, ids, table)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def _build_scheme(spec) -> SchemeConfig:
        if not isinstance(spec, dict):
            raise ConfigError("each scheme must be an object")
        _reject_unknown("scheme", spec, _SCHEME_KEYS)
        try:
            return SchemeConfig(**spec)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"scheme {spec}: {exc}") from exc

    def _exact_reference(self, spec):
        if spec.get("benchmark") == "obnosov":
            axis = np.nonzero(self.load)[0]
            if len(axis) == 1:
                return obnosov_exact(
                    float(spec.get("contrast", 1.0)), float(spec.get("matrix_modulus", 1.0))
                )
        return None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return RunConfig(raw, path.parent)


# -- artifacts -----------------------------------------------------------------------


class _CsvStream:
    """Streams trace rows to disk, flushed on every row."""

    def __init__(self, path, leff_column):
        from .solvers import TRACE_COLUMNS

        self.path = path
        self.keys = TRACE_COLUMNS + ("leff",)
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRACE_COLUMNS + (leff_column,))
        self._fh.flush()

    def __call__(self, row):
        self._writer.writerow([_num(row[k]) for k in self.keys])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _effective_rows(cfg: RunConfig, scheme_cfg, result, problem):
    from .homogenize import effective_from_pair, effective_from_strain

    if len(result.state) == 2:
        q = effective_from_pair(problem, *result.state)
    else:
        q = effective_from_strain(problem, result.state[0])
    scale = float(cfg.load @ cfg.load)
    value = q / scale if scale > 0 else q
    axis = np.nonzero(cfg.load)[0]
    if len(axis) == 1:
        i = j = int(axis[0]) + 1
        prov = "configured load"
    else:
        i = j = 0
        prov = "quadratic form along the configured (non-axis) load"
    return [(i, j, value, prov)]


def _write_effective(path, cfg: RunConfig, entries, meta):
    with open(path, "w", newline="") as fh:
        for key, val in meta.items():
            fh.write(f"# {key}={val}\n")
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value", "provenance"])
        for i, j, value, prov in entries:
            writer.writerow([i, j, _num(value), prov])


def _relative_error_series(cfg: RunConfig, trace):
    leff = trace.column("leff")
    if cfg.exact_reference is not None:
        ref, label = cfg.exact_reference, "error vs closed form"
    else:
        ref, label = leff[-1], "error vs final value (self-referential)"
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(leff - ref) / abs(ref) if ref != 0 else np.abs(leff)
    return label, err


def _run_one(cfg: RunConfig, scheme_cfg, out_dir: Path, verbose) -> tuple:
    problem = build_problem(cfg.phases, cfg.load, scheme_cfg.functional)
    sink = None
    if cfg.emit_trace:
        sink = _CsvStream(out_dir / f"trace_{scheme_cfg.label()}.csv", leff_label(cfg.load))
    try:
        result = solve(scheme_cfg, problem, sink=sink)
    finally:
        if sink:
            sink.close()
    if verbose:
        print(
            f"[{scheme_cfg.label()}] iterations={result.n_iter} "
            f"converged={result.converged} criterion={result.criterion.value}",
            file=sys.stderr,
        )
    return problem, result


def _dump_fields(out_dir, label, result: SolveResult):
    if len(result.state) == 2:
        write_dump(result.state[0], out_dir / f"{label}_stress.dump")
        write_dump(result.state[1], out_dir / f"{label}_strain.dump")
    else:
        write_dump(result.state[0], out_dir / f"{label}_strain_fluctuation.dump")


def _meta(cfg: RunConfig, deterministic):
    grid = cfg.phases.grid
    meta = {
        "grid": "x".join(str(n) for n in grid.dims),
        "physics": cfg.physics.value,
        "load": " ".join(_num(v) for v in cfg.load),
        "deterministic": str(bool(deterministic)).lower(),
    }
    if cfg.exact_reference is not None:
        meta["exact_reference"] = _num(cfg.exact_reference)
    return meta


def cmd_run(cfg: RunConfig, out_dir: Path, deterministic, verbose) -> int:
    if len(cfg.schemes) != 1:
        raise ConfigError("'run' expects exactly one scheme; use 'compare' for several")
    scheme_cfg = cfg.schemes[0]
    problem, result = _run_one(cfg, scheme_cfg, out_dir, verbose)

    meta = _meta(cfg, deterministic)
    meta["scheme"] = scheme_cfg.label()
    meta["iterations"] = result.n_iter
    meta["converged"] = str(result.converged).lower()
    if cfg.assemble:
        tensor = assemble_effective(cfg.phases, scheme_cfg)
        entries = [
            (i + 1, j + 1, tensor.matrix[i, j], tensor.provenance[(min(i, j), max(i, j))])
            for i in range(tensor.ncomp)
            for j in range(tensor.ncomp)
            if i <= j
        ]
    else:
        entries = _effective_rows(cfg, scheme_cfg, result, problem)
    if cfg.exact_reference is not None and entries:
        achieved = abs(entries[0][2] - cfg.exact_reference) / cfg.exact_reference
        meta["achieved_relative_error"] = _num(achieved)
    _write_effective(out_dir / "effective.csv", cfg, entries, meta)

    if cfg.emit_fields:
        _dump_fields(out_dir, scheme_cfg.label(), result)
    if cfg.emit_convergence:
        label, err = _relative_error_series(cfg, result.trace)
        n = result.trace.column("n")
        series = [
            (label, n, err),
            ("normalized gradient norm", n, result.trace.column("grad_norm")),
        ]
        line_plot(series, out_dir / "convergence.svg",
                  title=f"{scheme_cfg.label()} convergence", ylabel="log scale")
    if cfg.emit_trajectory:
        _write_trajectory(out_dir, [(scheme_cfg.label(), result.trace)])
    return 0 if result.converged else 2


def cmd_compare(cfg: RunConfig, out_dir: Path, deterministic, verbose) -> int:
    if len(cfg.schemes) < 2:
        raise ConfigError("'compare' expects at least two schemes")
    results = []
    for scheme_cfg in cfg.schemes:
        problem, result = _run_one(cfg, scheme_cfg, out_dir, verbose)
        results.append((scheme_cfg, problem, result))
        if cfg.emit_fields:
            _dump_fields(out_dir, scheme_cfg.label(), result)

    meta = _meta(cfg, deterministic)
    entries = []
    for scheme_cfg, problem, result in results:
        ((i, j, value, _),) = _effective_rows(cfg, scheme_cfg, result, problem)
        entries.append((i, j, value, f"{scheme_cfg.label()} (iter {result.n_iter})"))
    _write_effective(out_dir / "effective.csv", cfg, entries, meta)

    if cfg.emit_convergence:
        series = []
        for scheme_cfg, _, result in results:
            label, err = _relative_error_series(cfg, result.trace)
            series.append((f"{scheme_cfg.label()}", result.trace.column("n"), err))
        line_plot(series, out_dir / "convergence.svg",
                  title="relative error in the effective property",
                  ylabel="relative error")
    _write_trajectory(
        out_dir,
        [(s.label(), r.trace) for s, _, r in results],
        svg=cfg.emit_trajectory,
    )
    return 0 if all(r.converged for _, _, r in results) else 2


def _write_trajectory(out_dir, labeled_traces, svg=True):
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "n", "d_const", "d_compat", "d_equil"])
        for label, trace in labeled_traces:
            for n, point in zip(trace.column("n"), trace.trajectory()):
                writer.writerow([label, int(n)] + [_num(c) for c in point])
    if svg:
        series = [(label, trace.trajectory()) for label, trace in labeled_traces]
        trajectory_plot(series, out_dir / "trajectory.svg")


# -- presets ---------------------------------------------------------------------------

PRESETS = {
    "obnosov-512-fixed": {
        "problem": {"benchmark": "obnosov", "grid": [512, 512], "contrast": 100.0},
        "load": [1.0, 0.0],
        "schemes": [
            {"scheme": "fixed_step", "functional": "energy", "tol_grad": 1e-8,
             "max_iter": 5000, "reference": 50.5}
        ],
        "output": {"trace": True, "convergence_svg": True},
    },
    "obnosov-128-compare": {
        "problem": {"benchmark": "obnosov", "grid": [128, 128], "contrast": 100.0},
        "load": [1.0, 0.0],
        "schemes": [
            {"scheme": "fixed_step", "functional": "energy", "tol_grad": 1e-8, "max_iter": 3000},
            {"scheme": "optimal_step", "functional": "energy", "tol_grad": 1e-8, "max_iter": 3000},
            {"scheme": "cg", "functional": "energy", "tol_grad": 1e-8, "max_iter": 3000},
            {"scheme": "cg", "functional": "equilibrium", "tol_grad": 1e-8, "max_iter": 3000},
            {"scheme": "cg", "functional": "twofield", "tol_grad": 1e-8, "max_iter": 3000},
        ],
        "output": {"trace": True, "convergence_svg": True, "trajectory_svg": True},
    },
    "obnosov-64-demo": {
        "problem": {"benchmark": "obnosov", "grid": [64, 64], "contrast": 100.0},
        "load": [1.0, 0.0],
        "schemes": [{"scheme": "cg", "functional": "energy", "tol_grad": 1e-10}],
        "output": {"trace": True, "fields": True, "convergence_svg": True, "assemble": True},
    },
    "laminate-64": {
        "problem": {"benchmark": "laminate", "grid": [64, 64], "contrast": 10.0,
                    "fractions": [0.5, 0.5], "axis": 0},
        "load": [1.0, 0.0],
        "schemes": [{"scheme": "cg", "functional": "energy", "tol_grad": 1e-12}],
        "output": {"trace": True, "assemble": True},
    },
    "homogeneous-16": {
        "problem": {"benchmark": "homogeneous", "grid": [16, 16], "matrix_modulus": 2.0},
        "load": [1.0, 0.0],
        "schemes": [{"scheme": "fixed_step", "functional": "energy"}],
        "output": {"trace": True},
    },
}


def cmd_dump_presets(name=None) -> int:
    if name is not None:
        if name not in PRESETS:
            print(f"unknown preset {name!r}; available: {sorted(PRESETS)}", file=sys.stderr)
            return 1
        print(json.dumps(PRESETS[name], indent=2))
        return 0
    print(json.dumps(PRESETS, indent=2))
    return 0


# -- entry point -------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shom",
        description="spectral homogenization of periodic composites",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "compare"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to a JSON run configuration")
        p.add_argument("--out", default="shom-out", help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="record the deterministic-mode flag in the metadata")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("dump-presets")
    p.add_argument("name", nargs="?", help="print one preset instead of all")
    args = parser.parse_args(argv)

    if args.command == "dump-presets":
        return cmd_dump_presets(args.name)

    try:
        cfg = load_config(args.config)
        if args.command == "run" and len(cfg.schemes) != 1:
            raise ConfigError("'run' expects exactly one scheme; use 'compare' for several")
        if args.command == "compare" and len(cfg.schemes) < 2:
            raise ConfigError("'compare' expects at least two schemes")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if not out_dir.is_dir():
            raise ConfigError(f"cannot create output directory {out_dir}")
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "run":
            return cmd_run(cfg, out_dir, args.deterministic, args.verbose)
        return cmd_compare(cfg, out_dir, args.deterministic, args.verbose)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
