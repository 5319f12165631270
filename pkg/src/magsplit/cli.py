"""Batch command-line front end.

Every subcommand reads a JSON config, runs one computation, prints its table
(CSV or JSON) to stdout and, with ``--out``, writes the table plus a
``manifest.json`` into that directory.  Exit codes: 0 all checks pass, 1 some
check failed, 2 invalid config, 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .model import ConfigError, ModelConfig, validate
from .quadrature import QuadratureError
from .radial import ConsistencyError, ConvergenceError, GroundState, NoBoundStateError
from .specfun import SeriesError

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2, 3

# lam d^2 / 4 above this puts the gap near eigensolver noise
DESK_SCALE_LIMIT = 30.0

HOPPING_COLUMNS = ("lambda", "dist", "rho_bessel", "rho_direct_re", "rho_direct_im",
                   "lower", "upper", "ratio_x", "ratio_bound")
# gap_planar and gap_reduction share the coarsest refinement spacing; ratio is
# gap_extrapolated / (2 |rho|)
SWEEP_COLUMNS = ("lambda", "dist", "rho_abs", "gap_planar", "gap_reduction",
                 "gap_extrapolated", "ratio", "max_abs_f", "max_abs_g", "resolvent_probe",
                 "resolved")


class Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- manifest and output ------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash,
                "version": self.version, "started": self.started, "finished": self.finished,
                "outputs": list(self.outputs), "checks": dict(self.checks)}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def to_json(rows) -> str:
    return json.dumps(_jsonable(list(rows)), sort_keys=True, indent=2) + "\n"


# -- ground-state cache -------------------------------------------------------------

def cache_key(config: ModelConfig) -> str:
    """Key on (well, lam, b, quadrature tolerance): the inputs of the radial solve."""
    d = config.to_dict()
    key = {"well": d["well"], "lambda": d["lambda"], "b": config.field_strength,
           "quadrature_rel": config.tolerances.quadrature_rel,
           "match_rel": config.tolerances.match_rel}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:32]


class GroundStateCache:
    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, config: ModelConfig) -> Path | None:
        return None if self.directory is None else self.directory / f"gs-{cache_key(config)}.json"

    def get(self, config: ModelConfig) -> GroundState:
        from .radial import solve_ground_state

        p = self.path(config)
        if p is not None and p.exists():
            gs = GroundState.from_json(p.read_text())
            # the cached state carries the config it was solved for; rebind to this one
            return GroundState.from_dict({**gs.to_dict(), "config": config.to_dict()})
        gs = solve_ground_state(config)
        if p is not None:
            p.write_text(gs.to_json())
        return gs


# -- subcommands ----------------------------------------------------------------------
# Each returns (rows, columns, checks, extra_outputs).

def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


def cmd_ground_state(config, args, cache):
    from .radial import norm_check

    gs = cache.get(config)
    inner, outer = norm_check(gs)
    total = inner + outer
    row = {"lambda": config.lam, "e0": gs.e0, "alpha": gs.alpha, "nu": gs.nu,
           "c_lambda": gs.c_lambda, "log_c_lambda": gs.log_c_lambda,
           "matching_residual": gs.matching_residual, "norm": total}
    checks = {"norm": abs(total - 1.0) <= 1e-8,
              "matching": gs.matching_residual <= max(config.tolerances.match_rel, 1e-8)}
    if args.curve_points:
        rs = np.linspace(config.well.radius, 2.0 * config.separation, args.curve_points + 1)[1:]
        curve = [{"r": float(r), "log_phi": float(v)} for r, v in zip(rs, gs.log_phi_out(rs))]
        return curve, ("r", "log_phi"), checks, {}
    return [row], tuple(row), checks, {}


def cmd_hopping(config, args, cache):
    from .hopping import hopping_all_routes, hopping_ratio_check

    gs = cache.get(config)
    res = hopping_all_routes(gs, config.separation)
    ratio = hopping_ratio_check(gs, config.separation, args.ratio_x)
    row = {"lambda": config.lam, "dist": config.separation, "rho_bessel": res.rho_bessel,
           "rho_direct_re": res.rho_direct.real, "rho_direct_im": res.rho_direct.imag,
           "lower": res.lower_bound, "upper": res.upper_bound,
           "ratio_x": math.exp(ratio.log_ratio), "ratio_bound": math.exp(ratio.log_bound)}
    checks = {"routes_agree": not res.failed_routes and res.route_disagreement <= 1e-4,
              "ratio_bound": ratio.holds}
    if validate(config).strict_spacing:
        checks["within_bounds"] = res.within_bounds
    return [row], HOPPING_COLUMNS, checks, {}


def _dump_eigenvectors(report, out: Path) -> list[str]:
    op, eig = report.operator, report.eigen
    grid = op.grid
    written = []
    for i in range(eig.eigenvectors.shape[1]):
        vec = np.ascontiguousarray(eig.grid_vector(i, grid.shape), dtype="<c16")
        binp = out / f"psi{i}.bin"
        binp.write_bytes(vec.tobytes(order="C"))
        side = {"dims": list(grid.shape), "spacing": grid.spacing,
                "origin": [float(grid.x[0]), float(grid.y[0])], "dtype": "complex128",
                "byte_order": "little", "layout": "row-major, first index x",
                "eigenvalue": float(eig.eigenvalues[i])}
        sidep = out / f"psi{i}.json"
        sidep.write_text(json.dumps(side, sort_keys=True, indent=2) + "\n")
        written += [binp.name, sidep.name]
    return written


def cmd_splitting(config, args, cache):
    from .planar import splitting

    if args.dump_eigenvectors and args.out is None:
        raise Failure(EXIT_CONFIG, "--dump-eigenvectors needs --out")
    gs = cache.get(config)
    rep = splitting(config, levels=args.levels, gs=gs)
    if not rep.resolved:
        _warn(rep.status)
    row = {"lambda": config.lam, "dist": config.separation, "E0": rep.E0, "E1": rep.E1,
           "gap": rep.gap, "gap_extrapolated": rep.gap_extrapolated, "rho_abs": rep.rho_abs,
           "ratio": rep.ratio, "ratio_extrapolated": rep.ratio_extrapolated,
           "lower": rep.lower_bound, "upper": rep.upper_bound, "resolved": rep.resolved}
    checks = {}
    if rep.resolved:
        checks["ratio_window"] = 0.5 <= rep.ratio_extrapolated <= 1.5
        if rep.bounds_applicable:
            checks["within_bounds"] = rep.within_bounds
    extra = {}
    if args.dump_eigenvectors:
        extra["eigenvectors"] = _dump_eigenvectors(rep, Path(args.out))
    return [row], tuple(row), checks, extra


def cmd_bounds(config, args, cache):
    from .hopping import exponent_rate_window, hopping_all_routes
    from .radial import decay_envelope_check, normalization_bracket

    gs = cache.get(config)
    a, d = config.well.radius, config.separation
    rs = np.linspace(a, 2.0 * d, 65)[1:]
    env = decay_envelope_check(gs, rs)
    nb = normalization_bracket(gs)
    res = hopping_all_routes(gs, d)
    lo, hi = exponent_rate_window(gs, d)
    rate = -(4.0 / config.lam) * res.log_abs_rho
    strict = validate(config).strict_spacing
    rows = [
        {"check": "decay_envelope", "value": float(env.violations), "lower": 0.0,
         "upper": 0.0, "holds": env.holds, "asserted": True},
        {"check": "normalization", "value": gs.c_lambda, "lower": nb.lower,
         "upper": nb.upper, "holds": nb.holds, "asserted": True},
        {"check": "hopping_envelope", "value": math.exp(res.log_abs_rho),
         "lower": res.lower_bound, "upper": res.upper_bound, "holds": res.within_bounds,
         "asserted": strict},
        {"check": "exponent_rate", "value": rate, "lower": lo, "upper": hi,
         "holds": lo <= rate <= hi, "asserted": strict},
    ]
    checks = {r["check"]: r["holds"] for r in rows if r["asserted"]}
    return rows, ("check", "value", "lower", "upper", "holds", "asserted"), checks, {}


def _planar_gap(config, spacing, e0_estimate):
    from .planar import build_hamiltonian, default_shift, lowest_eigenpairs

    op = build_hamiltonian(config, "double", spacing=spacing)
    eig = lowest_eigenpairs(op, 2, default_shift(config, e0_estimate))
    return float(eig.eigenvalues[1] - eig.eigenvalues[0]), float(eig.eigenvalues[0])


def cmd_reduce(config, args, cache):
    from .planar import eigen_resolution
    from .reduction import effective_matrices, resolvent_probe, splitting_from_reduction

    gs = cache.get(config)
    eff = effective_matrices(config)
    spacing = eff.pair.operator.grid.spacing
    E0, E1, diag = splitting_from_reduction(config, eff=eff)
    gap_planar, e0_planar = _planar_gap(config, spacing, gs.e0)
    probe = resolvent_probe(config, 0.0, eff=eff)
    gap_red = E1 - E0
    row = {"lambda": config.lam, "dist": config.separation, "spacing": spacing,
           "rho_abs": diag.rho_abs, "gap_planar": gap_planar, "gap_reduction": gap_red,
           "ratio": gap_planar / (2.0 * diag.rho_abs), "max_abs_f": diag.max_abs_f,
           "max_abs_g": diag.max_abs_g, "resolvent_probe": probe.value,
           "max_leakage": diag.max_leakage, "imag_residue": diag.imag_residue}
    checks = {"leakage": diag.max_leakage <= 1e-10}
    if gap_planar > eigen_resolution(config, e0_planar):
        checks["gap_agreement"] = abs(gap_red - gap_planar) <= 0.05 * gap_planar
    else:
        _warn("planar gap unresolved; reduction agreement not asserted")
    return [row], tuple(row), checks, {}


def cmd_landau(config, args, cache):
    from .planar import landau_check

    rep = landau_check(config.with_well(depth=0.0))
    row = {"lambda": config.field_strength, "lowest": rep.lowest,
           "relative_error": rep.relative_error}
    print(f"lowest eigenvalue {rep.lowest:.10g}  |E0/lambda - 1| = {rep.relative_error:.3e}",
          file=sys.stderr)
    return [row], tuple(row), {"landau_level": rep.passed}, {}


# -- sweep ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    base: ModelConfig
    lambdas: tuple[float, ...]
    separations: tuple[float, ...]
    levels: int = 3
    workers: int = 1
    spacing_divisor: float | None = None  # spacing = magnetic_length / divisor per point

    def points(self) -> list[ModelConfig]:
        out = []
        for d, lam in itertools.product(self.separations, self.lambdas):
            cfg = self.base.replace(lam=lam, separation=d)
            if self.spacing_divisor is not None:
                cfg = cfg.replace(grid=dataclasses.replace(
                    cfg.grid, spacing=cfg.magnetic_length / self.spacing_divisor))
            out.append(cfg)
        return out

    def to_json(self) -> str:
        return json.dumps({"config": self.base.to_dict(), "lambda": list(self.lambdas),
                           "separation": list(self.separations), "levels": self.levels,
                           "workers": self.workers, "spacing_divisor": self.spacing_divisor},
                          sort_keys=True, indent=2)


def load_sweep(path) -> SweepSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or "config" not in data:
        raise ConfigError("sweep file needs a 'config' object")
    unknown = set(data) - {"config", "lambda", "separation", "levels", "workers",
                           "spacing_divisor"}
    if unknown:
        raise ConfigError(f"sweep: unknown keys {sorted(unknown)}")
    base = ModelConfig.from_dict(data["config"])
    lams = data.get("lambda", [base.lam])
    seps = data.get("separation", [base.separation])
    for name, seq in (("lambda", lams), ("separation", seps)):
        if not isinstance(seq, list) or not seq or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq):
            raise ConfigError(f"sweep: '{name}' must be a non-empty list of numbers")
    levels, workers = data.get("levels", 3), data.get("workers", 1)
    if levels not in (1, 2, 3) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("sweep: levels must be 1-3 and workers a positive integer")
    div = data.get("spacing_divisor")
    if div is not None and (isinstance(div, bool) or not isinstance(div, (int, float))
                            or div < 8):
        raise ConfigError("sweep: spacing_divisor must be a number >= 8")
    return SweepSpec(base, tuple(float(v) for v in lams), tuple(float(v) for v in seps),
                     levels, workers, None if div is None else float(div))


def sweep_point(config_json: str, gs_json: str, levels: int) -> dict:
    """One (lam, dist) point; module-level so worker processes can run it."""
    from .hopping import hopping_all_routes
    from .planar import eigen_resolution, splitting
    from .reduction import effective_matrices, resolvent_probe, splitting_from_reduction

    config = ModelConfig.from_json(config_json)
    gs = GroundState.from_json(gs_json)
    hop = hopping_all_routes(gs, config.separation)
    rep = splitting(config, levels=levels, gs=gs, hopping=hop)
    coarse = rep.levels[0]
    eff = effective_matrices(config, spacing=coarse.spacing)
    E0, E1, diag = splitting_from_reduction(config, eff=eff)
    probe = resolvent_probe(config, 0.0, eff=eff)
    return {"lambda": config.lam, "dist": config.separation, "rho_abs": rep.rho_abs,
            "gap_planar": coarse.gap, "gap_reduction": E1 - E0,
            "gap_extrapolated": rep.gap_extrapolated, "ratio": rep.ratio_extrapolated,
            "max_abs_f": diag.max_abs_f, "max_abs_g": diag.max_abs_g,
            "resolvent_probe": probe.value, "resolved": rep.resolved,
            "gap_resolved": coarse.gap > eigen_resolution(config, coarse.E0)}


def count_inversions(values) -> int:
    return sum(1 for u, v in zip(values, values[1:]) if v > u)


def sweep_checks(rows) -> dict[str, bool]:
    checks = {}
    for d in sorted({r["dist"] for r in rows}):
        pts = sorted((r for r in rows if r["dist"] == d), key=lambda r: r["lambda"])
        tag = f"d={d:g}"
        res = [r for r in pts if r["resolved"]]
        if res:
            checks[f"{tag}:ratio_window"] = all(0.5 <= r["ratio"] <= 1.5 for r in res)
            checks[f"{tag}:ratio_final"] = abs(res[-1]["ratio"] - 1.0) <= 0.2
        if len(res) >= 3:
            checks[f"{tag}:ratio_trend"] = count_inversions(
                [abs(r["ratio"] - 1.0) for r in res]) <= 1
        agree = [abs(r["gap_reduction"] - r["gap_planar"]) <= 0.05 * r["gap_planar"]
                 for r in pts if r["gap_resolved"]]
        if agree:
            checks[f"{tag}:reduction_agreement"] = all(agree)
        if len(pts) >= 2:
            fg = [max(r["max_abs_f"], r["max_abs_g"]) for r in pts]
            checks[f"{tag}:fg_decreasing"] = all(v < u for u, v in zip(fg, fg[1:]))
        probes = [r["resolvent_probe"] for r in pts]
        if len(probes) >= 2:
            checks[f"{tag}:probe_stable"] = max(probes) <= 2.0 * min(probes)
    return checks


def cmd_sweep(spec: SweepSpec, args, cache):
    points = spec.points()
    for cfg in points:
        _check_config(cfg)
    # one radial solve per (well, lam, b), shared across separations
    states = {}
    for cfg in points:
        key = cache_key(cfg)
        if key not in states:
            states[key] = cache.get(cfg).to_json()
    jobs = [(cfg.to_json(), states[cache_key(cfg)], spec.levels) for cfg in points]
    workers = args.workers or spec.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_point, *zip(*jobs)))
    else:
        rows = [sweep_point(*job) for job in jobs]
    return rows, SWEEP_COLUMNS, sweep_checks(rows), {}


COMMANDS = {
    "ground-state": cmd_ground_state,
    "hopping": cmd_hopping,
    "splitting": cmd_splitting,
    "bounds": cmd_bounds,
    "reduce": cmd_reduce,
    "landau-check": cmd_landau,
    "sweep": cmd_sweep,
}


# -- driver ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magsplit",
                                description="Tunnelling splitting in a strong magnetic field.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--out", help="directory for output files and manifest.json")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--cache", help="directory caching radial ground states")
        if name == "ground-state":
            s.add_argument("--curve-points", type=int, default=0,
                           help="emit log phi_out on this many points of (a, 2d] instead")
        if name == "hopping":
            s.add_argument("--ratio-x", type=float, default=math.sqrt(2.0))
        if name == "splitting":
            s.add_argument("--levels", type=int, choices=(1, 2, 3), default=3)
            s.add_argument("--dump-eigenvectors", action="store_true")
        if name == "sweep":
            s.add_argument("--workers", type=int, default=0,
                           help="worker processes (default: from the sweep file)")
    return p


def _check_config(config: ModelConfig):
    report = validate(config)
    if not report.valid:
        raise Failure(EXIT_CONFIG, "invalid config: " + "; ".join(report.violations))
    if config.lam * config.separation ** 2 / 4.0 > DESK_SCALE_LIMIT:
        _warn(f"lambda d^2/4 = {config.lam * config.separation ** 2 / 4:.3g} exceeds "
              f"{DESK_SCALE_LIMIT:g}; the gap may sit below eigensolver noise")


NONCONVERGENCE = (ConvergenceError, QuadratureError, SeriesError, NoBoundStateError,
                  ConsistencyError)


def _nonconvergence_types():
    from .planar import EigenConvergenceError
    from .reduction import ReductionError, SolveStagnation

    return NONCONVERGENCE + (EigenConvergenceError, SolveStagnation, ReductionError)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    manifest = RunManifest(command=args.command, config_hash="", started=_now())
    try:
        if args.command == "sweep":
            spec = load_sweep(args.config)
            manifest.config_hash = hashlib.sha256(spec.to_json().encode()).hexdigest()
            target = spec
        else:
            config = ModelConfig.load(args.config)
            manifest.config_hash = config.config_hash()
            if args.command != "landau-check":
                _check_config(config)
            target = config
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        cache = GroundStateCache(args.cache)
        rows, columns, checks, extra = COMMANDS[args.command](target, args, cache)
    except Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, OSError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError as exc:  # GridSizeError carries sizing advice
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _nonconvergence_types() as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE

    text = to_csv(columns, rows) if args.format == "csv" else to_json(rows)
    sys.stdout.write(text)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=sys.stderr)
    manifest.checks = checks
    if out is not None:
        table = out / f"{args.command}.{args.format}"
        table.write_text(text)
        manifest.outputs = [table.name] + [p for v in extra.values() for p in v]
        manifest.finished = _now()
        manifest.outputs.append("manifest.json")
        (out / "manifest.json").write_text(
            json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n")
    return EXIT_OK if all(checks.values()) else EXIT_CHECKS


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
