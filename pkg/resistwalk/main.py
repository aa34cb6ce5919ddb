"""
resistwalk command-line interface

Usage:
    resistwalk COMMAND [OPTIONS]
    python -m resistwalk.main COMMAND [OPTIONS]

Commands:
    gen        Generate a family graph (or re-export an imported one) as graph.json
    resist     Effective resistance (all pairs, or --pairs x:y,...) as a row,col,R CSV
    oracle     Exact first-passage quantities (return/hitting laws, excursions, commute, cover)
    walk       Simulate one walk and write its local times
    exp        Run a study (tail curves, UVD, exponents, scaling, carpet, Garsia)
    validate   Check the exact identities on the reference graph set

Every command accepts --config PATH (a TOML document, schema_version = 1);
command-line options override the document. Outputs go to --out-dir, or to
RESISTWALK_OUTPUT_DIR (default ./data), followed by manifest.json.
gen, resist, oracle and walk take --graph FILE instead of a family and
--out FILE to name their primary output.

Examples:
    resistwalk gen --family gasket --level 3 --out g.json
    resistwalk resist --graph g.json --pairs all --out R.csv
    python -m resistwalk.main exp --study thm-b --levels 1 2 --trials 500 --seed 7
    python -m resistwalk.main validate --out-dir out/validation

Exit codes: 0 success, 2 configuration or input error, 3 budget or censoring
error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Callable

import numpy as np

from .config import (
    COMMANDS,
    ORACLES,
    PRIMARY_OUTPUTS,
    ExperimentConfig,
    RuntimeSettings,
    config_from_document,
    load_runtime_config,
    parse_pairs,
)
from .errors import InsufficientData, InvariantViolation, IoError, ParseError, ResistWalkError
from .exact_chain import (
    commute_time,
    excursion_mean,
    excursion_second_moment,
    excursion_second_moment_formula,
    excursion_visit_law,
    expected_cover_time,
    expected_hitting_time,
    expected_return_time,
    hit_before_return_prob,
    hitting_time_tail,
    hitting_times_to,
    laplace_bound_constant,
    return_time_laplace,
    return_time_tail,
)
from .experiments import (
    STUDIES,
    carpet_rho_estimate,
    check_uvd,
    cover_time_scaling,
    estimate_exponents,
    gamma_moment_study,
    garsia_verification,
    inverse_local_time_concentration,
    local_time_scaling,
    modulus_equicontinuity_gasket,
    return_time_tail_study,
    sup_local_time_tail,
    tail_curve_modulus,
    tail_curve_thm_a,
    tail_curve_thm_b,
    wired_monotonicity_check,
)
from .graphs import FAMILIES, FamilySpec, WeightedGraph, build_graph, family_graph, generate
from .io_utils import (
    RunManifest,
    export_graph,
    import_graph,
    library_version,
    write_dataset_to_csv,
    write_dataset_to_json,
    write_pair_resistances_csv,
    write_resistance_csv,
)
from .resistance import check_metric, effective_resistance, resistance_matrix
from .walk_sim import RngStream, cover_time, default_cover_cap, occupation_integral, run_walk

KEY_IDENTITY_TOL = 1e-10
RETURN_TIME_TOL = 1e-10
COMMUTE_TOL = 1e-8
GASKET_RATIO_TOL = 1e-9
EXCURSION_PAIRS = 50
WALK_KEY = 0
ORACLE_ALIASES = {"return-tail": "return_time", "hitting-tail": "hitting_time"}


class _RunContext:
    """Output directory, manifest and worker count shared by the command runners."""

    def __init__(self, config: ExperimentConfig, settings: RuntimeSettings):
        self.config = config
        self.settings = settings
        self.output_dir = Path(config.output_dir or settings.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.workers = config.workers or settings.workers
        self.primary = config.output_file or PRIMARY_OUTPUTS.get(config.command)
        self.manifest = RunManifest(command=config.command, config_hash=config.digest(), version=library_version())

    def csv(self, dataset, filename: str) -> Path:
        path = write_dataset_to_csv(dataset, filename, self.output_dir)
        self.manifest.add_file(path, self.output_dir)
        return path

    def json(self, data, filename: str) -> Path:
        path = write_dataset_to_json(data, filename, self.output_dir)
        self.manifest.add_file(path, self.output_dir)
        return path


def load_graph(config: ExperimentConfig) -> WeightedGraph:
    section = config.graph
    if section.input is not None:
        return import_graph(section.input)
    return generate(FamilySpec(section.family, section.level, section.weight))


def run_gen(ctx: _RunContext) -> None:
    g = load_graph(ctx.config)
    path = export_graph(g, ctx.primary, ctx.output_dir)
    ctx.manifest.add_file(path, ctx.output_dir)
    ctx.manifest.steps["vertices"] = g.n
    logging.info("Wrote %s (%s vertices, %s edges)", path, g.n, len(g.edges))


def run_resist(ctx: _RunContext) -> None:
    g = load_graph(ctx.config)
    pairs = parse_pairs(ctx.config.resist.pairs)
    if pairs is not None:
        values = [(x, y, effective_resistance(g, x, y)) for x, y in pairs]
        ctx.manifest.add_file(write_pair_resistances_csv(values, ctx.primary, ctx.output_dir), ctx.output_dir)
        ctx.manifest.steps["pairs"] = len(values)
        ctx.json({"graph": g.label, "n": g.n, "total_mass": g.total_mass, "pairs": len(values)}, "resistance_summary.json")
        return
    matrix = resistance_matrix(g, budget=ctx.settings.all_pairs_budget, validate=True)
    path = write_resistance_csv(matrix, ctx.primary, ctx.output_dir)
    ctx.manifest.add_file(path, ctx.output_dir)
    ctx.json(
        {"graph": g.label, "n": g.n, "total_mass": g.total_mass, "r_diam": matrix.r_diam, "r_min": matrix.r_min},
        "resistance_summary.json",
    )


def run_oracle(ctx: _RunContext) -> None:
    g = load_graph(ctx.config)
    section = ctx.config.oracle
    x, y, horizon = section.x, section.y, section.horizon
    kind = section.kind
    if kind == "return_time":
        payload = return_time_tail(g, x, horizon).to_dict()
        payload["expected"] = expected_return_time(g, x)
        payload["expected_closed_form"] = g.total_mass / float(g.mu[x])
    elif kind == "hitting_time":
        payload = hitting_time_tail(g, x, [y], horizon).to_dict()
        payload["expected"] = expected_hitting_time(g, x, y)
    elif kind == "excursion":
        law = excursion_visit_law(g, x, y, horizon)
        payload = law.to_dict()
        payload.update(
            {
                "meta": law.meta,
                "mean": excursion_mean(g, x, y),
                "second_moment": excursion_second_moment(g, x, y),
                "second_moment_closed_form": excursion_second_moment_formula(
                    float(g.mu[x]), float(g.mu[y]), effective_resistance(g, x, y)
                ),
            }
        )
    elif kind == "expected_hitting":
        payload = {"type": kind, "params": {"x": x, "y": y}, "value": expected_hitting_time(g, x, y)}
    elif kind == "commute":
        payload = {
            "type": kind,
            "params": {"x": x, "y": y},
            "value": commute_time(g, x, y),
            "m_times_R": g.total_mass * effective_resistance(g, x, y),
        }
    elif kind == "cover":
        payload = {"type": kind, "params": {"start": x}, "value": expected_cover_time(g, x)}
    elif kind == "laplace":
        thetas = list(section.thetas)
        payload = {
            "type": kind,
            "params": {"x": x, "thetas": thetas, "horizon": horizon},
            "values": [return_time_laplace(g, x, theta, horizon) for theta in thetas],
            "bound_constant": laplace_bound_constant(g, x, thetas, horizon=horizon),
        }
    else:
        raise ParseError(f"unknown oracle {kind!r}; expected one of {ORACLES}")
    payload["graph"] = g.label
    ctx.json(payload, ctx.primary)


def run_walk_command(ctx: _RunContext) -> None:
    g = load_graph(ctx.config)
    section = ctx.config.walk
    stream = RngStream(ctx.config.seed, (WALK_KEY,))
    field = run_walk(g, section.start, section.steps, stream)
    field.check()
    occupation_integral(field, np.ones(g.n))
    ctx.csv(
        [
            {"vertex": v, "count": int(field.counts[v]), "local_time": repr(float(field.local_times[v]))}
            for v in range(g.n)
        ],
        ctx.primary,
    )
    summary = {
        "graph": g.label,
        "start": field.start,
        "t": field.t,
        "position": field.position,
        "uncovered": field.uncovered,
        "draws": stream.counter,
    }
    if section.cover:
        cap = default_cover_cap(g, resistance_matrix(g, budget=ctx.settings.all_pairs_budget).r_diam)
        sample = cover_time(g, section.start, RngStream(ctx.config.seed, (WALK_KEY, 1)), cap)
        summary["cover"] = sample.to_dict()
        ctx.manifest.steps["tau_cov"] = sample.tau_cov
    ctx.json(summary, "walk.json")
    ctx.manifest.steps["walk"] = field.t


def _write_curves(ctx: _RunContext, curves) -> None:
    summary = []
    for curve in curves:
        ctx.csv(curve.to_frame(), f"tailcurve_{curve.kind}_{curve.level}.csv")
        entry = curve.to_dict()
        try:
            entry["log_slope"] = curve.log_slope()
        except InsufficientData:
            entry["log_slope"] = None
        summary.append(entry)
        ctx.manifest.steps[f"{curve.kind}_{curve.level}_trials"] = curve.n_trials * len(curve.starts)
    ctx.json(summary, f"tailcurves_{curves[0].kind}.json")


def run_experiment(ctx: _RunContext) -> None:
    exp = ctx.config.experiment
    seed, workers = ctx.config.seed, ctx.workers
    levels = list(exp.levels)
    grid = list(exp.lambda_grid)
    study = exp.study
    tail_studies: dict[str, Callable] = {
        "thm-a": lambda: tail_curve_thm_a(exp.family, levels, exp.T, grid, exp.n_trials, seed, workers=workers),
        "thm-b": lambda: tail_curve_thm_b(exp.family, levels, exp.L, grid, exp.n_trials, seed, workers=workers),
        "modulus": lambda: tail_curve_modulus(exp.family, levels, exp.T, grid, exp.n_trials, seed, workers=workers),
        "sup-localtime": lambda: sup_local_time_tail(exp.family, levels, exp.T, grid, exp.n_trials, seed, workers=workers),
        "gasket-modulus": lambda: modulus_equicontinuity_gasket(levels, exp.T, grid, exp.n_trials, seed, workers=workers),
    }
    if study in tail_studies:
        _write_curves(ctx, tail_studies[study]())
    elif study == "inverse-local-time":
        g = family_graph(exp.family, levels[0])
        curve = inverse_local_time_concentration(g, exp.x, exp.y, exp.i, grid, exp.n_trials, seed, workers=workers)
        _write_curves(ctx, [curve])
    elif study == "uvd":
        report = check_uvd(exp.family, levels, exp.exponent)
        ctx.csv(report.to_frame(), "uvd_volumes.csv")
        ctx.json(report.to_dict(), "uvd_report.json")
    elif study == "exponents":
        estimate = estimate_exponents(exp.family, levels)
        ctx.csv(estimate.points, "exponent_points.csv")
        ctx.json(estimate.to_dict(), "exponents.json")
    elif study == "local-time-scaling":
        report = local_time_scaling(levels, list(exp.t_values), exp.n_trials, seed, workers=workers)
        ctx.csv(report.to_frame(), "scaling_cdfs.csv")
        ctx.json(report.to_dict(), "scaling_report.json")
    elif study == "cover-time-scaling":
        report = cover_time_scaling(levels, exp.n_trials, seed, cap=exp.cap, workers=workers)
        ctx.csv(report.to_frame(), "scaling_cdfs.csv")
        ctx.json(report.to_dict(), "scaling_report.json")
    elif study == "carpet-rho":
        ctx.json(carpet_rho_estimate(levels).to_dict(), "carpet_report.json")
    elif study == "wired-monotonicity":
        ctx.json({str(level): wired_monotonicity_check(level) for level in levels}, "wired_monotonicity.json")
    elif study == "return-tail":
        report = return_time_tail_study(exp.family, levels)
        ctx.csv(report.to_frame(), "return_tail.csv")
        ctx.json(report.to_dict(), "return_tail.json")
    elif study == "gamma-moment":
        kwargs = {} if exp.c_psi is None else {"c_psi": exp.c_psi}
        report = gamma_moment_study(levels, exp.T, exp.n_trials, seed, family=exp.family, workers=workers, **kwargs)
        ctx.csv(report.to_frame(), "gamma_moment.csv")
        ctx.json(report.to_dict(), "gamma_moment.json")
    elif study == "garsia":
        kwargs = {} if exp.c_psi is None else {"c_psi": exp.c_psi}
        report = garsia_verification(levels[0], exp.n_functions, exp.n_snapshots, seed, T=exp.T, workers=workers, **kwargs)
        ctx.json(report.to_dict(), "garsia_report.json")
        if not report.passed:
            raise InvariantViolation(
                f"Garsia bounds violated: {report.pointwise_violations} pointwise, "
                f"{report.domination_violations} domination"
            )
    else:
        raise ParseError(f"unknown study {study!r}; expected one of {STUDIES}")


# Validation ---------------------------------------------------------------------------


def reference_graphs() -> list[WeightedGraph]:
    triangle = build_graph([(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], meta={"family": "triangle", "level": 0})
    return [
        family_graph("path", 10),
        triangle,
        family_graph("vicsek", 2),
        family_graph("gasket", 3),
        family_graph("carpet", 1),
        family_graph("wired_carpet", 1),
    ]


def _check(name: str, g_label: str, error: float, tolerance: float) -> dict:
    return {"check": name, "graph": g_label, "max_error": float(error), "tolerance": tolerance, "passed": error <= tolerance}


def validation_checks(graphs: list[WeightedGraph], seed: int | None = None) -> list[dict]:
    """Exact identities on ``graphs``; Monte Carlo identities too when ``seed`` is given."""
    results = []
    pair_rng = np.random.default_rng(0)
    for g in graphs:
        matrix = resistance_matrix(g)
        check_metric(matrix, mu=g.mu)
        results.append(_check("metric", g.label, 0.0, 0.0))
        R = matrix.R

        key_error = 0.0
        for x in range(g.n):
            for y in range(g.n):
                if x != y:
                    key_error = max(key_error, abs(hit_before_return_prob(g, x, y) - 1.0 / (g.mu[x] * R[x, y])))
        results.append(_check("key_identity", g.label, key_error, KEY_IDENTITY_TOL))

        return_error = max(abs(expected_return_time(g, x) - g.total_mass / g.mu[x]) for x in range(g.n))
        results.append(_check("return_time", g.label, return_error, RETURN_TIME_TOL * g.total_mass))

        H = np.column_stack([hitting_times_to(g, y) for y in range(g.n)])
        commute_error = float(np.max(np.abs(H + H.T - g.total_mass * R)))
        results.append(_check("commute_time", g.label, commute_error, COMMUTE_TOL * g.total_mass * matrix.r_diam))

        second_excess, second_error = -np.inf, 0.0
        pairs = [tuple(pair_rng.choice(g.n, size=2, replace=False)) for _ in range(EXCURSION_PAIRS // len(graphs) + 1)]
        if g.family == "path":
            pairs.append((1, 0))  # mu_0 R(1, 0) = 1
        for x, y in pairs:
            excursion_visit_law(g, int(x), int(y), 50)
            second = excursion_second_moment(g, int(x), int(y))
            closed = excursion_second_moment_formula(float(g.mu[x]), float(g.mu[y]), float(R[x, y]))
            second_error = max(second_error, abs(second - closed))
            second_excess = max(second_excess, second - 2 * R[x, y] / g.mu[x])
        results.append(_check("excursion_second_moment", g.label, max(second_excess, 0.0), 1e-12))
        results.append(_check("excursion_closed_form", g.label, second_error, 1e-8 * matrix.r_diam / float(g.mu.min())))

        if seed is not None:
            field = run_walk(g, 0, 10 * g.n, RngStream(seed, (WALK_KEY, g.n)))
            field.check()
            occupation_integral(field, np.arange(g.n, dtype=float))
            results.append(_check("occupation_identity", g.label, 0.0, 0.0))
        logging.info("Validated %s", g.label)

    corner = [effective_resistance(family_graph("gasket", level), 0, 1) for level in range(5)]
    ratio_error = max(abs(b / a - 5 / 3) for a, b in zip(corner, corner[1:]))
    results.append(_check("gasket_ratio", "gasket(0..4)", ratio_error, GASKET_RATIO_TOL))
    return results


def run_validate(ctx: _RunContext) -> None:
    seed = ctx.config.seed if ctx.config.validate_monte_carlo else None
    results = validation_checks(reference_graphs(), seed)
    ctx.json({"checks": results, "passed": all(r["passed"] for r in results)}, "validation_report.json")
    failed = [r for r in results if not r["passed"]]
    if failed:
        for r in failed:
            logging.error("Validation %s failed on %s: error %.3g > %.3g", r["check"], r["graph"], r["max_error"], r["tolerance"])
        raise InvariantViolation(f"{len(failed)} validation check(s) failed")


TASK_MAP: dict[str, Callable[[_RunContext], None]] = {
    "gen": run_gen,
    "resist": run_resist,
    "oracle": run_oracle,
    "walk": run_walk_command,
    "exp": run_experiment,
    "validate": run_validate,
}


def run_command(config: ExperimentConfig, settings: RuntimeSettings | None = None) -> RunManifest:
    """Dispatch ``config`` and write its outputs, then the manifest."""
    settings = settings or load_runtime_config()
    ctx = _RunContext(config, settings)
    started = time.perf_counter()
    try:
        TASK_MAP[config.command](ctx)
    except ResistWalkError as exc:
        note = f"while running '{config.command}' (config {ctx.manifest.config_hash[:12]})"
        if hasattr(exc, "add_note"):
            exc.add_note(note)
        else:  # Python < 3.11: same effect as BaseException.add_note (PEP 678)
            exc.__notes__ = [*getattr(exc, "__notes__", []), note]
        raise
    ctx.manifest.timing["seconds"] = round(time.perf_counter() - started, 6)
    ctx.manifest.write(ctx.output_dir)
    logging.info("%s finished in %.3fs; outputs in %s", config.command, ctx.manifest.timing["seconds"], ctx.output_dir)
    return ctx.manifest


def _read_document(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"could not read config {path}: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"config {path} is not valid TOML: {exc}") from exc


_OVERRIDES = {
    "family": ("graph", "family"),
    "level": ("graph", "level"),
    "weight": ("graph", "weight"),
    "input": ("graph", "input"),
    "study": ("experiment", "study"),
    "exp_family": ("experiment", "family"),
    "levels": ("experiment", "levels"),
    "trials": ("experiment", "n_trials"),
    "T": ("experiment", "T"),
    "L": ("experiment", "L"),
    "kind": ("oracle", "kind"),
    "x": ("oracle", "x"),
    "y": ("oracle", "y"),
    "horizon": ("oracle", "horizon"),
    "pairs": ("resist", "pairs"),
    "start": ("walk", "start"),
    "steps": ("walk", "steps"),
}


def _apply_out(document: dict, out: str, out_dir: str | None) -> None:
    """``--out FILE`` names the primary output; alone, its directory becomes the output directory."""
    path = Path(out)
    if out_dir is None:
        document["output_dir"] = str(path.parent)
        document["output_file"] = path.name
    elif path.is_absolute():
        raise ParseError(f"--out {out} must be relative when --out-dir is given")
    else:
        document["output_file"] = out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the optional config file with command-line overrides."""
    document = _read_document(args.config)
    document["command"] = args.command
    for name in ("seed", "workers"):
        if getattr(args, name, None) is not None:
            document[name] = getattr(args, name)
    if args.out_dir is not None:
        document["output_dir"] = args.out_dir
    if getattr(args, "out", None) is not None:
        _apply_out(document, args.out, args.out_dir)
    if getattr(args, "monte_carlo", False):
        document["validate_monte_carlo"] = True
    if getattr(args, "cover", False):
        document.setdefault("walk", {})["cover"] = True
    for name, (section, key) in _OVERRIDES.items():
        value = getattr(args, name, None)
        if value is not None:
            document.setdefault(section, {})[key] = value
    return config_from_document(document)


def _oracle_kind(value: str) -> str:
    return ORACLE_ALIASES.get(value, value.replace("-", "_"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Resistance-metric random walk toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    sub = {name: commands.add_parser(name) for name in COMMANDS}
    for name, p in sub.items():
        p.add_argument("--config", type=str, default=None, help="TOML config file")
        p.add_argument("--out-dir", type=str, default=None, help="Output directory")
        p.add_argument("--seed", type=int, default=None, help="Random seed")
        p.add_argument("--workers", type=int, default=None, help="Trial worker processes")
        if name in ("gen", "resist", "oracle", "walk"):
            p.add_argument("--family", choices=FAMILIES, default=None)
            p.add_argument("--level", type=int, default=None)
            p.add_argument("--weight", type=float, default=None)
            p.add_argument("--graph", "--input", dest="input", type=str, default=None, help="Graph JSON to use instead of a family")
            p.add_argument("--out", type=str, default=None, help=f"Primary output file (default {PRIMARY_OUTPUTS[name]})")

    sub["oracle"].add_argument("--kind", "--op", dest="kind", type=_oracle_kind, choices=ORACLES, default=None)
    sub["oracle"].add_argument("--x", type=int, default=None)
    sub["oracle"].add_argument("--y", type=int, default=None)
    sub["oracle"].add_argument("--horizon", type=int, default=None)

    sub["resist"].add_argument("--pairs", type=str, default=None, help="'all' or x:y pairs separated by commas")

    sub["walk"].add_argument("--start", type=int, default=None)
    sub["walk"].add_argument("--steps", type=int, default=None)
    sub["walk"].add_argument("--cover", action="store_true", help="Also sample a cover time")

    sub["exp"].add_argument("--study", choices=STUDIES, default=None)
    sub["exp"].add_argument("--family", dest="exp_family", choices=FAMILIES, default=None)
    sub["exp"].add_argument("--levels", type=int, nargs="+", default=None)
    sub["exp"].add_argument("--trials", type=int, default=None)
    sub["exp"].add_argument("--T", type=float, default=None)
    sub["exp"].add_argument("--L", type=float, default=None)

    sub["validate"].add_argument("--monte-carlo", action="store_true", help="Include simulated identities")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_runtime_config()
        logging.basicConfig(level=settings.log_level)
        logging.info("Starting %s...", args.command)
        run_command(build_config(args), settings)
    except ResistWalkError as exc:
        logging.error("%s failed: %s", args.command, exc)
        for note in getattr(exc, "__notes__", ()):
            logging.error("  %s", note)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
