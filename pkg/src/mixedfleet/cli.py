"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver failure, 3 validation failure.
Records are JSON documents; sweeps write CSV with the fixed header
``value,profit,av_mass,cv_mass,algorithm,seed``.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import time

import click
import numpy as np

from .bilevel import (
    BundleConfig,
    GdConfig,
    GeneticConfig,
    av_first,
    bundle_method,
    evaluate_profit,
    exhaustive_search,
    genetic,
    gradient_descent,
    multistart,
)
from .cv_eq import CvEquilibrium, IdentityError, SolverError, verify_equilibrium
from .endogenous import EndogenousConfig, evaluate_profit_endogenous_av, solve_endogenous
from .model import NetworkError, build_derived, generate_grid, load_network, network_digest, save_network
from .settings import SETTINGS
from .solvers.concave import balance_matrix

EXIT_INPUT, EXIT_SOLVER, EXIT_VALIDATION = 1, 2, 3
CSV_HEADER = ("value", "profit", "av_mass", "cv_mass", "algorithm", "seed")
SOLVE_ALGORITHMS = ("av-first", "gd", "bundle", "genetic", "exhaustive", "multistart", "oracle")
ENDOGENOUS_ALGORITHMS = ("av-first", "gd", "bundle", "genetic", "exhaustive", "oracle")


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


class _Group(click.Group):
    # click reports usage errors with status 2, which is reserved here for solver failures
    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_INPUT)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_INPUT)
        if not standalone_mode:
            return rv
        sys.exit(rv or 0)


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path):
    try:
        return load_network(path)
    except (NetworkError, OSError, UnicodeDecodeError) as exc:
        _fail(EXIT_INPUT, str(exc))


def _run(fn):
    """Call ``fn`` mapping solver trouble to exit 2."""
    try:
        return fn()
    except (SolverError, IdentityError, RuntimeError, FloatingPointError) as exc:
        _fail(EXIT_SOLVER, f"solver failure: {exc}")
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))


def parse_range(text):
    """``lo:hi:step`` with ``hi`` included (up to round-off)."""
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise InputError(f"--range must look like lo:hi:step, got {text!r}") from None
    if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(step)) or step <= 0:
        raise InputError("--range needs finite bounds and a positive step")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    if n < 1:
        raise InputError(f"--range {text} is empty")
    return [round(lo + k * step, 12) for k in range(n)]


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def make_record(command, spec, params, sol, seed):
    """Plain-dict run record of a ``BilevelSolution``."""
    cv = sol.cv
    rec = {
        "command": command,
        "network_digest": network_digest(spec),
        "parameters": params,
        "algorithm": sol.algorithm,
        "seed": int(seed),
        "total_profit": float(sol.total_profit),
        "av_profit": float(sol.av_profit),
        "cv_platform_profit": float(cv.platform_profit),
        "driver_profit": float(cv.driver_profit),
        "b_C": _arr(sol.b_C),
        "x_A": _arr(sol.x_A),
        "x_C": _arr(cv.x_C),
        "w_C": _arr(cv.w_C),
        "av_active_mass": float(sol.av_active_mass),
        "cv_active_mass": float(cv.active_mass),
        "fleet_av": float(sol.fleet_av),
        "fleet_cv": float(sol.fleet_cv),
        "iterations": int(sol.iterations),
        "evaluations": int(sol.evaluations),
        "wall_time": float(sol.wall_time),
        "converged": bool(sol.converged),
    }
    extra = {k: v for k, v in sol.extra.items() if isinstance(v, (int, float, str, bool, list))}
    if extra:
        rec["extra"] = extra
    return rec


def _emit_json(rec, out):
    text = json.dumps(rec, indent=2, allow_nan=True) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _oracle_solution(net, M, N, seed):
    from .oracle_two_region import closed_form_optimum

    started = time.perf_counter()
    cf = closed_form_optimum(net.spec, M, N)
    b_C = np.clip(cf.x_C.sum(axis=0), 0.0, net.b)
    _, sol = evaluate_profit(net, b_C, M, N, seed=seed)
    return sol.tagged("oracle", 0, 1, started, case=cf.case, closed_form_profit=float(cf.profit))


def solve_exogenous(net, algorithm, M, N, seed, gd=None, bundle=None, gen=None, steps=40):
    if algorithm == "av-first":
        return av_first(net, M, N)
    if algorithm == "gd":
        return gradient_descent(net, M, N, gd)
    if algorithm == "bundle":
        return bundle_method(net, M, N, bundle)
    if algorithm == "genetic":
        return genetic(net, M, N, gen or GeneticConfig(seed=seed))
    if algorithm == "exhaustive":
        return exhaustive_search(net, M, N, steps)
    if algorithm == "multistart":
        return multistart(net, M, N, "gd", gd)
    if algorithm == "oracle":
        return _oracle_solution(net, M, N, seed)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def solve_endogenous_cmd(net, algorithm, I, n_max, seed, gd=None, bundle=None, gen=None, steps=20):
    cfg = EndogenousConfig(I=I, N_max=n_max)
    if algorithm == "oracle":
        from .endogenous import equilibrium_cv_count
        from .oracle_two_region import closed_form_endogenous

        started = time.perf_counter()
        cf = closed_form_endogenous(net.spec, I, n_max)
        b_C = np.clip(cf.x_C.sum(axis=0), 0.0, net.b)
        N, _ = equilibrium_cv_count(net, b_C, n_max, cfg.tol, cfg.max_iter)
        _, sol = evaluate_profit_endogenous_av(net, b_C, I, N, seed=seed)
        sol.extra["N_max"] = float(n_max)
        return sol.tagged("oracle", 0, 1, started, case=cf.case, closed_form_profit=float(cf.profit))
    algo_cfg = {"gd": gd, "bundle": bundle, "genetic": gen or GeneticConfig(seed=seed)}.get(algorithm)
    return solve_endogenous(net, cfg, algorithm, algo_cfg, steps_per_region=steps)


def _algo_configs(step, mu, population, generations, max_iter, seed):
    gd = GdConfig(step=step, max_iter=max_iter or 100)
    bundle = BundleConfig(mu=mu, max_iter=max_iter or 200)
    gen = GeneticConfig(population=population, max_generations=generations, seed=seed)
    return gd, bundle, gen


_nonneg = click.FloatRange(min=0.0)


def _algo_options(f):
    for opt in reversed([
        click.option("--seed", type=int, default=0, show_default=True, help="Random seed (genetic search)."),
        click.option("--step", type=click.FloatRange(min=0.0, min_open=True), default=None,
                     help="Gradient step (default 0.05 * max b)."),
        click.option("--mu", type=click.FloatRange(min=0.0, min_open=True), default=None,
                     help="Bundle proximal weight (default 4 N p / sum b)."),
        click.option("--population", type=click.IntRange(min=2), default=10, show_default=True),
        click.option("--generations", type=click.IntRange(min=1), default=100, show_default=True),
        click.option("--max-iter", type=click.IntRange(min=1), default=None),
        click.option("--steps", type=click.IntRange(min=1), default=None,
                     help="Grid intervals per region for exhaustive search."),
    ]):
        f = opt(f)
    return f


@click.group(cls=_Group)
@click.option("--tolerance", type=click.FloatRange(min=0.0, min_open=True), default=None,
              help="Validation tolerance (default 1e-6).")
def cli(tolerance):
    """Mixed AV/CV fleet solver."""
    if tolerance is not None:
        SETTINGS.validation_tol = tolerance


@cli.command("solve")
@click.argument("network", type=click.Path(exists=True, dir_okay=False))
@click.option("--algorithm", type=click.Choice(SOLVE_ALGORITHMS), default="gd", show_default=True)
@click.option("-M", "M", type=_nonneg, required=True, help="AV fleet size.")
@click.option("-N", "N", type=_nonneg, required=True, help="CV fleet size.")
@_algo_options
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Record file (default stdout).")
def cmd_solve(network, algorithm, M, N, seed, step, mu, population, generations, max_iter, steps, out):
    """Maximise platform profit for fixed fleets."""
    spec = _load(network)
    net = build_derived(spec)
    gd, bundle, gen = _algo_configs(step, mu, population, generations, max_iter, seed)
    sol = _run(lambda: solve_exogenous(net, algorithm, M, N, seed, gd, bundle, gen, steps or 40))
    params = {"M": M, "N": N, "I": 0.0}
    _emit_json(make_record("solve", spec, params, sol, seed), out)


@cli.command("endogenous")
@click.argument("network", type=click.Path(exists=True, dir_okay=False))
@click.option("-I", "I", type=_nonneg, required=True, help="AV cost per unit active mass and time.")
@click.option("--n-max", type=_nonneg, required=True, help="Mass of potential drivers.")
@click.option("--algorithm", type=click.Choice(ENDOGENOUS_ALGORITHMS), default="gd", show_default=True)
@_algo_options
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_endogenous(network, I, n_max, algorithm, seed, step, mu, population, generations, max_iter, steps,
                   out):
    """Maximise profit with purchased AVs and voluntary CV participation."""
    spec = _load(network)
    net = build_derived(spec)
    gd, bundle, gen = _algo_configs(step, mu, population, generations, max_iter, seed)
    sol = _run(lambda: solve_endogenous_cmd(net, algorithm, I, n_max, seed, gd, bundle, gen, steps or 20))
    params = {"M": float(sol.fleet_av), "N": float(sol.fleet_cv), "I": I, "N_max": n_max}
    _emit_json(make_record("endogenous", spec, params, sol, seed), out)


@cli.command("sweep")
@click.argument("network", type=click.Path(exists=True, dir_okay=False))
@click.option("--vary", type=click.Choice(["M", "N", "I"]), required=True)
@click.option("--range", "range_", required=True, help="lo:hi:step, hi included.")
@click.option("--algorithm", type=click.Choice(SOLVE_ALGORITHMS), default="av-first", show_default=True)
@click.option("-M", "M", type=_nonneg, default=0.0, show_default=True)
@click.option("-N", "N", type=_nonneg, default=0.0, show_default=True)
@click.option("--n-max", type=_nonneg, default=0.0, show_default=True, help="Driver pool when varying I.")
@_algo_options
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV file (default stdout).")
def cmd_sweep(network, vary, range_, algorithm, M, N, n_max, seed, step, mu, population, generations,
              max_iter, steps, out):
    """Profit against M, N or the AV cost I, one CSV row per value."""
    values = parse_range(range_)
    if vary in ("M", "N") and values[0] < 0:
        raise InputError(f"--range for {vary} must be nonnegative")
    if vary == "I":
        if values[0] < 0:
            raise InputError("--range for I must be nonnegative")
        if algorithm == "multistart":
            raise InputError("multistart is not available for endogenous sweeps")
    spec = _load(network)
    net = build_derived(spec)
    gd, bundle, gen = _algo_configs(step, mu, population, generations, max_iter, seed)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for v in values:
        if vary == "I":
            sol = _run(lambda: solve_endogenous_cmd(net, algorithm, v, n_max, seed, gd, bundle, gen, steps or 20))
        else:
            m, n = (v, N) if vary == "M" else (M, v)
            sol = _run(lambda: solve_exogenous(net, algorithm, m, n, seed, gd, bundle, gen, steps or 40))
        writer.writerow([repr(float(v)), repr(float(sol.total_profit)), repr(float(sol.av_active_mass)),
                         repr(float(sol.cv.active_mass)), algorithm, seed])
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        click.echo(buf.getvalue(), nl=False)


def validate_record(rec, spec, tol):
    """Re-check a record against its network. Returns ``[(name, residual, passed)]``."""
    net = build_derived(spec)
    L = net.L
    checks = []

    def add(name, value):
        value = float(value)
        checks.append((name, value, bool(np.isfinite(value) and value <= tol)))

    checks.append(("network_digest", 0.0 if rec["network_digest"] == network_digest(spec) else np.inf,
                   rec["network_digest"] == network_digest(spec)))
    b_C = np.asarray(rec["b_C"], dtype=float)
    x_A = np.asarray(rec["x_A"], dtype=float).reshape(L, L)
    x_C = np.asarray(rec["x_C"], dtype=float).reshape(L, L)
    w_C = np.asarray(rec["w_C"], dtype=float).ravel()
    params = rec.get("parameters", {})
    I = float(params.get("I", 0.0))
    add("revealed_demand_bounds", max(np.max(-b_C, initial=0.0), np.max(b_C - net.b, initial=0.0)))
    add("av_nonnegativity", np.max(-x_A, initial=0.0))
    add("av_usable_actions", np.max(np.abs(x_A[~net.usable]), initial=0.0))
    add("av_flow_balance", np.max(np.abs(balance_matrix(net.q) @ x_A.ravel())))
    add("av_capacity", np.max(x_A.sum(axis=0) - (net.b - b_C), initial=0.0))
    av_mass = float(np.sum(net.tau_dr * x_A))
    if rec["command"] == "solve":
        add("av_fleet", max(av_mass - float(params.get("M", np.inf)), 0.0))
    add("av_mass_reported", abs(av_mass - rec["av_active_mass"]))
    av_profit = float(np.sum((net.r_A - I * net.tau_dr) * x_A))
    add("av_profit", abs(av_profit - rec["av_profit"]))
    eq = CvEquilibrium(x_C=x_C, w_C=w_C, driver_profit=rec["driver_profit"], active_mass=rec["cv_active_mass"],
                       platform_profit=rec["cv_platform_profit"], revealed_demand=b_C,
                       fleet_size=float(rec["fleet_cv"]))
    for name, res, ok in verify_equilibrium(eq, net, tol=tol).checks:
        checks.append(("cv_" + name, res, ok))
    add("total_profit", abs(av_profit + float(np.sum(net.r_C2P * x_C)) - rec["total_profit"]))
    return checks


@cli.command("validate")
@click.argument("record", type=click.Path(exists=True, dir_okay=False))
@click.argument("network", type=click.Path(exists=True, dir_okay=False))
def cmd_validate(record, network):
    """Re-check every invariant of a run record; exit 3 on any failure."""
    spec = _load(network)
    try:
        with open(record, encoding="utf-8") as fh:
            rec = json.load(fh)
        checks = validate_record(rec, spec, SETTINGS.validation_tol)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        _fail(EXIT_INPUT, f"{record}: unreadable record ({exc})")
    width = max(len(n) for n, _, _ in checks)
    for name, res, ok in checks:
        click.echo(f"{name:<{width}}  {res:11.3e}  {'pass' if ok else 'FAIL'}")
    failed = [n for n, _, ok in checks if not ok]
    if failed:
        click.echo(f"validation failed: {', '.join(failed)}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo("all checks passed")


@cli.command("gen-grid")
@click.argument("rows", type=click.IntRange(min=1))
@click.argument("cols", type=click.IntRange(min=1))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--price", type=float, default=1.0, show_default=True)
@click.option("--cost", type=float, default=0.1, show_default=True)
@click.option("--commission", type=float, default=0.7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_gen_grid(rows, cols, seed, price, cost, commission, out):
    """Random lattice network with Manhattan travel times."""
    try:
        spec = generate_grid(rows, cols, seed, price=price, cost=cost, commission=commission)
    except (ValueError, NetworkError) as exc:
        _fail(EXIT_INPUT, str(exc))
    if out:
        save_network(spec, out)
    else:
        click.echo(json.dumps(spec.to_dict(), indent=2))


def main():  # console-script entry point
    cli(prog_name="mixedfleet")


if __name__ == "__main__":
    main()
