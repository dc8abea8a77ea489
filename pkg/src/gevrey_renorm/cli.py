"""Command line entry point: ``gevrey-renorm``.

Exit codes: 0 success, 2 precondition violation, 3 numerical
non-convergence, 4 IO or configuration problem.
"""

import math
from pathlib import Path
import sys
import time

import click
import numpy as np

from . import __version__, checks, io, mcf
from .conjugacy import (Diffeo, build_g, compose_chain, direct_linearize,
                        normalize_translation, regularity_estimate, renorm_chain,
                        sample_points, verify_conjugacy)
from .errors import ConfigError, RenormError
from .fourier import FourierField, GevreyParams
from .renorm import RenormParams, eliminate, prepare_schedule, run, schedule_report, synthetic_field

FREQ_COLUMNS = ["n", "q", "p", "divisor", "tau", "W_tau", "eta", "lambda"]
CONV_COLUMNS = ["n", "t", "rho", "sigma", "eps", "residual", "residual_eval", "renormalizable",
                "far_residual", "iters", "B_script", "dropped_mass"]
SCHED_COLUMNS = ["n", "t", "sigma", "eps", "A", "A_formula", "phi", "B_script", "rho", "brjuno_partial"]


def _echo(obj):
    click.echo(io.dumps_line(obj))


def _note(msg):
    click.echo(msg, err=True)


def _config(ctx_config, **overrides):
    return io.load_config(ctx_config, overrides)


def _frequency(cfg):
    try:
        return mcf.Frequency.parse(cfg.alpha, mu=cfg.mu)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"cannot parse frequency {cfg.alpha!r}: {exc}") from exc


def _params(cfg, d):
    gp = GevreyParams.with_defaults(cfg.s, cfg.rho0, cfg.K, d=d, nu=cfg.nu, delta_margin=cfg.delta)
    return RenormParams(gp, theta=cfg.theta, phi_rule=cfg.phi_rule, newton_tol=cfg.newton_tol,
                        ell=cfg.ell, mode=cfg.mode, strict=cfg.strict, times=cfg.times)


@click.group()
@click.version_option(__version__, prog_name="gevrey-renorm")
def cli():
    """Renormalization of Gevrey vector fields on the torus."""


# ------------------------------------------------------------------- freq

@cli.group()
def freq():
    """Arithmetic of the frequency vector."""


@freq.command("analyze")
@click.option("--config", type=click.Path(dir_okay=False), help="TOML run configuration.")
@click.option("--alpha", help="Preset name or comma separated digits of alpha.")
@click.option("--mu", type=float)
@click.option("--s", "s", type=float)
@click.option("--n-max", "n_max", type=int, help="Number of best approximations.")
@click.option("--brjuno-terms", "brjuno_terms", type=int)
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def freq_analyze(config, alpha, mu, s, n_max, brjuno_terms, out):
    """Best approximations, stopping times and Brjuno sums."""
    cfg = _config(config, alpha=alpha, mu=mu, s=s, expansion_terms=n_max,
                  brjuno_terms=brjuno_terms, output=out)
    fr = _frequency(cfg)
    exp = mcf.expansion(fr, n_max=cfg.expansion_terms)
    rows, steps = [], None
    if len(exp) >= 2:
        times = [st.tau for st in exp.stops[1:]]
        steps = mcf.matrix_sequence(fr, times, exp)
    for n, (a, st) in enumerate(zip(exp.approx, exp.stops)):
        rows.append({"n": n, "q": a.q, "p": list(a.p), "divisor": a.divisor, "tau": st.tau,
                     "W_tau": exp.W(st.tau) if n else 0.0,
                     "eta": steps[n].eta if steps else 1.0, "lambda": steps[n].lam if steps else 1.0})
    brj = {v: mcf.brjuno_sum(fr, cfg.s, v, cfg.brjuno_terms) for v in ("B1", "B1hat", "B2", "B3")}
    header = {"alpha": fr.alpha_strings(), "d": fr.d, "s": cfg.s, "mu": fr.mu, "brjuno": brj,
              "divergent": any(math.isinf(v) for v in brj.values()) or exp.terminated is not None,
              "terminated": None if exp.terminated is None else list(exp.terminated.k),
              "standins": mcf.standins(steps) if steps else None}
    outdir = Path(cfg.output)
    io.write_csv(outdir / "freq.csv", rows, FREQ_COLUMNS)
    io.write_json(outdir / "freq.json", header)
    _echo(header)


# ----------------------------------------------------------------- renorm

@cli.group()
def renorm():
    """Renormalization runs."""


@renorm.command("run")
@click.option("--config", type=click.Path(dir_okay=False))
@click.option("--alpha")
@click.option("--dim", type=int, help="Torus dimension (checked against alpha).")
@click.option("--s", "s", type=float)
@click.option("--rho0", type=float)
@click.option("--K", "K", type=int, help="Truncation |k|_1 <= K.")
@click.option("--perturbation", type=float, help="Size ||X0 - omega||'_0 of the synthetic field.")
@click.option("--field", "field_path", type=click.Path(dir_okay=False),
              help="Initial field JSON instead of the synthetic one.")
@click.option("--steps", type=int)
@click.option("--mode", type=click.Choice(["newton", "chord", "homotopy"]))
@click.option("--times", type=click.Choice(["stopping", "modified"]))
@click.option("--phi-rule", "phi_rule", type=click.Choice(["formula", "one"]))
@click.option("--seed", type=int)
@click.option("--strict/--no-strict", default=None,
              help="Stop when a step leaves the renormalizable domain (default strict).")
@click.option("--out", type=click.Path(file_okay=False))
def renorm_run(config, alpha, dim, s, rho0, K, perturbation, field_path, steps, mode, times,
               phi_rule, seed, strict, out):
    """Iterate R_n from X0 and write per-step artifacts."""
    cfg = _config(config, alpha=alpha, s=s, rho0=rho0, K=K, amplitude=perturbation,
                  perturbation=field_path, steps=steps, mode=mode, times=times, phi_rule=phi_rule,
                  seed=seed, strict=strict, output=out)
    fr = _frequency(cfg)
    if dim is not None and dim != fr.d:
        raise ConfigError(f"--dim {dim} does not match alpha of dimension {fr.d}")
    params = _params(cfg, fr.d)
    omega = np.asarray(fr.omega, dtype=float)
    outdir = Path(cfg.output)
    arts = []
    if cfg.perturbation:
        X0 = io.read_field(cfg.perturbation)
        if X0.dim != fr.d:
            raise ConfigError("field dimension does not match the frequency")
    else:
        X0, v = synthetic_field(omega, cfg.amplitude, cfg.K, cfg.seed)
        arts.append(io.write_field(outdir / "v.json", v))
    arts.append(io.write_field(outdir / "X0.json", X0))

    t0 = time.perf_counter()
    sd = prepare_schedule(fr, params, cfg.steps)
    sched = schedule_report(fr, params, cfg.steps)
    arts.append(io.write_csv(outdir / "schedule.csv", sched, SCHED_COLUMNS))
    arts.append(io.write_json(outdir / "steps.json", [
        {"n": st.n, "t": st.t, "P": st.P, "T": st.T, "eta": st.eta, "omega_n": st.omega_n}
        for st in sd.steps]))
    rows = []

    def record(state, el):
        if el is not None:
            arts.append(io.write_field(outdir / "elim" / f"u_{state.n}.json", el.u))
        d = state.diagnostics
        row = {"n": state.n, "t": sd.steps[state.n].t, "rho": state.rho_n, "sigma": state.sigma_n,
               "eps": state.eps_n, "residual": state.residual, "residual_eval": d["residual_eval"],
               "renormalizable": state.renormalizable, "far_residual": d.get("far_residual", ""),
               "iters": d.get("iters", ""), "B_script": d["B_script"], "dropped_mass": d["dropped_mass"]}
        rows.append(row)
        arts.append(io.write_json(outdir / "states" / f"state_{state.n}.json", io.state_to_dict(state)))
        _echo(row)

    failure = None
    try:
        run(X0, fr, params, cfg.steps, sd=sd, callback=record)
    except RenormError as exc:
        failure = exc
    arts.append(io.write_csv(outdir / "convergence.csv", rows, CONV_COLUMNS))
    extra = {"steps_completed": max(len(rows) - 1, 0), "failure": None}
    if failure is not None:
        extra["failure"] = {"type": type(failure).__name__, "message": str(failure),
                            "step": getattr(failure, "step", None)}
    io.manifest(cfg, outdir, arts, sd.standins, extra)
    _note(f"renorm run: {extra['steps_completed']} steps in {time.perf_counter() - t0:.2f} s")
    if failure is not None:
        raise failure


# -------------------------------------------------------------- conjugacy

@cli.group()
def conjugacy():
    """Linearizing conjugacy from a finished run."""


def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} not found")
    man = io.check_manifest(run_dir)
    cfg = io.RunConfig(**man["config"])
    X0 = io.read_field(run_dir / "X0.json")
    steps = io.read_json(run_dir / "steps.json")
    us = []
    for n in range(1, man["steps_completed"] + 1):
        us.append(io.read_field(run_dir / "elim" / f"u_{n}.json"))
    return man, cfg, X0, steps, us


@conjugacy.command("build")
@click.option("--run", "run_dir", required=True, type=click.Path())
@click.option("--K-out", "K_out", type=int, default=32, show_default=True)
@click.option("--oracle", is_flag=True, help="Compare with the direct Newton solution.")
@click.option("--t", "t", type=float, default=1.0, show_default=True)
@click.option("--samples", type=int, default=100, show_default=True)
def conjugacy_build(run_dir, K_out, oracle, t, samples):
    """Assemble h = g_1 o ... o g_N and write h.json and conjugacy.json."""
    man, cfg, X0, steps, us = _load_run(run_dir)
    if not us:
        raise ConfigError("run has no completed steps")
    omega = np.asarray(steps[0]["omega_n"], dtype=float)
    gs = [build_g(u, np.array(steps[n]["P"], dtype=np.int64)) for n, u in enumerate(us)]
    h = normalize_translation(compose_chain(gs, K_out=K_out))
    rep = verify_conjugacy(X0, h, omega, t, samples, seed=cfg.seed)
    reg = regularity_estimate(h, cfg.s)
    report = {"defect": rep.defect, "t": rep.t_used, "samples": samples,
              "gevrey_rho_hat": reg["gevrey_rho_hat"], "derivative_norms": reg["derivative_norms"],
              "ell_checked": reg["ell_checked"], "chain": h.info, "K_out": K_out}
    if oracle:
        ho = direct_linearize(X0, omega, K=K_out)
        x = sample_points(samples, X0.dim, cfg.seed)
        report["oracle_sup_diff"] = float(np.abs(h(x) - ho(x)).max())
        report["oracle_history"] = ho.info["history"]
    run_dir = Path(run_dir)
    io.write_json(run_dir / "h.json", io.diffeo_to_dict(h))
    io.write_json(run_dir / "conjugacy.json", report)
    _echo({k: report[k] for k in ("defect", "gevrey_rho_hat", "t") if k in report}
          | ({"oracle_sup_diff": report["oracle_sup_diff"]} if oracle else {}))


@conjugacy.command("verify")
@click.option("--run", "run_dir", type=click.Path(), help="Run directory with X0.json and h.json.")
@click.option("--field", "field_path", type=click.Path(dir_okay=False))
@click.option("--h", "h_path", type=click.Path(dir_okay=False))
@click.option("--alpha", help="Frequency when --run is not given.")
@click.option("--t", "t", type=float, default=1.0, show_default=True)
@click.option("--samples", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-5, show_default=True)
def conjugacy_verify(run_dir, field_path, h_path, alpha, t, samples, seed, tol):
    """Flow defect |phi_X^t(h(x)) - h(x + omega t)| on Sobol points."""
    if run_dir:
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            raise ConfigError(f"run directory {run_dir} not found")
        X = io.read_field(field_path or run_dir / "X0.json")
        h = io.diffeo_from_dict(io.read_json(h_path or run_dir / "h.json"))
        omega = np.asarray(io.read_json(run_dir / "steps.json")[0]["omega_n"], dtype=float)
    else:
        if not (field_path and alpha):
            raise ConfigError("give --run, or --field and --alpha")
        X = io.read_field(field_path)
        omega = np.asarray(mcf.Frequency.parse(alpha).omega, dtype=float)
        h = io.diffeo_from_dict(io.read_json(h_path)) if h_path else Diffeo.identity(X.dim)
    rep = verify_conjugacy(X, h, omega, t, samples, seed)
    ok = rep.defect < tol
    _echo({"defect": rep.defect, "t": t, "samples": samples, "pass": ok})
    if not ok:
        raise click.exceptions.Exit(3)


# ----------------------------------------------------------------- verify

TRUNCATION_SENSITIVE = {"elimination": 16, "rescale": 16}


def _suite_mcf(n):
    res = checks.SuiteResult("mcf")
    exp = mcf.expansion(mcf.Frequency.preset("golden"), n_max=10)
    fib = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]
    for a, b in zip(exp.q, fib):
        res.record(abs(a - b), 0.0)
    return res


def _suite_roundtrip(n):
    res = checks.SuiteResult("roundtrip")
    rng = np.random.default_rng(6)
    for _ in range(n):
        f = checks.random_field(rng, 2, 6)
        g = io.field_from_dict(io.field_to_dict(f))
        same = np.array_equal(f.modes, g.modes) and np.array_equal(f.coeffs, g.coeffs)
        res.record(0.0 if same else 1.0, 0.0)
    return res


def _suite_elimination(n, K):
    res = checks.SuiteResult("elimination")
    fr = mcf.Frequency.preset("golden")
    exp = mcf.expansion(fr, n_max=12)
    steps = mcf.matrix_sequence(fr, mcf.stopping_times(exp, 4), exp)
    sigma = mcf.sigma_schedule(steps, 0, mcf.standins(steps)["C1"])
    w = np.asarray(steps[0].omega_n, dtype=float)
    X = FourierField.from_dict(2, K, {k: 1e-3 * np.array([0.5, 0.3]) for k in [(1, 0), (0, 1), (1, 1)]}) + w
    el = eliminate(X, w, sigma, RenormParams(GevreyParams.with_defaults(2, 1.0, K)))
    res.record(el.far_residual, 1e-12)
    res.record(0.0 if el.u_norm_bound_ok else 1.0, 0.0)
    return res


def _suite_parse(path):
    res = checks.SuiteResult("parse")
    res.checks = 1
    try:
        io.read_field(path)
    except RenormError as exc:
        res.violations = 1
        res.notes.append(str(exc))
    return res


@cli.command("verify")
@click.option("--n", "n", type=int, default=100, show_default=True, help="Random cases per suite.")
@click.option("--K", "K", type=int, default=16, show_default=True)
@click.option("--field", "field_path", type=click.Path(dir_okay=False), help="Also check this field file parses.")
@click.option("--suite", "suites", multiple=True, help="Restrict to these suites.")
def verify(n, K, field_path, suites):
    """Run the invariant battery; exit 0 iff every suite passes."""
    names = list(checks.SUITES) + ["mcf", "roundtrip", "elimination"]
    if suites:
        unknown = set(suites) - set(names) - {"parse"}
        if unknown:
            raise ConfigError(f"unknown suites {sorted(unknown)}")
        names = [s for s in names if s in suites]
    results, skipped = [], []
    for name in names:
        if K < TRUNCATION_SENSITIVE.get(name, 0):
            skipped.append(name)
            continue
        if name in checks.SUITES:
            results.append(checks.SUITES[name](n))
        elif name == "mcf":
            results.append(_suite_mcf(n))
        elif name == "roundtrip":
            results.append(_suite_roundtrip(n))
        else:
            results.append(_suite_elimination(n, K))
    if field_path:
        results.append(_suite_parse(field_path))
    click.echo(f"{'suite':<12} {'checks':>7} {'viol':>5} {'undec':>5}  status")
    for r in results:
        click.echo(f"{r.name:<12} {r.checks:>7} {r.violations:>5} {r.undecided:>5}  "
                   f"{'pass' if r.passed else 'FAIL'}")
    for name in skipped:
        click.echo(f"{name:<12} {'-':>7} {'-':>5} {'-':>5}  skipped (K < {TRUNCATION_SENSITIVE[name]})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        _note("failing suites: " + ", ".join(failed))
        raise click.exceptions.Exit(1)


def main(argv=None):
    try:
        rv = cli.main(args=argv, prog_name="gevrey-renorm", standalone_mode=False)
    except RenormError as exc:
        _note(f"error: {type(exc).__name__}: {exc}")
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _note("aborted")
        return 1
    except click.ClickException as exc:
        exc.show()
        return 4
    except OSError as exc:
        _note(f"error: {exc}")
        return 4
    return rv if isinstance(rv, int) else 0


def entry():
    sys.exit(main())
