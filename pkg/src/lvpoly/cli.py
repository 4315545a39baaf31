"""Command-line interface: every pipeline stage behind one entry point.

Outputs are CSV files plus a plain-text summary on stdout.  Paths default to
the bundled fixtures so ``lvpoly validate --train`` exercises the whole
train/estimate/metrics pipeline out of the box.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

from . import clustering, demand, timeseries, training
from .bundle import load_bundle, save_bundle
from .estimator import LocalMeasurement, estimate_all
from .feeder import load_feeder, validate_radial
from .fixtures import fixture_feeder_path, fixture_irradiance_path
from .powerflow import InjectionSet, solve
from .variables import variable_class

feeder_option = click.option(
    "--feeder", "feeder_path", type=click.Path(exists=True),
    default=str(fixture_feeder_path()), show_default="bundled fixture",
    help="Feeder document to operate on.")
seed_option = click.option("--seed", type=int, default=0, show_default=True)
out_option = click.option("--out", type=click.Path(), default=None,
                          help="Output CSV path (stdout summary is always printed).")


def _write_csv(path, header, rows):
    if path is None:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    click.echo(f"wrote {path}")


def _pool_and_scenarios(feeder, samples, seed, step_minutes, pool_csv=None):
    if pool_csv:
        pool = demand.load_pool_csv(pool_csv)
    else:
        pool = demand.synthetic_pool(step_minutes=step_minutes, seed=seed)
    return pool, demand.sample_scenarios(pool, feeder, samples, seed)


@click.group()
def main():
    """Train and evaluate local polynomial estimators for radial LV feeders."""


@main.command()
@feeder_option
@click.option("--p-level", type=float, default=0.0, show_default=True,
              help="Uniform DG generation level in percent.")
@click.option("--pf", type=float, default=1.0, show_default=True,
              help="Uniform DG power factor (inductive).")
@out_option
def pf(feeder_path, p_level, pf, out):
    """Solve a single power flow with zero demand and a uniform DG setpoint."""
    feeder = load_feeder(feeder_path)
    problems = validate_radial(feeder)
    if problems:
        raise click.ClickException("; ".join(problems))
    tau = np.tan(np.arccos(pf))
    dg = {c.id: (c.dg.rating_kw * p_level / 100.0,
                 -c.dg.rating_kw * p_level / 100.0 * tau)
          for c in feeder.customers if c.dg is not None}
    sol = solve(feeder, InjectionSet.from_kw(feeder, {}, dg))
    rows = [
        (bus, phase, abs(sol.bus_voltages[i, p]), np.angle(sol.bus_voltages[i, p], deg=True))
        for i, bus in enumerate(feeder.buses) for p, phase in enumerate("abc")
    ]
    _write_csv(out, ["bus", "phase", "v_pu", "angle_deg"], rows)
    click.echo(f"converged in {sol.iterations} iterations, "
               f"mismatch {sol.max_mismatch:.2e} pu, losses {sol.total_loss_kw:.4f} kW")


@main.command()
@feeder_option
@click.option("--samples", type=int, default=100, show_default=True)
@seed_option
@click.option("--timestep-min", type=int, default=10, show_default=True)
@click.option("--pool-csv", type=click.Path(exists=True), default=None,
              help="Profile pool to sample from (default: synthetic).")
@click.option("--out", type=click.Path(), default="scenarios.csv", show_default=True)
def sample(feeder_path, samples, seed, timestep_min, pool_csv, out):
    """Draw Monte Carlo demand scenarios and export them."""
    feeder = load_feeder(feeder_path)
    _, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min, pool_csv)
    demand.export_scenarios_csv(scenarios, out)
    click.echo(f"wrote {out} ({samples} scenarios x {len(feeder.customers)} customers)")


@main.command()
@feeder_option
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--k", type=int, default=50, show_default=True)
@click.option("--algorithm", type=click.Choice(clustering.ALGORITHMS), default="ward",
              show_default=True)
@click.option("--timestep", type=int, default=108, show_default=True,
              help="Timestep to cluster at.")
@click.option("--timestep-min", type=int, default=10, show_default=True)
@click.option("--elbow", default=None, help="Comma-separated K values for an elbow sweep.")
@seed_option
@out_option
def cluster(feeder_path, samples, k, algorithm, timestep, timestep_min, elbow, seed, out):
    """Reduce Monte Carlo scenarios to representatives at one timestep."""
    feeder = load_feeder(feeder_path)
    _, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min)
    patterns = clustering.build_patterns(feeder, scenarios, timestep)
    norm = clustering.normalize(patterns)
    if elbow:
        ks = [int(v) for v in elbow.split(",")]
        points = clustering.elbow_analysis(norm, ks, algorithms=(algorithm,), seed=seed)
        _write_csv(out, ["k", "algorithm", "compactness"],
                   [(p.k, p.algorithm, p.compactness) for p in points])
        for p in points:
            click.echo(f"K={p.k:4d}  {p.algorithm:8s}  compactness={p.compactness:.4f}")
        return
    result = clustering.cluster(norm, k, algorithm, seed=seed)
    compactness = clustering.within_cluster_ss(norm, result)
    _write_csv(out, ["timestep", "k", "algorithm", "compactness",
                     "representative_scenario", "omega"],
               [(timestep, result.k, algorithm, compactness, rep, w)
                for rep, w in zip(result.representatives, result.omegas)])
    click.echo(f"{result.k} clusters, compactness {compactness:.4f}, "
               f"weights sum {sum(result.omega_fractions)}")


@main.command()
@feeder_option
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--k", type=int, default=25, show_default=True)
@click.option("--grid-steps", type=int, default=20, show_default=True)
@click.option("--timestep-min", type=int, default=10, show_default=True)
@click.option("--local", "locations", multiple=True,
              help="DG customer(s) to train bundles for (default: all).")
@click.option("--timesteps", default=None,
              help="Comma-separated timestep indices (default: whole day).")
@click.option("--workers", type=int, default=1, show_default=True)
@seed_option
@click.option("--out", type=click.Path(), default="bundle.json", show_default=True,
              help="Bundle path; one file per location gets a suffix.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Training-report CSVs (fit quality per variable/degree plus "
                   "a *_coeffs.csv with per-coefficient quality).")
@click.option("--report-degrees", default="2",
              help="Comma-separated polynomial degrees in the fit-quality report.")
def train(feeder_path, samples, k, grid_steps, timestep_min, locations, timesteps,
          workers, seed, out, report_path, report_degrees):
    """Run the full offline stage and write coefficient bundles."""
    feeder = load_feeder(feeder_path)
    _, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min)
    degrees = tuple(int(v) for v in report_degrees.split(","))
    config = training.TrainingConfig(
        s_count=samples, k=k, grid_steps=grid_steps, step_minutes=timestep_min,
        seed=seed, workers=workers, report_degrees=degrees)
    steps = [int(v) for v in timesteps.split(",")] if timesteps else None
    result = training.train_bundle(feeder, scenarios, config=config, timesteps=steps,
                                   locations=list(locations) or None)
    out = Path(out)
    for loc, bundle in result.bundles.items():
        path = out if len(result.bundles) == 1 else out.with_stem(f"{out.stem}_{loc}")
        save_bundle(bundle, path)
        click.echo(f"wrote {path} ({len(bundle.timesteps)} timesteps)")
    if report_path:
        report_path = Path(report_path)
        _write_csv(report_path, ["timestep", "variable", "degree", "r2_min", "r2_mean"],
                   [(r.timestep, r.variable, r.degree, r.r2_min, r.r2_mean)
                    for r in result.report.stage1])
        _write_csv(report_path.with_stem(f"{report_path.stem}_coeffs"),
                   ["timestep", "location", "variable", "term", "r_squared"],
                   [(r.timestep, r.location, r.variable, r.term, r.r_squared)
                    for r in result.report.stage2])


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True)
@click.option("--timestep", type=int, required=True)
@click.option("--vl", type=float, required=True, help="Local voltage magnitude (pu).")
@click.option("--p-level", type=float, required=True)
@click.option("--pf", type=float, required=True)
@out_option
def estimate(bundle_path, timestep, vl, p_level, pf, out):
    """Estimate all bundle variables from one local measurement."""
    bundle = load_bundle(bundle_path)
    measurement = LocalMeasurement(v_local=vl, p_level_percent=p_level, power_factor=pf)
    estimates = estimate_all(measurement, bundle, timestep)
    rows = [(e.variable, e.magnitude, e.d_p_level, e.d_tau) for e in estimates]
    _write_csv(out, ["variable", "magnitude", "dX_dPlevel", "dX_dtau"], rows)
    for e in estimates:
        click.echo(f"{e.variable:14s} {e.magnitude: .6f}  "
                   f"d/dPlevel {e.d_p_level: .3e}  d/dtau {e.d_tau: .3e}")


@main.command()
@feeder_option
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), default=None,
              help="Trained bundle (omit with --train to train first).")
@click.option("--train", "do_train", is_flag=True, help="Train before validating.")
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--k", type=int, default=25, show_default=True)
@click.option("--grid-steps", type=int, default=20, show_default=True)
@click.option("--timestep-min", type=int, default=10, show_default=True)
@click.option("--local", default=None, help="DG customer to validate (default: deepest).")
@click.option("--irradiance", "irradiance_path", type=click.Path(exists=True),
              default=str(fixture_irradiance_path()), show_default="bundled fixture")
@click.option("--scenarios", "n_validation", type=int, default=5, show_default=True,
              help="Representative scenarios to replay.")
@click.option("--with-dse", is_flag=True, help="Also run the benchmark estimator.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--dump", "dump_path", type=click.Path(), default=None,
              help="Long-format per-timestep CSV (scenario, timestep, variable, "
                   "actual, estimate) for plotting.")
@seed_option
@out_option
def validate(feeder_path, bundle_path, do_train, samples, k, grid_steps, timestep_min,
             local, irradiance_path, n_validation, with_dse, workers, seed, dump_path, out):
    """Replay representative scenarios and report estimation error metrics."""
    feeder = load_feeder(feeder_path)
    pool, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min)
    local = local or feeder.dg_customers[-1].id
    if do_train or bundle_path is None:
        config = training.TrainingConfig(
            s_count=samples, k=k, grid_steps=grid_steps, step_minutes=timestep_min,
            seed=seed, workers=workers)
        result = training.train_bundle(feeder, scenarios, config=config, locations=[local])
        bundle = result.bundles[local]
        click.echo(f"trained bundle for {local} ({len(bundle.timesteps)} timesteps)")
    else:
        bundle = load_bundle(bundle_path)
    irradiance = timeseries.load_irradiance_csv(irradiance_path)
    runs = []
    for sc in scenarios[:n_validation]:
        runs.append(timeseries.run_timeseries(
            feeder, bundle, irradiance, sc, pool=pool, with_dse=with_dse))
    report = timeseries.compute_metrics(runs)
    _write_csv(out, ["variable", "mean_abs", "median", "p997_abs", "r_squared"],
               list(report.rows()))
    if dump_path:
        rows = [
            (run.scenario_id, t, var, run.actuals[i, j], run.estimates[i, j])
            for run in runs
            for i, t in enumerate(run.timesteps)
            for j, var in enumerate(run.variable_ids)
        ]
        _write_csv(dump_path, ["scenario", "timestep", "variable", "actual", "estimate"], rows)
    click.echo(f"pooled {report.n_samples} samples over {len(runs)} scenarios "
               f"(errors in pu: V on nominal, I on head ampacity, P on feeder base)")
    for var, mean_abs, median, p997, r2 in report.rows():
        click.echo(f"{var:14s} mean|e| {mean_abs:.3e}  median {median: .3e}  "
                   f"p99.7 {p997:.3e}  R2 {r2:.4f}")
    if with_dse:
        for row in timeseries.benchmark_comparison(runs):
            click.echo(f"benchmark gap {row.variable_class:8s} "
                       f"mean {row.mean_abs_gap:.3e}  max {row.max_abs_gap:.3e}")


@main.command(name="benchmark-dse")
@feeder_option
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--k", type=int, default=25, show_default=True)
@click.option("--grid-steps", type=int, default=20, show_default=True)
@click.option("--timestep-min", type=int, default=30, show_default=True)
@click.option("--local", default=None)
@click.option("--scenarios", "n_validation", type=int, default=2, show_default=True)
@seed_option
@out_option
def benchmark_dse(feeder_path, samples, k, grid_steps, timestep_min, local,
                  n_validation, seed, out):
    """Compare polynomial estimates against the weighted-LSE benchmark."""
    feeder = load_feeder(feeder_path)
    pool, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min)
    local = local or feeder.dg_customers[-1].id
    config = training.TrainingConfig(s_count=samples, k=k, grid_steps=grid_steps,
                                     step_minutes=timestep_min, seed=seed)
    result = training.train_bundle(feeder, scenarios, config=config, locations=[local])
    bundle = result.bundles[local]
    irradiance = timeseries.clear_sky_profile(n_steps=config.n_steps)
    runs = [
        timeseries.run_timeseries(feeder, bundle, irradiance, sc, pool=pool, with_dse=True)
        for sc in scenarios[:n_validation]
    ]
    rows = []
    for run in runs:
        for i, t in enumerate(run.timesteps):
            for j, var in enumerate(run.variable_ids):
                actual = run.actuals[i, j]
                poly = run.estimates[i, j]
                ref = run.dse_estimates[i, j]
                rows.append((t, var, actual, poly, ref, actual - poly, actual - ref))
    _write_csv(out, ["timestep", "variable", "actual", "poly_estimate", "dse_estimate",
                     "poly_error", "dse_error"], rows)
    for row in timeseries.benchmark_comparison(runs):
        click.echo(f"{row.variable_class:8s} mean|e_poly-e_dse| {row.mean_abs_gap:.3e}  "
                   f"max {row.max_abs_gap:.3e}")


@main.command()
@feeder_option
@click.option("--mutation", type=click.Choice(["pv_penetration", "add_evs"]), required=True)
@click.option("--percent", type=float, default=75.0, show_default=True,
              help="Penetration for pv_penetration.")
@click.option("--fraction", type=float, default=1 / 3, show_default=True,
              help="Adopting share for add_evs.")
@click.option("--ev-kw", type=float, default=3.0, show_default=True)
@click.option("--samples", type=int, default=150, show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--grid-steps", type=int, default=12, show_default=True)
@click.option("--timestep-min", type=int, default=30, show_default=True)
@click.option("--local", default=None)
@seed_option
@out_option
def robustness(feeder_path, mutation, percent, fraction, ev_kw, samples, k, grid_steps,
               timestep_min, local, seed, out):
    """Outdated-bundle study under PV-penetration drift or EV adoption."""
    feeder = load_feeder(feeder_path)
    pool, scenarios = _pool_and_scenarios(feeder, samples, seed, timestep_min)
    local = local or feeder.dg_customers[-1].id
    config = training.TrainingConfig(s_count=samples, k=k, grid_steps=grid_steps,
                                     step_minutes=timestep_min, seed=seed)
    base = training.train_bundle(feeder, scenarios, config=config, locations=[local])
    bundle = base.bundles[local]
    irradiance = timeseries.clear_sky_profile(n_steps=config.n_steps)
    params = ({"percent": percent, "seed": seed} if mutation == "pv_penetration"
              else {"fraction": fraction, "kw": ev_kw, "seed": seed})
    result = timeseries.robustness_scenario(
        feeder, mutation, params, bundle, scenarios, scenarios[0], irradiance, config)
    rows = [(var, result.estimate_deviation(var),
             result.outdated_metrics[var].mean_abs, result.control_metrics[var].mean_abs)
            for var in result.outdated_run.variable_ids]
    _write_csv(out, ["variable", "estimate_deviation", "outdated_mean_abs",
                     "control_mean_abs"], rows)
    classes = sorted({variable_class(v) for v in result.outdated_run.variable_ids})
    for cls in classes:
        dev = max(result.estimate_deviation(v) for v in result.outdated_run.variable_ids
                  if variable_class(v) == cls)
        click.echo(f"{cls:8s} max estimate deviation {dev:.3e} pu")


if __name__ == "__main__":
    sys.exit(main())
