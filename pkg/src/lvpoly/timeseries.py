"""End-to-end validation harness: daily time-series runs, error metrics,
measurement-noise injection and robustness studies.

A run replays one demand scenario over a day: per timestep the feeder is
solved with the DG fleet at an irradiance-driven generation level, the bundle
location's voltage is read off the solution as the local measurement, and all
tracked variables are estimated from it.  Error conventions: voltages on the
nominal base, currents on the head-branch ampacity, powers and losses on the
feeder power base.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import dse as dse_mod
from .bundle import CoeffBundle
from .demand import DemandPool, DemandScenario
from .estimator import LocalMeasurement, estimate_vector
from .feeder import Customer, Feeder
from .powerflow import _sweep_batch, compile_feeder, reactive_ratio
from .training import TrainingConfig, train_bundle
from .variables import extract_arrays, tracked_variables, variable_class

DEFAULT_RUN_POWER_FACTOR = 0.95


class HarnessError(RuntimeError):
    """Raised for mismatched inputs (feeder hash, grids) in a run."""


@dataclass(frozen=True)
class TimeSeriesRun:
    """Actuals, estimates and optional benchmark values over one day."""

    feeder_hash: str
    scenario_id: int
    location: str
    variable_ids: tuple[str, ...]
    timesteps: tuple[int, ...]
    p_level_percent: np.ndarray          # (n_t,)
    power_factor: float
    v_local: np.ndarray                  # (n_t,) measurement fed to the estimator
    actuals: np.ndarray                  # (n_t, n_vars)
    estimates: np.ndarray                # (n_t, n_vars)
    dse_estimates: np.ndarray | None
    bundle: CoeffBundle

    def column(self, variable: str) -> int:
        return self.variable_ids.index(variable)

    def errors(self, variable: str) -> np.ndarray:
        i = self.column(variable)
        return self.actuals[:, i] - self.estimates[:, i]


def load_irradiance_csv(path) -> np.ndarray:
    """Read a (timestep, p_level_percent) profile; returns the percent series."""
    levels = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row:
                levels.append(float(row[1]))
    if not levels:
        raise HarnessError(f"irradiance file {path} holds no rows")
    return np.asarray(levels)


def clear_sky_profile(n_steps: int = 144, peak_percent: float = 100.0,
                      sunrise_h: float = 6.0, sunset_h: float = 20.0) -> np.ndarray:
    """Synthetic bell-shaped daily generation-level profile."""
    step_h = 24.0 / n_steps
    hours = (np.arange(n_steps) + 0.5) * step_h
    frac = (hours - sunrise_h) / (sunset_h - sunrise_h)
    inside = (frac > 0) & (frac < 1)
    return np.where(inside, np.sin(np.pi * np.clip(frac, 0, 1)) ** 1.5 * peak_percent, 0.0)


def run_timeseries(feeder: Feeder, bundle: CoeffBundle, irradiance: np.ndarray,
                   scenario: DemandScenario, power_factor: float = DEFAULT_RUN_POWER_FACTOR,
                   pool: DemandPool | None = None, with_dse: bool = False,
                   allow_hash_mismatch: bool = False,
                   timesteps=None) -> TimeSeriesRun:
    """Replay one scenario against a trained bundle.

    ``irradiance`` maps each timestep to the uniform generation level in
    percent.  With ``with_dse`` a weighted-LSE benchmark estimate is computed
    per timestep from the same local quantities plus pool pseudo-measurements.
    """
    if bundle.feeder_hash != feeder.content_hash and not allow_hash_mismatch:
        raise HarnessError(
            "bundle was trained on a different feeder configuration "
            "(pass allow_hash_mismatch=True for robustness studies)"
        )
    if with_dse and pool is None:
        raise HarnessError("a demand pool is required for the benchmark estimates")
    variables = tracked_variables(feeder)
    if variables.ids != bundle.variable_ids:
        raise HarnessError("bundle variable set does not match this feeder")
    if timesteps is None:
        timesteps = bundle.timesteps
    timesteps = tuple(timesteps)
    if len(irradiance) < scenario.n_steps:
        raise HarnessError("irradiance profile shorter than the scenario day")

    cf = compile_feeder(feeder)
    ratings = np.array([c.dg.rating_kw if c.dg else 0.0 for c in feeder.customers])
    tau = reactive_ratio(power_factor)
    p_levels = np.asarray([irradiance[t] for t in timesteps], dtype=float)
    dg_kw = p_levels[:, None] / 100.0 * ratings[None, :]
    load = np.stack([
        scenario.p_kw[:, t] + 1j * scenario.q_kvar[:, t] for t in timesteps
    ])
    s_net = (load - dg_kw * (1.0 - 1j * tau)) / feeder.base_power_1ph
    V, J, _, _ = _sweep_batch(cf, s_net.astype(complex), 1e-8, 100)
    actuals = extract_arrays(cf, variables, V, J)

    local_col = variables.index(bundle.local_variable)
    v_local = actuals[:, local_col].copy()
    estimates = np.stack([
        estimate_vector(
            LocalMeasurement(v_local=v_local[i], p_level_percent=p_levels[i],
                             power_factor=power_factor),
            bundle, t)
        for i, t in enumerate(timesteps)
    ])

    dse_estimates = None
    if with_dse:
        dse_estimates = np.empty_like(actuals)
        loc = feeder.customer(bundle.location_customer)
        loc_rating = loc.dg.rating_kw if loc.dg else 0.0
        for i, t in enumerate(timesteps):
            p_dg = loc_rating * p_levels[i] / 100.0
            local = dse_mod.LocalInjection(
                customer=bundle.location_customer, v_local=v_local[i],
                p_dg_kw=p_dg, q_dg_kvar=-p_dg * tau,
            )
            # remote unit outputs follow from the uniform generation level
            remote = {
                c.id: (c.dg.rating_kw * p_levels[i] / 100.0,
                       -c.dg.rating_kw * p_levels[i] / 100.0 * tau)
                for c in feeder.dg_customers if c.id != bundle.location_customer
            }
            pseudos = dse_mod.build_pseudo_measurements(pool, feeder, t)
            result = dse_mod.run_dse(feeder, local, pseudos, dg_injections=remote,
                                     variables=variables)
            dse_estimates[i] = [result.variables[v] for v in variables.ids]

    return TimeSeriesRun(
        feeder_hash=feeder.content_hash,
        scenario_id=scenario.scenario_id,
        location=bundle.location_customer,
        variable_ids=variables.ids,
        timesteps=timesteps,
        p_level_percent=p_levels,
        power_factor=power_factor,
        v_local=v_local,
        actuals=actuals,
        estimates=estimates,
        dse_estimates=dse_estimates,
        bundle=bundle,
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableMetrics:
    mean_abs: float
    median: float
    p997_abs: float
    r_squared: float


@dataclass(frozen=True)
class ErrorReport:
    """Per-variable error metrics over one or many pooled runs (per-unit)."""

    metrics: dict[str, VariableMetrics]
    n_samples: int

    def __getitem__(self, variable: str) -> VariableMetrics:
        return self.metrics[variable]

    def rows(self):
        for var, m in self.metrics.items():
            yield (var, m.mean_abs, m.median, m.p997_abs, m.r_squared)


def _correlation_r2(actual: np.ndarray, estimate: np.ndarray) -> float:
    if np.array_equal(actual, estimate):
        return 1.0
    if actual.std() == 0.0 or estimate.std() == 0.0:
        return 0.0
    r = np.corrcoef(actual, estimate)[0, 1]
    return float(min(r * r, 1.0))


def compute_metrics(runs, benchmark: bool = False) -> ErrorReport:
    """Pool one run or a list of runs into per-variable error metrics.

    ``benchmark=True`` evaluates the benchmark (state-estimation) values
    instead of the polynomial estimates.
    """
    if isinstance(runs, TimeSeriesRun):
        runs = [runs]
    if not runs:
        raise HarnessError("no runs supplied")
    ids = runs[0].variable_ids
    for r in runs:
        if r.variable_ids != ids:
            raise HarnessError("runs track different variable sets")
    actual = np.concatenate([r.actuals for r in runs])
    if benchmark:
        if any(r.dse_estimates is None for r in runs):
            raise HarnessError("runs carry no benchmark estimates")
        estimate = np.concatenate([r.dse_estimates for r in runs])
    else:
        estimate = np.concatenate([r.estimates for r in runs])
    if actual.shape[0] < 2:
        raise HarnessError("metrics need at least two samples")
    err = actual - estimate
    metrics = {}
    for i, var in enumerate(ids):
        e = err[:, i]
        metrics[var] = VariableMetrics(
            mean_abs=float(np.abs(e).mean()),
            median=float(np.median(e)),
            p997_abs=float(np.percentile(np.abs(e), 99.7)),
            r_squared=_correlation_r2(actual[:, i], estimate[:, i]),
        )
    return ErrorReport(metrics=metrics, n_samples=actual.shape[0])


def noise_multipliers(n: int, percentile_997: float, seed: int) -> np.ndarray:
    """Relative Gaussian measurement errors with the requested 99.7th percentile.

    ``percentile_997`` is in percent; the draw uses sigma = percentile/3.
    """
    if percentile_997 < 0:
        raise HarnessError("noise percentile must be non-negative")
    sigma = percentile_997 / 100.0 / 3.0
    rng = np.random.default_rng(np.random.SeedSequence([0xE44, seed]))
    return rng.normal(0.0, sigma, size=n)


def inject_transducer_noise(run: TimeSeriesRun, percentile_997: float,
                            seed: int) -> TimeSeriesRun:
    """Re-estimate a run with multiplicative Gaussian noise on the local voltage.

    ``percentile_997`` is the 99.7th percentile of the relative error in
    percent (sigma is a third of it); actual values are untouched.
    """
    if percentile_997 == 0:
        return run
    eps = noise_multipliers(len(run.v_local), percentile_997, seed)
    noisy = run.v_local * (1.0 + eps)
    estimates = np.stack([
        estimate_vector(
            LocalMeasurement(v_local=noisy[i], p_level_percent=run.p_level_percent[i],
                             power_factor=run.power_factor),
            run.bundle, t)
        for i, t in enumerate(run.timesteps)
    ])
    return replace(run, v_local=noisy, estimates=estimates)


# ---------------------------------------------------------------------------
# robustness studies
# ---------------------------------------------------------------------------


def apply_pv_penetration(feeder: Feeder, percent: float, seed: int = 0,
                         keep=()) -> Feeder:
    """Keep a seeded subset of DG units so ``percent`` of customers have one.

    Selections are nested: for a fixed seed (and ``keep`` set), the 50% fleet
    is a subset of the 75% fleet, and 100% returns the feeder unchanged.
    Customers named in ``keep`` always retain their unit (a monitored unit
    must exist at every penetration).
    """
    if not (0.0 <= percent <= 100.0):
        raise HarnessError("penetration must lie in [0, 100] percent")
    dg_ids = [c.id for c in feeder.customers if c.dg is not None]
    keep_n = round(len(dg_ids) * percent / 100.0)
    if keep_n == len(dg_ids):
        return feeder
    pinned = [cid for cid in keep if cid in dg_ids]
    order = np.random.default_rng(np.random.SeedSequence([0xBEEF, seed])).permutation(len(dg_ids))
    kept = set(pinned)
    for i in order:
        if len(kept) >= max(keep_n, len(pinned)):
            break
        kept.add(dg_ids[i])
    customers = tuple(
        c if (c.dg is None or c.id in kept) else Customer(id=c.id, bus=c.bus, phase=c.phase, dg=None)
        for c in feeder.customers
    )
    return replace(feeder, customers=customers)


@dataclass(frozen=True)
class EvFleet:
    """Which customers charge an EV and during which timestep window."""

    customers: tuple[str, ...]
    kw: float
    windows: dict[str, tuple[int, int]]    # customer -> [start, stop) steps


def build_ev_fleet(feeder: Feeder, fraction: float, kw: float, n_steps: int,
                   step_minutes: int, seed: int = 0,
                   window_h: tuple[float, float] = (17.0, 22.0),
                   duration_h: float = 3.0) -> EvFleet:
    """Pick adopting customers and a seeded evening charging window each."""
    if not (0.0 < fraction <= 1.0):
        raise HarnessError("EV fraction must lie in (0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([0xEE5, seed]))
    ids = [c.id for c in feeder.customers]
    count = max(1, round(len(ids) * fraction))
    chosen = [ids[i] for i in rng.permutation(len(ids))[:count]]
    windows = {}
    for cid in sorted(chosen):
        start_h = rng.uniform(window_h[0], window_h[1] - duration_h)
        start = int(start_h * 60 / step_minutes)
        stop = min(n_steps, start + int(duration_h * 60 / step_minutes))
        windows[cid] = (start, stop)
    return EvFleet(customers=tuple(sorted(chosen)), kw=kw, windows=windows)


def add_ev_load(scenario: DemandScenario, fleet: EvFleet) -> DemandScenario:
    """Overlay the fleet's constant charging load on a demand scenario."""
    p = scenario.p_kw.copy()
    index = {cid: i for i, cid in enumerate(scenario.customer_ids)}
    for cid in fleet.customers:
        start, stop = fleet.windows[cid]
        p[index[cid], start:stop] += fleet.kw
    return replace(scenario, p_kw=p)


@dataclass
class RobustnessResult:
    mutated_feeder: Feeder
    outdated_run: TimeSeriesRun
    control_run: TimeSeriesRun
    outdated_metrics: ErrorReport
    control_metrics: ErrorReport

    def estimate_deviation(self, variable: str) -> float:
        """Largest gap between outdated- and control-bundle estimates."""
        i = self.outdated_run.column(variable)
        return float(np.abs(self.outdated_run.estimates[:, i]
                            - self.control_run.estimates[:, i]).max())


def robustness_scenario(feeder: Feeder, mutation: str, params: dict,
                        bundle: CoeffBundle, scenarios: list[DemandScenario],
                        validation_scenario: DemandScenario, irradiance: np.ndarray,
                        config: TrainingConfig,
                        power_factor: float = DEFAULT_RUN_POWER_FACTOR) -> RobustnessResult:
    """Evaluate an outdated bundle against a mutated system.

    ``pv_penetration`` changes which customers generate; ``add_evs`` overlays
    evening charging load.  The control run uses a bundle retrained on the
    mutated system with the same settings.
    """
    timesteps = bundle.timesteps
    if mutation == "pv_penetration":
        mutated = apply_pv_penetration(feeder, params["percent"], params.get("seed", 0),
                                       keep=(bundle.location_customer,))
        train_scen, val_scen = scenarios, validation_scenario
    elif mutation == "add_evs":
        mutated = feeder
        fleet = build_ev_fleet(
            feeder, params["fraction"], params.get("kw", 3.0),
            n_steps=validation_scenario.n_steps,
            step_minutes=validation_scenario.step_minutes,
            seed=params.get("seed", 0),
            window_h=params.get("window_h", (17.0, 22.0)),
            duration_h=params.get("duration_h", 3.0),
        )
        train_scen = [add_ev_load(sc, fleet) for sc in scenarios]
        val_scen = add_ev_load(validation_scenario, fleet)
    else:
        raise HarnessError(f"unknown mutation '{mutation}'")
    control = train_bundle(mutated, train_scen, config=config, timesteps=timesteps,
                           locations=[bundle.location_customer])
    control_bundle = control.bundles[bundle.location_customer]
    outdated_run = run_timeseries(mutated, bundle, irradiance, val_scen,
                                  power_factor=power_factor, allow_hash_mismatch=True,
                                  timesteps=timesteps)
    control_run = run_timeseries(mutated, control_bundle, irradiance, val_scen,
                                 power_factor=power_factor, timesteps=timesteps)
    return RobustnessResult(
        mutated_feeder=mutated,
        outdated_run=outdated_run,
        control_run=control_run,
        outdated_metrics=compute_metrics(outdated_run),
        control_metrics=compute_metrics(control_run),
    )


# ---------------------------------------------------------------------------
# benchmark comparison (polynomials vs state estimation)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    variable_class: str
    mean_abs_gap: float
    max_abs_gap: float


def benchmark_comparison(runs) -> list[BenchmarkRow]:
    """Per variable class, the mean/max |polynomial error - benchmark error|."""
    if isinstance(runs, TimeSeriesRun):
        runs = [runs]
    if any(r.dse_estimates is None for r in runs):
        raise HarnessError("runs carry no benchmark estimates")
    ids = runs[0].variable_ids
    poly_err = np.concatenate([r.actuals - r.estimates for r in runs])
    dse_err = np.concatenate([r.actuals - r.dse_estimates for r in runs])
    gap = np.abs(poly_err - dse_err)
    classes = sorted({variable_class(v) for v in ids})
    rows = []
    for cls in classes:
        cols = [i for i, v in enumerate(ids) if variable_class(v) == cls]
        rows.append(BenchmarkRow(
            variable_class=cls,
            mean_abs_gap=float(gap[:, cols].mean()),
            max_abs_gap=float(gap[:, cols].max()),
        ))
    return rows
