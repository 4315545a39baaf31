"""Offline training: setpoint sweeps per representative demand scenario and the
two least-squares stages that produce deployable coefficient bundles.

Stage 1 fits, per representative scenario and timestep, the six-term quadratic
surface of every tracked variable over a grid of uniform DG setpoints (the
generation-level/power-factor plane).  Stage 2 regresses each surface
coefficient, across scenarios and weighted by scenario probability, on the
local reference voltage observed with both setpoints at their lower bounds.
Current magnitudes are never fitted directly: their real and imaginary parts
are fitted and composed afterwards.

The per-(scenario, timestep) tasks are independent; ``train_bundle`` can run
them on worker threads with output identical to the sequential order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import solve_triangular

from . import clustering
from .bundle import BundleRecord, CoeffBundle, GridSpec, merge_bundles
from .demand import DEFAULT_STEP_MINUTES, DemandScenario
from .feeder import Feeder
from .powerflow import DEFAULT_MAX_ITER, DEFAULT_TOLERANCE, _sweep_batch, compile_feeder, reactive_ratio
from .surface import N_TERMS, basis_matrix
from .variables import VariableSet, extract_arrays, tracked_variables, variable_class

CONDITION_LIMIT = 1e10

P_LEVEL_BOUNDS = (0.0, 100.0)
POWER_FACTOR_BOUNDS = (0.85, 1.0)
DEFAULT_GRID_STEPS = 20


class FitError(ValueError):
    """Raised when a regression cannot be carried out as requested."""


class IllConditionedError(FitError):
    """Design matrix condition number exceeds the configured limit."""


class DegenerateRegressionError(FitError):
    """All reference voltages coincide; the coefficient model is undetermined."""


def _r_squared(ssr: np.ndarray, sst: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Coefficient of determination with a guard for constant targets.

    A column whose spread is at rounding level counts as perfectly fitted when
    its residual is at rounding level too, and as unexplained otherwise.
    """
    scale2 = np.maximum(np.abs(targets).max(axis=0), 1e-150) ** 2
    tiny = 1e-24 * targets.shape[0] * scale2
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = 1.0 - ssr / sst
    r2 = np.where(sst > tiny, r2, np.where(ssr <= tiny, 1.0, 0.0))
    return np.clip(r2, 0.0, 1.0)


# ---------------------------------------------------------------------------
# setpoint grid and sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetpointGrid:
    """Cartesian grid of uniform DG setpoints (generation level x power factor).

    Points are row-major with the generation level as the outer axis, so the
    first point carries both parameters at their lower bounds.
    """

    p_level_percent: tuple[float, ...]
    power_factor: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.p_level_percent)
        f = np.asarray(self.power_factor)
        if p.size == 0 or f.size == 0:
            raise FitError("grid axes must be non-empty")
        if np.any(np.diff(p) <= 0) or np.any(np.diff(f) <= 0):
            raise FitError("grid axes must be strictly ascending")
        if p[0] < P_LEVEL_BOUNDS[0] or p[-1] > P_LEVEL_BOUNDS[1]:
            raise FitError(f"generation level must stay within {P_LEVEL_BOUNDS} percent")
        if f[0] < POWER_FACTOR_BOUNDS[0] or f[-1] > POWER_FACTOR_BOUNDS[1]:
            raise FitError(f"power factor must stay within {POWER_FACTOR_BOUNDS}")

    @classmethod
    def default(cls, n_steps: int = DEFAULT_GRID_STEPS,
                p_bounds=P_LEVEL_BOUNDS, pf_bounds=POWER_FACTOR_BOUNDS) -> "SetpointGrid":
        """Equally spaced, endpoint-inclusive axes with ``n_steps`` points each."""
        return cls(
            p_level_percent=tuple(np.linspace(*p_bounds, n_steps)),
            power_factor=tuple(np.linspace(*pf_bounds, n_steps)),
        )

    @property
    def tau_values(self) -> tuple[float, ...]:
        return tuple(reactive_ratio(pf) for pf in self.power_factor)

    @property
    def n_points(self) -> int:
        return len(self.p_level_percent) * len(self.power_factor)

    def point_arrays(self):
        """(p_percent, pf, tau) flat arrays over the full grid."""
        p, f = np.meshgrid(self.p_level_percent, self.power_factor, indexing="ij")
        tau = np.tan(np.arccos(f))
        return p.ravel(), f.ravel(), tau.ravel()

    def basis(self) -> np.ndarray:
        p, _, tau = self.point_arrays()
        return basis_matrix(p / 100.0, tau)

    def spec(self) -> GridSpec:
        return GridSpec(p_level_percent=self.p_level_percent,
                        power_factor=self.power_factor)


@dataclass(frozen=True)
class SweepSample:
    """One converged grid point with all tracked variable values."""

    p_level_percent: float
    power_factor: float
    tau: float
    values: dict[str, float]


@dataclass(frozen=True)
class SweepResult:
    """All grid points of one (scenario, timestep) sweep.

    ``values`` is (n_points, n_ids) in reporting per-unit; ``reference_voltages``
    maps each DG customer to its connection-point voltage at the grid's lower
    bounds (zero generation).
    """

    scenario_id: int
    timestep: int
    grid: SetpointGrid
    variables: VariableSet
    values: np.ndarray
    reference_voltages: dict[str, float]

    @property
    def samples(self) -> list[SweepSample]:
        p, f, tau = self.grid.point_arrays()
        return [
            SweepSample(
                p_level_percent=float(p[n]), power_factor=float(f[n]), tau=float(tau[n]),
                values=dict(zip(self.variables.ids, self.values[n].tolist())),
            )
            for n in range(self.grid.n_points)
        ]

    def column(self, variable: str) -> np.ndarray:
        return self.values[:, self.variables.index(variable)]


def _sweep_scenarios(feeder: Feeder, scenarios: list[DemandScenario], timestep: int,
                     grid: SetpointGrid, variables: VariableSet,
                     tolerance: float = DEFAULT_TOLERANCE,
                     max_iter: int = DEFAULT_MAX_ITER):
    """Batched sweep across scenarios x grid points.

    Returns ``(values, refs)`` with ``values`` shaped (n_scen, n_points, n_ids)
    and ``refs`` (n_scen, n_dg) aligned with the feeder's DG customers.
    """
    cf = compile_feeder(feeder)
    p_pct, _, tau = grid.point_arrays()
    ratings = np.array([c.dg.rating_kw if c.dg else 0.0 for c in feeder.customers])
    dg_kw = p_pct[:, None] / 100.0 * ratings[None, :]            # (N, n_cust)
    dg_kvar = -dg_kw * tau[:, None]
    load = np.stack([
        sc.p_kw[:, timestep] + 1j * sc.q_kvar[:, timestep] for sc in scenarios
    ])                                                           # (n_scen, n_cust)
    s_net = (load[:, None, :] - (dg_kw + 1j * dg_kvar)[None, :, :]) / feeder.base_power_1ph
    n_scen, n_points, n_cust = s_net.shape
    try:
        V, J, _, _ = _sweep_batch(cf, s_net.reshape(-1, n_cust), tolerance, max_iter)
    except Exception as exc:
        raise FitError(
            f"setpoint sweep failed at timestep {timestep} "
            f"(scenarios {[sc.scenario_id for sc in scenarios]}): {exc}"
        ) from exc
    vals = extract_arrays(cf, variables, V, J).reshape(n_scen, n_points, len(variables.ids))
    dg_cols = [variables.index(f"vmag:{c.id}") for c in feeder.dg_customers]
    refs = vals[:, 0, :][:, dg_cols]                              # grid row 0 = lower bounds
    return vals, refs


def sweep(feeder: Feeder, scenario: DemandScenario, timestep: int,
          grid: SetpointGrid | None = None, variables: VariableSet | None = None) -> SweepResult:
    """Run the full setpoint grid for one demand scenario at one timestep."""
    grid = grid or SetpointGrid.default()
    variables = variables or tracked_variables(feeder)
    vals, refs = _sweep_scenarios(feeder, [scenario], timestep, grid, variables)
    dg_ids = [c.id for c in feeder.dg_customers]
    return SweepResult(
        scenario_id=scenario.scenario_id,
        timestep=timestep,
        grid=grid,
        variables=variables,
        values=vals[0],
        reference_voltages=dict(zip(dg_ids, refs[0].tolist())),
    )


# ---------------------------------------------------------------------------
# stage 1: quadratic surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolySurface:
    """Fitted quadratic surface of one variable for one scenario/timestep."""

    variable: str
    scenario_id: int
    timestep: int
    coefficients: tuple[float, ...]
    r_squared: float


def _polynomial_basis(p_fraction: np.ndarray, tau: np.ndarray, degree: int) -> np.ndarray:
    cols = [np.ones_like(p_fraction)]
    for total in range(1, degree + 1):
        for j in range(total + 1):
            cols.append(p_fraction ** (total - j) * tau**j)
    return np.stack(cols, axis=-1)


def _lsq_columns(basis: np.ndarray, targets: np.ndarray):
    """QR least squares shared by every fit; rejects ill-conditioned designs."""
    if basis.shape[0] < basis.shape[1]:
        raise FitError(
            f"need at least {basis.shape[1]} samples, got {basis.shape[0]}"
        )
    q, r = np.linalg.qr(basis)
    cond = np.linalg.cond(r)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise IllConditionedError(
            f"design matrix condition {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    coef = solve_triangular(r, q.T @ targets)
    pred = basis @ coef
    ssr = ((targets - pred) ** 2).sum(axis=0)
    sst = ((targets - targets.mean(axis=0)) ** 2).sum(axis=0)
    return coef, _r_squared(ssr, sst, targets)


def _sweep_input(samples, variables: VariableSet | None):
    """Accept a SweepResult or an iterable of SweepSample rows."""
    if isinstance(samples, SweepResult):
        p, _, tau = samples.grid.point_arrays()
        return p / 100.0, tau, samples.values, samples.variables, samples
    rows = list(samples)
    if not rows:
        raise FitError("no samples supplied")
    ids = tuple(rows[0].values.keys())
    p = np.array([s.p_level_percent for s in rows]) / 100.0
    tau = np.array([s.tau for s in rows])
    vals = np.array([[s.values[v] for v in ids] for s in rows])
    varset = variables or VariableSet(ids=ids, fitted=ids, composed={})
    return p, tau, vals, varset, None


def fit_surface(samples, variable: str) -> PolySurface:
    """Least-squares fit of the six-term surface for one variable."""
    p, tau, vals, varset, origin = _sweep_input(samples, None)
    y = vals[:, list(varset.ids).index(variable)][:, None]
    coef, r2 = _lsq_columns(basis_matrix(p, tau), y)
    return PolySurface(
        variable=variable,
        scenario_id=origin.scenario_id if origin else -1,
        timestep=origin.timestep if origin else -1,
        coefficients=tuple(coef[:, 0].tolist()),
        r_squared=float(r2[0]),
    )


def fit_polynomial(samples, variable: str, degree: int):
    """Diagnostic fit at another polynomial degree; returns (coeffs, r2)."""
    if degree not in (1, 2, 3):
        raise FitError("supported polynomial degrees are 1, 2 and 3")
    p, tau, vals, varset, _ = _sweep_input(samples, None)
    y = vals[:, list(varset.ids).index(variable)][:, None]
    coef, r2 = _lsq_columns(_polynomial_basis(p, tau, degree), y)
    return tuple(coef[:, 0].tolist()), float(r2[0])


@dataclass(frozen=True)
class ComposedMagnitudeFit:
    """Magnitude predictor built from separately fitted re/im surfaces."""

    re_surface: PolySurface
    im_surface: PolySurface
    r_squared: float

    def predict(self, p_level_percent, tau):
        from .surface import surface_value

        re = surface_value(self.re_surface.coefficients, p_level_percent, tau)
        im = surface_value(self.im_surface.coefficients, p_level_percent, tau)
        return np.hypot(re, im)


def fit_current_magnitude(samples, phase: str | None = None,
                          re_variable: str | None = None,
                          im_variable: str | None = None) -> ComposedMagnitudeFit:
    """Fit re/im current surfaces and compose the magnitude predictor.

    The magnitude itself is never fitted; its reported R-squared compares the
    composed prediction against the sampled magnitudes.
    """
    if phase is not None:
        re_variable, im_variable = f"i_re:{phase}", f"i_im:{phase}"
    if re_variable is None or im_variable is None:
        raise FitError("either a phase or explicit re/im variable ids are required")
    re_fit = fit_surface(samples, re_variable)
    im_fit = fit_surface(samples, im_variable)
    p, tau, vals, varset, _ = _sweep_input(samples, None)
    pred = np.hypot(
        basis_matrix(p, tau) @ np.asarray(re_fit.coefficients),
        basis_matrix(p, tau) @ np.asarray(im_fit.coefficients),
    )
    mag_id = None
    for mag, parts in varset.composed.items():
        if parts == (re_variable, im_variable):
            mag_id = mag
    if mag_id is not None:
        actual = vals[:, list(varset.ids).index(mag_id)]
    else:
        re_col = vals[:, list(varset.ids).index(re_variable)]
        im_col = vals[:, list(varset.ids).index(im_variable)]
        actual = np.hypot(re_col, im_col)
    ssr = ((actual - pred) ** 2).sum()
    sst = ((actual - actual.mean()) ** 2).sum()
    r2 = _r_squared(np.array([ssr]), np.array([sst]), actual[:, None])[0]
    return ComposedMagnitudeFit(re_surface=re_fit, im_surface=im_fit,
                                r_squared=float(r2))


# ---------------------------------------------------------------------------
# stage 2: coefficient models against the reference voltage
# ---------------------------------------------------------------------------


def _weighted_line_fit(vstar: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Probability-weighted linear fit of each target column on ``vstar``.

    Zero-weight scenarios do not influence the fit; with fewer than two
    effective points the minimum-norm solution is returned (it interpolates
    the remaining point).  Returns (slope, intercept, weighted r2) per column.
    """
    scale = max(1.0, float(np.abs(vstar).max()))
    if np.ptp(vstar) <= 1e-12 * scale:
        raise DegenerateRegressionError(
            "all reference voltages are identical; cannot fit coefficient models"
        )
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise FitError("scenario weights must be non-negative and not all zero")
    sw = np.sqrt(w)
    design = np.stack([vstar, np.ones_like(vstar)], axis=1) * sw[:, None]
    scaled = targets * sw[:, None]
    coef, *_ = np.linalg.lstsq(design, scaled, rcond=None)
    pred = design @ coef
    ssr = ((scaled - pred) ** 2).sum(axis=0)
    wmean = (w @ targets) / w.sum()
    sst = (w[:, None] * (targets - wmean) ** 2).sum(axis=0)
    return coef[0], coef[1], _r_squared(ssr, sst, targets)


def fit_coeff_models(surfaces: Mapping[int, Mapping[str, PolySurface]],
                     refs: Mapping[int, float],
                     omegas: Mapping[int, float],
                     *,
                     local_variable: str,
                     location: tuple[str, str] = ("", ""),
                     timestep: int | None = None,
                     variables: VariableSet | None = None,
                     feeder_hash: str = "",
                     grid: GridSpec | None = None,
                     k: int | None = None,
                     step_minutes: int = DEFAULT_STEP_MINUTES) -> CoeffBundle:
    """Fit every coefficient's linear model on the reference voltage.

    ``surfaces`` maps scenario id to that scenario's fitted surfaces; ``refs``
    and ``omegas`` carry the matching reference voltages and probabilities.
    """
    ids = sorted(surfaces)
    if len(ids) < 2:
        raise FitError("coefficient models need surfaces from at least two scenarios")
    fitted_ids = tuple(sorted(surfaces[ids[0]]))
    for sid in ids:
        if tuple(sorted(surfaces[sid])) != fitted_ids:
            raise FitError("scenarios carry different variable sets")
    coefs = np.array([[surfaces[sid][v].coefficients for v in fitted_ids] for sid in ids])
    vstar = np.array([refs[sid] for sid in ids])
    w = np.array([float(omegas[sid]) for sid in ids])
    n_vars = len(fitted_ids)
    targets = coefs.transpose(0, 2, 1).reshape(len(ids), N_TERMS * n_vars)
    slope, intercept, r2 = _weighted_line_fit(vstar, targets, w)
    rec = BundleRecord(
        slope=slope.reshape(N_TERMS, n_vars).T,
        intercept=intercept.reshape(N_TERMS, n_vars).T,
        r_squared=r2.reshape(N_TERMS, n_vars).T,
    )
    t = timestep if timestep is not None else next(
        s.timestep for s in surfaces[ids[0]].values()
    )
    varset = variables or VariableSet(ids=fitted_ids, fitted=fitted_ids, composed={})
    return CoeffBundle(
        location_customer=location[0],
        location_phase=location[1],
        local_variable=local_variable,
        feeder_hash=feeder_hash,
        grid=grid or GridSpec((), ()),
        k=k if k is not None else len(ids),
        step_minutes=step_minutes,
        variable_ids=varset.ids,
        fitted_ids=varset.fitted,
        composed=dict(varset.composed),
        records={t: rec},
    )


# ---------------------------------------------------------------------------
# full training driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    """Knobs of a full training run (shared by the CLI and the harness).

    ``report_degrees`` selects which polynomial degrees appear in the stage-1
    quality report; the deployed surfaces are always the quadratic ones.
    """

    s_count: int = 400
    k: int = clustering.DEFAULT_K
    algorithm: str = clustering.DEFAULT_ALGORITHM
    grid_steps: int = DEFAULT_GRID_STEPS
    step_minutes: int = DEFAULT_STEP_MINUTES
    seed: int = 0
    restarts: int = clustering.DEFAULT_RESTARTS
    workers: int = 1
    report_degrees: tuple[int, ...] = (2,)

    @property
    def grid(self) -> SetpointGrid:
        return SetpointGrid.default(self.grid_steps)

    @property
    def n_steps(self) -> int:
        return 24 * 60 // self.step_minutes


@dataclass(frozen=True)
class Stage1Row:
    timestep: int
    variable: str
    degree: int
    r2_min: float
    r2_mean: float


@dataclass(frozen=True)
class Stage2Row:
    timestep: int
    location: str
    variable: str
    term: int
    r_squared: float


@dataclass(frozen=True)
class ClusterInfo:
    timestep: int
    k: int
    algorithm: str
    compactness: float
    representatives: tuple[int, ...]
    omegas: tuple[float, ...]


@dataclass
class TrainingReport:
    stage1: list[Stage1Row] = field(default_factory=list)
    stage2: list[Stage2Row] = field(default_factory=list)
    clusters: list[ClusterInfo] = field(default_factory=list)

    def stage1_class_summary(self) -> dict[tuple[str, int], float]:
        """Minimum stage-1 R-squared per (variable class, degree)."""
        out: dict[tuple[str, int], float] = {}
        for row in self.stage1:
            key = (variable_class(row.variable), row.degree)
            out[key] = min(out.get(key, 1.0), row.r2_min)
        return out

    def stage2_mean(self, location: str, variable: str) -> float:
        vals = [r.r_squared for r in self.stage2
                if r.location == location and r.variable == variable]
        if not vals:
            raise KeyError(f"no stage-2 rows for {location}/{variable}")
        return float(np.mean(vals))


@dataclass
class TrainingResult:
    bundles: dict[str, CoeffBundle]
    report: TrainingReport


def _train_timestep(feeder, scenarios, timestep, config: TrainingConfig,
                    variables: VariableSet, locations: list[str]):
    patterns = clustering.build_patterns(feeder, scenarios, timestep)
    norm = clustering.normalize(patterns)
    result = clustering.cluster(norm, config.k, config.algorithm,
                                seed=config.seed, restarts=config.restarts)
    rep_scenarios = [scenarios[row] for row in result.representative_rows]
    vals, refs = _sweep_scenarios(feeder, rep_scenarios, timestep, config.grid, variables)
    basis = config.grid.basis()
    fitted_cols = [variables.index(v) for v in variables.fitted]
    n_fit = len(fitted_cols)
    k_count = len(rep_scenarios)
    coefs = np.empty((k_count, N_TERMS, n_fit))
    stage1_r2 = np.empty((k_count, n_fit))
    for i in range(k_count):
        coef, r2 = _lsq_columns(basis, vals[i][:, fitted_cols])
        coefs[i] = coef
        stage1_r2[i] = r2
    dg_ids = [c.id for c in feeder.dg_customers]
    records = {}
    stage2_rows = []
    targets = coefs.transpose(0, 2, 1).reshape(k_count, n_fit * N_TERMS)
    for loc in locations:
        vstar = refs[:, dg_ids.index(loc)]
        slope, intercept, r2 = _weighted_line_fit(vstar, targets, result.omegas)
        rec = BundleRecord(
            slope=slope.reshape(n_fit, N_TERMS),
            intercept=intercept.reshape(n_fit, N_TERMS),
            r_squared=r2.reshape(n_fit, N_TERMS),
        )
        records[loc] = rec
        r2_mat = rec.r_squared
        for vi, var in enumerate(variables.fitted):
            for term in range(N_TERMS):
                stage2_rows.append(Stage2Row(timestep=timestep, location=loc, variable=var,
                                             term=term + 1, r_squared=float(r2_mat[vi, term])))
    stage1_by_degree = {2: stage1_r2}
    p_pct, _, tau = config.grid.point_arrays()
    for degree in config.report_degrees:
        if degree == 2:
            continue
        alt_basis = _polynomial_basis(p_pct / 100.0, tau, degree)
        alt_r2 = np.empty((k_count, n_fit))
        for i in range(k_count):
            _, alt_r2[i] = _lsq_columns(alt_basis, vals[i][:, fitted_cols])
        stage1_by_degree[degree] = alt_r2
    stage1_rows = [
        Stage1Row(timestep=timestep, variable=var, degree=degree,
                  r2_min=float(r2_mat[:, vi].min()),
                  r2_mean=float(r2_mat[:, vi].mean()))
        for degree, r2_mat in sorted(stage1_by_degree.items())
        for vi, var in enumerate(variables.fitted)
    ]
    info = ClusterInfo(
        timestep=timestep, k=result.k, algorithm=result.algorithm,
        compactness=clustering.within_cluster_ss(norm, result),
        representatives=result.representatives,
        omegas=tuple(result.omegas.tolist()),
    )
    return records, stage1_rows, stage2_rows, info


def train_bundle(feeder: Feeder, scenarios: list[DemandScenario],
                 config: TrainingConfig | None = None,
                 timesteps: Iterable[int] | None = None,
                 locations: Iterable[str] | None = None,
                 variables: VariableSet | None = None) -> TrainingResult:
    """Train coefficient bundles for the requested DG locations.

    ``scenarios`` is the Monte Carlo sample to reduce; representative scenarios
    and weights are re-derived per timestep.  Deterministic for fixed inputs
    regardless of ``config.workers``.
    """
    config = config or TrainingConfig()
    variables = variables or tracked_variables(feeder)
    dg_ids = [c.id for c in feeder.dg_customers]
    if not dg_ids:
        raise FitError("feeder has no DG units to train for")
    locations = list(locations) if locations is not None else dg_ids
    for loc in locations:
        if loc not in dg_ids:
            raise FitError(f"customer '{loc}' has no DG unit")
    if timesteps is None:
        timesteps = range(scenarios[0].n_steps)
    timesteps = sorted(set(timesteps))

    def task(t):
        return t, _train_timestep(feeder, scenarios, t, config, variables, locations)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = dict(pool.map(task, timesteps))
    else:
        results = dict(map(task, timesteps))

    report = TrainingReport()
    per_location: dict[str, list[CoeffBundle]] = {loc: [] for loc in locations}
    for t in timesteps:
        records, stage1_rows, stage2_rows, info = results[t]
        report.stage1.extend(stage1_rows)
        report.stage2.extend(stage2_rows)
        report.clusters.append(info)
        for loc in locations:
            cust = feeder.customer(loc)
            per_location[loc].append(CoeffBundle(
                location_customer=loc,
                location_phase=cust.phase,
                local_variable=f"vmag:{loc}",
                feeder_hash=feeder.content_hash,
                grid=config.grid.spec(),
                k=config.k,
                step_minutes=config.step_minutes,
                variable_ids=variables.ids,
                fitted_ids=variables.fitted,
                composed=dict(variables.composed),
                records={t: records[loc]},
            ))
    bundles = {loc: merge_bundles(parts) for loc, parts in per_location.items()}
    return TrainingResult(bundles=bundles, report=report)


# ---------------------------------------------------------------------------
# surface-quality diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitReportRow:
    variable: str
    degree: int
    r2_min: float
    r2_mean: float


def surface_fit_report(feeder: Feeder, scenarios: list[DemandScenario], timestep: int,
                       grid: SetpointGrid | None = None,
                       degrees=(1, 2),
                       variables: VariableSet | None = None) -> list[FitReportRow]:
    """Goodness-of-fit comparison across polynomial degrees.

    Fits every tracked variable for every supplied scenario at ``timestep`` and
    reports the min/mean R-squared per variable and degree.
    """
    grid = grid or SetpointGrid.default()
    variables = variables or tracked_variables(feeder)
    vals, _ = _sweep_scenarios(feeder, scenarios, timestep, grid, variables)
    p, _, tau = grid.point_arrays()
    fitted_cols = [variables.index(v) for v in variables.fitted]
    rows = []
    for degree in degrees:
        basis = _polynomial_basis(p / 100.0, tau, degree)
        r2_all = np.empty((len(scenarios), len(fitted_cols)))
        for i in range(len(scenarios)):
            _, r2 = _lsq_columns(basis, vals[i][:, fitted_cols])
            r2_all[i] = r2
        for vi, var in enumerate(variables.fitted):
            rows.append(FitReportRow(variable=var, degree=degree,
                                     r2_min=float(r2_all[:, vi].min()),
                                     r2_mean=float(r2_all[:, vi].mean())))
    return rows
