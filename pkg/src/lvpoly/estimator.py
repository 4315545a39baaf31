"""Online estimation from local measurements only: strictly non-iterative.

Given the locally measured connection-point voltage and the unit's own
setpoint, the estimator (1) recovers the reference voltage by inverting the
local voltage's own coefficient model, (2) instantiates every variable's six
surface coefficients from that reference voltage, and (3) evaluates magnitudes
and setpoint sensitivities by direct polynomial evaluation.  There is no loop
whose trip count depends on input values, no internal state, and concurrent
calls are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import BundleError, CoeffBundle
from .powerflow import reactive_ratio
from .surface import basis_vector, compose_magnitude

DENOMINATOR_FLOOR = 1e-9

P_LEVEL_RANGE = (0.0, 100.0)
POWER_FACTOR_RANGE = (0.85, 1.0)


class EstimatorError(ValueError):
    """Raised for invalid measurements or failed bundle lookups."""


class SingularInversionError(EstimatorError):
    """The reference-voltage denominator vanished at this setpoint."""


@dataclass(frozen=True)
class LocalMeasurement:
    """What a DG unit can observe on its own: voltage and its setpoint."""

    v_local: float
    p_level_percent: float
    power_factor: float
    inductive: bool = True

    def __post_init__(self):
        if self.v_local <= 0:
            raise EstimatorError("local voltage must be positive")
        lo, hi = P_LEVEL_RANGE
        if not (lo <= self.p_level_percent <= hi):
            raise EstimatorError(f"generation level must lie in [{lo}, {hi}] percent")
        lo, hi = POWER_FACTOR_RANGE
        if not (lo <= self.power_factor <= hi):
            raise EstimatorError(f"power factor must lie in [{lo}, {hi}]")

    @property
    def tau(self) -> float:
        # the trained basis uses the non-negative inductive ratio
        return reactive_ratio(self.power_factor)

    @property
    def basis(self) -> np.ndarray:
        return basis_vector(self.p_level_percent, self.tau)


@dataclass(frozen=True)
class Estimate:
    """One variable's magnitude, setpoint sensitivities and coefficients.

    ``d_p_level`` is per percent of generation level, ``d_tau`` per unit of
    the reactive ratio.  Composed current magnitudes carry ``coefficients=None``
    (they are derived from their re/im parts, not from own coefficients).
    """

    variable: str
    magnitude: float
    d_p_level: float
    d_tau: float
    coefficients: tuple[float, ...] | None


def recover_reference_voltage(measurement: LocalMeasurement, bundle: CoeffBundle,
                              timestep: int) -> float:
    """Invert the local voltage's own surface for the reference voltage."""
    m = measurement.basis
    slope, intercept = bundle.pairs(timestep, bundle.local_variable)
    denominator = float(slope @ m)
    if abs(denominator) < DENOMINATOR_FLOOR:
        raise SingularInversionError(
            f"reference-voltage denominator {denominator:.3e} is below "
            f"{DENOMINATOR_FLOOR:.0e} at this setpoint"
        )
    return (measurement.v_local - float(intercept @ m)) / denominator


def _instantiate(bundle: CoeffBundle, timestep: int, v_ref: float) -> np.ndarray:
    rec = bundle.record(timestep)
    return rec.slope * v_ref + rec.intercept       # (n_fitted, 6)


def _evaluate(coeffs: np.ndarray, m: np.ndarray, p_fraction: float, tau: float):
    value = coeffs @ m
    d_p = (coeffs[..., 1] + 2.0 * coeffs[..., 3] * p_fraction + coeffs[..., 4] * tau) / 100.0
    d_tau = coeffs[..., 2] + coeffs[..., 4] * p_fraction + 2.0 * coeffs[..., 5] * tau
    return value, d_p, d_tau


def estimate(measurement: LocalMeasurement, bundle: CoeffBundle, timestep: int,
             variable: str) -> Estimate:
    """Estimate one network variable from the local measurement."""
    if variable not in bundle.variable_ids:
        raise BundleError(f"unknown variable id '{variable}'")
    v_ref = recover_reference_voltage(measurement, bundle, timestep)
    coeffs = _instantiate(bundle, timestep, v_ref)
    m = measurement.basis
    p_fraction = measurement.p_level_percent / 100.0
    tau = measurement.tau
    index = bundle.fitted_index
    if variable in bundle.composed:
        re_id, im_id = bundle.composed[variable]
        re_val, re_dp, re_dt = _evaluate(coeffs[index[re_id]], m, p_fraction, tau)
        im_val, im_dp, im_dt = _evaluate(coeffs[index[im_id]], m, p_fraction, tau)
        mag, (d_p, d_t) = compose_magnitude(re_val, im_val, (re_dp, re_dt), (im_dp, im_dt))
        return Estimate(variable=variable, magnitude=float(mag),
                        d_p_level=float(d_p), d_tau=float(d_t), coefficients=None)
    row = coeffs[index[variable]]
    value, d_p, d_t = _evaluate(row, m, p_fraction, tau)
    return Estimate(variable=variable, magnitude=float(value),
                    d_p_level=float(d_p), d_tau=float(d_t),
                    coefficients=tuple(row.tolist()))


def estimate_all(measurement: LocalMeasurement, bundle: CoeffBundle,
                 timestep: int) -> list[Estimate]:
    """Estimate every bundle variable; order matches ``bundle.variable_ids``."""
    v_ref = recover_reference_voltage(measurement, bundle, timestep)
    coeffs = _instantiate(bundle, timestep, v_ref)
    m = measurement.basis
    p_fraction = measurement.p_level_percent / 100.0
    tau = measurement.tau
    values, d_p, d_t = _evaluate(coeffs, m, p_fraction, tau)
    index = bundle.fitted_index
    out = []
    for variable in bundle.variable_ids:
        if variable in bundle.composed:
            re_i = index[bundle.composed[variable][0]]
            im_i = index[bundle.composed[variable][1]]
            mag, (dp, dt) = compose_magnitude(
                values[re_i], values[im_i],
                (d_p[re_i], d_t[re_i]), (d_p[im_i], d_t[im_i]),
            )
            out.append(Estimate(variable=variable, magnitude=float(mag),
                                d_p_level=float(dp), d_tau=float(dt), coefficients=None))
        else:
            i = index[variable]
            out.append(Estimate(variable=variable, magnitude=float(values[i]),
                                d_p_level=float(d_p[i]), d_tau=float(d_t[i]),
                                coefficients=tuple(coeffs[i].tolist())))
    return out


def estimate_vector(measurement: LocalMeasurement, bundle: CoeffBundle,
                    timestep: int) -> np.ndarray:
    """Magnitudes only, aligned with ``bundle.variable_ids`` (fast path)."""
    v_ref = recover_reference_voltage(measurement, bundle, timestep)
    coeffs = _instantiate(bundle, timestep, v_ref)
    values = coeffs @ measurement.basis
    index = bundle.fitted_index
    out = np.empty(len(bundle.variable_ids))
    for i, variable in enumerate(bundle.variable_ids):
        if variable in bundle.composed:
            re_id, im_id = bundle.composed[variable]
            out[i] = np.hypot(values[index[re_id]], values[index[im_id]])
        else:
            out[i] = values[index[variable]]
    return out
