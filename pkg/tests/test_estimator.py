import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvpoly.bundle import BundleError, BundleRecord, CoeffBundle, GridSpec
from lvpoly.estimator import (
    EstimatorError,
    LocalMeasurement,
    SingularInversionError,
    estimate,
    estimate_all,
    estimate_vector,
    recover_reference_voltage,
)
from lvpoly.surface import basis_vector, surface_partials, surface_value


def make_bundle(slope_by_var, intercept_by_var, local="vmag:h1", composed=None,
                timestep=0):
    """Hand-built bundle over explicit (slope, intercept) rows per variable."""
    ids = tuple(slope_by_var)
    composed = composed or {}
    fitted = tuple(v for v in ids if v not in composed)
    rec = BundleRecord(
        slope=np.array([slope_by_var[v] for v in fitted], dtype=float),
        intercept=np.array([intercept_by_var[v] for v in fitted], dtype=float),
        r_squared=np.ones((len(fitted), 6)),
    )
    return CoeffBundle(
        location_customer="h1", location_phase="a", local_variable=local,
        feeder_hash="test", grid=GridSpec((0.0, 100.0), (0.85, 1.0)), k=2,
        step_minutes=10, variable_ids=ids, fitted_ids=fitted, composed=composed,
        records={timestep: rec},
    )


IDENTITY = {"vmag:h1": (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)}
ZEROS = {"vmag:h1": (0.0,) * 6}


def test_identity_bundle_returns_local_voltage():
    bundle = make_bundle(IDENTITY, ZEROS)
    m = LocalMeasurement(v_local=1.042, p_level_percent=35.0, power_factor=0.93)
    assert recover_reference_voltage(m, bundle, 0) == pytest.approx(1.042, abs=1e-15)


def test_round_trip_recovers_reference():
    rng = np.random.default_rng(12)
    for _ in range(300):
        slope = rng.uniform(-1.0, 1.0, 6)
        slope[0] = rng.uniform(0.5, 1.5)          # keep the inversion well posed
        intercept = rng.uniform(-0.5, 0.5, 6)
        intercept[0] = rng.uniform(-0.2, 0.2)
        bundle = make_bundle({"vmag:h1": tuple(slope)}, {"vmag:h1": tuple(intercept)})
        v_ref = rng.uniform(0.9, 1.1)
        p = rng.uniform(0.0, 100.0)
        pf = rng.uniform(0.85, 1.0)
        tau = float(np.tan(np.arccos(pf)))
        coeffs = slope * v_ref + intercept
        v_local = float(coeffs @ basis_vector(p, tau))
        if abs(slope @ basis_vector(p, tau)) < 1e-3 or v_local <= 0:
            continue
        m = LocalMeasurement(v_local=v_local, p_level_percent=p, power_factor=pf)
        assert recover_reference_voltage(m, bundle, 0) == pytest.approx(v_ref, abs=1e-10)


def test_singular_denominator_raises():
    bundle = make_bundle(ZEROS, ZEROS)
    m = LocalMeasurement(v_local=1.0, p_level_percent=0.0, power_factor=1.0)
    with pytest.raises(SingularInversionError):
        recover_reference_voltage(m, bundle, 0)


def test_measurement_validation():
    with pytest.raises(EstimatorError):
        LocalMeasurement(v_local=-1.0, p_level_percent=0.0, power_factor=0.95)
    with pytest.raises(EstimatorError):
        LocalMeasurement(v_local=1.0, p_level_percent=130.0, power_factor=0.95)
    with pytest.raises(EstimatorError):
        LocalMeasurement(v_local=1.0, p_level_percent=10.0, power_factor=0.5)


def test_surface_point_evaluations():
    b = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert surface_value(b, 57.0, 0.3) == 1.0
    d_p, d_tau = surface_partials(b, 57.0, 0.3)
    assert d_p == 0.0 and d_tau == 0.0
    # all-ones coefficients, both basis variables at 1.0
    b = (1.0,) * 6
    assert surface_value(b, 100.0, 1.0) == pytest.approx(6.0, abs=1e-12)
    d_p, d_tau = surface_partials(b, 100.0, 1.0)
    assert d_p == pytest.approx(4.0 / 100.0, abs=1e-12)    # per percent
    assert d_tau == pytest.approx(4.0, abs=1e-12)


def test_estimate_against_separate_variable():
    slope = {"vmag:h1": IDENTITY["vmag:h1"], "p_loss": (0.0,) * 6}
    intercept = {"vmag:h1": ZEROS["vmag:h1"], "p_loss": (0.4, 0.1, 0.0, -0.05, 0.0, 0.2)}
    bundle = make_bundle(slope, intercept)
    m = LocalMeasurement(v_local=1.0, p_level_percent=40.0, power_factor=0.9)
    est = estimate(m, bundle, 0, "p_loss")
    expected = surface_value(intercept["p_loss"], 40.0, m.tau)
    assert est.magnitude == pytest.approx(expected, abs=1e-14)
    assert est.coefficients == pytest.approx(intercept["p_loss"])


def test_sensitivities_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(200):
        b = rng.uniform(-2.0, 2.0, 6)
        p = rng.uniform(1.0, 99.0)
        tau = rng.uniform(0.01, 0.6)
        d_p, d_tau = surface_partials(b, p, tau)
        h = 1e-3
        fd_p = (surface_value(b, p + h, tau) - surface_value(b, p - h, tau)) / (2 * h)
        fd_tau = (surface_value(b, p, tau + h) - surface_value(b, p, tau - h)) / (2 * h)
        assert d_p == pytest.approx(fd_p, rel=1e-9, abs=1e-12)
        assert d_tau == pytest.approx(fd_tau, rel=1e-9, abs=1e-12)


def test_estimate_unknown_variable_and_timestep():
    bundle = make_bundle(IDENTITY, ZEROS)
    m = LocalMeasurement(v_local=1.0, p_level_percent=0.0, power_factor=1.0)
    with pytest.raises(BundleError, match="unknown variable"):
        estimate(m, bundle, 0, "vmag:nope")
    with pytest.raises(BundleError, match="timestep"):
        estimate(m, bundle, 7, "vmag:h1")


def test_nearest_timestep_lookup_tolerance():
    bundle = make_bundle(IDENTITY, ZEROS, timestep=10)
    assert bundle.record(12, tolerance_steps=2) is bundle.records[10]
    with pytest.raises(BundleError):
        bundle.record(13, tolerance_steps=2)


def test_estimate_all_order_and_purity():
    slope = {"vmag:h1": IDENTITY["vmag:h1"],
             "i_re:a": (0.2, 0.1, 0.0, 0.0, 0.0, 0.0),
             "i_im:a": (0.1, 0.0, 0.3, 0.0, 0.0, 0.0),
             "i_mag:a": None,
             "p_loss": (0.0, 0.5, 0.0, 0.0, 0.0, 0.0)}
    intercept = {k: (0.0,) * 6 for k in slope}
    slope = {k: v for k, v in slope.items() if v is not None}
    intercept.pop("i_mag:a")
    ids = ("vmag:h1", "i_re:a", "i_im:a", "i_mag:a", "p_loss")
    bundle = CoeffBundle(
        location_customer="h1", location_phase="a", local_variable="vmag:h1",
        feeder_hash="t", grid=GridSpec((0.0,), (1.0,)), k=2, step_minutes=10,
        variable_ids=ids, fitted_ids=tuple(slope), composed={"i_mag:a": ("i_re:a", "i_im:a")},
        records={0: BundleRecord(
            slope=np.array([slope[v] for v in slope], dtype=float),
            intercept=np.array([intercept[v] for v in slope], dtype=float),
            r_squared=np.ones((4, 6)),
        )},
    )
    m = LocalMeasurement(v_local=1.05, p_level_percent=60.0, power_factor=0.9)
    first = estimate_all(m, bundle, 0)
    assert tuple(e.variable for e in first) == ids
    second = estimate_all(m, bundle, 0)
    for a, b in zip(first, second):
        assert a == b
    # composed magnitude equals hypot of the parts and matches single estimates
    by_var = {e.variable: e for e in first}
    assert by_var["i_mag:a"].magnitude == pytest.approx(
        np.hypot(by_var["i_re:a"].magnitude, by_var["i_im:a"].magnitude), abs=1e-14)
    assert by_var["i_mag:a"].coefficients is None
    for variable in ids:
        single = estimate(m, bundle, 0, variable)
        assert single.magnitude == by_var[variable].magnitude
        assert single.d_p_level == by_var[variable].d_p_level
    vec = estimate_vector(m, bundle, 0)
    assert np.allclose(vec, [e.magnitude for e in first], atol=0.0)


def test_composed_sensitivities_match_finite_differences(bundle):
    # trained bundle from the desk feeder: the sensitivities are partials at
    # fixed instantiated coefficients, so differentiate the composed surface
    m0 = LocalMeasurement(v_local=0.99, p_level_percent=50.0, power_factor=0.95)
    est = estimate(m0, bundle, 108, "i_mag:c")
    b_re = estimate(m0, bundle, 108, "i_re:c").coefficients
    b_im = estimate(m0, bundle, 108, "i_im:c").coefficients

    def mag(p, tau):
        return np.hypot(surface_value(b_re, p, tau), surface_value(b_im, p, tau))

    h = 0.01
    fd_p = (mag(50.0 + h, m0.tau) - mag(50.0 - h, m0.tau)) / (2 * h)
    fd_tau = (mag(50.0, m0.tau + h) - mag(50.0, m0.tau - h)) / (2 * h)
    assert est.d_p_level == pytest.approx(fd_p, rel=1e-4, abs=1e-10)
    assert est.d_tau == pytest.approx(fd_tau, rel=1e-4, abs=1e-10)


def test_scaling_coefficients_scales_estimates_linearly():
    slope = {"vmag:h1": IDENTITY["vmag:h1"], "q_flow:a": (0.3, -0.2, 0.5, 0.1, 0.0, -0.4)}
    intercept = {"vmag:h1": ZEROS["vmag:h1"], "q_flow:a": (0.05, 0.0, 0.1, 0.0, 0.2, 0.0)}
    scaled = {"vmag:h1": IDENTITY["vmag:h1"],
              "q_flow:a": tuple(3.0 * v for v in slope["q_flow:a"])}
    scaled_i = {"vmag:h1": ZEROS["vmag:h1"],
                "q_flow:a": tuple(3.0 * v for v in intercept["q_flow:a"])}
    m = LocalMeasurement(v_local=1.01, p_level_percent=70.0, power_factor=0.88)
    base = estimate(m, make_bundle(slope, intercept), 0, "q_flow:a")
    tripled = estimate(m, make_bundle(scaled, scaled_i), 0, "q_flow:a")
    assert tripled.magnitude == pytest.approx(3.0 * base.magnitude, rel=1e-12)
    assert tripled.d_p_level == pytest.approx(3.0 * base.d_p_level, rel=1e-12)
    assert tripled.d_tau == pytest.approx(3.0 * base.d_tau, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    v_ref=st.floats(0.9, 1.1),
    p=st.floats(0.0, 100.0),
    pf=st.floats(0.85, 1.0),
    a1=st.floats(0.6, 1.4),
    a2=st.floats(-0.1, 0.1),
)
def test_affine_local_model_round_trips(v_ref, p, pf, a1, a2):
    slope = (a1, 0.0, 0.0, 0.0, 0.0, 0.0)
    intercept = (a2, 0.0, 0.0, 0.0, 0.0, 0.0)
    bundle = make_bundle({"vmag:h1": slope}, {"vmag:h1": intercept})
    v_local = a1 * v_ref + a2
    m = LocalMeasurement(v_local=v_local, p_level_percent=p, power_factor=pf)
    assert recover_reference_voltage(m, bundle, 0) == pytest.approx(v_ref, abs=1e-10)


def test_trained_bundle_reference_recovery(desk_feeder, scenarios, bundle):
    """Measurements taken off the reference point recover the zero-DG voltage."""
    from lvpoly.powerflow import InjectionSet, solve

    sc = scenarios[0]
    t = 108
    actual = solve(desk_feeder, InjectionSet.for_setpoint(desk_feeder, sc, t, 60.0, 0.92))
    v_local = abs(actual.customer_voltage("h12"))
    truth = solve(desk_feeder, InjectionSet.for_setpoint(desk_feeder, sc, t, 0.0, 1.0))
    v_ref_true = abs(truth.customer_voltage("h12"))
    m = LocalMeasurement(v_local=v_local, p_level_percent=60.0, power_factor=0.92)
    recovered = recover_reference_voltage(m, bundle, t)
    assert recovered == pytest.approx(v_ref_true, abs=2e-3)
