"""Six-term quadratic setpoint surface shared by the trainer and estimator.

A tracked variable X is modelled as

    X = b1 + b2*p + b3*tau + b4*p^2 + b5*p*tau + b6*tau^2

where ``p`` is the generation level as a fraction of rated output (interfaces
use percent; the fraction keeps the regression well conditioned) and ``tau``
the DG reactive-to-active power ratio derived from the power factor.
"""

from __future__ import annotations

import numpy as np

N_TERMS = 6


def basis_matrix(p_fraction: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Stack the regressor columns [1, p, tau, p^2, p*tau, tau^2]."""
    p = np.asarray(p_fraction, dtype=float)
    t = np.asarray(tau, dtype=float)
    return np.stack([np.ones_like(p), p, t, p * p, p * t, t * t], axis=-1)


def basis_vector(p_level_percent: float, tau: float) -> np.ndarray:
    return basis_matrix(np.asarray(p_level_percent) / 100.0, np.asarray(tau))


def surface_value(coeffs, p_level_percent: float, tau: float):
    """Evaluate the surface at a setpoint (supports stacked coefficient rows)."""
    b = np.asarray(coeffs, dtype=float)
    return b @ basis_vector(p_level_percent, tau)


def surface_partials(coeffs, p_level_percent: float, tau: float):
    """Analytic partial derivatives (per percent of generation level, per tau).

    The derivative in the fraction variable is ``b2 + 2*b4*p + b5*tau``; it is
    scaled by 1/100 so callers reason in the percent units of the interface.
    """
    b = np.asarray(coeffs, dtype=float)
    p = p_level_percent / 100.0
    d_p = (b[..., 1] + 2.0 * b[..., 3] * p + b[..., 4] * tau) / 100.0
    d_tau = b[..., 2] + b[..., 4] * p + 2.0 * b[..., 5] * tau
    return d_p, d_tau


def compose_magnitude(re_value, im_value, re_partials=None, im_partials=None):
    """Magnitude (and optionally its partials) from real/imaginary components.

    With partials given, applies the chain rule d|z| = (re*d_re + im*d_im)/|z|;
    the gradient is reported as zero at the origin.
    """
    mag = np.hypot(re_value, im_value)
    if re_partials is None:
        return mag
    safe = np.where(mag > 1e-12, mag, 1.0)
    parts = tuple(
        np.where(mag > 1e-12, (re_value * d_re + im_value * d_im) / safe, 0.0)
        for d_re, d_im in zip(re_partials, im_partials)
    )
    return mag, parts
