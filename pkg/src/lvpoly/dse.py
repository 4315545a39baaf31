"""Decentralized weighted-least-squares state estimation benchmark.

The estimator sees exactly what a DG unit sees (its own connection-point
voltage and injection) plus statistical pseudo-measurements standing in for
every customer's demand; bus phases without customers contribute exact
zero-injection constraints, which restores observability on a radial feeder
with a fixed slack.  States are polar nodal voltages per phase; the weighted
residual is minimized by Gauss-Newton with step halving.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .demand import DemandPool
from .feeder import PHASES, Feeder
from .powerflow import compile_feeder
from .variables import VariableSet, extract_arrays, tracked_variables

SIGMA_FLOOR_PU = 1e-6
MAX_HALVINGS = 20

PSEUDO_KINDS = ("pseudo_p_demand", "pseudo_q_demand")


class DseError(RuntimeError):
    """Raised for inconsistent measurement sets or singular systems."""


class DseNonConvergence(DseError):
    """Gauss-Newton failed to converge; carries the last objective value."""

    def __init__(self, message: str, objective: float):
        super().__init__(message)
        self.objective = objective


@dataclass(frozen=True)
class Measurement:
    """One measurement: a kind tag, the targeted customer, value and sigma.

    Powers are in kW/kvar (demand positive for pseudo kinds, injection positive
    for local kinds); voltages in per-unit.
    """

    kind: str
    customer: str
    value: float
    sigma: float


@dataclass(frozen=True)
class LocalInjection:
    """Error-free local observations of one DG unit."""

    customer: str
    v_local: float
    p_dg_kw: float
    q_dg_kvar: float


@dataclass(frozen=True)
class StateVector:
    """Polar nodal voltages per bus and phase; slack entries pinned."""

    v_mag: np.ndarray     # (n_bus, 3) pu
    v_angle: np.ndarray   # (n_bus, 3) rad

    @property
    def complex_voltages(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_angle)


@dataclass(frozen=True)
class DseResult:
    state: StateVector
    variables: dict[str, float]
    iterations: int
    objective: float
    objective_history: tuple[float, ...]
    converged: bool


def build_pseudo_measurements(pool: DemandPool, feeder: Feeder, timestep: int) -> list[Measurement]:
    """Per-customer demand pseudo-measurements from pool statistics.

    Degenerate pools (zero spread) receive the sigma floor so the weighted
    formulation stays finite.
    """
    if not (0 <= timestep < pool.n_steps):
        raise DseError(f"pool has no statistics for timestep {timestep}")
    stats = pool.statistics(timestep)
    floor_kw = SIGMA_FLOOR_PU * feeder.base_power_1ph
    out = []
    for c in feeder.customers:
        out.append(Measurement("pseudo_p_demand", c.id, stats.mean_kw,
                               max(stats.std_kw, floor_kw)))
        out.append(Measurement("pseudo_q_demand", c.id, stats.mean_kvar,
                               max(stats.std_kvar, floor_kw)))
    return out


@lru_cache(maxsize=32)
def _admittance(feeder: Feeder) -> np.ndarray:
    """Dense nodal admittance over all (bus, phase) nodes, per-unit."""
    cf = compile_feeder(feeder)
    n = cf.n_bus * 3
    Y = np.zeros((n, n), dtype=complex)
    for b in range(cf.n_branch):
        yb = np.linalg.inv(cf.z_pu_t[b].T)
        f, t = cf.parent[b] * 3, cf.child[b] * 3
        Y[f:f + 3, f:f + 3] += yb
        Y[t:t + 3, t:t + 3] += yb
        Y[f:f + 3, t:t + 3] -= yb
        Y[t:t + 3, f:f + 3] -= yb
    return Y


def _injection_and_jacobian(Y, v_mag, v_angle):
    """Complex nodal injections and their partials w.r.t. angles/magnitudes."""
    vc = v_mag * np.exp(1j * v_angle)
    i_inj = Y @ vc
    s = vc * np.conj(i_inj)
    M = vc[:, None] * np.conj(Y * vc[None, :])
    ds_dtheta = 1j * (np.diag(vc * np.conj(i_inj)) - M)
    ds_dvm = np.diag(np.conj(i_inj) * np.exp(1j * v_angle)) + M / v_mag[None, :]
    return s, ds_dtheta, ds_dvm


def _node_of(feeder: Feeder, customer_id: str) -> int:
    c = feeder.customer(customer_id)
    return feeder.bus_index[c.bus] * 3 + PHASES.index(c.phase)


def _aggregate_measurements(feeder: Feeder, local: LocalInjection, pseudos,
                            dg_injections=None) -> tuple:
    """Collapse customer-level measurements into per-node injection targets.

    ``dg_injections`` holds exactly known remote DG outputs per customer id as
    (p_kw, q_kvar) injections; with a fleet-wide uniform generation level these
    follow from static unit ratings and the unit's own setpoint.
    """
    n = len(feeder.buses) * 3
    p = np.zeros(n)
    q = np.zeros(n)
    var_p = np.zeros(n)
    var_q = np.zeros(n)
    s1 = feeder.base_power_1ph
    known = set(feeder.customer_index)
    for m in pseudos:
        if m.customer not in known:
            raise DseError(f"measurement targets unknown customer '{m.customer}'")
        node = _node_of(feeder, m.customer)
        if m.kind == "pseudo_p_demand":
            p[node] -= m.value / s1
            var_p[node] += (m.sigma / s1) ** 2
        elif m.kind == "pseudo_q_demand":
            q[node] -= m.value / s1
            var_q[node] += (m.sigma / s1) ** 2
        else:
            raise DseError(f"unsupported measurement kind '{m.kind}'")
    for cid, (p_kw, q_kvar) in (dg_injections or {}).items():
        if cid == local.customer:
            raise DseError("the local unit's own output belongs in the local measurement")
        if cid not in known:
            raise DseError(f"measurement targets unknown customer '{cid}'")
        node = _node_of(feeder, cid)
        p[node] += p_kw / s1
        q[node] += q_kvar / s1
    node = _node_of(feeder, local.customer)
    p[node] += local.p_dg_kw / s1
    q[node] += local.q_dg_kvar / s1
    sig_p = np.maximum(np.sqrt(var_p), SIGMA_FLOOR_PU)
    sig_q = np.maximum(np.sqrt(var_q), SIGMA_FLOOR_PU)
    return p, q, sig_p, sig_q


def run_dse(feeder: Feeder, local: LocalInjection, pseudos,
            dg_injections=None, tolerance: float = 1e-8, max_iter: int = 40,
            variables: VariableSet | None = None) -> DseResult:
    """Gauss-Newton weighted LSE of the feeder state from local + pseudo data.

    Returns the estimated state plus the derived tracked variables.  The
    objective value is always reported; an exhausted iteration budget raises
    ``DseNonConvergence`` rather than returning silently.
    """
    cf = compile_feeder(feeder)
    Y = _admittance(feeder)
    n_bus = cf.n_bus
    n = n_bus * 3
    src = feeder.bus_index[feeder.source.bus]
    slack_nodes = np.array([src * 3 + p for p in range(3)])
    free = np.setdiff1d(np.arange(n), slack_nodes)

    p_z, q_z, sig_p, sig_q = _aggregate_measurements(feeder, local, pseudos, dg_injections)
    local_node = _node_of(feeder, local.customer)
    z = np.concatenate([[local.v_local], p_z[free], q_z[free]])
    sigma = np.concatenate([[SIGMA_FLOOR_PU], sig_p[free], sig_q[free]])

    slack_phasors = cf.slack
    v_mag = np.tile(np.abs(slack_phasors), n_bus).astype(float)
    v_angle = np.tile(np.angle(slack_phasors), n_bus).astype(float)

    def model(vm, va):
        s, ds_dt, ds_dv = _injection_and_jacobian(Y, vm, va)
        h = np.concatenate([[vm[local_node]], s.real[free], s.imag[free]])
        n_meas = 1 + 2 * free.size
        H = np.zeros((n_meas, 2 * free.size))
        v_row = np.zeros(n)
        v_row[local_node] = 1.0
        H[0, free.size:] = v_row[free]
        H[1:1 + free.size, :free.size] = ds_dt.real[np.ix_(free, free)]
        H[1:1 + free.size, free.size:] = ds_dv.real[np.ix_(free, free)]
        H[1 + free.size:, :free.size] = ds_dt.imag[np.ix_(free, free)]
        H[1 + free.size:, free.size:] = ds_dv.imag[np.ix_(free, free)]
        return h, H

    def objective_of(vm, va):
        s, _, _ = _injection_and_jacobian(Y, vm, va)
        h = np.concatenate([[vm[local_node]], s.real[free], s.imag[free]])
        return float((((z - h) / sigma) ** 2).sum())

    history = []
    objective = objective_of(v_mag, v_angle)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        h, H = model(v_mag, v_angle)
        residual = (z - h) / sigma
        H_w = H / sigma[:, None]
        dx, *_ = np.linalg.lstsq(H_w, residual, rcond=None)
        if not np.all(np.isfinite(dx)):
            raise DseError("singular gain matrix in Gauss-Newton step")
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            va_new = v_angle.copy()
            vm_new = v_mag.copy()
            va_new[free] += step * dx[:free.size]
            vm_new[free] += step * dx[free.size:]
            if np.all(vm_new > 0):
                new_objective = objective_of(vm_new, va_new)
                if new_objective <= objective + 1e-12:
                    break
            step /= 2.0
        else:
            raise DseNonConvergence(
                f"step halving exhausted at iteration {iterations} "
                f"(objective {objective:.6e})", objective)
        v_mag, v_angle = vm_new, va_new
        objective = new_objective
        history.append(objective)
        if float(np.abs(step * dx).max(initial=0.0)) < tolerance:
            converged = True
            break
    if not converged:
        raise DseNonConvergence(
            f"no convergence after {max_iter} iterations (objective {objective:.6e})",
            objective)

    state = StateVector(v_mag=v_mag.reshape(n_bus, 3), v_angle=v_angle.reshape(n_bus, 3))
    variables = variables or tracked_variables(feeder)
    V = state.complex_voltages
    J = np.empty((cf.n_branch, 3), dtype=complex)
    for b in range(cf.n_branch):
        yb = np.linalg.inv(cf.z_pu_t[b].T)
        J[b] = yb @ (V[cf.parent[b]] - V[cf.child[b]])
    values = extract_arrays(cf, variables, V, J)
    return DseResult(
        state=state,
        variables=dict(zip(variables.ids, values.tolist())),
        iterations=iterations,
        objective=objective,
        objective_history=tuple(history),
        converged=True,
    )
