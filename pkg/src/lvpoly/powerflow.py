"""Backward/forward-sweep power flow for radial unbalanced feeders.

The solver treats every customer as a single-phase constant-PQ device.  Loads
consume power; DG units inject active power and, at an inductive power factor,
absorb reactive power (``Q_dg = -P_dg * tau``).  ``solve`` is a pure function
of its inputs: concurrent solves over a shared feeder are safe, and a batched
entry point evaluates many injection sets in one sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .feeder import PHASES, Feeder, _orient_from_source

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 100


class PowerFlowError(RuntimeError):
    """Raised on non-convergence or inconsistent solver inputs."""


@dataclass(frozen=True)
class CompiledFeeder:
    """Index arrays and per-unit impedances precomputed from a feeder."""

    feeder: Feeder
    n_bus: int
    n_branch: int
    parent: np.ndarray          # (n_branch,) bus index, BFS order
    child: np.ndarray           # (n_branch,) bus index, BFS order
    bfs_to_file: np.ndarray     # branch permutation: BFS position -> file index
    z_pu_t: np.ndarray          # (n_branch, 3, 3) transposed pu impedance, BFS order
    slack: np.ndarray           # (3,) complex pu
    cust_bus: np.ndarray        # (n_cust,)
    cust_phase: np.ndarray      # (n_cust,)
    head_branch_bfs: int        # BFS position of the first source-connected branch
    head_ampacity_a: float

    @property
    def n_cust(self) -> int:
        return self.cust_bus.shape[0]


@lru_cache(maxsize=32)
def compile_feeder(feeder: Feeder) -> CompiledFeeder:
    order, parent, child, unreachable, cycles = _orient_from_source(feeder)
    if unreachable or cycles or len(order) != len(feeder.branches):
        raise PowerFlowError("feeder is not a connected radial network")
    bus_idx = feeder.bus_index
    n_bus = len(feeder.buses)
    parent_arr = np.array([bus_idx[parent[i]] for i in order], dtype=np.intp)
    child_arr = np.array([bus_idx[child[i]] for i in order], dtype=np.intp)
    z_base = feeder.base_impedance
    z_pu_t = np.stack(
        [feeder.branches[i].z_total_ohm.T / z_base for i in order]
    ) if order else np.zeros((0, 3, 3), dtype=complex)
    cust_bus = np.array([bus_idx[c.bus] for c in feeder.customers], dtype=np.intp)
    cust_phase = np.array([PHASES.index(c.phase) for c in feeder.customers], dtype=np.intp)
    src = bus_idx[feeder.source.bus]
    head_candidates = [pos for pos, i in enumerate(order) if parent_arr[pos] == src]
    if not head_candidates:
        raise PowerFlowError("source bus has no outgoing branch")
    # head of the feeder: first source-connected branch in file order
    head = min(head_candidates, key=lambda pos: order[pos])
    return CompiledFeeder(
        feeder=feeder,
        n_bus=n_bus,
        n_branch=len(order),
        parent=parent_arr,
        child=child_arr,
        bfs_to_file=np.array(order, dtype=np.intp),
        z_pu_t=z_pu_t,
        slack=feeder.source.phasors,
        cust_bus=cust_bus,
        cust_phase=cust_phase,
        head_branch_bfs=head,
        head_ampacity_a=feeder.branches[order[head]].ampacity_a,
    )


@dataclass(frozen=True)
class InjectionSet:
    """Per-customer operating point: demand plus DG output in SI units.

    Loads are positive when consuming; DG values are positive when injecting
    (so an inductive DG unit carries a negative ``dg_kvar``).
    """

    customer_ids: tuple[str, ...]
    load_kw: np.ndarray
    load_kvar: np.ndarray
    dg_kw: np.ndarray
    dg_kvar: np.ndarray

    def __post_init__(self):
        n = len(self.customer_ids)
        for name in ("load_kw", "load_kvar", "dg_kw", "dg_kvar"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise PowerFlowError(f"{name} must have one entry per customer")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zero(cls, feeder: Feeder) -> "InjectionSet":
        z = np.zeros(len(feeder.customers))
        return cls(feeder.customer_ids, z, z, z, z)

    @classmethod
    def from_kw(cls, feeder: Feeder, loads: dict, dg: dict | None = None) -> "InjectionSet":
        """Build from ``{customer_id: (p_kw, q_kvar)}`` mappings."""
        index = feeder.customer_index
        n = len(feeder.customers)
        out = {k: np.zeros(n) for k in ("load_kw", "load_kvar", "dg_kw", "dg_kvar")}
        for cid, (p, q) in loads.items():
            if cid not in index:
                raise PowerFlowError(f"injection on nonexistent customer '{cid}'")
            out["load_kw"][index[cid]] = p
            out["load_kvar"][index[cid]] = q
        for cid, (p, q) in (dg or {}).items():
            if cid not in index:
                raise PowerFlowError(f"injection on nonexistent customer '{cid}'")
            out["dg_kw"][index[cid]] = p
            out["dg_kvar"][index[cid]] = q
        return cls(feeder.customer_ids, **out)

    @classmethod
    def for_setpoint(cls, feeder: Feeder, scenario, timestep: int,
                     p_level_percent: float = 0.0, power_factor: float = 1.0) -> "InjectionSet":
        """Demand from a scenario timestep plus a uniform DG setpoint."""
        if tuple(scenario.customer_ids) != feeder.customer_ids:
            raise PowerFlowError("scenario does not cover this feeder's customers")
        tau = reactive_ratio(power_factor)
        ratings = np.array([c.dg.rating_kw if c.dg else 0.0 for c in feeder.customers])
        dg_kw = ratings * p_level_percent / 100.0
        return cls(
            feeder.customer_ids,
            load_kw=scenario.p_kw[:, timestep],
            load_kvar=scenario.q_kvar[:, timestep],
            dg_kw=dg_kw,
            dg_kvar=-dg_kw * tau,
        )

    def net_consumption_pu(self, feeder: Feeder) -> np.ndarray:
        """Net complex consumption per customer on the single-phase base."""
        s_kva = (self.load_kw - self.dg_kw) + 1j * (self.load_kvar - self.dg_kvar)
        return s_kva / feeder.base_power_1ph


def reactive_ratio(power_factor: float) -> float:
    """Q/P magnitude ratio for an inductive power factor."""
    if not (0.0 < power_factor <= 1.0):
        raise ValueError(f"power factor must lie in (0, 1], got {power_factor}")
    return float(np.tan(np.arccos(power_factor)))


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged operating point in per-unit plus SI totals."""

    feeder: Feeder
    bus_voltages: np.ndarray      # (n_bus, 3) complex pu
    branch_currents: np.ndarray   # (n_branch, 3) complex pu, feeder branch order
    total_loss_kw: float
    total_loss_kvar: float
    slack_power_kva: complex
    iterations: int
    max_mismatch: float

    def voltage(self, bus: str) -> np.ndarray:
        return self.bus_voltages[self.feeder.bus_index[bus]]

    def customer_voltage(self, customer_id: str) -> complex:
        c = self.feeder.customer(customer_id)
        return self.bus_voltages[self.feeder.bus_index[c.bus], PHASES.index(c.phase)]


def _sweep_batch(cf: CompiledFeeder, s_pu: np.ndarray, tolerance: float, max_iter: int):
    """Core fixed-point iteration over a batch of injection vectors.

    ``s_pu`` has shape (batch, n_cust) and holds net complex consumption per
    customer.  Returns ``(V, J, mismatch, iterations)`` with BFS branch order.
    The internal stopping threshold is tightened by the customer count so the
    feeder-wide power balance stays within a few multiples of ``tolerance``.
    """
    batch = s_pu.shape[0]
    nb, nbr, nc = cf.n_bus, cf.n_branch, cf.n_cust
    # bus-major layout keeps every per-branch slice contiguous
    V = np.broadcast_to(cf.slack, (nb, batch, 3)).copy()
    J = np.zeros((nbr, batch, 3), dtype=complex)
    acc = np.zeros((nb, batch, 3), dtype=complex)
    s_cust = np.ascontiguousarray(s_pu.T)               # (nc, batch)
    tol_eff = tolerance / max(1, nc)
    parent, child = cf.parent, cf.child
    mismatch = np.zeros(batch)
    for iteration in range(1, max_iter + 1):
        acc[:] = 0.0
        if nc:
            v_cust = V[cf.cust_bus, :, cf.cust_phase]   # (nc, batch)
            i_cust = np.conj(s_cust / v_cust)
            for j in range(nc):
                acc[cf.cust_bus[j], :, cf.cust_phase[j]] += i_cust[j]
        else:
            i_cust = np.zeros((0, batch), dtype=complex)
        for b in range(nbr - 1, -1, -1):
            J[b] = acc[child[b]]
            acc[parent[b]] += J[b]
        for b in range(nbr):
            # expanded z @ J with a fixed evaluation order so results do not
            # depend on the batch size (BLAS kernels vary with shape)
            zt = cf.z_pu_t[b]
            Jb = J[b]
            drop = Jb[:, 0, None] * zt[0] + Jb[:, 1, None] * zt[1] + Jb[:, 2, None] * zt[2]
            np.subtract(V[parent[b]], drop, out=V[child[b]])
        if nc:
            residual = np.abs(s_cust - V[cf.cust_bus, :, cf.cust_phase] * np.conj(i_cust))
            mismatch = residual.max(axis=0)
        if mismatch.max(initial=0.0) <= tol_eff:
            return V.transpose(1, 0, 2), J.transpose(1, 0, 2), mismatch, iteration
    raise PowerFlowError(
        f"power flow did not converge after {max_iter} iterations "
        f"(max mismatch {mismatch.max(initial=0.0):.3e} pu)"
    )


def _solution_from_arrays(cf: CompiledFeeder, V: np.ndarray, J: np.ndarray,
                          mismatch: float, iterations: int) -> PowerFlowSolution:
    feeder = cf.feeder
    dv = V[cf.parent] - V[cf.child]
    s_loss = np.sum(dv * np.conj(J)) if cf.n_branch else 0.0j
    src = feeder.bus_index[feeder.source.bus]
    head_mask = cf.parent == src
    s_slack = np.sum(V[src] * np.conj(J[head_mask])) if cf.n_branch else 0.0j
    currents = np.zeros_like(J)
    currents[cf.bfs_to_file] = J
    s1 = feeder.base_power_1ph
    return PowerFlowSolution(
        feeder=feeder,
        bus_voltages=V,
        branch_currents=currents,
        total_loss_kw=float(s_loss.real * s1),
        total_loss_kvar=float(s_loss.imag * s1),
        slack_power_kva=complex(s_slack * s1),
        iterations=iterations,
        max_mismatch=float(mismatch),
    )


def solve(feeder: Feeder, injections: InjectionSet,
          tolerance: float = DEFAULT_TOLERANCE, max_iter: int = DEFAULT_MAX_ITER) -> PowerFlowSolution:
    """Solve one operating point; mismatch at every node ends <= tolerance."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if tuple(injections.customer_ids) != feeder.customer_ids:
        raise PowerFlowError("injection set does not match this feeder's customers")
    cf = compile_feeder(feeder)
    s_pu = injections.net_consumption_pu(feeder)[np.newaxis, :]
    V, J, mismatch, iterations = _sweep_batch(cf, s_pu.astype(complex), tolerance, max_iter)
    return _solution_from_arrays(cf, V[0], J[0], mismatch[0], iterations)


def solve_batch(feeder: Feeder, injection_sets, tolerance: float = DEFAULT_TOLERANCE,
                max_iter: int = DEFAULT_MAX_ITER) -> list[PowerFlowSolution]:
    """Solve many operating points in one vectorized sweep."""
    cf = compile_feeder(feeder)
    s_pu = np.stack([inj.net_consumption_pu(feeder) for inj in injection_sets]).astype(complex)
    for inj in injection_sets:
        if tuple(inj.customer_ids) != feeder.customer_ids:
            raise PowerFlowError("injection set does not match this feeder's customers")
    V, J, mismatch, iterations = _sweep_batch(cf, s_pu, tolerance, max_iter)
    return [
        _solution_from_arrays(cf, V[i], J[i], mismatch[i], iterations)
        for i in range(len(injection_sets))
    ]
