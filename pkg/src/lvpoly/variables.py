"""Registry and extraction of the network variables tracked by the toolkit.

Default set: every customer's connection-point voltage magnitude, the per-phase
active/reactive power and current (real part, imaginary part, magnitude) at the
head of the feeder, and total active losses.  Reporting bases: voltages on the
nominal voltage base, currents on the head-branch ampacity, powers and losses
on the feeder power base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feeder import PHASES, Feeder
from .powerflow import CompiledFeeder, PowerFlowSolution, compile_feeder


@dataclass(frozen=True)
class VariableSet:
    """Ordered variable ids; ``composed`` maps magnitude ids to (re, im) parts."""

    ids: tuple[str, ...]
    fitted: tuple[str, ...]
    composed: dict[str, tuple[str, str]]

    def index(self, variable: str) -> int:
        return self.ids.index(variable)

    @property
    def fitted_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.fitted)}


def variable_class(variable: str) -> str:
    """Coarse reporting class (``vmag``, ``p_flow``, ``i_re``, ...)."""
    return variable.split(":", 1)[0]


def tracked_variables(feeder: Feeder, include_voltages: bool = True,
                      include_head_flows: bool = True, include_losses: bool = True) -> VariableSet:
    ids: list[str] = []
    fitted: list[str] = []
    composed: dict[str, tuple[str, str]] = {}
    if include_voltages:
        for c in feeder.customers:
            ids.append(f"vmag:{c.id}")
            fitted.append(f"vmag:{c.id}")
    if include_head_flows:
        for ph in PHASES:
            for prefix in ("p_flow", "q_flow", "i_re", "i_im"):
                ids.append(f"{prefix}:{ph}")
                fitted.append(f"{prefix}:{ph}")
            ids.append(f"i_mag:{ph}")
            composed[f"i_mag:{ph}"] = (f"i_re:{ph}", f"i_im:{ph}")
    if include_losses:
        ids.append("p_loss")
        fitted.append("p_loss")
    return VariableSet(ids=tuple(ids), fitted=tuple(fitted), composed=composed)


def extract_arrays(cf: CompiledFeeder, variables: VariableSet,
                   V: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Evaluate all tracked variables from batched solver arrays.

    ``V`` is (..., n_bus, 3) complex pu and ``J`` (..., n_branch, 3) complex pu
    in BFS branch order; the result is (..., n_ids) in reporting per-unit.
    """
    feeder = cf.feeder
    src = feeder.bus_index[feeder.source.bus]
    head = cf.head_branch_bfs
    i_scale = feeder.base_current / cf.head_ampacity_a
    out = np.empty(V.shape[:-2] + (len(variables.ids),))
    col = {v: i for i, v in enumerate(variables.ids)}
    for c in feeder.customers:
        key = f"vmag:{c.id}"
        if key in col:
            out[..., col[key]] = np.abs(V[..., feeder.bus_index[c.bus], PHASES.index(c.phase)])
    if any(v.startswith(("p_flow", "q_flow", "i_re", "i_im", "i_mag")) for v in variables.ids):
        s_head = V[..., src, :] * np.conj(J[..., head, :])   # pu on single-phase base
        i_head = J[..., head, :] * i_scale
        for p, ph in enumerate(PHASES):
            if f"p_flow:{ph}" in col:
                out[..., col[f"p_flow:{ph}"]] = s_head[..., p].real / 3.0
            if f"q_flow:{ph}" in col:
                out[..., col[f"q_flow:{ph}"]] = s_head[..., p].imag / 3.0
            if f"i_re:{ph}" in col:
                out[..., col[f"i_re:{ph}"]] = i_head[..., p].real
            if f"i_im:{ph}" in col:
                out[..., col[f"i_im:{ph}"]] = i_head[..., p].imag
            if f"i_mag:{ph}" in col:
                out[..., col[f"i_mag:{ph}"]] = np.abs(i_head[..., p])
    if "p_loss" in col:
        dv = V[..., cf.parent, :] - V[..., cf.child, :]
        loss = np.sum((dv * np.conj(J)).real, axis=(-2, -1))
        out[..., col["p_loss"]] = loss / 3.0
    return out


def extract_from_solution(solution: PowerFlowSolution, variables: VariableSet) -> dict[str, float]:
    cf = compile_feeder(solution.feeder)
    J = solution.branch_currents[cf.bfs_to_file]
    vals = extract_arrays(cf, variables, solution.bus_voltages, J)
    return dict(zip(variables.ids, vals.tolist()))
