"""Radial unbalanced LV feeder model: network data, validation and file I/O.

A feeder is described by a YAML document with four sections (``base``/``buses``/
``source``/``branches``/``customers``); see the repository README for the exact
schema.  Branch impedances may be given as 4x4 matrices (three phases plus a
multi-grounded neutral), in which case the neutral is eliminated at parse time
and only the reduced 3x3 phase-frame matrix is kept.

All objects in this module are immutable after construction and safe to share
across concurrent workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

PHASES = ("a", "b", "c")

DEFAULT_DG_RATING_BOUNDS = (1.0, 4.0)


class FeederFormatError(ValueError):
    """Raised when a feeder document cannot be parsed into a valid feeder."""


Matrix = tuple[tuple[float, ...], ...]


def _as_matrix(raw, name: str) -> Matrix:
    try:
        rows = [tuple(float(v) for v in row) for row in raw]
    except (TypeError, ValueError) as exc:
        raise FeederFormatError(f"{name}: expected a matrix of numbers") from exc
    size = len(rows)
    if size not in (3, 4) or any(len(row) != size for row in rows):
        raise FeederFormatError(f"{name}: expected a 3x3 or 4x4 matrix")
    return tuple(rows)


def kron_reduce(z: np.ndarray) -> np.ndarray:
    """Eliminate the 4th (neutral) conductor of a 4x4 impedance matrix.

    Assumes a multi-grounded neutral so that the neutral voltage is zero at
    both branch ends.
    """
    if z.shape != (4, 4):
        raise ValueError("kron_reduce expects a 4x4 matrix")
    zpp = z[:3, :3]
    zpn = z[:3, 3:4]
    znp = z[3:4, :3]
    znn = z[3, 3]
    if abs(znn) < 1e-12:
        raise FeederFormatError("neutral self-impedance must be non-zero for reduction")
    return zpp - (zpn @ znp) / znn


@dataclass(frozen=True)
class DGUnit:
    """A single-phase constant-PQ generation unit attached to one customer."""

    rating_kw: float


@dataclass(frozen=True)
class Customer:
    id: str
    bus: str
    phase: str
    dg: DGUnit | None = None


@dataclass(frozen=True)
class Branch:
    """A line section with a 3x3 phase-frame impedance matrix.

    ``r_ohm_per_km``/``x_ohm_per_km`` hold the matrix exactly as stored in the
    feeder file (after neutral reduction when a 4x4 matrix was supplied);
    ``z_matrix`` exposes the complex impedance per metre.
    """

    from_bus: str
    to_bus: str
    length_m: float
    r_ohm_per_km: Matrix
    x_ohm_per_km: Matrix
    ampacity_a: float

    @property
    def z_matrix(self) -> np.ndarray:
        """Complex 3x3 impedance per unit length (ohm/m)."""
        return (np.asarray(self.r_ohm_per_km) + 1j * np.asarray(self.x_ohm_per_km)) / 1000.0

    @property
    def z_total_ohm(self) -> np.ndarray:
        return self.z_matrix * self.length_m


@dataclass(frozen=True)
class SourceSpec:
    bus: str
    voltage_pu: tuple[float, float, float]
    angle_deg: tuple[float, float, float]

    @property
    def phasors(self) -> np.ndarray:
        mags = np.asarray(self.voltage_pu)
        angs = np.deg2rad(np.asarray(self.angle_deg))
        return mags * np.exp(1j * angs)


@dataclass(frozen=True)
class Feeder:
    """A radial three-phase feeder with customers and optional DG units.

    Per-unit bases: ``base_voltage`` is the nominal line-to-neutral voltage in
    volts, ``base_power`` the three-phase feeder base in kVA.  The single-phase
    power base used by the solver is ``base_power / 3``.
    """

    buses: tuple[str, ...]
    source: SourceSpec
    branches: tuple[Branch, ...]
    customers: tuple[Customer, ...]
    base_voltage: float
    base_power: float

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @cached_property
    def customer_index(self) -> dict[str, int]:
        return {c.id: i for i, c in enumerate(self.customers)}

    @property
    def customer_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.customers)

    def customer(self, customer_id: str) -> Customer:
        return self.customers[self.customer_index[customer_id]]

    @property
    def dg_customers(self) -> tuple[Customer, ...]:
        return tuple(c for c in self.customers if c.dg is not None)

    @property
    def base_power_1ph(self) -> float:
        """Single-phase power base in kVA."""
        return self.base_power / 3.0

    @property
    def base_current(self) -> float:
        """Per-phase current base in amperes."""
        return self.base_power_1ph * 1000.0 / self.base_voltage

    @property
    def base_impedance(self) -> float:
        """Per-phase impedance base in ohms."""
        return self.base_voltage / self.base_current

    @cached_property
    def content_hash(self) -> str:
        return hashlib.sha256(serialize_feeder(self).encode()).hexdigest()


def _orient_from_source(feeder: Feeder):
    """BFS orientation of branches away from the source.

    Returns ``(order, parent, child, unreachable, cycle_edges)`` where ``order``
    lists branch indices parent-before-child; branches that would close a loop
    end up in ``cycle_edges`` and disconnected buses in ``unreachable``.
    """
    adjacency: dict[str, list[tuple[str, int]]] = {b: [] for b in feeder.buses}
    for idx, br in enumerate(feeder.branches):
        if br.from_bus in adjacency and br.to_bus in adjacency:
            adjacency[br.from_bus].append((br.to_bus, idx))
            adjacency[br.to_bus].append((br.from_bus, idx))
    order: list[int] = []
    parent: dict[int, str] = {}
    child: dict[int, str] = {}
    visited = {feeder.source.bus} if feeder.source.bus in adjacency else set()
    used: set[int] = set()
    queue = [feeder.source.bus] if feeder.source.bus in adjacency else []
    cycle_edges: list[int] = []
    while queue:
        bus = queue.pop(0)
        for other, idx in adjacency[bus]:
            if idx in used:
                continue
            used.add(idx)
            if other in visited:
                cycle_edges.append(idx)
                continue
            visited.add(other)
            order.append(idx)
            parent[idx] = bus
            child[idx] = other
            queue.append(other)
    unreachable = [b for b in feeder.buses if b not in visited]
    return order, parent, child, unreachable, cycle_edges


def validate_radial(feeder: Feeder, dg_rating_bounds=DEFAULT_DG_RATING_BOUNDS) -> list[str]:
    """Check every structural invariant of a feeder.

    Returns one entry per violation (empty list when the feeder is valid);
    entries start with a short kind token such as ``cycle`` or ``unreachable``.
    Pure: the same feeder always yields the same report.
    """
    report: list[str] = []
    seen_buses = set()
    for b in feeder.buses:
        if b in seen_buses:
            report.append(f"duplicate id: bus '{b}' listed more than once")
        seen_buses.add(b)
    if feeder.source.bus not in seen_buses:
        report.append(f"unknown bus: source bus '{feeder.source.bus}' not in bus list")
    seen_customers = set()
    for c in feeder.customers:
        if c.id in seen_customers:
            report.append(f"duplicate id: customer '{c.id}'")
        seen_customers.add(c.id)
        if c.bus not in seen_buses:
            report.append(f"unknown bus: customer '{c.id}' references bus '{c.bus}'")
        if c.phase not in PHASES:
            report.append(f"bad phase: customer '{c.id}' phase '{c.phase}' not in {PHASES}")
        if c.dg is not None:
            lo, hi = dg_rating_bounds
            if not (lo <= c.dg.rating_kw <= hi):
                report.append(
                    f"dg rating: customer '{c.id}' rating {c.dg.rating_kw} kW outside [{lo}, {hi}]"
                )
    for br in feeder.branches:
        tag = f"branch {br.from_bus}->{br.to_bus}"
        for end in (br.from_bus, br.to_bus):
            if end not in seen_buses:
                report.append(f"unknown bus: {tag} references bus '{end}'")
        if br.length_m <= 0:
            report.append(f"bad length: {tag} length {br.length_m} m must be > 0")
        if br.ampacity_a <= 0:
            report.append(f"bad ampacity: {tag} ampacity {br.ampacity_a} A must be > 0")
        r = np.asarray(br.r_ohm_per_km)
        x = np.asarray(br.x_ohm_per_km)
        if not (np.allclose(r, r.T, atol=1e-12) and np.allclose(x, x.T, atol=1e-12)):
            report.append(f"impedance: {tag} matrix is not symmetric")
        if np.any(np.diag(r) <= 0):
            report.append(f"impedance: {tag} diagonal resistance must be positive")
    n_b, n_n = len(feeder.branches), len(seen_buses)
    if n_b > n_n - 1:
        report.append(f"cycle: {n_b} branches for {n_n} buses (a tree has {n_n - 1})")
    _, _, _, unreachable, cycle_edges = _orient_from_source(feeder)
    for idx in cycle_edges:
        br = feeder.branches[idx]
        report.append(f"cycle: branch {br.from_bus}->{br.to_bus} closes a loop")
    for bus in unreachable:
        report.append(f"unreachable: bus '{bus}' is not connected to the source")
    return report


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------


def _require(mapping, key, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise FeederFormatError(f"missing field '{key}' in {where}")
    return mapping[key]


def _triple(raw, where) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise FeederFormatError(f"{where}: expected three numbers") from exc
    if len(vals) != 3:
        raise FeederFormatError(f"{where}: expected exactly three values")
    return vals


def parse_feeder(text: str) -> Feeder:
    """Parse a feeder document; raises ``FeederFormatError`` on any defect.

    Syntax errors report the offending line; semantic problems (unknown bus
    references, duplicate ids, loops, ...) are collected via ``validate_radial``
    and reported together.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}" if mark is not None else ""
        raise FeederFormatError(f"syntax error{loc}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FeederFormatError("feeder document must be a mapping")

    base = _require(doc, "base", "document")
    base_voltage = float(_require(base, "voltage_v", "base"))
    base_power = float(_require(base, "power_kva", "base"))
    if base_voltage <= 0 or base_power <= 0:
        raise FeederFormatError("base voltage and power must be positive")

    buses_raw = _require(doc, "buses", "document")
    if not isinstance(buses_raw, list) or not buses_raw:
        raise FeederFormatError("'buses' must be a non-empty list")
    buses = tuple(str(b) for b in buses_raw)

    src = _require(doc, "source", "document")
    source = SourceSpec(
        bus=str(_require(src, "bus", "source")),
        voltage_pu=_triple(_require(src, "voltage_pu", "source"), "source.voltage_pu"),
        angle_deg=_triple(_require(src, "angle_deg", "source"), "source.angle_deg"),
    )

    branches = []
    for i, row in enumerate(_require(doc, "branches", "document") or []):
        where = f"branches[{i}]"
        r = _as_matrix(_require(row, "r_ohm_per_km", where), f"{where}.r_ohm_per_km")
        x = _as_matrix(_require(row, "x_ohm_per_km", where), f"{where}.x_ohm_per_km")
        if len(r) != len(x):
            raise FeederFormatError(f"{where}: R and X matrices differ in size")
        if len(r) == 4:
            z = kron_reduce(np.asarray(r) + 1j * np.asarray(x))
            r = tuple(tuple(float(v) for v in row_) for row_ in z.real)
            x = tuple(tuple(float(v) for v in row_) for row_ in z.imag)
        branches.append(
            Branch(
                from_bus=str(_require(row, "from", where)),
                to_bus=str(_require(row, "to", where)),
                length_m=float(_require(row, "length_m", where)),
                r_ohm_per_km=r,
                x_ohm_per_km=x,
                ampacity_a=float(_require(row, "ampacity_a", where)),
            )
        )

    customers = []
    for i, row in enumerate(_require(doc, "customers", "document") or []):
        where = f"customers[{i}]"
        dg = None
        if isinstance(row, dict) and row.get("dg_rating_kw") is not None:
            dg = DGUnit(rating_kw=float(row["dg_rating_kw"]))
        customers.append(
            Customer(
                id=str(_require(row, "id", where)),
                bus=str(_require(row, "bus", where)),
                phase=str(_require(row, "phase", where)),
                dg=dg,
            )
        )

    feeder = Feeder(
        buses=buses,
        source=source,
        branches=tuple(branches),
        customers=tuple(customers),
        base_voltage=base_voltage,
        base_power=base_power,
    )
    problems = validate_radial(feeder)
    if problems:
        raise FeederFormatError("invalid feeder:\n" + "\n".join(problems))
    return feeder


def load_feeder(path) -> Feeder:
    return parse_feeder(Path(path).read_text())


def serialize_feeder(feeder: Feeder) -> str:
    """Render a feeder back to its document form (parse/serialize round-trips)."""
    doc = {
        "base": {"voltage_v": feeder.base_voltage, "power_kva": feeder.base_power},
        "buses": list(feeder.buses),
        "source": {
            "bus": feeder.source.bus,
            "voltage_pu": list(feeder.source.voltage_pu),
            "angle_deg": list(feeder.source.angle_deg),
        },
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "length_m": br.length_m,
                "ampacity_a": br.ampacity_a,
                "r_ohm_per_km": [list(row) for row in br.r_ohm_per_km],
                "x_ohm_per_km": [list(row) for row in br.x_ohm_per_km],
            }
            for br in feeder.branches
        ],
        "customers": [
            {
                "id": c.id,
                "bus": c.bus,
                "phase": c.phase,
                **({"dg_rating_kw": c.dg.rating_kw} if c.dg is not None else {}),
            }
            for c in feeder.customers
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def save_feeder(feeder: Feeder, path) -> None:
    Path(path).write_text(serialize_feeder(feeder))
