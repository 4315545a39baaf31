"""The per-DG-location coefficient bundle: the artifact deployed to a unit.

For every tracked variable and every surface term i, the bundle stores the
slope/intercept pair that reconstructs the term's coefficient from the local
reference voltage, per timestep.  Current magnitudes are not stored directly;
they are composed online from the real/imaginary component entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .surface import N_TERMS

BUNDLE_FORMAT = "lvpoly-coeff-bundle/1"


class BundleError(ValueError):
    """Raised for malformed bundle files or failed lookups."""


@dataclass(frozen=True)
class GridSpec:
    """Summary of the setpoint grid a bundle was trained on."""

    p_level_percent: tuple[float, ...]
    power_factor: tuple[float, ...]


@dataclass(frozen=True)
class BundleRecord:
    """Slope/intercept pairs and fit quality for one timestep.

    Arrays are aligned with the bundle's ``fitted_ids``: shape (n_fitted, 6).
    """

    slope: np.ndarray
    intercept: np.ndarray
    r_squared: np.ndarray

    def __post_init__(self):
        for name in ("slope", "intercept", "r_squared"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != N_TERMS:
                raise BundleError(f"{name} must have shape (n_variables, {N_TERMS})")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class CoeffBundle:
    """Everything one DG unit needs to estimate network variables locally."""

    location_customer: str
    location_phase: str
    local_variable: str
    feeder_hash: str
    grid: GridSpec
    k: int
    step_minutes: int
    variable_ids: tuple[str, ...]
    fitted_ids: tuple[str, ...]
    composed: dict[str, tuple[str, str]]
    records: dict[int, BundleRecord]

    def __post_init__(self):
        if self.local_variable not in self.fitted_ids:
            raise BundleError(
                f"bundle for '{self.location_customer}' lacks its own local "
                f"voltage variable '{self.local_variable}'"
            )
        for mag, (re_id, im_id) in self.composed.items():
            if re_id not in self.fitted_ids or im_id not in self.fitted_ids:
                raise BundleError(f"composed variable '{mag}' references missing parts")

    @property
    def timesteps(self) -> tuple[int, ...]:
        return tuple(sorted(self.records))

    @property
    def fitted_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.fitted_ids)}

    def record(self, timestep: int, tolerance_steps: int = 0) -> BundleRecord:
        """Look up a timestep; only exact grid hits are accepted by default."""
        if timestep in self.records:
            return self.records[timestep]
        if tolerance_steps > 0 and self.records:
            nearest = min(self.records, key=lambda t: abs(t - timestep))
            if abs(nearest - timestep) <= tolerance_steps:
                return self.records[nearest]
        raise BundleError(f"timestep {timestep} is not covered by this bundle")

    def pairs(self, timestep: int, variable: str) -> tuple[np.ndarray, np.ndarray]:
        """(slope, intercept) rows of one fitted variable at one timestep."""
        rec = self.record(timestep)
        idx = self.fitted_index.get(variable)
        if idx is None:
            raise BundleError(f"unknown variable id '{variable}'")
        return rec.slope[idx], rec.intercept[idx]


def merge_bundles(bundles) -> CoeffBundle:
    """Combine single-timestep bundles from one training run into one artifact."""
    bundles = list(bundles)
    if not bundles:
        raise BundleError("no bundles to merge")
    head = bundles[0]
    records: dict[int, BundleRecord] = {}
    for b in bundles:
        if (b.location_customer, b.fitted_ids) != (head.location_customer, head.fitted_ids):
            raise BundleError("bundles describe different locations or variable sets")
        for t, rec in b.records.items():
            if t in records:
                raise BundleError(f"duplicate timestep {t} while merging bundles")
            records[t] = rec
    return CoeffBundle(
        location_customer=head.location_customer,
        location_phase=head.location_phase,
        local_variable=head.local_variable,
        feeder_hash=head.feeder_hash,
        grid=head.grid,
        k=head.k,
        step_minutes=head.step_minutes,
        variable_ids=head.variable_ids,
        fitted_ids=head.fitted_ids,
        composed=head.composed,
        records=records,
    )


def save_bundle(bundle: CoeffBundle, path) -> None:
    doc = {
        "format": BUNDLE_FORMAT,
        "feeder_hash": bundle.feeder_hash,
        "grid": {
            "p_level_percent": list(bundle.grid.p_level_percent),
            "power_factor": list(bundle.grid.power_factor),
        },
        "k": bundle.k,
        "step_minutes": bundle.step_minutes,
        "location": {"customer": bundle.location_customer, "phase": bundle.location_phase},
        "local_variable": bundle.local_variable,
        "variable_ids": list(bundle.variable_ids),
        "fitted_ids": list(bundle.fitted_ids),
        "composed": {k: list(v) for k, v in bundle.composed.items()},
        "records": {
            str(t): {
                "slope": rec.slope.tolist(),
                "intercept": rec.intercept.tolist(),
                "r_squared": rec.r_squared.tolist(),
            }
            for t, rec in sorted(bundle.records.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_bundle(path) -> CoeffBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"malformed bundle file {path}: {exc}") from exc
    if doc.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"unsupported bundle format {doc.get('format')!r}")
    try:
        records = {
            int(t): BundleRecord(
                slope=np.asarray(rec["slope"]),
                intercept=np.asarray(rec["intercept"]),
                r_squared=np.asarray(rec["r_squared"]),
            )
            for t, rec in doc["records"].items()
        }
        return CoeffBundle(
            location_customer=doc["location"]["customer"],
            location_phase=doc["location"]["phase"],
            local_variable=doc["local_variable"],
            feeder_hash=doc["feeder_hash"],
            grid=GridSpec(
                p_level_percent=tuple(doc["grid"]["p_level_percent"]),
                power_factor=tuple(doc["grid"]["power_factor"]),
            ),
            k=int(doc["k"]),
            step_minutes=int(doc["step_minutes"]),
            variable_ids=tuple(doc["variable_ids"]),
            fitted_ids=tuple(doc["fitted_ids"]),
            composed={k: (v[0], v[1]) for k, v in doc["composed"].items()},
            records=records,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise BundleError(f"bundle file {path} is missing required fields: {exc}") from exc
