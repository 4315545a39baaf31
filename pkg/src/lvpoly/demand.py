"""Monte Carlo demand scenarios: synthetic profile pools, CSV ingestion,
seeded sampling and sample-size selection.

Sampling draws one daily profile per customer, independently and uniformly
from the pool, with one RNG substream per (scenario, customer) so results are
identical whether scenarios are generated sequentially or in parallel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .feeder import Feeder

DEFAULT_STEP_MINUTES = 10
DEFAULT_LOAD_POWER_FACTOR = 0.95

# (hour, multiplier) nodes of the daily demand template: overnight valley,
# morning and evening peaks.  Interpolated linearly and wrapped at midnight.
DEFAULT_TEMPLATE = (
    (0.0, 0.30), (2.0, 0.24), (5.0, 0.22), (7.0, 0.55), (9.0, 0.50),
    (12.0, 0.45), (16.0, 0.52), (18.0, 0.90), (20.0, 1.00), (22.0, 0.60),
    (24.0, 0.30),
)


class DemandError(ValueError):
    """Raised for empty pools, malformed profile files or bad parameters."""


@dataclass(frozen=True)
class PoolStats:
    mean_kw: float
    std_kw: float
    mean_kvar: float
    std_kvar: float


@dataclass(frozen=True)
class DemandPool:
    """A library of candidate daily demand profiles.

    ``p_kw`` has one row per profile and one column per timestep; reactive
    power follows from the per-profile (class) power factor.  Statistics are
    recomputed from the stored profiles on demand, so they can never drift
    from the data.
    """

    p_kw: np.ndarray
    power_factor: np.ndarray      # per profile
    class_labels: tuple[str, ...]
    step_minutes: int

    def __post_init__(self):
        p = np.asarray(self.p_kw, dtype=float)
        if p.ndim != 2 or p.size == 0:
            raise DemandError("pool must hold at least one profile with at least one step")
        if np.any(p < 0):
            raise DemandError("demand profiles must be non-negative")
        pf = np.asarray(self.power_factor, dtype=float)
        if pf.shape != (p.shape[0],):
            raise DemandError("one power factor per profile is required")
        if len(self.class_labels) != p.shape[0]:
            raise DemandError("one class label per profile is required")
        p = p.copy()
        p.setflags(write=False)
        pf = pf.copy()
        pf.setflags(write=False)
        object.__setattr__(self, "p_kw", p)
        object.__setattr__(self, "power_factor", pf)

    @property
    def n_profiles(self) -> int:
        return self.p_kw.shape[0]

    @property
    def n_steps(self) -> int:
        return self.p_kw.shape[1]

    @property
    def q_kvar(self) -> np.ndarray:
        tau = np.tan(np.arccos(self.power_factor))
        return self.p_kw * tau[:, None]

    def statistics(self, timestep: int) -> PoolStats:
        """Population mean/std over all pool profiles at one timestep."""
        p = self.p_kw[:, timestep]
        q = self.q_kvar[:, timestep]
        return PoolStats(
            mean_kw=float(p.mean()), std_kw=float(p.std()),
            mean_kvar=float(q.mean()), std_kvar=float(q.std()),
        )


def _template_curve(step_minutes: int, template) -> np.ndarray:
    hours, values = zip(*template)
    n_steps = 24 * 60 // step_minutes
    t = (np.arange(n_steps) * step_minutes + step_minutes / 2.0) / 60.0
    return np.interp(t, hours, values)


def synthetic_pool(n_profiles: int = 200, step_minutes: int = DEFAULT_STEP_MINUTES,
                   seed: int = 0, base_kw: float = 1.3, noise_sigma: float = 0.55,
                   scale_sigma: float = 0.35,
                   power_factor: float = DEFAULT_LOAD_POWER_FACTOR,
                   template=DEFAULT_TEMPLATE) -> DemandPool:
    """Generate a pool of daily profiles around a configurable template.

    Each profile gets a lognormal household scale and independent lognormal
    per-timestep draws; both noises are mean-one so the template sets the
    expected shape.
    """
    if n_profiles < 1:
        raise DemandError("n_profiles must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([0x9E37, seed]))
    curve = _template_curve(step_minutes, template)
    scale = rng.lognormal(-scale_sigma**2 / 2.0, scale_sigma, size=(n_profiles, 1))
    noise = rng.lognormal(-noise_sigma**2 / 2.0, noise_sigma, size=(n_profiles, curve.size))
    p = base_kw * curve[None, :] * scale * noise
    return DemandPool(
        p_kw=p,
        power_factor=np.full(n_profiles, power_factor),
        class_labels=("residential",) * n_profiles,
        step_minutes=step_minutes,
    )


@dataclass(frozen=True)
class DemandScenario:
    """One Monte Carlo demand allocation: a profile per feeder customer."""

    scenario_id: int
    customer_ids: tuple[str, ...]
    p_kw: np.ndarray      # (n_cust, n_steps)
    q_kvar: np.ndarray
    step_minutes: int

    def __post_init__(self):
        for name in ("p_kw", "q_kvar"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return self.p_kw.shape[1]


def sample_scenarios(pool: DemandPool, feeder: Feeder, s_count: int, seed: int) -> list[DemandScenario]:
    """Draw ``s_count`` scenarios, one uniform pool profile per customer.

    Deterministic for a given seed regardless of execution order: customer h
    of scenario s always uses the RNG stream seeded by (seed, s, h).
    """
    if s_count < 1:
        raise DemandError("s_count must be >= 1")
    if seed < 0:
        raise DemandError("seed must be non-negative")
    n_cust = len(feeder.customers)
    q_pool = pool.q_kvar
    scenarios = []
    for s in range(s_count):
        idx = np.empty(n_cust, dtype=np.intp)
        for h in range(n_cust):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s, h]))
            idx[h] = rng.integers(pool.n_profiles)
        scenarios.append(
            DemandScenario(
                scenario_id=s,
                customer_ids=feeder.customer_ids,
                p_kw=pool.p_kw[idx],
                q_kvar=q_pool[idx],
                step_minutes=pool.step_minutes,
            )
        )
    return scenarios


def required_sample_size(sigma_ratio: float) -> int:
    """Samples needed so the mean's deviation stays within ``sigma_ratio``
    standard deviations of the population value (central limit theorem)."""
    if not (0.0 < sigma_ratio <= 1.0):
        raise DemandError(f"sigma_ratio must lie in (0, 1], got {sigma_ratio}")
    return math.ceil(1.0 / sigma_ratio**2)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def load_pool_csv(path, power_factor: float = DEFAULT_LOAD_POWER_FACTOR,
                  step_minutes: int | None = None, class_label: str = "csv") -> DemandPool:
    """Read a profile pool: one row per profile, one column per timestep (kW)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DemandError(f"empty profile pool file: {path}")
        for line in reader:
            if line:
                rows.append([float(v) for v in line])
    if not rows:
        raise DemandError(f"profile pool file holds no profiles: {path}")
    p = np.asarray(rows)
    if step_minutes is None:
        step_minutes = 24 * 60 // p.shape[1]
    return DemandPool(
        p_kw=p,
        power_factor=np.full(p.shape[0], power_factor),
        class_labels=(class_label,) * p.shape[0],
        step_minutes=step_minutes,
    )


def save_pool_csv(pool: DemandPool, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        minutes = np.arange(pool.n_steps) * pool.step_minutes
        writer.writerow([f"{m // 60:02d}:{m % 60:02d}" for m in minutes])
        for row in pool.p_kw:
            writer.writerow([repr(float(v)) for v in row])


def export_scenarios_csv(scenarios, path) -> None:
    """Long-format export: (scenario, customer, timestep, kw, kvar)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "customer", "timestep", "kw", "kvar"])
        for sc in scenarios:
            for i, cid in enumerate(sc.customer_ids):
                for t in range(sc.n_steps):
                    writer.writerow([sc.scenario_id, cid, t,
                                     repr(float(sc.p_kw[i, t])), repr(float(sc.q_kvar[i, t]))])
