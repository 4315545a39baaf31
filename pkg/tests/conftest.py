import pytest

from lvpoly import demand, training
from lvpoly.feeder import Branch, Customer, DGUnit, Feeder, SourceSpec
from lvpoly.fixtures import fixture_feeder

DIAG = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def scaled(matrix, factor):
    return tuple(tuple(v * factor for v in row) for row in matrix)


def two_bus_feeder(load_kw=10.0, load_kvar=5.0, with_dg=False):
    """Single branch with z = 0.01 + 0.01j pu per phase and one phase-a customer.

    Bases are chosen so per-unit values are exact: 1000 V line-neutral and
    300 kVA feeder base give a 10 ohm impedance base and 100 kVA phase base.
    """
    return Feeder(
        buses=("s", "m"),
        source=SourceSpec(bus="s", voltage_pu=(1.0, 1.0, 1.0), angle_deg=(0.0, -120.0, 120.0)),
        branches=(
            Branch(from_bus="s", to_bus="m", length_m=1000.0,
                   r_ohm_per_km=scaled(DIAG, 0.1), x_ohm_per_km=scaled(DIAG, 0.1),
                   ampacity_a=200.0),
        ),
        customers=(
            Customer(id="c1", bus="m", phase="a",
                     dg=DGUnit(rating_kw=3.0) if with_dg else None),
        ),
        base_voltage=1000.0,
        base_power=300.0,
    )


@pytest.fixture(scope="session")
def desk_feeder():
    return fixture_feeder()


@pytest.fixture(scope="session")
def pool():
    return demand.synthetic_pool(n_profiles=150, seed=1)


@pytest.fixture(scope="session")
def scenarios(pool, desk_feeder):
    return demand.sample_scenarios(pool, desk_feeder, 60, seed=3)


@pytest.fixture(scope="session")
def small_config():
    return training.TrainingConfig(s_count=60, k=10, grid_steps=10, seed=0)


@pytest.fixture(scope="session")
def trained(desk_feeder, scenarios, small_config):
    """A small two-timestep training run shared across test modules."""
    return training.train_bundle(
        desk_feeder, scenarios, config=small_config,
        timesteps=[60, 108], locations=["h12", "h14"],
    )


@pytest.fixture(scope="session")
def bundle(trained):
    return trained.bundles["h12"]
