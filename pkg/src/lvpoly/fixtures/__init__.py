"""Bundled desk-scale fixtures: a feeder document and an irradiance profile."""

from importlib.resources import files
from pathlib import Path

from ..feeder import Feeder, load_feeder


def fixture_path(name: str) -> Path:
    return Path(str(files("lvpoly") / "fixtures" / name))


def fixture_feeder_path() -> Path:
    return fixture_path("desk_feeder.yaml")


def fixture_feeder() -> Feeder:
    return load_feeder(fixture_feeder_path())


def fixture_irradiance_path() -> Path:
    return fixture_path("irradiance_clear_sky.csv")
