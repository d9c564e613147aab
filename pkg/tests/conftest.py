"""Shared fixtures: bundled configs and a slow-discharge reference cell."""

import pytest

from sramyield import CellConfig, DeviceParams, VariationSpec
from sramyield.devices import load_device_table
from sramyield.transients import load_default_cell


@pytest.fixture(scope="session")
def device_table():
    return load_device_table()


@pytest.fixture(scope="session")
def default_cell():
    return load_default_cell()


@pytest.fixture(scope="session")
def default_variation():
    import json
    from importlib import resources

    text = resources.files("sramyield.data").joinpath("default_variation.json").read_text()
    return VariationSpec.from_dict(json.loads(text))


@pytest.fixture(scope="session")
def svt_read_cell(device_table):
    """Half-volt cell built on the shallowest bundled NMOS flavor.

    Its weak drain factor makes the closed/ODE read gap visibly large,
    which several tests rely on as a contrast case.
    """
    return CellConfig(
        nmos=device_table["nch_svt"],
        pmos=device_table["pch_svt"],
        vdd=0.5,
        vwl=0.5,
        vddc=0.5,
        c_blb=50e-15,
    )


@pytest.fixture()
def quiet_nmos():
    """A steep, well-behaved NMOS used where the exact flavor is irrelevant."""
    return DeviceParams(
        i0=1e-05, k1=0.45, k2=-0.012, dibl=0.02, vth_nominal=0.38, n=1.5,
        polarity="nmos",
    )
