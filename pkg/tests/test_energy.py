import math

import pytest
from hypothesis import given, strategies as st

from greenmesh.compute import ContainerAllocation, FlowSet
from greenmesh.energy import (Battery, EnergyCoeffs, EnergyError, HarvestSplit, battery_step, bs_energy,
                              flow_energy, site_energy, split_harvest)

nonneg = st.floats(0, 1e5, allow_nan=False)


@pytest.mark.parametrize("args, h_o, h_c", [((100, 30, 200), 30, 70), ((100, 150, 200), 100, 0),
                                            ((0, 50, 200), 0, 0)])
def test_split_harvest_examples(args, h_o, h_c):
    s = split_harvest(*args)
    assert (s.h_o, s.h_c) == (h_o, h_c)


def test_split_harvest_above_hmax():
    with pytest.raises(EnergyError):
        split_harvest(300, 10, 200)


@given(nonneg, nonneg, nonneg)
def test_split_harvest_hard_constraint(h, demand, extra):
    H_max = h + extra
    s = split_harvest(h, demand, H_max)
    assert s.h_c >= 0 and s.h_o >= 0 and s.h_c + s.h_o <= H_max
    assert s.h_o == min(h, demand)


def test_harvest_split_check_rejects():
    with pytest.raises(EnergyError):
        HarvestSplit(150, 100).check(200)
    with pytest.raises(EnergyError):
        HarvestSplit(-1, 0).check(200)


def test_battery_step_example():
    level, deficit = battery_step(Battery(50_000), 100, 200)
    assert level == pytest.approx(0.9999 * 49_900 + 180)
    assert level == pytest.approx(50_075.01)
    assert deficit == 0


def test_battery_step_deficit():
    level, deficit = battery_step(Battery(50), 100, 30)
    assert deficit == 50
    assert level == min(max(0.9999 * -50 + 0.9 * 30, 0), 100_000)


def test_battery_step_capacity_clamp():
    level, _ = battery_step(Battery(99_990), 0, 10_000)
    assert level == 100_000


@given(st.floats(0, 100_000))
def test_pure_leakage(level):
    assert battery_step(Battery(level), 0, 0)[0] == 0.9999 * level


@given(st.floats(0, 100_000), nonneg, nonneg)
def test_battery_bounds(level, theta, h_c):
    new, deficit = battery_step(Battery(level), theta, h_c)
    assert 0 <= new <= 100_000
    assert deficit == max(0.0, theta - level)


def test_battery_invariants():
    with pytest.raises(EnergyError):
        Battery(level=-1)
    with pytest.raises(EnergyError):
        Battery(level=10, capacity=5)
    with pytest.raises(EnergyError):
        Battery(leak=1.5)


@pytest.mark.parametrize("kwargs", [dict(eta=0), dict(kappa=0.01), dict(eta=0.01, kappa=-0.02), dict(bs_idle=-1)])
def test_coeff_invariants(kwargs):
    with pytest.raises(EnergyError):
        EnergyCoeffs(**kwargs)


def test_flow_energy_examples():
    c = EnergyCoeffs()
    assert flow_energy(c, 100, 20, 40) == pytest.approx(11.2)
    assert flow_energy(c, 0, 0, 0) == 0
    assert flow_energy(c, 0, 0, 10) == 0


@given(nonneg, nonneg, nonneg, st.floats(0, 100))
def test_flow_energy_monotone(wl, wi, wo, d):
    c = EnergyCoeffs()
    base = flow_energy(c, wl, wi, wo)
    assert base >= 0
    assert flow_energy(c, wl + d, wi, wo) >= base
    assert flow_energy(c, wl, wi + d, wo) >= base
    assert flow_energy(c, wl, wi, wo + d) <= base


def test_site_energy_floor():
    e = site_energy(EnergyCoeffs(), 0.0, ContainerAllocation(()), (0, 0, 0))
    assert e.theta_site == 50 and e.theta_mec == 0


def test_site_energy_hand_sum():
    # L=0.5; one container at half load carrying 5 local jobs, no peers
    c = EnergyCoeffs()
    e = site_energy(c, 0.5, ContainerAllocation((5.0,)), FlowSet(5.0))
    theta_bs = 50 + 150 * 0.5
    theta_mec = (2 + 8 * 0.5) + 0.105 * 5
    assert e.theta_bs == theta_bs
    assert e.theta_mec == pytest.approx(theta_mec)
    assert e.theta_site == pytest.approx(theta_bs + theta_mec)


def test_doubling_bs_load():
    a = bs_energy(EnergyCoeffs(), 0.7) - 50
    b = bs_energy(EnergyCoeffs(bs_load=300), 0.7) - 50
    assert b == pytest.approx(2 * a)


@given(st.floats(0, 1), st.lists(st.floats(0.01, 10), max_size=20), nonneg, nonneg, nonneg)
def test_site_energy_decomposes_exactly(L, loads, wl, wi, wo):
    e = site_energy(EnergyCoeffs(), L, ContainerAllocation(tuple(loads)), (wl, wi, wo))
    assert e.theta_site == e.theta_bs + e.theta_mec
    assert e.theta_bs >= 0 and e.theta_mec >= 0


def test_site_energy_rejects_bad_load():
    with pytest.raises(EnergyError):
        site_energy(EnergyCoeffs(), 1.5, ContainerAllocation(()), (0, 0, 0))
