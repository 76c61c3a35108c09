"""Site energy model: harvest split, battery dynamics, flow-linear demand."""

from __future__ import annotations

from dataclasses import dataclass

from .compute import ContainerAllocation, FlowSet, mec_energy


class EnergyError(ValueError):
    pass


@dataclass
class Battery:
    level: float = 50_000.0
    capacity: float = 100_000.0
    leak: float = 0.9999         # self-discharge factor per slot
    charge_eff: float = 0.9      # fraction of charged energy that is stored

    def __post_init__(self):
        if self.capacity <= 0:
            raise EnergyError("capacity must be > 0")
        if not 0.0 < self.leak <= 1.0 or not 0.0 < self.charge_eff <= 1.0:
            raise EnergyError("leak and charge_eff must lie in (0, 1]")
        if not 0.0 <= self.level <= self.capacity:
            raise EnergyError(f"level {self.level} outside [0, {self.capacity}]")


@dataclass(frozen=True)
class HarvestSplit:
    h_c: float  # to charging
    h_o: float  # used directly

    def check(self, H_max: float) -> None:
        if self.h_c < 0 or self.h_o < 0:
            raise EnergyError("harvest portions must be >= 0")
        if self.h_c + self.h_o > H_max * (1 + 1e-12):
            raise EnergyError(f"h_c + h_o = {self.h_c + self.h_o} exceeds H_max = {H_max}")


@dataclass(frozen=True)
class EnergyCoeffs:
    eta: float = 0.105                   # J per (job/slot) entering the site
    kappa: float = -0.035                # J per (job/slot) leaving the site
    bs_idle: float = 50.0                # J/slot
    bs_load: float = 150.0               # J/slot at full normalized load
    mec_idle_per_container: float = 2.0  # J/slot
    mec_dyn_per_container: float = 8.0   # J/slot at lambda_max

    def __post_init__(self):
        if not self.eta > 0:
            raise EnergyError("eta must be > 0")
        if not self.kappa < 0:
            raise EnergyError("kappa must be < 0")
        if not abs(self.eta) > abs(self.kappa):
            raise EnergyError("|eta| must exceed |kappa|")
        for name in ("bs_idle", "bs_load", "mec_idle_per_container", "mec_dyn_per_container"):
            if getattr(self, name) < 0:
                raise EnergyError(f"{name} must be >= 0")


@dataclass(frozen=True)
class SiteEnergy:
    theta_bs: float
    theta_mec: float
    theta_site: float


def split_harvest(h_available: float, demand: float, H_max: float) -> HarvestSplit:
    """Use-then-charge: cover ``demand`` directly, send the rest to the battery."""
    if h_available < 0 or demand < 0 or H_max < 0:
        raise EnergyError("harvest arguments must be >= 0")
    if h_available > H_max:
        raise EnergyError(f"harvest {h_available} exceeds H_max {H_max}")
    h_o = min(h_available, demand)
    split = HarvestSplit(h_c=h_available - h_o, h_o=h_o)
    split.check(H_max)
    return split


def battery_step(batt: Battery, theta_site: float, h_c: float) -> tuple[float, float]:
    """One slot of b' = leak*(b - theta) + charge_eff*h_c, clamped to [0, capacity].

    ``deficit`` is the part of ``theta_site`` the stored energy could not cover.
    """
    if theta_site < 0 or h_c < 0:
        raise EnergyError("theta_site and h_c must be >= 0")
    raw = batt.leak * (batt.level - theta_site) + batt.charge_eff * h_c
    new_level = min(max(raw, 0.0), batt.capacity)
    deficit = max(0.0, theta_site - batt.level)
    return new_level, deficit


def flow_energy(coeffs: EnergyCoeffs, w_local: float, w_in: float, w_out: float) -> float:
    raw = coeffs.eta * (w_local + w_in) + coeffs.kappa * w_out
    return max(0.0, raw)


def bs_energy(coeffs: EnergyCoeffs, load: float) -> float:
    return coeffs.bs_idle + coeffs.bs_load * load


def site_energy(coeffs: EnergyCoeffs, load: float, alloc: ContainerAllocation,
                flows: FlowSet | tuple[float, float, float]) -> SiteEnergy:
    if not 0.0 <= load <= 1.0:
        raise EnergyError(f"normalized load {load} outside [0, 1]")
    if isinstance(flows, FlowSet):
        w_local, w_in, w_out = flows.w_local, flows.total_in, flows.total_out
    else:
        w_local, w_in, w_out = flows
    theta_bs = bs_energy(coeffs, load)
    theta_mec = mec_energy(alloc, coeffs) + flow_energy(coeffs, w_local, w_in, w_out)
    return SiteEnergy(theta_bs, theta_mec, theta_bs + theta_mec)
