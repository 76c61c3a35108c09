"""MEC server model: container autoscaling, load distribution, local admission."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

LAMBDA_MAX = 10.0        # MB per container per slot
CONTAINER_BUDGET = 20    # containers per site
ADMISSION_EPS = 1.0      # J; predicted battery below this means no local admission


class CapacityError(ValueError):
    """More containers needed than the site budget allows."""

    def __init__(self, needed: int, budget: int):
        self.needed = needed
        self.budget = budget
        super().__init__(f"{needed} containers needed, budget is {budget}")


@dataclass(frozen=True)
class ContainerAllocation:
    loads: tuple = ()
    lambda_max: float = LAMBDA_MAX

    def __post_init__(self):
        object.__setattr__(self, "loads", tuple(float(x) for x in self.loads))
        for x in self.loads:
            if not 0.0 < x <= self.lambda_max * (1 + 1e-12):
                raise ValueError(f"container load {x} outside (0, {self.lambda_max}]")

    @property
    def d_active(self) -> int:
        return len(self.loads)

    @property
    def total(self) -> float:
        return math.fsum(self.loads)


@dataclass(frozen=True)
class FlowSet:
    w_local: float = 0.0
    w_in: Mapping[int, float] = field(default_factory=dict)
    w_out: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.w_local < 0 or any(v < 0 for v in self.w_in.values()) or any(v < 0 for v in self.w_out.values()):
            raise ValueError("flows must be >= 0")

    @property
    def total_in(self) -> float:
        return math.fsum(self.w_in.values())

    @property
    def total_out(self) -> float:
        return math.fsum(self.w_out.values())


def containers_needed(w_nn: float, lambda_max: float = LAMBDA_MAX,
                      budget: int | None = CONTAINER_BUDGET) -> int:
    """Smallest D with D * lambda_max >= w_nn."""
    if w_nn < 0 or lambda_max <= 0:
        raise ValueError("need w_nn >= 0 and lambda_max > 0")
    if w_nn == 0:
        return 0
    d = math.ceil(w_nn / lambda_max)
    # Correct ceil() for division rounding so the defining inequality holds exactly.
    while d > 1 and (d - 1) * lambda_max >= w_nn:
        d -= 1
    while d * lambda_max < w_nn:
        d += 1
    if budget is not None and d > budget:
        raise CapacityError(d, budget)
    return d


def distribute_load(w_nn: float, lambda_max: float = LAMBDA_MAX,
                    budget: int | None = CONTAINER_BUDGET) -> ContainerAllocation:
    """Fill D-1 containers to lambda_max and put the remainder on the last one."""
    d = containers_needed(w_nn, lambda_max, budget)
    if d == 0:
        return ContainerAllocation((), lambda_max)
    last = w_nn - (d - 1) * lambda_max
    return ContainerAllocation((lambda_max,) * (d - 1) + (min(last, lambda_max),), lambda_max)


def local_admission(b_now: float, b_next_pred: float, l: float, eps: float = ADMISSION_EPS) -> float:
    """Delay-sensitive load taken on locally: (b_now / b_next_pred) * l, clamped to [0, l]."""
    if l < 0 or b_now < 0 or b_next_pred < 0:
        raise ValueError("arguments must be >= 0")
    if b_next_pred <= eps:
        return 0.0
    return min(max(b_now / b_next_pred * l, 0.0), l)


def mec_energy(alloc: ContainerAllocation, coeffs) -> float:
    idle = coeffs.mec_idle_per_container
    dyn = coeffs.mec_dyn_per_container
    return math.fsum(idle + dyn * x / alloc.lambda_max for x in alloc.loads)


def check_flow_conservation(flows: FlowSet, tol: float = 1e-9) -> bool:
    return flows.total_out - flows.total_in <= flows.w_local + tol
