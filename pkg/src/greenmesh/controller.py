"""Per-site decision makers.

``llc_plan``   limited-lookahead control: breadth-first tree over forecasted states.
``open_step``  myopic drift-plus-penalty benchmark (current observations only).
``baseline_energy``  the unmanaged, maximum-capacity site.

All planners share one slot pipeline: workload split -> local admission ->
container allocation -> site energy -> harvest split -> battery update.  It
exists twice: :func:`step_site` composes the scalar module functions and is the
reference; :func:`_transition` is the numpy version the planners use.  The two
are kept numerically equivalent by the test-suite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .compute import (ADMISSION_EPS, CONTAINER_BUDGET, LAMBDA_MAX, ContainerAllocation,
                      FlowSet, check_flow_conservation, containers_needed, distribute_load,
                      local_admission)
from .energy import Battery, EnergyCoeffs, HarvestSplit, battery_step, site_energy, split_harvest
from .traces import DEFAULT_SENSITIVE_RATIO, split_workloads


@dataclass(frozen=True)
class SiteParams:
    coeffs: EnergyCoeffs = field(default_factory=EnergyCoeffs)
    capacity: float = 100_000.0
    leak: float = 0.9999
    charge_eff: float = 0.9
    lambda_max: float = LAMBDA_MAX
    budget: int = CONTAINER_BUDGET
    # Offered jobs/slot at normalized load 1.0.
    peak_jobs: float = CONTAINER_BUDGET * LAMBDA_MAX
    sensitive_ratio: float = DEFAULT_SENSITIVE_RATIO
    H_max: float = math.inf
    admission_eps: float = ADMISSION_EPS

    @property
    def site_capacity(self) -> float:
        return self.budget * self.lambda_max


@dataclass(frozen=True)
class SystemState:
    battery_level: float
    buffered_out_jobs: float = 0.0
    prev_containers: int = 0
    last_load: float = 0.0
    last_harvest: float = 0.0
    energy_constrained: bool = False
    # Jobs expected from neighbours this slot (last observed inflow).
    expected_in: float = 0.0

    def check(self, params: SiteParams) -> None:
        if not 0.0 <= self.battery_level <= params.capacity:
            raise ValueError(f"battery level {self.battery_level} outside [0, {params.capacity}]")
        if self.buffered_out_jobs < 0:
            raise ValueError("buffered_out_jobs must be >= 0")


@dataclass(frozen=True)
class ControlInput:
    harvest_charge_fraction: float = 0.0
    offload_fractions: dict = field(default_factory=dict)
    d_active: int = 0
    # Battery level the controller predicted for the end of the slot; drives admission.
    b_next_pred: float | None = None

    @property
    def offload_total(self) -> float:
        return math.fsum(self.offload_fractions.values())


@dataclass(frozen=True)
class CostWeights:
    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class ActionGrid:
    fraction_levels: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    neighbor_fanout: int = 2
    # None disables dominance pruning.
    battery_buckets: int | None = 64
    # Levels for the harvest charge fraction; defaults to fraction_levels.
    charge_levels: tuple | None = None

    def __post_init__(self):
        for levels in (self.fraction_levels, self.charge_levels):
            if levels is None:
                continue
            lv = tuple(float(x) for x in levels)
            if not lv or lv[0] != 0.0 or lv[-1] > 1.0:
                raise ValueError("levels must start at 0 and stay within [0, 1]")
            if any(b <= a for a, b in zip(lv, lv[1:])):
                raise ValueError("levels must be strictly increasing")
        if self.neighbor_fanout < 1:
            raise ValueError("neighbor_fanout must be >= 1")
        if self.battery_buckets is not None and self.battery_buckets < 1:
            raise ValueError("battery_buckets must be >= 1")

    @property
    def charges(self) -> tuple:
        return tuple(self.fraction_levels if self.charge_levels is None else self.charge_levels)


@dataclass(frozen=True)
class Neighbor:
    site: int
    battery_level: float = 0.0
    energy_constrained: bool = False


@dataclass(frozen=True)
class SlotOutcome:
    state: SystemState
    theta_bs: float
    theta_mec: float
    theta_site: float
    offered: float          # delay-sensitive jobs offered by users
    w_nn: float             # own jobs computed locally
    w_in: float
    w_out: float
    shed: float
    alloc: ContainerAllocation
    harvest: HarvestSplit
    deficit: float
    b_next_pred: float

    @property
    def flows(self) -> FlowSet:
        # Jobs entering through this site's router: computed here or forwarded.
        return FlowSet(self.w_nn + self.w_out, {-1: self.w_in}, {-1: self.w_out})


def cost_J(theta_site: float, w_nn: float, w_out_total: float, weights: CostWeights | float) -> float:
    gamma = weights.gamma if isinstance(weights, CostWeights) else float(weights)
    return (1.0 - gamma) * theta_site + gamma * (w_nn - w_out_total) ** 2


def baseline_energy(params: SiteParams) -> float:
    """Every container busy at lambda_max and the radio at full load, every slot."""
    c = params.coeffs
    return c.bs_idle + c.bs_load + params.budget * (c.mec_idle_per_container + c.mec_dyn_per_container)


# --------------------------------------------------------------------------
# scalar reference pipeline


def _realize(q: SystemState, charge: float, load: float, harvest: float, params: SiteParams,
             r: float, w_out: float, w_in: float, b_next_pred: float, l: float) -> SlotOutcome:
    cap = params.site_capacity
    # Granted peer jobs take the capacity first; own admission fills the rest.
    w_in_eff = min(w_in, cap)
    w_nn = min(local_admission(q.battery_level, b_next_pred, r, params.admission_eps), cap - w_in_eff)
    alloc = distribute_load(w_nn + w_in_eff, params.lambda_max, params.budget)
    energy = site_energy(params.coeffs, load, alloc, (w_nn + w_out, w_in_eff, w_out))
    h = min(harvest, params.H_max)
    split = split_harvest(h, min(energy.theta_site, (1.0 - charge) * h), params.H_max)
    batt = Battery(q.battery_level, params.capacity, params.leak, params.charge_eff)
    level, deficit = battery_step(batt, energy.theta_site - split.h_o, split.h_c)
    state = SystemState(level, 0.0, alloc.d_active, load, harvest, deficit > 0.0, w_in_eff)
    return SlotOutcome(state, energy.theta_bs, energy.theta_mec, energy.theta_site, l, w_nn,
                       w_in_eff, w_out, r - w_nn, alloc, split, deficit, b_next_pred)


def step_site(q: SystemState, charge: float, offload_total: float, load: float, harvest: float,
              params: SiteParams, w_in: float | None = None, b_next_pred: float | None = None,
              w_out: float | None = None) -> SlotOutcome:
    """Run one slot of the site pipeline.

    ``offload_total`` is the fraction of delay-sensitive load forwarded; pass
    ``w_out`` instead to use an already reconciled amount.  Without
    ``b_next_pred`` the admission denominator is the battery level predicted for
    the end of the slot if the whole local share were computed here.
    """
    l, _ = split_workloads(load * params.peak_jobs, params.sensitive_ratio)
    if w_out is None:
        w_out = offload_total * l
    r = l - w_out
    w_in = q.expected_in if w_in is None else w_in
    if b_next_pred is None:
        full = _full_admission(q, charge, load, harvest, params, r, w_out, w_in, l)
        b_next_pred = full.state.battery_level
    return _realize(q, charge, load, harvest, params, r, w_out, w_in, b_next_pred, l)


def _full_admission(q, charge, load, harvest, params, r, w_out, w_in, l) -> SlotOutcome:
    cap = params.site_capacity
    w_in_eff = min(w_in, cap)
    w_nn = min(r, cap - w_in_eff)
    alloc = distribute_load(w_nn + w_in_eff, params.lambda_max, params.budget)
    energy = site_energy(params.coeffs, load, alloc, (w_nn + w_out, w_in_eff, w_out))
    h = min(harvest, params.H_max)
    split = split_harvest(h, min(energy.theta_site, (1.0 - charge) * h), params.H_max)
    batt = Battery(q.battery_level, params.capacity, params.leak, params.charge_eff)
    level, deficit = battery_step(batt, energy.theta_site - split.h_o, split.h_c)
    state = SystemState(level, 0.0, alloc.d_active, load, harvest, deficit > 0.0, w_in_eff)
    return SlotOutcome(state, energy.theta_bs, energy.theta_mec, energy.theta_site, l, w_nn,
                       w_in_eff, w_out, r - w_nn, alloc, split, deficit, level)


def next_state(q: SystemState, phi: ControlInput, L_hat: float, h_hat: float,
               params: SiteParams) -> SystemState:
    """Estimated state at the next slot boundary under forecasts (L_hat, h_hat)."""
    out = step_site(q, phi.harvest_charge_fraction, phi.offload_total, L_hat, h_hat, params)
    return out.state


# --------------------------------------------------------------------------
# vectorized pipeline


def _containers(u: np.ndarray, lam: float) -> np.ndarray:
    d = np.ceil(u / lam)
    d = np.where((d > 1) & ((d - 1) * lam >= u), d - 1, d)
    d = np.where(d * lam < u, d + 1, d)
    return np.where(u > 0, d, 0.0)


def _transition(b: np.ndarray, charge: np.ndarray, frac: np.ndarray, load: float, harvest: float,
                w_in: float, params: SiteParams, b_next_pred: np.ndarray | None = None):
    """Vectorized :func:`step_site`.  Returns a dict of arrays."""
    c = params.coeffs
    cap = params.site_capacity
    lam = params.lambda_max
    l = params.sensitive_ratio * (load * params.peak_jobs)
    w_out = frac * l
    r = l - w_out
    h = min(harvest, params.H_max)

    w_in_eff = min(w_in, cap)

    def settle(w_nn):
        u = w_nn + w_in_eff
        d = _containers(u, lam)
        last = np.minimum(u - (d - 1) * lam, lam)
        mec = np.where(d > 0, (d - 1) * (c.mec_idle_per_container + c.mec_dyn_per_container * (lam / lam))
                       + (c.mec_idle_per_container + c.mec_dyn_per_container * last / lam), 0.0)
        flow = np.maximum(c.eta * ((w_nn + w_out) + w_in_eff) + c.kappa * w_out, 0.0)
        theta_bs = c.bs_idle + c.bs_load * load
        theta_mec = mec + flow
        theta = theta_bs + theta_mec
        h_o = np.minimum(h, np.minimum(theta, (1.0 - charge) * h))
        h_c = h - h_o
        draw = theta - h_o
        raw = params.leak * (b - draw) + params.charge_eff * h_c
        level = np.minimum(np.maximum(raw, 0.0), params.capacity)
        deficit = np.maximum(0.0, draw - b)
        return dict(w_nn=w_nn, w_in=w_in_eff, w_out=w_out, d=d, theta_bs=theta_bs + 0.0 * theta,
                    theta_mec=theta_mec, theta=theta, h_o=h_o, h_c=h_c, level=level, deficit=deficit,
                    shed=r - w_nn)

    if b_next_pred is None:
        b_next_pred = settle(np.minimum(r, cap - w_in_eff))["level"]
    adm = np.where(b_next_pred <= params.admission_eps, 0.0,
                   np.minimum(np.maximum(b / np.where(b_next_pred > 0, b_next_pred, 1.0) * r, 0.0), r))
    out = settle(np.minimum(adm, cap - w_in_eff))
    out["b_next_pred"] = b_next_pred
    return out


# --------------------------------------------------------------------------
# action enumeration


def select_receivers(neighbors: Sequence, k: int) -> list[int]:
    """Up to ``k`` non-constrained neighbours with the most stored energy."""
    infos = [n if isinstance(n, Neighbor) else Neighbor(int(n)) for n in neighbors]
    infos = [n for n in infos if not n.energy_constrained]
    infos.sort(key=lambda n: (-n.battery_level, n.site))
    return [n.site for n in infos[:k]]


def _action_table(grid: ActionGrid, receivers: list[int]):
    """(charge (A,), offload total (A,), per-receiver fractions (A, k)) in enumeration order."""
    levels = tuple(float(x) for x in grid.fraction_levels)
    combos = [combo for combo in itertools.product(levels, repeat=len(receivers))
              if math.fsum(combo) <= 1.0 + 1e-12]
    rows = [(ch, combo) for combo in combos for ch in grid.charges]
    charge = np.array([ch for ch, _ in rows], dtype=float)
    fracs = np.array([combo for _, combo in rows], dtype=float).reshape(len(rows), len(receivers))
    total = np.array([math.fsum(combo) for _, combo in rows], dtype=float)
    return charge, total, fracs


def _feasible(tr: dict, harvest: float, params: SiteParams) -> np.ndarray:
    h = min(harvest, params.H_max)
    eq3 = (tr["h_c"] >= 0) & (tr["h_o"] >= 0) & (tr["h_c"] + tr["h_o"] <= h * (1 + 1e-12) + 1e-12)
    eq6 = tr["w_out"] - tr["w_in"] <= (tr["w_nn"] + tr["w_out"]) + 1e-9
    return eq3 & eq6


def _to_input(charge, fracs_row, receivers, d_active, b_next_pred) -> ControlInput:
    return ControlInput(float(charge), {m: float(f) for m, f in zip(receivers, fracs_row)},
                        int(d_active), float(b_next_pred))


def enumerate_actions(q: SystemState, forecast: tuple[float, float], grid: ActionGrid,
                      neighbors: Sequence, params: SiteParams | None = None) -> list[ControlInput]:
    params = params or SiteParams()
    receivers = select_receivers(neighbors, grid.neighbor_fanout)
    charge, total, fracs = _action_table(grid, receivers)
    L_hat, h_hat = forecast
    tr = _transition(np.full(len(charge), q.battery_level), charge, total, L_hat, h_hat,
                     q.expected_in, params)
    ok = _feasible(tr, h_hat, params)
    ok[0] = True  # the all-local action always exists
    return [_to_input(charge[a], fracs[a], receivers, tr["d"][a], tr["b_next_pred"][a])
            for a in np.flatnonzero(ok)]


# --------------------------------------------------------------------------
# planners


def _best(keys: list[np.ndarray]) -> int:
    """Index minimizing keys lexicographically (first key most significant)."""
    return int(np.lexsort(tuple(reversed(keys)))[0])


def llc_plan(q: SystemState, forecasts, T: int, weights: CostWeights, grid: ActionGrid,
             neighbors: Sequence = (), params: SiteParams | None = None) -> ControlInput:
    """First action of the cheapest T-step path through the forecast tree.

    ``forecasts`` is a pair of length-T sequences (L_hat, h_hat).  Each tree
    level is pruned to the cheapest state per battery bucket unless
    ``grid.battery_buckets`` is None.  Ties: lower path energy, then lower total
    offload, then enumeration order.
    """
    params = params or SiteParams()
    L_hat, h_hat = (np.asarray(f, dtype=float) for f in forecasts)
    if T < 1 or len(L_hat) < T or len(h_hat) < T:
        raise ValueError("need T >= 1 and T forecasts")
    receivers = select_receivers(neighbors, grid.neighbor_fanout)
    charge, total, fracs = _action_table(grid, receivers)
    A = len(charge)

    first_tr = _transition(np.full(A, q.battery_level), charge, total, L_hat[0], h_hat[0],
                           q.expected_in, params)
    allowed = _feasible(first_tr, h_hat[0], params)
    allowed[0] = True
    acts = np.flatnonzero(allowed)

    b = np.array([q.battery_level])
    cost = np.zeros(1)
    energy = np.zeros(1)
    offload = np.zeros(1)
    first = np.full(1, -1)
    for p in range(T):
        n_nodes = len(b)
        # node-major, action-minor expansion keeps paths in lexicographic order
        node_idx = np.repeat(np.arange(n_nodes), len(acts))
        act_idx = np.tile(acts, n_nodes)
        tr = _transition(b[node_idx], charge[act_idx], total[act_idx], L_hat[p], h_hat[p],
                         q.expected_in, params)
        step = (1.0 - weights.gamma) * tr["theta"] + weights.gamma * (tr["w_nn"] - tr["w_out"]) ** 2
        cost = cost[node_idx] + step
        energy = energy[node_idx] + tr["theta"]
        offload = offload[node_idx] + tr["w_out"]
        first = act_idx if p == 0 else first[node_idx]
        b = tr["level"]
        if grid.battery_buckets is not None and p < T - 1:
            nb = grid.battery_buckets
            bucket = np.minimum((b / params.capacity * nb).astype(int), nb - 1)
            pos = np.arange(len(b))
            order = np.lexsort((pos, offload, energy, cost, bucket))
            keep_mask = np.r_[True, bucket[order][1:] != bucket[order][:-1]]
            keep = np.sort(order[keep_mask])
            b, cost, energy, offload, first = b[keep], cost[keep], energy[keep], offload[keep], first[keep]

    best = _best([cost, energy, offload, np.arange(len(cost))])
    a = first[best]
    return _to_input(charge[a], fracs[a], receivers, first_tr["d"][a], first_tr["b_next_pred"][a])


def open_step(q: SystemState, observed: tuple[float, float], V: float, deficit_queue: float,
              grid: ActionGrid, neighbors: Sequence = (), params: SiteParams | None = None,
              weights: CostWeights = CostWeights(), energy_budget: float | None = None
              ) -> tuple[ControlInput, float]:
    """Drift-plus-penalty step: argmin V*J + Q*theta on the current observation.

    Q is a virtual queue of energy spent above ``energy_budget`` (a running
    slot-average of harvest; defaults to the observed harvest).
    """
    if V <= 0:
        raise ValueError("V must be > 0")
    params = params or SiteParams()
    L_obs, h_obs = observed
    budget = h_obs if energy_budget is None else energy_budget
    receivers = select_receivers(neighbors, grid.neighbor_fanout)
    charge, total, fracs = _action_table(grid, receivers)
    tr = _transition(np.full(len(charge), q.battery_level), charge, total, L_obs, h_obs,
                     q.expected_in, params)
    J = (1.0 - weights.gamma) * tr["theta"] + weights.gamma * (tr["w_nn"] - tr["w_out"]) ** 2
    score = V * J + deficit_queue * tr["theta"]
    ok = _feasible(tr, h_obs, params)
    ok[0] = True
    big = np.where(ok, 0.0, np.inf)
    a = _best([score + big, tr["theta"], tr["w_out"], np.arange(len(score))])
    new_q = max(0.0, deficit_queue + float(tr["theta"][a]) - budget)
    return _to_input(charge[a], fracs[a], receivers, tr["d"][a], tr["b_next_pred"][a]), new_q


def exhaustive_plan(q: SystemState, forecasts, T: int, weights: CostWeights, grid: ActionGrid,
                    neighbors: Sequence = (), params: SiteParams | None = None) -> ControlInput:
    """Brute force over every action sequence; reference for :func:`llc_plan`."""
    params = params or SiteParams()
    L_hat, h_hat = (np.asarray(f, dtype=float) for f in forecasts)
    receivers = select_receivers(neighbors, grid.neighbor_fanout)
    charge, total, fracs = _action_table(grid, receivers)
    best_key, best_seq = None, None
    for seq in itertools.product(range(len(charge)), repeat=T):
        b = np.array([q.battery_level])
        cost = energy = offload = 0.0
        for p, a in enumerate(seq):
            tr = _transition(b, charge[[a]], total[[a]], L_hat[p], h_hat[p], q.expected_in, params)
            cost = cost + ((1.0 - weights.gamma) * tr["theta"] + weights.gamma * (tr["w_nn"] - tr["w_out"]) ** 2)[0]
            energy = energy + tr["theta"][0]
            offload = offload + tr["w_out"][0]
            b = tr["level"]
        key = (cost, energy, offload, seq)
        if best_key is None or key < best_key:
            best_key, best_seq = key, seq
    a = best_seq[0]
    tr = _transition(np.array([q.battery_level]), charge[[a]], total[[a]], L_hat[0], h_hat[0],
                     q.expected_in, params)
    return _to_input(charge[a], fracs[a], receivers, tr["d"][0], tr["b_next_pred"][0])
