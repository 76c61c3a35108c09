"""Slot-by-slot network simulation, flow reconciliation, savings and sweeps."""

from __future__ import annotations

import hashlib
import io
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import forecast as fc
from .compute import check_flow_conservation, local_admission
from .controller import (ActionGrid, CostWeights, Neighbor, SiteParams, SystemState, baseline_energy,
                         llc_plan, open_step, step_site)
from .energy import Battery, EnergyCoeffs, battery_step, split_harvest
from .traces import TRAFFIC_ARCHETYPES, synth_trace

CONTROLLERS = ("LLC", "OPEN", "NONE")
FORECASTERS = ("lstm", "persistence")
TOPOLOGIES = ("complete", "ring", "k-nearest")
METRICS_HEADER = ("slot,site,theta_bs,theta_mec,theta_site,battery,d_active,w_local,w_in,w_out,"
                  "qos_penalty,deficit,savings_pct")


class SimConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Topology:
    n_sites: int
    adjacency: tuple
    kind: str = "complete"

    def __post_init__(self):
        if len(self.adjacency) != self.n_sites:
            raise SimConfigError("adjacency must list every site")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise SimConfigError(f"self-loop at site {i}")
            for j in nbrs:
                if i not in self.adjacency[j]:
                    raise SimConfigError(f"adjacency not symmetric between {i} and {j}")

    @classmethod
    def build(cls, n_sites: int, kind: str = "complete", k: int = 4, seed: int = 0) -> "Topology":
        if n_sites < 1:
            raise SimConfigError("n_sites must be >= 1")
        if kind == "complete":
            adj = [set(range(n_sites)) - {i} for i in range(n_sites)]
        elif kind == "ring":
            adj = [set() for _ in range(n_sites)]
            for i in range(n_sites):
                for j in ((i - 1) % n_sites, (i + 1) % n_sites):
                    if j != i:
                        adj[i].add(j)
                        adj[j].add(i)
        elif kind == "k-nearest":
            # Sites scattered on the unit square; link each to its k closest, then symmetrize.
            pos = np.random.default_rng(seed).random((n_sites, 2))
            dist = np.linalg.norm(pos[:, None] - pos[None], axis=2)
            adj = [set() for _ in range(n_sites)]
            for i in range(n_sites):
                for j in np.argsort(dist[i], kind="stable")[1:k + 1]:
                    adj[i].add(int(j))
                    adj[int(j)].add(i)
        else:
            raise SimConfigError(f"unknown topology {kind!r}")
        return cls(n_sites, tuple(tuple(sorted(a)) for a in adj), kind)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimConfig:
    n_sites: int = 20
    topology: str = "complete"
    k_nearest: int = 4
    slot_seconds: int = 1800
    horizon: int = 3
    gamma: float = 0.5
    days: int = 7
    seed: int = 0
    controller: str = "LLC"
    forecaster: str = "lstm"
    # site constants
    containers: int = 20
    lambda_max: float = 10.0
    battery_capacity: float = 100_000.0
    leak: float = 0.9999
    charge_eff: float = 0.9
    eta: float = 0.105
    kappa: float = -0.035
    bs_idle: float = 50.0
    bs_load: float = 150.0
    mec_idle: float = 2.0
    mec_dyn: float = 8.0
    sensitive_ratio: float = 0.8
    initial_battery: float = 0.5     # fraction of capacity
    # traces
    harvest_peak: float = 700.0      # J/slot at normalized harvest 1.0
    noise: float = 0.05
    # controllers
    V: float = 1000.0
    fraction_levels: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    neighbor_fanout: int = 2
    battery_buckets: int = 64

    def __post_init__(self):
        if self.n_sites < 1:
            raise SimConfigError("n_sites must be >= 1")
        if self.topology not in TOPOLOGIES:
            raise SimConfigError(f"topology must be one of {TOPOLOGIES}")
        if self.controller not in CONTROLLERS:
            raise SimConfigError(f"controller must be one of {CONTROLLERS}")
        if self.forecaster not in FORECASTERS:
            raise SimConfigError(f"forecaster must be one of {FORECASTERS}")
        if self.slot_seconds < 1 or 86400 % self.slot_seconds:
            raise SimConfigError("slot_seconds must divide one day")
        if self.horizon < 1 or self.days < 1 or self.containers < 0:
            raise SimConfigError("horizon and days must be >= 1, containers >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise SimConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.initial_battery <= 1.0:
            raise SimConfigError("initial_battery must lie in [0, 1]")
        if not 0.0 <= self.sensitive_ratio <= 1.0:
            raise SimConfigError("sensitive_ratio must lie in [0, 1]")
        if self.V <= 0 or self.harvest_peak < 0 or self.noise < 0:
            raise SimConfigError("V must be > 0; harvest_peak and noise >= 0")
        object.__setattr__(self, "fraction_levels", tuple(float(x) for x in self.fraction_levels))
        try:
            self.grid()
            self.site_params()
        except ValueError as exc:
            raise SimConfigError(str(exc)) from exc

    @property
    def slots_per_day(self) -> int:
        return 86400 // self.slot_seconds

    @property
    def n_slots(self) -> int:
        return self.days * self.slots_per_day

    def coeffs(self) -> EnergyCoeffs:
        return EnergyCoeffs(self.eta, self.kappa, self.bs_idle, self.bs_load, self.mec_idle, self.mec_dyn)

    def site_params(self, H_max: float = math.inf) -> SiteParams:
        Battery(self.initial_battery * self.battery_capacity, self.battery_capacity, self.leak, self.charge_eff)
        return SiteParams(self.coeffs(), self.battery_capacity, self.leak, self.charge_eff, self.lambda_max,
                          self.containers, self.containers * self.lambda_max, self.sensitive_ratio, H_max)

    def grid(self) -> ActionGrid:
        return ActionGrid(self.fraction_levels, self.neighbor_fanout, self.battery_buckets)

    def build_topology(self) -> Topology:
        return Topology.build(self.n_sites, self.topology, self.k_nearest, self.seed)


# --------------------------------------------------------------------------
# scenario: per-site traces and forecasts


@dataclass
class Scenario:
    load: np.ndarray         # (slots, sites) normalized
    harvest: np.ndarray      # (slots, sites) joules
    H_max: np.ndarray        # (sites,)
    archetype: np.ndarray    # (sites,) traffic cluster index
    harvest_kind: tuple      # per site "solar" | "wind"


def build_scenario(cfg: SimConfig) -> Scenario:
    """Random cluster and harvest source per site; synthetic traces seeded from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_sites
    archetype = rng.integers(len(TRAFFIC_ARCHETYPES), size=n)
    kinds = tuple("solar" if x else "wind" for x in rng.random(n) < 0.5)
    seeds = rng.integers(2**31, size=(n, 2))
    load = np.empty((cfg.n_slots, n))
    harvest = np.empty((cfg.n_slots, n))
    for i in range(n):
        load[:, i] = synth_trace("traffic", cfg.days, int(seeds[i, 0]), cfg.noise, int(archetype[i]),
                                 cfg.slot_seconds).values
        harvest[:, i] = cfg.harvest_peak * synth_trace(kinds[i], cfg.days, int(seeds[i, 1]), cfg.noise,
                                                       slot_seconds=cfg.slot_seconds).values
    return Scenario(load, harvest, harvest.max(axis=0), archetype, kinds)


def model_dir() -> Path:
    return Path(os.environ.get("GREENMESH_OUT", "out")) / "models"


def forecaster_key(kind: str, train_cfg: fc.TrainConfig, days: int, slot_seconds: int) -> str:
    blob = repr((kind, sorted(asdict(train_cfg).items()), days, slot_seconds)).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def training_series(kind: str, days: int = 14, slot_seconds: int = 1800, noise: float = 0.02) -> np.ndarray:
    """History used to fit the forecaster of one series kind ("traffic-<k>", "solar", "wind")."""
    if kind.startswith("traffic-"):
        return synth_trace("traffic", days, 1000 + int(kind[8:]), noise, int(kind[8:]), slot_seconds).values
    return synth_trace(kind, days, 2000 if kind == "solar" else 3000, noise, slot_seconds=slot_seconds).values


def load_or_train(kind: str, train_cfg: fc.TrainConfig | None = None, days: int = 14,
                  slot_seconds: int = 1800, cache: Path | None = None) -> fc.LstmWeights:
    """One LSTM per series kind, cached as weight text under ``cache``."""
    train_cfg = train_cfg or fc.TrainConfig()
    cache = model_dir() if cache is None else Path(cache)
    path = cache / f"{kind}-{forecaster_key(kind, train_cfg, days, slot_seconds)}.weights"
    if path.exists():
        return fc.LstmWeights.from_text(path.read_text())
    weights, _ = fc.train(training_series(kind, days, slot_seconds), train_cfg)
    cache.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(weights.to_text())
    tmp.replace(path)
    return weights


def _persistence(series: np.ndarray, T: int) -> np.ndarray:
    """(slots, sites, T) forecasts equal to the last observed sample (0 before any)."""
    last = np.vstack([np.zeros((1, series.shape[1])), series[:-1]])
    return np.repeat(last[:, :, None], T, axis=2)


def precompute_forecasts(cfg: SimConfig, sc: Scenario, train_cfg: fc.TrainConfig | None = None,
                         cache: Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Forecasts of (load, harvest J) issued at each slot for the next T slots.

    Forecasts depend only on observed history, so they are computed up front.
    While fewer than one window of history exists the persistence rule is used.
    """
    T = cfg.horizon
    L_hat = _persistence(sc.load, T)
    h_norm = sc.harvest / cfg.harvest_peak if cfg.harvest_peak > 0 else sc.harvest
    h_hat = _persistence(h_norm, T)
    if cfg.forecaster == "lstm":
        train_cfg = train_cfg or fc.TrainConfig()
        W = train_cfg.window_len
        origins = np.arange(W, cfg.n_slots)
        if origins.size:
            groups = {}
            for i in range(cfg.n_sites):
                groups.setdefault(("load", f"traffic-{sc.archetype[i]}"), []).append(i)
                groups.setdefault(("harvest", sc.harvest_kind[i]), []).append(i)
            for (what, kind), sites in sorted(groups.items()):
                weights = load_or_train(kind, train_cfg, slot_seconds=cfg.slot_seconds, cache=cache)
                src = sc.load if what == "load" else h_norm
                dst = L_hat if what == "load" else h_hat
                for i in sites:
                    hist = np.lib.stride_tricks.sliding_window_view(src[:, i], W)[origins - W]
                    dst[origins, i, :] = fc.predict_batch(weights, hist, T, W)
    return L_hat, h_hat * cfg.harvest_peak


# --------------------------------------------------------------------------
# reconciliation


def reconcile_flows(requests: dict, capacities: Sequence[float]) -> dict:
    """Grant offload requests {(sender, receiver): jobs} within receiver capacities.

    Oversubscribed receivers scale every incoming request by the same factor.
    """
    incoming = {}
    for (s, m), amount in requests.items():
        if amount < 0:
            raise ValueError("requests must be >= 0")
        incoming.setdefault(m, []).append((s, amount))
    granted = {}
    for m, reqs in incoming.items():
        cap = max(0.0, float(capacities[m]))
        total = math.fsum(a for _, a in reqs)
        scale = 1.0 if total <= cap else cap / total
        for s, a in reqs:
            granted[(s, m)] = a * scale
    return granted


# --------------------------------------------------------------------------
# metrics


_FIELDS = ("theta_bs", "theta_mec", "theta_site", "battery", "d_active", "w_local", "w_in", "w_out",
           "qos_penalty", "deficit", "savings_pct", "offered", "shed", "h_c", "h_o")


@dataclass
class MetricsLog:
    n_slots: int
    n_sites: int
    slot_seconds: int = 1800
    controller: str = "LLC"
    baseline: float = 400.0
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in _FIELDS:
            self.data.setdefault(name, np.zeros((self.n_slots, self.n_sites)))

    def __getattr__(self, name):
        data = self.__dict__.get("data", {})
        if name in data:
            return data[name]
        raise AttributeError(name)

    def write_csv(self, sink: TextIO) -> None:
        sink.write(METRICS_HEADER + "\n")
        cols = [self.data[name] for name in METRICS_HEADER.split(",")[2:]]
        for t in range(self.n_slots):
            for i in range(self.n_sites):
                cells = [str(t), str(i)]
                for name, col in zip(METRICS_HEADER.split(",")[2:], cols):
                    v = col[t, i]
                    cells.append(str(int(v)) if name == "d_active" else repr(float(v)))
                sink.write(",".join(cells) + "\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, source: TextIO | str, slot_seconds: int = 1800, baseline: float = 400.0) -> "MetricsLog":
        text = source if isinstance(source, str) else source.read()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != METRICS_HEADER:
            raise ValueError("not a metrics CSV")
        rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, 13)
        n_slots = int(rows[:, 0].max()) + 1 if len(rows) else 0
        n_sites = int(rows[:, 1].max()) + 1 if len(rows) else 0
        log = cls(n_slots, n_sites, slot_seconds, "?", baseline)
        for k, name in enumerate(METRICS_HEADER.split(",")[2:], start=2):
            log.data[name][rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, k]
        return log


@dataclass
class SavingsTable:
    per_slot: np.ndarray     # (slots, sites) percent
    hourly: np.ndarray       # (24,) mean over sites and days
    run_mean: float


def compute_savings(log: MetricsLog, baseline: float) -> SavingsTable:
    if baseline <= 0:
        raise ValueError("baseline must be > 0")
    per_slot = 100.0 * (1.0 - log.theta_site / baseline)
    hour = (np.arange(log.n_slots) * log.slot_seconds // 3600) % 24
    hourly = np.full(24, np.nan)
    for h in range(24):
        sel = hour == h
        if sel.any():
            hourly[h] = per_slot[sel].mean()
    run_mean = float(per_slot.mean()) if per_slot.size else math.nan
    return SavingsTable(per_slot, hourly, run_mean)


def window_mean(hourly: np.ndarray, start: int, stop: int) -> float:
    """Mean of hourly values for hours in [start, stop)."""
    return float(np.nanmean(hourly[start:stop]))


# --------------------------------------------------------------------------
# simulation


def run_sim(cfg: SimConfig, scenario: Scenario | None = None, forecasts=None,
            train_cfg: fc.TrainConfig | None = None, check: bool = True) -> MetricsLog:
    """Simulate cfg.days of slots for every site under cfg.controller."""
    sc = scenario or build_scenario(cfg)
    if sc.load.shape != (cfg.n_slots, cfg.n_sites):
        raise SimConfigError(f"traces cover {sc.load.shape}, need {(cfg.n_slots, cfg.n_sites)}")
    topo = cfg.build_topology()
    params = [cfg.site_params(float(h)) for h in sc.H_max]
    base = baseline_energy(params[0])
    grid = cfg.grid()
    weights = CostWeights(cfg.gamma)
    if cfg.controller == "LLC" and forecasts is None:
        forecasts = precompute_forecasts(cfg, sc, train_cfg)
    log = MetricsLog(cfg.n_slots, cfg.n_sites, cfg.slot_seconds, cfg.controller, base)
    D = log.data
    states = [SystemState(cfg.initial_battery * cfg.battery_capacity) for _ in range(cfg.n_sites)]
    queues = np.zeros(cfg.n_sites)
    harvest_sum = np.zeros(cfg.n_sites)
    obs_L = np.zeros(cfg.n_sites)
    obs_h = np.zeros(cfg.n_sites)

    for t in range(cfg.n_slots):
        L_t, h_t = sc.load[t], sc.harvest[t]
        if cfg.controller == "NONE":
            _none_slot(cfg, params, states, L_t, h_t, t, D, base)
            continue

        # (1)-(2) independent per-site planning on information up to t-1
        plans = []
        for i in range(cfg.n_sites):
            nbrs = [Neighbor(j, states[j].battery_level, states[j].energy_constrained)
                    for j in topo.adjacency[i]]
            if cfg.controller == "LLC":
                L_hat, h_hat = forecasts
                phi = llc_plan(states[i], (L_hat[t, i], h_hat[t, i]), cfg.horizon, weights, grid,
                               nbrs, params[i])
            else:
                budget = harvest_sum[i] / t if t else 0.0
                phi, queues[i] = open_step(states[i], (obs_L[i], obs_h[i]), cfg.V, queues[i], grid,
                                           nbrs, params[i], weights, budget)
            plans.append(phi)

        # (3) requests on the realized load, then reconciliation
        offered = np.array([cfg.sensitive_ratio * (L_t[i] * params[i].peak_jobs) for i in range(cfg.n_sites)])
        requests = {}
        for i, phi in enumerate(plans):
            for m, f in phi.offload_fractions.items():
                if f > 0:
                    requests[(i, m)] = f * offered[i]
        req_out = np.zeros(cfg.n_sites)
        for (s, _), a in requests.items():
            req_out[s] += a
        capacities = np.zeros(cfg.n_sites)
        for m in range(cfg.n_sites):
            if states[m].energy_constrained:
                continue
            r_m = max(0.0, offered[m] - req_out[m])
            own = local_admission(states[m].battery_level, plans[m].b_next_pred, r_m,
                                  params[m].admission_eps)
            capacities[m] = max(0.0, params[m].site_capacity - own)
        granted = reconcile_flows(requests, capacities)
        w_out = np.zeros(cfg.n_sites)
        w_in = np.zeros(cfg.n_sites)
        for (s, m), a in granted.items():
            w_out[s] += a
            w_in[m] += a
        # guard against rounding above the offered amount
        w_out = np.minimum(w_out, offered)

        # (4) commit at the slot barrier
        for i in range(cfg.n_sites):
            phi = plans[i]
            out = step_site(states[i], phi.harvest_charge_fraction, 0.0, float(L_t[i]), float(h_t[i]),
                            params[i], w_in=float(w_in[i]), b_next_pred=phi.b_next_pred,
                            w_out=float(w_out[i]))
            _record(D, t, i, out, base)
            if check:
                _check_row(out, params[i])
            states[i] = out.state
        harvest_sum += h_t
        obs_L, obs_h = L_t.copy(), h_t.copy()
    return log


def _record(D: dict, t: int, i: int, out, base: float) -> None:
    D["theta_bs"][t, i] = out.theta_bs
    D["theta_mec"][t, i] = out.theta_mec
    D["theta_site"][t, i] = out.theta_site
    D["battery"][t, i] = out.state.battery_level
    D["d_active"][t, i] = out.alloc.d_active
    D["w_local"][t, i] = out.w_nn + out.w_out
    D["w_in"][t, i] = out.w_in
    D["w_out"][t, i] = out.w_out
    D["qos_penalty"][t, i] = (out.w_nn - out.w_out) ** 2
    D["deficit"][t, i] = out.deficit
    D["savings_pct"][t, i] = 100.0 * (1.0 - out.theta_site / base)
    D["offered"][t, i] = out.offered
    D["shed"][t, i] = out.shed
    D["h_c"][t, i] = out.harvest.h_c
    D["h_o"][t, i] = out.harvest.h_o


def _check_row(out, params: SiteParams) -> None:
    if not 0.0 <= out.state.battery_level <= params.capacity:
        raise AssertionError("battery outside bounds")
    out.harvest.check(params.H_max)
    if not check_flow_conservation(out.flows):
        raise AssertionError("flow conservation violated")
    if out.shed < -1e-9 or out.w_nn < 0:
        raise AssertionError("negative admission or shed")


def _none_slot(cfg, params, states, L_t, h_t, t, D, base) -> None:
    """Unmanaged site: every container on at full load, no offloading."""
    for i, p in enumerate(params):
        c = p.coeffs
        theta_bs = c.bs_idle + c.bs_load
        theta = base
        split = split_harvest(min(float(h_t[i]), p.H_max), theta, p.H_max)
        batt = Battery(states[i].battery_level, p.capacity, p.leak, p.charge_eff)
        level, deficit = battery_step(batt, theta - split.h_o, split.h_c)
        offered = p.sensitive_ratio * (L_t[i] * p.peak_jobs)
        states[i] = SystemState(level, 0.0, p.budget, float(L_t[i]), float(h_t[i]), deficit > 0.0)
        row = dict(theta_bs=theta_bs, theta_mec=theta - theta_bs, theta_site=theta, battery=level,
                   d_active=p.budget, w_local=offered, w_in=0.0, w_out=0.0, qos_penalty=offered ** 2,
                   deficit=deficit, savings_pct=0.0, offered=offered, shed=0.0, h_c=split.h_c, h_o=split.h_o)
        for k, v in row.items():
            D[k][t, i] = v


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    value: float
    savings: dict        # controller -> run-mean savings %
    theta_mec: dict      # controller -> mean theta_mec J/slot


def sweep(cfg: SimConfig, variable: str, values: Sequence, controllers: Sequence[str] = ("LLC", "OPEN"),
          seeds: Sequence[int] | None = None, train_cfg: fc.TrainConfig | None = None) -> list[SweepRow]:
    """Re-run the simulation for each value with common random numbers across values."""
    if variable not in ("gamma", "containers"):
        raise SimConfigError(f"cannot sweep {variable!r}")
    if not len(values):
        raise SimConfigError("values must be non-empty")
    seeds = [cfg.seed] if seeds is None else list(seeds)
    scenarios = {s: build_scenario(replace(cfg, seed=s)) for s in seeds}
    fcasts = {}
    rows = []
    for v in values:
        v = int(v) if variable == "containers" else float(v)
        sav, mec = {}, {}
        for ctl in controllers:
            s_acc, m_acc = [], []
            for s in seeds:
                run_cfg = replace(cfg, seed=s, controller=ctl, **{variable: v})
                fkey = (s, run_cfg.forecaster)
                if ctl == "LLC" and fkey not in fcasts:
                    fcasts[fkey] = precompute_forecasts(run_cfg, scenarios[s], train_cfg)
                log = run_sim(run_cfg, scenarios[s], fcasts.get(fkey), train_cfg)
                s_acc.append(compute_savings(log, log.baseline).run_mean)
                m_acc.append(float(log.theta_mec.mean()))
            sav[ctl] = float(np.mean(s_acc))
            mec[ctl] = float(np.mean(m_acc))
        rows.append(SweepRow(v, sav, mec))
    return rows
