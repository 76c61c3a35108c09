"""Command-line front end.

Usage: greenmesh <subcommand> [--config FILE] [--set key=value ...] [key=value ...]

Every tunable is a dotted key (``sim.gamma``, ``train.epochs``, ...).  Outputs go
to ``$GREENMESH_OUT/<subcommand>-<run id>/`` (default root ``./out``); the run id
is a hash of the resolved configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import forecast as fc
from . import sim
from .controller import baseline_energy
from .traces import TRAFFIC_ARCHETYPES, TimeSeries, slice_days, synth_trace, write_trace_csv, xmeans_cluster

SUBCOMMANDS = ("synth-traces", "cluster", "train-forecaster", "forecast", "simulate", "sweep-gamma",
               "sweep-containers", "report")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TracesConfig:
    kind: str = "traffic"
    days: int = 14
    seed: int = 0
    noise: float = 0.05
    # -1 draws the traffic cluster from the seed
    archetype: int = -1
    count: int = 1


@dataclass(frozen=True)
class ClusterConfig:
    sites: int = 20
    days: int = 7
    k_min: int = 1
    k_max: int = 8
    seed: int = 0


@dataclass(frozen=True)
class ForecastConfig:
    # series kind: traffic-<k>, solar or wind
    kind: str = "traffic-0"
    horizon: int = 3
    days: int = 7
    seed: int = 99


@dataclass(frozen=True)
class SweepConfig:
    gamma_values: tuple = tuple(round(0.1 * i, 1) for i in range(10))
    container_values: tuple = (1, 2, 5, 10, 15, 20)
    seeds: tuple = (0,)
    controllers: tuple = ("LLC", "OPEN")


SECTIONS = {
    "sim": sim.SimConfig,
    "train": fc.TrainConfig,
    "traces": TracesConfig,
    "cluster": ClusterConfig,
    "forecast": ForecastConfig,
    "sweep": SweepConfig,
}


@dataclass
class RunConfig:
    sections: dict

    def __getitem__(self, name):
        return self.sections[name]

    def items(self):
        for sec in SECTIONS:
            obj = self.sections[sec]
            for f in fields(obj):
                yield f"{sec}.{f.name}", getattr(obj, f.name)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    def run_id(self, subcommand: str) -> str:
        return hashlib.sha256((subcommand + "\n" + self.to_text()).encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            proto = default[0] if default else ""
            return tuple(_coerce(key, x, proto) for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(file: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    """defaults < file < overrides; unknown keys and invalid values raise ConfigError."""
    pairs = []
    if file is not None:
        try:
            text = Path(file).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), v))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v))

    values = {sec: {} for sec in SECTIONS}
    for key, raw in pairs:
        sec, _, name = key.partition(".")
        if sec not in SECTIONS or not name:
            raise ConfigError(f"unknown key {key!r}")
        defaults = {f.name: f.default for f in fields(SECTIONS[sec])}
        if name not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        default = defaults[name]
        if default is dataclasses.MISSING:
            default = ""
        values[sec][name] = _coerce(key, raw, default)

    sections = {}
    for sec, cls in SECTIONS.items():
        try:
            sections[sec] = cls(**values[sec])
        except (ValueError, TypeError) as exc:
            bad = ", ".join(f"{sec}.{k}" for k in values[sec]) or sec
            raise ConfigError(f"{bad}: {exc}") from exc
    _validate(sections)
    return RunConfig(sections)


def _validate(s: dict) -> None:
    t, c, f, w = s["traces"], s["cluster"], s["forecast"], s["sweep"]
    if t.kind not in ("traffic", "solar", "wind"):
        raise ConfigError("traces.kind: must be traffic, solar or wind")
    if t.days < 1 or t.count < 1 or t.noise < 0:
        raise ConfigError("traces.days/count must be >= 1 and traces.noise >= 0")
    if t.archetype >= len(TRAFFIC_ARCHETYPES):
        raise ConfigError("traces.archetype: out of range")
    if not 1 <= c.k_min <= c.k_max or c.sites < 1 or c.days < 1:
        raise ConfigError("cluster: need 1 <= k_min <= k_max and sites, days >= 1")
    kinds = [f"traffic-{k}" for k in range(len(TRAFFIC_ARCHETYPES))] + ["solar", "wind"]
    if f.kind not in kinds:
        raise ConfigError(f"forecast.kind: must be one of {kinds}")
    if f.horizon < 1 or f.days < 2:
        raise ConfigError("forecast.horizon must be >= 1 and forecast.days >= 2")
    if not w.gamma_values or any(not 0 <= g <= 1 for g in w.gamma_values):
        raise ConfigError("sweep.gamma_values: must be non-empty and within [0, 1]")
    if not w.container_values or any(v < 0 for v in w.container_values):
        raise ConfigError("sweep.container_values: must be non-empty and >= 0")
    if not w.seeds:
        raise ConfigError("sweep.seeds: must be non-empty")
    if any(x not in ("LLC", "OPEN", "NONE") for x in w.controllers):
        raise ConfigError("sweep.controllers: unknown controller")


# --------------------------------------------------------------------------
# outputs


def out_root() -> Path:
    return Path(os.environ.get("GREENMESH_OUT", "out"))


def _run_dir(cfg: RunConfig, subcommand: str) -> Path:
    d = out_root() / f"{subcommand}-{cfg.run_id(subcommand)}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return d


def write_columns(path: Path, header: list[str], columns: list) -> None:
    """Whitespace-delimited plot data; every row complete."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("plot-data columns differ in length")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in zip(*cols):
            fh.write(" ".join(f"{x:.6g}" for x in row) + "\n")


def _summary(log: sim.MetricsLog, baseline: float) -> tuple[str, sim.SavingsTable]:
    st = sim.compute_savings(log, baseline)
    lines = [
        f"controller {log.controller}",
        f"slots {log.n_slots} sites {log.n_sites}",
        f"baseline_j_per_slot {baseline:.6g}",
        f"run_mean_savings_pct {st.run_mean:.4f}",
        f"savings_02_06_pct {sim.window_mean(st.hourly, 2, 6):.4f}",
        f"savings_09_17_pct {sim.window_mean(st.hourly, 9, 17):.4f}",
        f"mean_theta_site {log.theta_site.mean():.4f}",
        f"mean_theta_mec {log.theta_mec.mean():.4f}",
        f"mean_d_active {log.d_active.mean():.4f}",
        f"total_w_out {log.w_out.sum():.4f}",
        f"total_deficit {log.deficit.sum():.4f}",
    ]
    if "shed" in log.data and log.controller != "?":
        lines.append(f"total_shed {log.shed.sum():.4f}")
    return "\n".join(lines) + "\n", st


def _emit_report(log: sim.MetricsLog, baseline: float, d: Path) -> sim.SavingsTable:
    text, st = _summary(log, baseline)
    (d / "summary.txt").write_text(text, encoding="utf-8")
    hours = np.arange(24)
    ok = ~np.isnan(st.hourly)
    write_columns(d / "hourly_savings.dat", ["hour", "savings_pct"], [hours[ok], st.hourly[ok]])
    return st


# --------------------------------------------------------------------------
# subcommands


def cmd_synth_traces(cfg: RunConfig, args) -> int:
    t = cfg["traces"]
    d = _run_dir(cfg, "synth-traces")
    for k in range(t.count):
        arche = None if t.archetype < 0 else t.archetype
        ts = synth_trace(t.kind, t.days, t.seed + k, t.noise, arche, cfg["sim"].slot_seconds)
        with open(d / f"{t.kind}-{k}.csv", "w", encoding="utf-8") as fh:
            write_trace_csv(ts, fh)
    print(d)
    return 0


def cmd_cluster(cfg: RunConfig, args) -> int:
    c = cfg["cluster"]
    spd = cfg["sim"].slots_per_day
    rng = np.random.default_rng(c.seed)
    profiles, truth = [], []
    for i in range(c.sites):
        arche = int(rng.integers(len(TRAFFIC_ARCHETYPES)))
        ts = synth_trace("traffic", c.days, int(rng.integers(2**31)), cfg["traces"].noise, arche,
                         cfg["sim"].slot_seconds)
        for p in slice_days(ts, spd):
            profiles.append(p)
            truth.append(arche)
    model = xmeans_cluster(profiles, c.k_min, c.k_max, c.seed)
    d = _run_dir(cfg, "cluster")
    (d / "summary.txt").write_text(
        f"k {model.k}\nbic {model.bic:.6f}\nprofiles {len(profiles)}\n"
        + "".join(f"bic_at_k {k} {b:.6f}\n" for k, b in model.history), encoding="utf-8")
    with open(d / "assignments.txt", "w", encoding="utf-8") as fh:
        fh.write("# profile generator cluster\n")
        for i, (g, a) in enumerate(zip(truth, model.assignments)):
            fh.write(f"{i} {g} {int(a)}\n")
    slots = np.arange(spd)
    write_columns(d / "centroids.dat", ["slot"] + [f"c{k}" for k in range(model.k)],
                  [slots] + [model.centroids[k] for k in range(model.k)])
    print(d)
    return 0


def cmd_train_forecaster(cfg: RunConfig, args) -> int:
    f, tc = cfg["forecast"], cfg["train"]
    series = sim.training_series(f.kind, slot_seconds=cfg["sim"].slot_seconds)
    hist = fc.TrainHistory()
    weights, test_rmse = fc.train(series, tc, hist)
    d = _run_dir(cfg, "train-forecaster")
    (d / f"{f.kind}.weights").write_text(weights.to_text(), encoding="utf-8")
    (d / "summary.txt").write_text(
        f"kind {f.kind}\ntest_rmse {test_rmse:.6f}\npersistence_rmse {hist.persistence_rmse:.6f}\n"
        f"best_epoch {hist.best_epoch + 1}\n",
        encoding="utf-8")
    write_columns(d / "loss.dat", ["epoch", "mse"], [np.arange(1, len(hist.epoch_loss) + 1), hist.epoch_loss])
    print(d)
    return 0


def cmd_forecast(cfg: RunConfig, args) -> int:
    f, tc = cfg["forecast"], cfg["train"]
    weights = sim.load_or_train(f.kind, tc, slot_seconds=cfg["sim"].slot_seconds)
    base, _, arche = f.kind.partition("-")
    ts = synth_trace(base, f.days, f.seed, cfg["traces"].noise, int(arche) if arche else None,
                     cfg["sim"].slot_seconds)
    W = tc.window_len
    per_step = fc.horizon_rmse(weights, ts.values, f.horizon, W, W)
    origins = np.arange(W, ts.values.size)
    hist = np.lib.stride_tricks.sliding_window_view(ts.values, W)[origins - W]
    one_step = fc.predict_batch(weights, hist, 1, W)[:, 0]
    d = _run_dir(cfg, "forecast")
    write_columns(d / "forecast_vs_real.dat", ["slot", "real", "forecast"], [origins, ts.values[origins], one_step])
    write_columns(d / "horizon_rmse.dat", ["step", "rmse"], [np.arange(1, f.horizon + 1), per_step])
    (d / "summary.txt").write_text("".join(f"rmse_step_{k + 1} {v:.6f}\n" for k, v in enumerate(per_step)),
                                   encoding="utf-8")
    print(d)
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    sc = cfg["sim"]
    log = sim.run_sim(sc, train_cfg=cfg["train"])
    d = _run_dir(cfg, "simulate")
    with open(d / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        log.write_csv(fh)
    st = _emit_report(log, log.baseline, d)
    print(f"{d}\nrun_mean_savings_pct {st.run_mean:.4f}")
    return 0


def _cmd_sweep(cfg: RunConfig, variable: str, values) -> int:
    w = cfg["sweep"]
    rows = sim.sweep(cfg["sim"], variable, values, w.controllers, w.seeds, cfg["train"])
    name = "gamma" if variable == "gamma" else "containers"
    d = _run_dir(cfg, f"sweep-{name}")
    header = [name] + [f"savings_{c}" for c in w.controllers] + [f"theta_mec_{c}" for c in w.controllers]
    cols = [[r.value for r in rows]]
    cols += [[r.savings[c] for r in rows] for c in w.controllers]
    cols += [[r.theta_mec[c] for r in rows] for c in w.controllers]
    write_columns(d / f"sweep_{name}.dat", header, cols)
    print(d)
    for r in rows:
        print(name, r.value, " ".join(f"{c}={r.savings[c]:.3f}" for c in w.controllers))
    return 0


def cmd_sweep_gamma(cfg: RunConfig, args) -> int:
    return _cmd_sweep(cfg, "gamma", cfg["sweep"].gamma_values)


def cmd_sweep_containers(cfg: RunConfig, args) -> int:
    return _cmd_sweep(cfg, "containers", cfg["sweep"].container_values)


def cmd_report(cfg: RunConfig, args) -> int:
    if not args.run_dir:
        raise ConfigError("report needs a run directory")
    d = Path(args.run_dir)
    metrics = d / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"{metrics} not found")
    run_cfg = parse_config(d / "config.txt") if (d / "config.txt").exists() else cfg
    sc = run_cfg["sim"]
    base = baseline_energy(sc.site_params())
    log = sim.MetricsLog.read_csv(metrics.read_text(encoding="utf-8"), sc.slot_seconds, base)
    log.controller = sc.controller
    st = _emit_report(log, base, d)
    print(f"{d}\nrun_mean_savings_pct {st.run_mean:.4f}")
    return 0


COMMANDS = {
    "synth-traces": cmd_synth_traces,
    "cluster": cmd_cluster,
    "train-forecaster": cmd_train_forecaster,
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-containers": cmd_sweep_containers,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greenmesh", description="Green base-station edge-compute simulator.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("run_dir", nargs="?", help="run directory (report only)")
    p.add_argument("overrides", nargs="*", help="key=value overrides")
    p.add_argument("-c", "--config", help="key = value config file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE")
    return p


def dispatch(subcommand: str, cfg: RunConfig, args=None) -> int:
    args = args or argparse.Namespace(run_dir=None)
    return COMMANDS[subcommand](cfg, args)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = list(args.set) + list(args.overrides)
    # A bare key=value in the run_dir slot is an override for non-report commands.
    if args.run_dir and "=" in args.run_dir and args.subcommand != "report":
        overrides.insert(0, args.run_dir)
        args.run_dir = None
    try:
        cfg = parse_config(args.config, overrides)
        return dispatch(args.subcommand, cfg, args)
    except (ConfigError, sim.SimConfigError, fc.ForecastConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
