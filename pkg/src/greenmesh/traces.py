"""Traffic-load and harvested-energy traces.

CSV ingestion, normalization, synthetic generators shaped like a protected-area
deployment (visitor traffic, solar, wind), X-means clustering of daily load
profiles, and the delay-sensitive / delay-tolerant workload split.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, TextIO

import numpy as np

Unit = Literal["normalized", "joules-per-slot", "jobs-per-slot"]
UNITS = ("normalized", "joules-per-slot", "jobs-per-slot")

DEFAULT_SLOT_SECONDS = 1800
DEFAULT_SENSITIVE_RATIO = 0.8

# A daily profile is a plain float vector of length slots_per_day.
DailyProfile = np.ndarray


class TraceError(ValueError):
    """Malformed or invalid trace data.  ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceParseError(TraceError):
    pass


class TraceValidationError(TraceError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    slot_seconds: int = DEFAULT_SLOT_SECONDS
    unit: Unit = "normalized"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", vals)
        if self.unit not in UNITS:
            raise TraceValidationError(f"unknown unit {self.unit!r}")
        if int(self.slot_seconds) != self.slot_seconds or self.slot_seconds <= 0:
            raise TraceValidationError("slot_seconds must be a positive integer")
        if vals.size:
            if not np.all(np.isfinite(vals)):
                raise TraceValidationError("non-finite sample")
            if vals.min() < 0:
                raise TraceValidationError("negative sample")
            if self.unit == "normalized" and vals.max() > 1.0:
                raise TraceValidationError("normalized sample above 1")

    def __len__(self) -> int:
        return self.values.size

    @property
    def slots_per_day(self) -> int:
        return 86400 // self.slot_seconds

    @property
    def peak(self) -> float:
        """Series maximum; used as H_max for harvest traces."""
        return float(self.values.max()) if self.values.size else 0.0

    def scaled(self, factor: float, unit: Unit) -> "TimeSeries":
        return TimeSeries(self.values * factor, self.slot_seconds, unit)


# --------------------------------------------------------------------------
# CSV I/O


def load_trace_csv(source: str | bytes | TextIO | io.BufferedIOBase,
                   unit: Unit = "normalized",
                   slot_seconds: int = DEFAULT_SLOT_SECONDS) -> TimeSeries:
    """Parse a one-value-per-line (or comma separated) trace.

    A non-numeric first line is treated as a header.  Blank lines are skipped.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    values: list[float] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip().lstrip("﻿")
        if not line:
            continue
        cells = [c.strip() for c in line.split(",") if c.strip()]
        parsed = []
        for cell in cells:
            try:
                parsed.append(float(cell))
            except ValueError:
                if lineno == 1 and not values:
                    parsed = None
                    break
                raise TraceParseError(f"cannot parse {cell!r} as a number", lineno) from None
        if parsed is None:
            continue
        for v in parsed:
            if not math.isfinite(v):
                raise TraceValidationError("non-finite sample", lineno)
            if v < 0:
                raise TraceValidationError(f"negative sample {v}", lineno)
            if unit == "normalized" and v > 1.0:
                raise TraceValidationError(f"normalized sample {v} above 1", lineno)
        values.extend(parsed)
    return TimeSeries(np.array(values, dtype=float), slot_seconds, unit)


def write_trace_csv(ts: TimeSeries, sink: TextIO) -> None:
    sink.write("value\n")
    for v in ts.values:
        sink.write(f"{float(v)!r}\n")


# --------------------------------------------------------------------------
# transforms


def normalize(ts: TimeSeries) -> TimeSeries:
    peak = ts.peak
    if peak <= 0:
        return TimeSeries(np.zeros_like(ts.values), ts.slot_seconds, "normalized")
    vals = np.minimum(ts.values / peak, 1.0)
    return TimeSeries(vals, ts.slot_seconds, "normalized")


def slice_days(ts: TimeSeries | np.ndarray, slots_per_day: int) -> list[DailyProfile]:
    if slots_per_day < 1:
        raise ValueError("slots_per_day must be >= 1")
    vals = ts.values if isinstance(ts, TimeSeries) else np.asarray(ts, dtype=float)
    n_days = vals.size // slots_per_day
    return [vals[d * slots_per_day:(d + 1) * slots_per_day].copy() for d in range(n_days)]


def split_workloads(load: float | np.ndarray, ratio: float = DEFAULT_SENSITIVE_RATIO):
    """Return (delay_sensitive, delay_tolerant); the two always sum to ``load``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    sensitive = ratio * load
    return sensitive, load - sensitive


# --------------------------------------------------------------------------
# synthetic generators

# Visitor-traffic archetypes: (first hump hour, width, height, second hump hour, width, height, floor).
# All four keep the early-morning trough; they differ in where the busy hours sit.
TRAFFIC_ARCHETYPES = (
    (10.5, 1.6, 0.85, 15.5, 1.8, 0.95, 0.04),   # classic park day
    (9.0, 1.3, 0.95, 13.0, 1.5, 0.60, 0.05),    # morning-heavy tours
    (12.5, 2.2, 0.70, 18.0, 1.4, 0.90, 0.06),   # afternoon / sunset visitors
    (11.0, 1.5, 0.45, 20.5, 1.6, 0.75, 0.08),   # camp-site evenings
)


def _slot_hours(days: int, slots_per_day: int) -> np.ndarray:
    t = np.arange(days * slots_per_day)
    return (t % slots_per_day + 0.5) * 24.0 / slots_per_day


def traffic_profile(archetype: int, slots_per_day: int = 48) -> np.ndarray:
    """Noise-free normalized daily traffic shape for one archetype."""
    h1, s1, a1, h2, s2, a2, floor = TRAFFIC_ARCHETYPES[archetype % len(TRAFFIC_ARCHETYPES)]
    x = _slot_hours(1, slots_per_day)
    shape = floor + a1 * np.exp(-0.5 * ((x - h1) / s1) ** 2) + a2 * np.exp(-0.5 * ((x - h2) / s2) ** 2)
    return np.clip(shape, 0.0, 1.0)


def solar_profile(slots_per_day: int = 48, sunrise: float = 6.0, sunset: float = 18.5) -> np.ndarray:
    x = _slot_hours(1, slots_per_day)
    day = (x > sunrise) & (x < sunset)
    out = np.zeros_like(x)
    out[day] = np.sin(np.pi * (x[day] - sunrise) / (sunset - sunrise)) ** 1.5
    return out


def synth_trace(kind: str, days: int, seed: int, noise: float = 0.05,
                archetype: int | None = None, slot_seconds: int = DEFAULT_SLOT_SECONDS) -> TimeSeries:
    """Synthetic normalized trace.

    traffic: diurnal double hump with an early-morning trough (``archetype``
    picks one of :data:`TRAFFIC_ARCHETYPES`; drawn from ``seed`` if omitted).
    solar: daylight bell, exactly zero at night, per-day cloudiness.
    wind: smoothed mean-reverting positive random walk.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    spd = 86400 // slot_seconds
    n = days * spd

    if kind == "traffic":
        if archetype is None:
            archetype = int(rng.integers(len(TRAFFIC_ARCHETYPES)))
        base = np.tile(traffic_profile(archetype, spd), days)
        day_scale = np.repeat(rng.uniform(0.95, 1.0, size=days), spd)
        vals = base * day_scale + noise * rng.standard_normal(n)
    elif kind == "solar":
        base = np.tile(solar_profile(spd), days)
        cloud = np.repeat(rng.uniform(0.55, 1.0, size=days), spd)
        jitter = 1.0 + noise * rng.standard_normal(n)
        vals = base * cloud * jitter
        vals[base == 0] = 0.0
    elif kind == "wind":
        # Ornstein-Uhlenbeck style walk, then a short moving average.
        x = np.empty(n + 5)
        x[0] = rng.uniform(0.3, 0.6)
        eps = rng.standard_normal(n + 5)
        for t in range(1, n + 5):
            x[t] = x[t - 1] + 0.05 * (0.45 - x[t - 1]) + 0.06 * eps[t]
        kernel = np.ones(6) / 6.0
        smooth = np.convolve(x, kernel, mode="valid")[:n]
        vals = smooth + noise * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown trace kind {kind!r}")

    return TimeSeries(np.clip(vals, 0.0, 1.0), slot_seconds, "normalized")


# --------------------------------------------------------------------------
# X-means


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    bic: float
    # (k, global BIC) for every accepted structure, in order.
    history: list = field(default_factory=list)

    def predict(self, profiles: Iterable[np.ndarray]) -> np.ndarray:
        X = np.atleast_2d(np.asarray(list(profiles), dtype=float))
        return _nearest(X, self.centroids)


KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 200


def _nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def kmeans(X: np.ndarray, centroids: np.ndarray, tol: float = KMEANS_TOL,
           max_iter: int = KMEANS_MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from the given centroids.  Empty clusters keep their centroid."""
    C = np.array(centroids, dtype=float, copy=True)
    labels = _nearest(X, C)
    for _ in range(max_iter):
        newC = C.copy()
        for j in range(C.shape[0]):
            members = X[labels == j]
            if len(members):
                newC[j] = members.mean(axis=0)
        shift = np.abs(newC - C).max()
        C = newC
        labels = _nearest(X, C)
        if shift <= tol:
            break
    return C, labels


def bic_score(X: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    """Pelleg-Moore BIC under identical spherical Gaussians (higher is better)."""
    R, M = X.shape
    K = centroids.shape[0]
    if R <= K:
        return -math.inf
    sse = float(((X - centroids[labels]) ** 2).sum())
    var = sse / (M * (R - K))
    # Zero-spread data: floor the variance so identical points still score finitely.
    var = max(var, 1e-12)
    loglik = -0.5 * R * M * math.log(2 * math.pi * var) - 0.5 * M * (R - K)
    for j in range(K):
        Rn = int((labels == j).sum())
        if Rn:
            loglik += Rn * math.log(Rn / R)
    n_params = (K - 1) + M * K + 1
    return loglik - 0.5 * n_params * math.log(R)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = ((X[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def xmeans_cluster(profiles: list[np.ndarray], k_min: int = 1, k_max: int = 8,
                   seed: int = 0) -> ClusterModel:
    """X-means: k-means plus BIC-gated centroid splitting."""
    X = np.asarray(profiles, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("profiles must be a non-empty list of equal-length vectors")
    if not 1 <= k_min <= k_max:
        raise ValueError("need 1 <= k_min <= k_max")
    rng = np.random.default_rng(seed)
    R = len(X)
    k_max = min(k_max, R)
    k_min = min(k_min, R)

    C, labels = kmeans(X, _kmeanspp(X, k_min, rng))
    best = ClusterModel(C.shape[0], C, labels, bic_score(X, C, labels))
    best.history.append((best.k, best.bic))

    while best.k < k_max:
        new_centers = []
        budget = k_max - best.k
        for j in range(best.k):
            members = X[best.assignments == j]
            parent = best.centroids[j]
            if budget > 0 and len(members) >= 4:
                spread = np.sqrt(((members - parent) ** 2).sum(axis=1).mean())
                direction = rng.standard_normal(X.shape[1])
                direction /= np.linalg.norm(direction)
                seeds = np.stack([parent + 0.5 * spread * direction,
                                  parent - 0.5 * spread * direction])
                kids, kid_labels = kmeans(members, seeds)
                if np.bincount(kid_labels, minlength=2).min() > 0:
                    parent_bic = bic_score(members, parent[None], np.zeros(len(members), dtype=int))
                    kids_bic = bic_score(members, kids, kid_labels)
                    if kids_bic > parent_bic:
                        new_centers.extend(kids)
                        budget -= 1
                        continue
            new_centers.append(parent)
        if len(new_centers) == best.k:
            break
        C, labels = kmeans(X, np.array(new_centers))
        counts = np.bincount(labels, minlength=C.shape[0])
        if counts.min() == 0:
            C = C[counts > 0]
            labels = _nearest(X, C)
        bic = bic_score(X, C, labels)
        if C.shape[0] <= best.k or bic <= best.bic:
            break
        history = best.history + [(C.shape[0], bic)]
        best = ClusterModel(C.shape[0], C, labels, bic, history)

    return best
