"""Vehicle fleet construction: truncated-Gaussian speeds, straight-line or
trace-driven tracks, and dwell windows inside the RSU coverage disk.

Time is slotted at ``MobilityParams.slot_length`` (1 s). Vehicle 1 is the
task owner and is pinned present for the whole horizon so local execution is
always an option.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

OWNER_ID = 1


class TraceError(ValueError):
    """Raised for malformed or empty mobility trace files."""


@dataclass(frozen=True)
class MobilityParams:
    mu_g: float = 13.9          # 50 km/h
    sigma_g: float = 2.78       # 10 km/h
    g_min: float = 5.0
    g_max: float = 25.0
    coverage_d: float = 1000.0  # RSU coverage diameter, meters
    slot_length: float = 1.0
    region: tuple[float, float] = (1000.0, 1000.0)
    horizon: int = 300          # slots simulated for the always-present owner

    def __post_init__(self):
        if not self.g_min < self.g_max:
            raise ValueError("g_min must be < g_max")
        if self.coverage_d <= 0 or self.slot_length <= 0:
            raise ValueError("coverage_d and slot_length must be positive")

    @property
    def rsu_center(self) -> tuple[float, float]:
        return (self.region[0] / 2.0, self.region[1] / 2.0)


@dataclass(frozen=True)
class VehicleState:
    id: int
    speed_g: float
    capability_f: float         # GHz
    arrival_at: float
    departure_dt: float
    track: np.ndarray           # (n_slots, 2) positions for slots track_t0..
    track_t0: int

    def present(self, t: float) -> bool:
        return self.arrival_at <= t <= self.departure_dt

    def position(self, t_slot: int) -> np.ndarray:
        """Position at an integer slot, clamped to the recorded track."""
        idx = min(max(int(t_slot) - self.track_t0, 0), len(self.track) - 1)
        return self.track[idx]


@dataclass(frozen=True)
class Fleet:
    vehicles: tuple[VehicleState, ...]
    params: MobilityParams
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {v.id: v for v in self.vehicles})

    def __len__(self):
        return len(self.vehicles)

    def vehicle(self, m: int) -> VehicleState:
        try:
            return self._by_id[m]
        except KeyError:
            raise KeyError(f"unknown vehicle id {m}") from None

    @property
    def ids(self) -> list[int]:
        return [v.id for v in self.vehicles]

    @property
    def owner(self) -> VehicleState:
        return self.vehicles[0]

    def distance(self, m: int, n: int, t_slot: int) -> float:
        """Euclidean distance at slot t; errors if either vehicle is absent."""
        if m == n:
            return 0.0
        vm, vn = self.vehicle(m), self.vehicle(n)
        for v in (vm, vn):
            if not v.present(t_slot):
                raise ValueError(f"vehicle {v.id} absent at slot {t_slot}")
        return float(np.hypot(*(vm.position(t_slot) - vn.position(t_slot))))

    def distance_clamped(self, m: int, n: int, t_slot: int) -> float:
        """Distance with positions clamped to each vehicle's track window."""
        if m == n:
            return 0.0
        vm, vn = self.vehicle(m), self.vehicle(n)
        return float(np.hypot(*(vm.position(t_slot) - vn.position(t_slot))))


def truncated_gaussian_pdf(g: float, p: MobilityParams, literal: bool = False) -> float:
    """Speed density on [g_min, g_max].

    Default mode is the properly normalized truncated normal. The literal
    mode keeps the printed form whose error-function normalizer is off by a
    factor of sqrt(2) (it integrates to sqrt(2), not 1).
    """
    if g < p.g_min or g > p.g_max:
        return 0.0
    a = (p.g_max - p.mu_g) / (p.sigma_g * math.sqrt(2.0))
    b = (p.g_min - p.mu_g) / (p.sigma_g * math.sqrt(2.0))
    gauss = math.exp(-((g - p.mu_g) ** 2) / (2.0 * p.sigma_g ** 2)) / (
        p.sigma_g * math.sqrt(2.0 * math.pi))
    denom = (special.erf(a) - special.erf(b)) / 2.0
    pdf = gauss / denom
    if literal:
        pdf *= math.sqrt(2.0)
    return pdf


def _truncnorm(p: MobilityParams):
    a = (p.g_min - p.mu_g) / p.sigma_g
    b = (p.g_max - p.mu_g) / p.sigma_g
    return stats.truncnorm(a, b, loc=p.mu_g, scale=p.sigma_g)


def sample_speed(rng: np.random.Generator, p: MobilityParams, size=None):
    out = _truncnorm(p).rvs(size=size, random_state=rng)
    return float(out) if size is None else out


def _straight_track(start: np.ndarray, heading: float, speed: float,
                    arrival: float, t0: int, n_slots: int) -> np.ndarray:
    direction = np.array([math.cos(heading), math.sin(heading)])
    ts = np.arange(t0, t0 + n_slots, dtype=float)
    return start[None, :] + direction[None, :] * speed * (ts - arrival)[:, None]


def _random_point_in_disk(rng: np.random.Generator, center, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([center[0] + r * math.cos(theta), center[1] + r * math.sin(theta)])


def build_fleet(n_vehicles: int, seed: int, p: MobilityParams | None = None,
                f_range: tuple[float, float] = (1.0, 10.0)) -> Fleet:
    """Build a synthetic fleet: owner pinned for the whole horizon, the rest
    arriving uniformly in [1, 5] s and leaving when they exit the coverage
    disk. Deterministic given the seed; each vehicle draws from its own
    substream so a vehicle's parameters do not depend on the fleet size.
    """
    if n_vehicles < 1:
        raise ValueError("need at least the task owner")
    p = p or MobilityParams()
    center = np.asarray(p.rsu_center)
    radius = p.coverage_d / 2.0
    vehicles = []
    for vid in range(1, n_vehicles + 1):
        rng = np.random.default_rng([seed, vid])
        speed = sample_speed(rng, p)
        capability = float(rng.uniform(*f_range))
        start = _random_point_in_disk(rng, center, radius)
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        if vid == OWNER_ID:
            arrival, departure = 0.0, math.inf
            track = _straight_track(start, heading, speed, arrival, 0, p.horizon + 1)
        else:
            arrival = float(rng.uniform(1.0, 5.0))
            t0 = math.ceil(arrival)
            track = _straight_track(start, heading, speed, arrival, t0, p.horizon + 1)
            inside = np.hypot(*(track - center).T) <= radius
            if not inside[0]:
                # spawned near the boundary and exited before the first whole
                # slot; dwell collapses to the arrival instant
                departure = arrival
                track = track[:1]
            else:
                last = int(np.argmin(inside)) - 1 if not inside.all() else len(inside) - 1
                departure = float(t0 + last)
                track = track[:last + 1]
        vehicles.append(VehicleState(vid, speed, capability, arrival, departure,
                                     track, math.ceil(arrival)))
    return Fleet(tuple(vehicles), p)


def ingest_trace(path, p: MobilityParams | None = None, seed: int = 0,
                 f_range: tuple[float, float] = (1.0, 10.0)) -> Fleet:
    """Load a fleet from a CSV trace (`time_s,vehicle_id,x_m,y_m,speed_mps`).

    Positions are linearly interpolated onto integer slots across timestamp
    gaps. AT/DT are the first/last sample times inside the coverage disk.
    Vehicles are relabeled 1..n in order of first appearance; the trace has no
    capability column, so capabilities are drawn per-vehicle from f_range.
    """
    p = p or MobilityParams()
    center = np.asarray(p.rsu_center)
    radius = p.coverage_d / 2.0
    rows: dict = {}
    order: list = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty trace (no vehicles, no owner)")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, raw_id, x, y, speed = (float(row[0]), row[1], float(row[2]),
                                          float(row[3]), float(row[4]))
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if raw_id not in rows:
                rows[raw_id] = []
                order.append(raw_id)
            rows[raw_id].append((t, x, y, speed))
    if not rows:
        raise TraceError(f"{path}: empty trace (no vehicles, no owner)")

    vehicles = []
    for vid, raw_id in enumerate(order, start=1):
        samples = sorted(rows[raw_id])
        ts = np.array([s[0] for s in samples])
        xs = np.array([s[1] for s in samples])
        ys = np.array([s[2] for s in samples])
        inside = np.hypot(xs - center[0], ys - center[1]) <= radius
        if not inside.any():
            continue  # never entered the coverage disk
        arrival = float(ts[inside][0])
        departure = float(ts[inside][-1])
        t0 = math.ceil(arrival)
        slots = np.arange(t0, math.floor(departure) + 1, dtype=float)
        if len(slots) == 0:
            slots = np.array([arrival])
        track = np.column_stack([np.interp(slots, ts, xs), np.interp(slots, ts, ys)])
        rng = np.random.default_rng([seed, vid])
        capability = float(rng.uniform(*f_range))
        speed = float(np.mean([s[3] for s in samples]))
        vehicles.append(VehicleState(vid, speed, capability, arrival, departure,
                                     track, int(slots[0])))
    if not vehicles:
        raise TraceError(f"{path}: no vehicle ever inside the coverage disk")
    return Fleet(tuple(vehicles), p)


def serialize_trace(fleet: Fleet, path):
    """Write a fleet back out at slot resolution (inverse of ingest_trace)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "vehicle_id", "x_m", "y_m", "speed_mps"])
        for v in fleet.vehicles:
            for i, (x, y) in enumerate(v.track):
                writer.writerow([float(v.track_t0 + i), v.id, x, y, v.speed_g])
