"""V2V path-loss model and per-edge transmission time.

Path loss is the free-space line-of-sight term plus a distance-dependent
attenuation, both in dB. Transfer time is data size (MB) times a linear
seconds-per-megabyte map of the path loss; same-vehicle transfers are free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"

# below 1 m the log-distance model is meaningless; clamp instead of blowing up
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class ChannelParams:
    fc_ghz: float = 5.9
    sigma_delta_db: float = 3.0
    sigma_beta_db: float = 4.5
    psi_a: float = 0.15
    psi_b: float = 0.001
    mode: str = DETERMINISTIC
    seed: int = 0

    def __post_init__(self):
        if self.fc_ghz <= 0:
            raise ValueError("fc_ghz must be positive")
        if self.sigma_delta_db < 0 or self.sigma_beta_db < 0:
            raise ValueError("shadowing deviations must be non-negative")
        if self.mode not in (DETERMINISTIC, STOCHASTIC):
            raise ValueError(f"unknown channel mode {self.mode!r}")


def mu_beta_db(d: float) -> float:
    return 5.0 + max(0.0, 15.0 * math.log10(d) - 41.0)


def path_loss(d: float, t_slot: int, p: ChannelParams,
              pair: tuple[int, int] = (0, 0)) -> float:
    """Path loss in dB between a vehicle pair at distance d (meters).

    Deterministic mode drops the fluctuation term and pins the attenuation at
    its mean. Stochastic mode draws both as Gaussians in the dB domain, seeded
    by (unordered pair, slot) so a given transfer's channel is reproducible
    and direction-symmetric.
    """
    if d <= 0:
        raise ValueError("distance must be positive")
    los = 32.4 + 20.0 * math.log10(d) + 20.0 * math.log10(p.fc_ghz)
    mu = mu_beta_db(d)
    if p.mode == DETERMINISTIC:
        return los + mu
    lo, hi = min(pair), max(pair)
    rng = np.random.default_rng([p.seed, lo, hi, int(t_slot)])
    delta = rng.normal(0.0, p.sigma_delta_db)
    beta = rng.normal(mu, p.sigma_beta_db)
    return los + delta + beta


def psi(pl_db: float, p: ChannelParams) -> float:
    """Seconds per megabyte as a monotone increasing map of path loss."""
    return p.psi_a * pl_db + p.psi_b


def transmission_time(c_mb: float, m: int, n: int, t_slot: int, fleet,
                      p: ChannelParams, strict: bool = False) -> float:
    """Transfer time (s) of c_mb megabytes from vehicle m to n at t_slot.

    With strict=True both vehicles must be inside their dwell windows; the
    scheduling engine uses the relaxed form with track-clamped positions.
    """
    if c_mb < 0:
        raise ValueError("data size must be non-negative")
    if m == n:
        return 0.0
    if strict:
        for vid in (m, n):
            if not fleet.vehicle(vid).present(t_slot):
                raise ValueError(f"vehicle {vid} absent at slot {t_slot}")
    d = max(fleet.distance_clamped(m, n, t_slot), MIN_DISTANCE_M)
    return c_mb * psi(path_loss(d, t_slot, p, pair=(m, n)), p)
