"""Simulation scenes: geometry, pathloss, Rayleigh fading, schedules and baselines.

The base station sits at the origin and the receiver (SUE) on the positive x
axis.  Every random quantity of device ``i`` comes from its own seed stream
``(seed, i, k)``, so a device's draw does not depend on how many devices or
antennas the scene has: the channel of an ``N``-antenna scene is a prefix of
the ``N + 1``-antenna one, and the fading is shared between placements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import ChannelSet, NetworkInstance, ScheduleFrame, SolutionReport
from .sca import AlgorithmConfig, InitializationError, run_cqr

PLACEMENTS = ("near_bs", "mid", "near_sue", "uniform_within_100m_of_sue")
NOISE_W = 10 ** ((-114 - 30) / 10)


@dataclass(frozen=True)
class Geometry:
    bs_sue_distance: float = 200.0
    placement: str = "uniform_within_100m_of_sue"
    max_sue_distance: float = 100.0
    cluster_radius: float = 10.0
    # cluster centres on the BS->SUE axis, metres from the BS
    near_bs_x: float = 40.0
    mid_x: float = 100.0
    near_sue_x: float = 130.0

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}; expected one of {PLACEMENTS}")
        if self.bs_sue_distance <= 0 or self.max_sue_distance <= 0 or self.cluster_radius < 0:
            raise ValueError("distances must be positive")

    @property
    def sue(self) -> np.ndarray:
        return np.array([self.bs_sue_distance, 0.0])

    def positions(self, I: int, seed: int) -> np.ndarray:
        """``I x 2`` device coordinates."""
        out = np.empty((I, 2))
        for i in range(I):
            rng = np.random.default_rng([seed, i, 2])
            r, a = math.sqrt(rng.random()), rng.random()
            if self.placement == "uniform_within_100m_of_sue":
                # uniform on the half disc around the SUE that faces the BS
                rad = self.max_sue_distance * r
                ang = math.pi / 2 + math.pi * a
                out[i] = self.sue + rad * np.array([math.cos(ang), math.sin(ang)])
            else:
                x = {"near_bs": self.near_bs_x, "mid": self.mid_x, "near_sue": self.near_sue_x}[self.placement]
                ang = 2 * math.pi * a
                out[i] = np.array([x, 0.0]) + self.cluster_radius * r * np.array([math.cos(ang), math.sin(ang)])
        return out

    def distances(self, I: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """(BS->device, device->SUE) distances in metres, floored at 1 m."""
        p = self.positions(I, seed)
        d_bs = np.maximum(np.linalg.norm(p, axis=1), 1.0)
        d_sue = np.maximum(np.linalg.norm(p - self.sue, axis=1), 1.0)
        return d_bs, d_sue


def pathloss_gain(d, exponent: float = 3.0, antenna_gain_db: float = 0.0):
    """Linear power gain ``10^(G/10) d^-exponent`` with a 1 m reference."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = 10 ** (antenna_gain_db / 10) * d ** (-exponent)
    return float(out) if out.ndim == 0 else out


def _cn(rng, shape) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian samples."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def draw_channels(geometry: Geometry, N: int, I: int, seed: int, exponent: float = 3.0,
                  bs_gain_db: float = 5.0) -> ChannelSet:
    """Rayleigh fading scaled by pathloss; the BS antenna gain applies to BS links only."""
    d_bs, d_sue = geometry.distances(I, seed)
    h = np.empty((I, N), dtype=complex)
    g = np.empty(I, dtype=complex)
    for i in range(I):
        h[i] = _cn(np.random.default_rng([seed, i, 0]), (N,)) * math.sqrt(pathloss_gain(d_bs[i], exponent, bs_gain_db))
        g[i] = _cn(np.random.default_rng([seed, i, 1]), ())[()] * math.sqrt(pathloss_gain(d_sue[i], exponent))
    return ChannelSet(h, g)


def build_instance(geometry: Geometry, N: int, I: int, C, seed: int, spreading_factor: int = 100,
                   frame_length: float = 10.0, efficiency: float = 0.8, noise: float = NOISE_W,
                   bs_power: float = 1.0) -> NetworkInstance:
    """Scene with the simulation defaults (K=100, T=10, eta=0.8, -114 dBm noise)."""
    return NetworkInstance(
        channels=draw_channels(geometry, N, I, seed),
        rate_targets=np.broadcast_to(np.asarray(C, dtype=float), (I,)),
        spreading_factor=spreading_factor,
        frame_length=frame_length,
        efficiency=efficiency,
        receiver_noise=noise,
        device_noise=noise,
        bs_power=bs_power,
    )


def tsr_schedule(I: int, slots_per_device=1, slot_count: int | None = None, rate_targets=None) -> ScheduleFrame:
    """Consecutive disjoint MTI runs, device order; all other slots are EHS."""
    counts = np.broadcast_to(np.asarray(slots_per_device, dtype=int), (I,))
    if np.any(counts < 0):
        raise ValueError("slot counts must be nonnegative")
    total = int(counts.sum())
    J = total if slot_count is None else int(slot_count)
    if total > J:
        raise ValueError(f"{total} MTI slots requested but the frame has {J}")
    if J < 1:
        raise ValueError("the frame needs at least one slot")
    if rate_targets is not None:
        for i, (n, c) in enumerate(zip(counts, np.broadcast_to(rate_targets, (I,)))):
            if n == 0 and c > 0:
                raise ValueError(f"device {i} has a positive rate target but no MTI slot")
    runs, start = [], 0
    for n in counts:
        runs.append(tuple(range(start, start + int(n))))
        start += int(n)
    return ScheduleFrame(tuple(runs), J)


def tdma_baseline(instance: NetworkInstance, config: AlgorithmConfig | None = None):
    """Equal frozen slots, device ``i`` transmits in slot ``i``, powers optimized.

    Returns ``(report, trace)``; an unreachable target yields an
    ``infeasible`` report instead of an exception.
    """
    I, J = instance.device_count, instance.slot_count
    if J < I:
        raise ValueError("TDMA needs at least one slot per device")
    schedule = tsr_schedule(I, 1, J)
    tau = np.full(J, instance.frame_length / J)
    try:
        return run_cqr(instance, schedule, config, fixed_durations=tau)
    except InitializationError:
        N = instance.antenna_count
        empty = SolutionReport(
            total_energy=math.inf, beamformers=[np.zeros(N, complex)] * J, durations=tau,
            rates=np.zeros(I), harvested=np.zeros((I, J)), reflected_energy=np.zeros(I),
            rank_residuals=np.zeros(J), status="infeasible", method="tdma",
        )
        return empty, None


# ---------------------------------------------------------------------------
# IoT protocol comparison


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    carrier_hz: float
    bandwidth_hz: float
    power_w: float

    def __post_init__(self):
        if self.power_w <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("power and bandwidth must be positive")


def load_protocols(path=None) -> list[ProtocolSpec]:
    """Rows ``name carrier_hz bandwidth_hz power_w``; ``#`` starts a comment."""
    if path is None:
        text = resources.files("symradio").joinpath("data/table3.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, carrier, bw, power = line.split()
        out.append(ProtocolSpec(name, float(carrier), float(bw), float(power)))
    return out


def iot_ee_point(protocol: ProtocolSpec, se: float) -> float:
    """Energy efficiency in bits/J at spectral efficiency ``se``."""
    if se < 0:
        raise ValueError("spectral efficiency must be nonnegative")
    return se * protocol.bandwidth_hz / protocol.power_w
