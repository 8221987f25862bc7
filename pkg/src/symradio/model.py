"""Symbiotic-radio network instances and the closed-form link physics.

All optimization-internal logarithms are natural; rate targets given in
bits/s/Hz are converted once with ``C * ln 2``.  Interference from other
devices and the devices' own thermal noise are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelSet:
    """BS->device vectors ``h`` (``I x N``) and device->receiver gains ``g`` (``I``)."""

    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        g = np.asarray(self.g, dtype=complex).reshape(-1)
        if h.shape[0] != g.shape[0]:
            raise ValueError(f"{h.shape[0]} BS->device channels but {g.shape[0]} device->receiver gains")
        object.__setattr__(self, "h", _frozen(h, complex))
        object.__setattr__(self, "g", _frozen(g, complex))

    @property
    def device_count(self) -> int:
        return self.h.shape[0]

    @property
    def antenna_count(self) -> int:
        return self.h.shape[1]

    def gram(self, i: int) -> np.ndarray:
        """``H_i = h_i h_i^H`` (rank one, Hermitian PSD)."""
        return np.outer(self.h[i], self.h[i].conj())


@dataclass(frozen=True)
class NetworkInstance:
    """Immutable problem data for one frame."""

    channels: ChannelSet
    rate_targets: np.ndarray  # bits/s/Hz per device
    spreading_factor: int = 100  # K
    frame_length: float = 10.0  # T, seconds
    efficiency: np.ndarray | float = 0.8  # eta_i
    receiver_noise: float = 10 ** ((-114 - 30) / 10)  # W
    device_noise: np.ndarray | float = 10 ** ((-114 - 30) / 10)  # W, informational
    bs_power: float = 1.0  # W, sets the initial covariance
    slot_count: int | None = None  # J, defaults to I

    def __post_init__(self):
        I = self.channels.device_count
        rates = np.broadcast_to(np.asarray(self.rate_targets, dtype=float), (I,))
        eta = np.broadcast_to(np.asarray(self.efficiency, dtype=float), (I,))
        dnoise = np.broadcast_to(np.asarray(self.device_noise, dtype=float), (I,))
        object.__setattr__(self, "rate_targets", _frozen(rates))
        object.__setattr__(self, "efficiency", _frozen(eta))
        object.__setattr__(self, "device_noise", _frozen(dnoise))
        if self.slot_count is None:
            object.__setattr__(self, "slot_count", I)
        if np.any(rates < 0):
            raise ValueError("rate targets must be nonnegative")
        if np.any((eta < 0) | (eta > 1)):
            raise ValueError("conversion efficiency must lie in [0, 1]")
        if self.slot_count < 1 or self.spreading_factor < 1:
            raise ValueError("need at least one slot and K >= 1")
        if self.frame_length <= 0 or self.receiver_noise <= 0 or self.bs_power < 0 or np.any(dnoise < 0):
            raise ValueError("frame length and noise powers must be positive")

    @property
    def antenna_count(self) -> int:
        return self.channels.antenna_count

    @property
    def device_count(self) -> int:
        return self.channels.device_count

    @property
    def nat_targets(self) -> np.ndarray:
        """``K * C_i * ln 2``: the per-device target for ``tau * ln(1 + SNR)``."""
        return self.spreading_factor * self.rate_targets * LN2

    def snr_gain(self, i: int) -> float:
        """``K |g_i|^2 / sigma_UE^2``."""
        return self.spreading_factor * abs(self.channels.g[i]) ** 2 / self.receiver_noise

    def with_targets(self, rate_targets) -> "NetworkInstance":
        return replace(self, rate_targets=rate_targets)


@dataclass(frozen=True)
class ScheduleFrame:
    """Per-device MTI slot sets; every other slot is EHS for that device."""

    mti_slots: tuple[tuple[int, ...], ...]
    slot_count: int

    def __post_init__(self):
        sets = tuple(tuple(sorted(int(j) for j in s)) for s in self.mti_slots)
        object.__setattr__(self, "mti_slots", sets)
        for s in sets:
            if any(j < 0 or j >= self.slot_count for j in s):
                raise ValueError(f"slot index out of range in {s}")

    @property
    def device_count(self) -> int:
        return len(self.mti_slots)

    def role(self, i: int, j: int) -> str:
        return "MTI" if j in self.mti_slots[i] else "EHS"

    def ehs_slots(self, i: int) -> list[int]:
        mti = set(self.mti_slots[i])
        return [j for j in range(self.slot_count) if j not in mti]

    def is_tsr(self) -> bool:
        """Consecutive runs per device, disjoint across devices."""
        seen: set[int] = set()
        for s in self.mti_slots:
            if s and list(s) != list(range(s[0], s[0] + len(s))):
                return False
            if seen & set(s):
                return False
            seen |= set(s)
        return True

    def check(self, instance: NetworkInstance) -> None:
        if self.device_count != instance.device_count or self.slot_count != instance.slot_count:
            raise ValueError("schedule does not match the instance dimensions")
        for i, s in enumerate(self.mti_slots):
            if not s and instance.rate_targets[i] > 0:
                raise ValueError(f"device {i} has a positive rate target but no MTI slot")


# ---------------------------------------------------------------------------
# closed-form physics


def harvested_energy(eta: float, tau: float, X: np.ndarray, H: np.ndarray) -> float:
    """Largest energy a device can harvest in one slot, ``eta * tau * Tr(X H)``."""
    X = np.asarray(X, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if X.shape != H.shape:
        raise ValueError(f"dimension mismatch {X.shape} vs {H.shape}")
    if tau < 0:
        raise ValueError("slot duration must be nonnegative")
    return max(0.0, float(eta * tau * np.trace(X @ H).real))


def snr_at_receiver(K, g, X_mti, H, harvested_sum, tau_mti, receiver_noise) -> float:
    """Receiver SNR when the reflected power is the harvested energy spread over ``tau_mti``."""
    if tau_mti <= 0:
        raise ValueError("MTI duration must be positive")
    if receiver_noise <= 0:
        raise ValueError("receiver noise must be positive")
    u = float(np.trace(np.asarray(X_mti, dtype=complex) @ np.asarray(H, dtype=complex)).real)
    return K * abs(g) ** 2 * u * harvested_sum / (tau_mti * receiver_noise)


def achievable_rate(tau_mti: float, K: int, snr: float) -> float:
    """``(tau/K) log2(1 + snr)`` in bits/s/Hz."""
    if tau_mti < 0 or snr < 0:
        raise ValueError("duration and SNR must be nonnegative")
    if tau_mti == 0:
        return 0.0
    return tau_mti / K * math.log2(1.0 + snr)


def total_energy(tau: Sequence[float], X: Sequence[np.ndarray]) -> float:
    """``sum_j tau_j Tr(X_j)``."""
    if len(tau) != len(X):
        raise ValueError(f"{len(tau)} durations but {len(X)} covariances")
    if any(t < 0 for t in tau):
        raise ValueError("slot durations must be nonnegative")
    return float(sum(t * np.trace(np.asarray(Xj)).real for t, Xj in zip(tau, X)))


def max_harvest(instance: NetworkInstance, schedule: ScheduleFrame, X, tau) -> np.ndarray:
    """``I x J`` array of ``eta_i tau_j Tr(X_j H_i)`` on EHS slots (zero on MTI slots)."""
    I, J = instance.device_count, instance.slot_count
    out = np.zeros((I, J))
    for i in range(I):
        H = instance.channels.gram(i)
        for j in schedule.ehs_slots(i):
            out[i, j] = harvested_energy(instance.efficiency[i], max(tau[j], 0.0), X[j], H)
    return out


def device_rates(instance: NetworkInstance, schedule: ScheduleFrame, X, tau, harvested=None) -> np.ndarray:
    """True per-device rates (bits/s/Hz).

    A device with several MTI slots is treated as one MTI interval of the
    summed duration whose received power is the duration-weighted mean.
    """
    if harvested is None:
        harvested = max_harvest(instance, schedule, X, tau)
    rates = np.zeros(instance.device_count)
    for i, slots in enumerate(schedule.mti_slots):
        tau_m = sum(max(tau[j], 0.0) for j in slots)
        if tau_m <= 0:
            continue
        H = instance.channels.gram(i)
        u = sum(max(tau[j], 0.0) * np.trace(X[j] @ H).real for j in slots) / tau_m
        snr = instance.snr_gain(i) * max(u, 0.0) * float(np.sum(harvested[i])) / tau_m
        rates[i] = achievable_rate(tau_m, instance.spreading_factor, max(snr, 0.0))
    return rates


# ---------------------------------------------------------------------------
# reports and auditing


@dataclass
class SolutionReport:
    """Outcome of one allocation run, in physical units."""

    total_energy: float
    beamformers: list[np.ndarray]
    durations: np.ndarray
    rates: np.ndarray
    harvested: np.ndarray  # I x J, joules
    reflected_energy: np.ndarray  # per device, ~ sum of harvested energy
    rank_residuals: np.ndarray
    covariances: list[np.ndarray] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    status: str = "converged"
    iterations: int = 0
    method: str = ""
    extraction_inflation: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def energy_db(self) -> float:
        return 10.0 * math.log10(self.total_energy) if self.total_energy > 0 else float("-inf")


def build_report(instance, schedule, beamformers, durations, **extra) -> SolutionReport:
    """Evaluate the true physics for rank-one beamformers and durations."""
    X = [np.outer(x, np.conj(x)) for x in beamformers]
    tau = np.asarray(durations, dtype=float)
    harvested = max_harvest(instance, schedule, X, tau)
    rates = device_rates(instance, schedule, X, tau, harvested)
    extra.setdefault("covariances", X)
    extra.setdefault("rank_residuals", np.zeros(len(X)))
    return SolutionReport(
        total_energy=total_energy(list(tau), X),
        beamformers=[np.asarray(x, dtype=complex) for x in beamformers],
        durations=tau,
        rates=rates,
        harvested=harvested,
        reflected_energy=harvested.sum(axis=1),
        **extra,
    )


@dataclass(frozen=True)
class Violation:
    constraint: str  # "rate", "duration", "frame", "harvest"
    index: tuple
    amount: float

    def __str__(self):
        return f"{self.constraint}{list(self.index)} violated by {self.amount:.3g}"


def validate_solution(
    instance: NetworkInstance,
    schedule: ScheduleFrame,
    report: SolutionReport,
    rate_tol: float = 1e-6,
    tol: float = 1e-9,
) -> list[Violation]:
    """Check the original (non-surrogate) constraints; empty list means feasible."""
    out: list[Violation] = []
    tau = np.asarray(report.durations, dtype=float)
    X = [np.outer(x, np.conj(x)) for x in report.beamformers]
    for j, t in enumerate(tau):
        if t < -tol:
            out.append(Violation("duration", (j,), -t))
    if tau.sum() > instance.frame_length * (1 + tol) + tol:
        out.append(Violation("frame", (), tau.sum() - instance.frame_length))
    cap = max_harvest(instance, schedule, X, np.maximum(tau, 0.0))
    harvested = np.asarray(report.harvested, dtype=float)
    for i in range(instance.device_count):
        for j in range(instance.slot_count):
            limit = cap[i, j] if j in schedule.ehs_slots(i) else 0.0
            excess = harvested[i, j] - limit
            if excess > tol * (1.0 + limit):
                out.append(Violation("harvest", (i, j), excess))
    rates = device_rates(instance, schedule, X, np.maximum(tau, 0.0), harvested)
    for i, (r, c) in enumerate(zip(rates, instance.rate_targets)):
        if r < c - rate_tol:
            out.append(Violation("rate", (i,), c - r))
    return out
