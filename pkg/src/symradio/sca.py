"""Successive convexification loops, beamformer extraction and complexity estimates.

Both loops work on a rescaled copy of the instance (see :class:`Conditioning`)
so that the conic solver sees variables of order one; the final report is
always re-evaluated on the caller's instance in physical units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .conic import max_eigpair, rank_residual, solve
from .convexify import (
    ExpansionPoint,
    InfeasiblePointError,
    SurrogateConfig,
    active_devices,
    assemble_cqr,
    assemble_sq,
)
from .model import (
    ChannelSet,
    NetworkInstance,
    ScheduleFrame,
    SolutionReport,
    build_report,
    device_rates,
    max_harvest,
    validate_solution,
)


class InitializationError(RuntimeError):
    """No feasible starting point could be constructed."""


class ExtractionError(RuntimeError):
    """Randomized extraction found no candidate meeting the rate targets."""

    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (best rate gap {gap:.3g})")
        self.gap = gap


@dataclass
class AlgorithmConfig:
    tolerance: float = 1e-6
    counter_max: int = 30
    penalty_scale: float = 1e-3  # initial penalty relative to the initial energy
    penalty_growth: float = 10.0
    beta: float = 2.0
    M: int = 4
    curvature: bool = True
    chain_center: bool = False
    seed: int = 0
    init_attempts: int = 10
    init_margin: float = 1.1  # rate slack of the starting point, as a power factor
    draws: int = 100
    solver_tol: float = 1e-7
    solver_max_iter: int = 200

    def __post_init__(self):
        if self.tolerance <= 0 or self.counter_max < 1 or self.penalty_growth <= 1:
            raise ValueError("need tolerance > 0, counter_max >= 1 and penalty_growth > 1")
        if self.beta <= 1 or self.M < 1 or self.init_margin <= 1:
            raise ValueError("need beta > 1, M >= 1 and init_margin > 1")


@dataclass
class ConvergenceTrace:
    surrogate: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    displacement: list[float] = field(default_factory=list)
    rank_residual: list[float] = field(default_factory=list)
    penalty: list[float] = field(default_factory=list)
    converged: bool = False
    # last expansion point, in the conditioned units of the run
    point: ExpansionPoint | None = None

    def append(self, surrogate, energy, displacement, rank, penalty):
        self.surrogate.append(float(surrogate))
        self.energy.append(float(energy))
        self.displacement.append(float(displacement))
        self.rank_residual.append(float(rank))
        self.penalty.append(float(penalty))

    @property
    def iterations(self) -> int:
        return len(self.energy)


# ---------------------------------------------------------------------------
# conditioning


@dataclass(frozen=True)
class Conditioning:
    """Unit change ``h -> h / sqrt(h_ref)``, ``g -> g * u0``.

    Rates are invariant when covariances map as ``X = (u0 / h_ref) X~``;
    harvested energies then map as ``eps = u0 eps~`` and energies as
    ``E = (u0 / h_ref) E~``.
    """

    h_ref: float
    u0: float

    @property
    def power(self) -> float:
        return self.u0 / self.h_ref

    @classmethod
    def identity(cls) -> "Conditioning":
        return cls(1.0, 1.0)

    @classmethod
    def for_instance(cls, instance: NetworkInstance, schedule: ScheduleFrame) -> "Conditioning":
        h = instance.channels.h
        h_ref = float(np.mean(np.sum(np.abs(h) ** 2, axis=1)))
        if not h_ref > 0:
            return cls.identity()
        active = active_devices(instance, schedule)
        gains = [instance.snr_gain(i) for i in active if instance.snr_gain(i) > 0]
        if not gains:
            return cls(h_ref, 1.0)
        a_ref = math.exp(np.mean(np.log(gains)))
        J = instance.slot_count
        snr_ref = max(
            math.expm1(min(instance.nat_targets[i] / (len(schedule.mti_slots[i]) * instance.frame_length / J), 700.0))
            for i in active
        )
        return cls(h_ref, math.sqrt(snr_ref / a_ref) if snr_ref > 0 else 1.0)

    def scale(self, instance: NetworkInstance) -> NetworkInstance:
        ch = ChannelSet(instance.channels.h / math.sqrt(self.h_ref), instance.channels.g * self.u0)
        return NetworkInstance(
            channels=ch,
            rate_targets=instance.rate_targets,
            spreading_factor=instance.spreading_factor,
            frame_length=instance.frame_length,
            efficiency=instance.efficiency,
            receiver_noise=instance.receiver_noise,
            device_noise=instance.device_noise,
            bs_power=instance.bs_power / self.power,
            slot_count=instance.slot_count,
        )


# ---------------------------------------------------------------------------
# points


def _psd_part(X: np.ndarray) -> np.ndarray:
    X = 0.5 * (X + X.conj().T)
    w, V = np.linalg.eigh(X)
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


def _snr(instance, schedule, X, tau) -> np.ndarray:
    """True SNR per device under maximal harvesting (zero without MTI time)."""
    harvested = max_harvest(instance, schedule, X, tau)
    out = np.zeros(instance.device_count)
    for i, slots in enumerate(schedule.mti_slots):
        tau_m = sum(tau[j] for j in slots)
        if tau_m <= 0:
            continue
        H = instance.channels.gram(i)
        u = float(np.trace(X[slots[0]] @ H).real)
        out[i] = instance.snr_gain(i) * max(u, 0.0) * harvested[i].sum() / tau_m
    return out


def _required_snr(instance, schedule, tau) -> np.ndarray:
    out = np.zeros(instance.device_count)
    for i in active_devices(instance, schedule):
        tau_m = sum(tau[j] for j in schedule.mti_slots[i])
        out[i] = math.expm1(min(instance.nat_targets[i] / tau_m, 700.0)) if tau_m > 0 else math.inf
    return out


def feasibility_scale(instance, schedule, X, tau) -> float:
    """Smallest uniform factor on every covariance that meets all rate targets.

    SNR is quadratic in a common covariance scale, so the factor is closed form.
    Returns ``inf`` when some active device cannot be served at any scale.
    """
    need = _required_snr(instance, schedule, tau)
    have = _snr(instance, schedule, X, tau)
    s = 0.0
    for i in active_devices(instance, schedule):
        if need[i] == 0:
            continue
        if have[i] <= 0 or not math.isfinite(need[i]):
            return math.inf
        s = max(s, math.sqrt(need[i] / have[i]))
    return s


def complete_point(instance, schedule, X, tau, method: str) -> ExpansionPoint:
    """Expansion point with every auxiliary at its tightest value for ``(X, tau)``."""
    X = [_psd_part(np.asarray(x, dtype=complex)) for x in X]
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, None)
    phi = np.sqrt(max_harvest(instance, schedule, X, tau))
    snr = _snr(instance, schedule, X, tau)
    tau_m = np.array([sum(tau[j] for j in s) for s in schedule.mti_slots])
    point = ExpansionPoint(X=X, tau=tau, gamma=np.array([np.trace(x).real for x in X]), phi=phi)
    if method == "sq":
        point.theta = snr * tau_m
    else:
        point.xi = snr
        point.z = np.log1p(snr)
    return point


def initial_point(instance, schedule, method: str, config: AlgorithmConfig) -> ExpansionPoint:
    """Scaled isotropic start at equal durations, then seeded random directions."""
    J, N = instance.slot_count, instance.antenna_count
    tau = np.full(J, instance.frame_length / J)
    rng = np.random.default_rng(config.seed)
    if not active_devices(instance, schedule):
        return complete_point(instance, schedule, [np.zeros((N, N), complex)] * J, tau, method)
    direction = [np.eye(N, dtype=complex) * (instance.bs_power / N) for _ in range(J)]
    for _ in range(config.init_attempts):
        s = feasibility_scale(instance, schedule, direction, tau)
        if math.isfinite(s) and s > 0:
            # SNR is quadratic in the covariance scale: the margin multiplies every SNR
            X = [d * s * math.sqrt(config.init_margin) for d in direction]
            return complete_point(instance, schedule, X, tau, method)
        direction = []
        for _ in range(J):
            W = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
            D = W @ W.conj().T
            direction.append(D * (instance.bs_power / np.trace(D).real))
    raise InitializationError(f"no feasible starting point after {config.init_attempts} attempts")


def _displacement(old: ExpansionPoint, new: ExpansionPoint) -> float:
    def rel(a, b):
        a = np.asarray(a).ravel()
        b = np.asarray(b).ravel()
        scale = max(np.linalg.norm(a), np.linalg.norm(b))
        return 0.0 if scale == 0 else float(np.linalg.norm(b - a) / scale)

    parts = [rel(np.concatenate([x.ravel() for x in old.X]), np.concatenate([x.ravel() for x in new.X])),
             rel(old.tau, new.tau), rel(old.gamma, new.gamma), rel(old.phi, new.phi)]
    for name in ("theta", "z", "xi"):
        a, b = getattr(old, name), getattr(new, name)
        if a is not None and b is not None:
            parts.append(rel(a, b))
    return max(parts)


def _rank_max(X: list[np.ndarray]) -> float:
    traces = [float(np.trace(x).real) for x in X]
    top = max(traces, default=0.0)
    return max((rank_residual(x) for x, t in zip(X, traces) if t > 1e-9 * top), default=0.0)


def _energy(point: ExpansionPoint) -> float:
    return float(sum(t * np.trace(x).real for t, x in zip(point.tau, point.X)))


# ---------------------------------------------------------------------------
# extraction and restoration


def extract_beamformer(X: np.ndarray, feasibility_oracle=None, rng=None, draws: int = 100,
                       tol: float = 1e-6) -> tuple[np.ndarray, float]:
    """Beamformer for a covariance; returns ``(x, scale)``.

    Near rank-one covariances give the principal component.  Otherwise
    ``draws`` Gaussian candidates shaped by ``X`` are tried; the oracle
    maps a candidate to the smallest factor on ``x x^H`` that satisfies
    the true constraints (``inf`` if none), and the least-energy scaled
    candidate wins.
    """
    X = _psd_part(np.asarray(X, dtype=complex))
    lam, v = max_eigpair(X)
    if rank_residual(X) <= tol or feasibility_oracle is None:
        return math.sqrt(max(lam, 0.0)) * v, 1.0
    rng = rng if rng is not None else np.random.default_rng(0)
    w, V = np.linalg.eigh(X)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    n = X.shape[0]
    best, best_energy, best_scale = None, math.inf, math.inf
    for _ in range(draws):
        c = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        x = root @ c
        if np.linalg.norm(x) == 0:
            continue
        s = feasibility_oracle(x)
        if math.isfinite(s) and s * np.vdot(x, x).real < best_energy:
            best, best_energy, best_scale = x, s * np.vdot(x, x).real, s
    if best is None:
        raise ExtractionError("no randomized candidate satisfies the rate targets", math.inf)
    return math.sqrt(best_scale) * best, best_scale


def _min_slot_scale(instance, schedule, X, tau, j, xxh, hi=1e8) -> float:
    """Smallest ``s`` such that ``X[j] = s * xxh`` meets every rate target."""

    def ok(s):
        trial = list(X)
        trial[j] = s * xxh
        return feasibility_scale(instance, schedule, trial, tau) <= 1.0

    if not ok(hi):
        return math.inf
    lo = 0.0
    if ok(lo):
        return 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi) if hi / max(lo, 1e-300) < 4 else math.sqrt(max(lo, hi * 1e-12) * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def restore_durations(instance, schedule, X, tau0) -> np.ndarray | None:
    """Re-optimize durations with covariances frozen (a convex program).

    The rate ``tau_m ln(1 + b . tau / tau_m)`` is a perspective of a concave
    function, so the feasible set is convex and the energy is linear.
    """
    J = instance.slot_count
    power = np.array([np.trace(x).real for x in X])
    active = active_devices(instance, schedule)
    coef = {}
    for i in active:
        H = instance.channels.gram(i)
        u = float(np.trace(X[schedule.mti_slots[i][0]] @ H).real)
        b = np.zeros(J)
        for j in schedule.ehs_slots(i):
            b[j] = instance.snr_gain(i) * u * instance.efficiency[i] * float(np.trace(X[j] @ H).real)
        coef[i] = b

    def rate_gap(t, i):
        tau_m = sum(t[j] for j in schedule.mti_slots[i])
        if tau_m <= 1e-12:
            return -instance.nat_targets[i]
        return tau_m * math.log1p(max(coef[i] @ t, 0.0) / tau_m) - instance.nat_targets[i]

    cons = [{"type": "ineq", "fun": (lambda t, i=i: rate_gap(t, i))} for i in active]
    cons.append({"type": "ineq", "fun": lambda t: instance.frame_length - t.sum()})
    res = minimize(lambda t: power @ t, np.asarray(tau0, float), jac=lambda t: power, method="SLSQP",
                   bounds=[(0.0, instance.frame_length)] * J, constraints=cons,
                   options={"ftol": 1e-12, "maxiter": 500})
    if not res.success:
        return None
    t = np.clip(res.x, 0.0, None)
    if t.sum() > instance.frame_length:
        t *= instance.frame_length / t.sum()
    return t


def _finalize(instance, schedule, cond: Conditioning, scaled, point: ExpansionPoint, config: AlgorithmConfig,
              method: str, trace: ConvergenceTrace) -> SolutionReport:
    rng = np.random.default_rng([config.seed, 1])
    X = [np.array(x) for x in point.X]
    tau = np.array(point.tau)
    relaxed = sum(t * np.trace(x).real for t, x in zip(tau, X))
    residuals = np.array([rank_residual(x) for x in X])
    beams = []
    for j in range(len(X)):
        xxh_oracle = None
        if residuals[j] > RANK_ONE_TOL and active_devices(scaled, schedule):
            def xxh_oracle(x, j=j):
                return _min_slot_scale(scaled, schedule, X, tau, j, np.outer(x, x.conj()))
        x, _ = extract_beamformer(X[j], xxh_oracle, rng=rng, draws=config.draws)
        X[j] = np.outer(x, x.conj())
        beams.append(x)
    # principal components may lose a sliver of rate; close it with a uniform scale
    s = feasibility_scale(scaled, schedule, X, tau)
    if math.isfinite(s) and s > 1.0:
        beams = [x * math.sqrt(s) for x in beams]
    status = "converged" if trace.converged else "max_iter"
    factor = math.sqrt(cond.power)
    report = build_report(instance, schedule, [x * factor for x in beams], tau, rank_residuals=residuals,
                          objective_trace=list(trace.surrogate), status=status, iterations=trace.iterations,
                          method=method)
    if validate_solution(instance, schedule, report):
        Xs = [np.outer(x, x.conj()) for x in beams]
        t = restore_durations(scaled, schedule, Xs, tau)
        if t is not None:
            s = feasibility_scale(scaled, schedule, Xs, t)
            if math.isfinite(s):
                scaled_beams = [x * math.sqrt(max(s, 1.0)) * factor for x in beams]
                report = build_report(instance, schedule, scaled_beams, t, rank_residuals=residuals,
                                      objective_trace=list(trace.surrogate), status=status,
                                      iterations=trace.iterations, method=method)
        if validate_solution(instance, schedule, report):
            report.status = "infeasible"
    report.extraction_inflation = (report.total_energy / (relaxed * cond.power) - 1.0) if relaxed > 0 else 0.0
    return report


# ---------------------------------------------------------------------------
# outer loops


def _null_run(instance, schedule, method, fixed_durations):
    """No device needs a rate: silence is optimal and certified in one step."""
    J, N = instance.slot_count, instance.antenna_count
    tau = (np.full(J, instance.frame_length / J) if fixed_durations is None
           else np.asarray(fixed_durations, dtype=float))
    zeros = [np.zeros((N, N), dtype=complex) for _ in range(J)]
    trace = ConvergenceTrace()
    trace.append(0.0, 0.0, 0.0, 0.0, 0.0)
    trace.converged = True
    trace.point = ExpansionPoint(zeros, tau, np.zeros(J), np.zeros((instance.device_count, J)))
    report = build_report(instance, schedule, [np.zeros(N, dtype=complex)] * J, tau, status="converged",
                          iterations=1, method=method, objective_trace=[0.0])
    return report, trace


# rank residual below which the principal component is taken as the beamformer
RANK_ONE_TOL = 1e-6


def _run(instance: NetworkInstance, schedule: ScheduleFrame, config: AlgorithmConfig, method: str,
         fixed_durations=None, point: ExpansionPoint | None = None):
    schedule.check(instance)
    if not active_devices(instance, schedule):
        return _null_run(instance, schedule, method, fixed_durations)
    cond = Conditioning.for_instance(instance, schedule)
    scaled = cond.scale(instance)
    if point is None:
        point = initial_point(scaled, schedule, method, config)
    if fixed_durations is not None:
        fixed_durations = np.asarray(fixed_durations, dtype=float)
        if fixed_durations.shape != (instance.slot_count,) or fixed_durations.sum() > instance.frame_length * (1 + 1e-12):
            raise ValueError("fixed durations must have one entry per slot and fit in the frame")
        X0 = point.X
        s = feasibility_scale(scaled, schedule, X0, fixed_durations)
        if not math.isfinite(s):
            raise InitializationError("rate targets unreachable with the fixed durations")
        if active_devices(scaled, schedule):
            X0 = [x * s * math.sqrt(config.init_margin) for x in X0]
        point = complete_point(scaled, schedule, X0, fixed_durations, method)
    e0 = _energy(point)
    ell = config.penalty_scale * (e0 if e0 > 0 else 1.0)
    assemble = assemble_sq if method == "sq" else assemble_cqr
    trace = ConvergenceTrace()
    # Every iterate is truly feasible after the scale-up, but the CQR chain is
    # an outer approximation, so the energy need not decrease monotonically.
    # The best near rank-one iterate is kept and reported.
    best_energy, best = math.inf, None
    for _ in range(config.counter_max):
        sc = SurrogateConfig(penalty=ell, growth=config.penalty_growth, beta=config.beta, M=config.M,
                             fixed_durations=fixed_durations, curvature=config.curvature,
                             chain_center=config.chain_center)
        prog, handles = assemble(scaled, schedule, point, sc)
        sol = solve(prog, tol=config.solver_tol, max_iter=config.solver_max_iter)
        if not sol.optimal:
            # one retry at reduced accuracy before giving up on this run
            sol = solve(prog, tol=config.solver_tol * 100, max_iter=config.solver_max_iter)
            if not sol.optimal:
                break
        raw = handles.read(sol.x, point.phi.shape)
        tau = raw.tau if fixed_durations is None else fixed_durations
        X = [_psd_part(x) for x in raw.X]
        s = feasibility_scale(scaled, schedule, X, tau)
        if not math.isfinite(s):
            break
        if s > 1.0:
            X = [x * s for x in X]
        new = complete_point(scaled, schedule, X, tau, method)
        disp = _displacement(point, new)
        rank = _rank_max(new.X)
        point = new
        trace.append(sol.objective, _energy(new) * cond.power, disp, rank, ell)
        if rank <= RANK_ONE_TOL and _energy(new) < best_energy:
            best_energy, best = _energy(new), new
        if disp <= config.tolerance:
            if rank <= config.tolerance:
                trace.converged = True
                break
            ell *= config.penalty_growth
    if best is not None and best_energy < _energy(point) * (1.0 - 1e-9):
        point = best
    trace.point = point
    report = _finalize(instance, schedule, cond, scaled, point, config, method, trace)
    return report, trace


def run_sq(instance: NetworkInstance, schedule: ScheduleFrame, config: AlgorithmConfig | None = None,
           point: ExpansionPoint | None = None) -> tuple[SolutionReport, ConvergenceTrace]:
    """Sequential-quadratic successive convexification."""
    return _run(instance, schedule, config or AlgorithmConfig(), "sq", point=point)


def run_cqr(instance: NetworkInstance, schedule: ScheduleFrame, config: AlgorithmConfig | None = None,
            fixed_durations=None, point: ExpansionPoint | None = None) -> tuple[SolutionReport, ConvergenceTrace]:
    """Conic-quadratic successive convexification; ``fixed_durations`` freezes the slots."""
    return _run(instance, schedule, config or AlgorithmConfig(), "cqr", fixed_durations=fixed_durations, point=point)


# ---------------------------------------------------------------------------
# complexity estimates


@dataclass(frozen=True)
class ComplexityEstimate:
    kappa: float
    size: float
    flops: float


def complexity_sq(I: int, N: int, eps: float = 1e-6) -> ComplexityEstimate:
    """Interior-point work estimate of the sequential-quadratic subproblem (unit constant)."""
    if I < 1 or N < 1 or eps <= 0:
        raise ValueError("need I, N >= 1 and eps > 0")
    B, V = 5, 8
    kappa = I * (2 * N * N + I + 1.5)
    size = (B + 1) * V * kappa * (kappa + 1) / 2 + V + B + 3
    flops = math.sqrt(1 + V * kappa) * (B**3 + B**2 * V * kappa**2 + B * V * kappa**3) * math.log(size / eps)
    return ComplexityEstimate(kappa, size, flops)


def complexity_cqr(I: int, N: int, M: int = 4, eps: float = 1e-6) -> ComplexityEstimate:
    """Interior-point work estimate of the conic-quadratic subproblem (unit constant)."""
    if I < 1 or N < 1 or M < 1 or eps <= 0:
        raise ValueError("need I, N, M >= 1 and eps > 0")
    B, V = 7, 13
    kappa = I * (3 * N * N + 0.5 * I * I + M + 7)
    size = (V + V * kappa) * (B + 1) + V + B + 3
    # the squared-dimension sum runs over V + 1 constraint blocks
    flops = math.sqrt(V + 1) * B * (B**2 + V + (V + 1) * kappa**2) * math.log(size / eps)
    return ComplexityEstimate(kappa, size, flops)
