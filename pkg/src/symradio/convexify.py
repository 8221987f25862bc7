"""Convex surrogates of the energy-minimization problem around an expansion point.

Every constructor emits cone blocks (or an affine objective term) for a
:class:`~symradio.conic.ConicProgram`.  Next to each constructor sits a plain
numpy evaluator of the same surrogate, which the tests use to check tangency
and majorization without going through a solver.

Variable conventions (per slot ``j`` and device ``i``):

``X[j]``      Hermitian covariance, ``tau[j]`` duration, ``gamma[j] >= Tr X[j]``
``phi[i, j]`` square root of the energy device ``i`` harvests in EHS slot ``j``
``theta[i]``  SNR times MTI duration (sequential-quadratic track)
``z[i], xi[i]`` rate exponent and SNR bound (conic track)

A device with several MTI slots shares one covariance across them and sees a
single MTI interval of the summed duration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import Affine, ConeBlock, ConicError, ConicProgram, HermitianVar, affine_sum, exp_soc_chain, max_eigpair, square_le
from .model import NetworkInstance, ScheduleFrame


class InfeasiblePointError(ValueError):
    """The expansion point is outside the surrogate's domain."""


@dataclass
class ExpansionPoint:
    X: list[np.ndarray]
    tau: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray  # I x J, meaningful on EHS slots only
    theta: np.ndarray | None = None
    z: np.ndarray | None = None
    xi: np.ndarray | None = None

    def copy(self) -> "ExpansionPoint":
        cp = lambda a: None if a is None else np.array(a, copy=True)
        return ExpansionPoint([np.array(x, copy=True) for x in self.X], cp(self.tau), cp(self.gamma), cp(self.phi),
                              cp(self.theta), cp(self.z), cp(self.xi))


@dataclass
class SurrogateConfig:
    penalty: float = 1e-3  # rank-one penalty weight
    growth: float = 10.0  # penalty escalation factor
    beta: float = 2.0  # MTI duration may shrink at most by this factor per step
    M: int = 4  # squarings in the exponential cone chain
    fixed_durations: np.ndarray | None = None
    curvature: bool = True  # second-order correction on the SNR product (see product_curvature)
    chain_center: bool = False  # expand the exp chain around z at the point (see exp_soc_chain)

    def __post_init__(self):
        if self.penalty <= 0 or self.growth <= 1 or self.beta <= 1 or self.M < 1:
            raise ValueError("need penalty > 0, growth > 1, beta > 1 and M >= 1")


@dataclass
class SurrogateVariables:
    """Handles into an assembled program."""

    X: list[HermitianVar]
    tau: list[Affine]
    gamma: list[Affine]
    phi: dict[tuple[int, int], Affine]
    epigraph: list[Affine]
    theta: dict[int, Affine] = field(default_factory=dict)
    z: dict[int, Affine] = field(default_factory=dict)
    xi: dict[int, Affine] = field(default_factory=dict)
    zeta: dict[int, list[Affine]] = field(default_factory=dict)

    def read(self, x: np.ndarray, shape_phi: tuple[int, int]) -> ExpansionPoint:
        phi = np.zeros(shape_phi)
        for (i, j), v in self.phi.items():
            phi[i, j] = v.value(x)

        def vec(d):
            if not d:
                return None
            out = np.zeros(shape_phi[0])
            for i, v in d.items():
                out[i] = v.value(x)
            return out

        return ExpansionPoint(
            X=[Xv.value(x) for Xv in self.X],
            tau=np.array([t.value(x) for t in self.tau]),
            gamma=np.array([g.value(x) for g in self.gamma]),
            phi=phi,
            theta=vec(self.theta),
            z=vec(self.z),
            xi=vec(self.xi),
        )


# ---------------------------------------------------------------------------
# objective pieces


def dc_surrogate_value(tau, gamma, tau_hat, gamma_hat):
    """Upper bound of ``tau * gamma`` tangent at ``(tau_hat, gamma_hat)``."""
    d_hat = tau_hat - gamma_hat
    return 0.25 * (tau + gamma) ** 2 - 0.25 * d_hat**2 - 0.5 * d_hat * ((tau - gamma) - d_hat)


def dc_objective_surrogate(prog: ConicProgram, tau, gamma, tau_hat: float, gamma_hat: float, label: str = "dc") -> Affine:
    """Objective term for one slot; the square goes to an SOC epigraph."""
    s = prog.add_variable(f"{label}.epi")
    prog.add(square_le([0.5 * (tau + gamma)], s, label=f"{label}.epi"))
    d_hat = tau_hat - gamma_hat
    return s - 0.25 * d_hat**2 - 0.5 * d_hat * ((tau - gamma) - d_hat)


def rank_one_penalty(X_hat: np.ndarray, X: HermitianVar, ell: float) -> Affine:
    """``ell * (Tr X - v^H X v)`` with ``v`` the top eigenvector of ``X_hat``."""
    _, v = max_eigpair(X_hat)
    return ell * (X.trace() - X.quad(v))


def rank_one_penalty_value(X_hat, X, ell) -> float:
    _, v = max_eigpair(X_hat)
    X = np.asarray(X, dtype=complex)
    return float(ell * (np.trace(X).real - (v.conj() @ X @ v).real))


# ---------------------------------------------------------------------------
# constraints shared by both tracks


def harvest_rotated_cone(eta: float, tau, X: HermitianVar, H: np.ndarray, phi, label: str = "harvest") -> ConeBlock:
    """``phi^2 <= eta * tau * Tr(X H)`` as ``||[phi, (a - tau)/2]|| <= (a + tau)/2``, ``a = eta Tr(XH)``."""
    a = eta * X.inner(H)
    return ConeBlock("soc", [0.5 * (a + tau), Affine.lift(phi), 0.5 * (a - tau)], label=label)


def trace_bound(gamma, X: HermitianVar, label: str = "trace") -> ConeBlock:
    return ConeBlock("nonneg", [gamma - X.trace()], label=label)


# ---------------------------------------------------------------------------
# sequential-quadratic track


def snr_product_value(gain: float, u: float, phi) -> float:
    """``gain * u * sum(phi^2)``: SNR times MTI duration."""
    return gain * u * float(np.sum(np.square(phi)))


def snr_product_linearization_value(gain, u, phi, u_hat, phi_hat) -> float:
    """First-order expansion of :func:`snr_product_value` at ``(u_hat, phi_hat)``."""
    phi = np.asarray(phi, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    return gain * (u_hat * S_hat + S_hat * (u - u_hat) + u_hat * float(np.sum(2 * phi_hat * (phi - phi_hat))))


def product_curvature(gain, u_hat, S_hat, du, dS):
    """Terms ``q`` with ``gain/2 [(S/u) du^2 + (u/S) dS^2] = ||q||^2``, or ``None``.

    Subtracting this from the tangent of ``gain * u * S`` gives a concave
    minorant that is exact to second order along ``u S = const`` (AM-GM on
    the cross term ``du dS``).  Undefined when either factor vanishes.
    """
    if u_hat <= 0 or S_hat <= 0:
        return None
    return [math.sqrt(0.5 * gain * S_hat / u_hat) * du, math.sqrt(0.5 * gain * u_hat / S_hat) * dS]


def snr_product_minorant_value(gain, u, phi, u_hat, phi_hat) -> float:
    """Curvature-corrected expansion of :func:`snr_product_value`; never above it."""
    phi = np.asarray(phi, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    lin = snr_product_linearization_value(gain, u, phi, u_hat, phi_hat)
    if u_hat <= 0 or S_hat <= 0:
        return lin
    du = u - u_hat
    dS = float(np.sum(2 * phi_hat * (phi - phi_hat)))
    return lin - 0.5 * gain * (S_hat / u_hat * du**2 + u_hat / S_hat * dS**2)


def sq_theta_linearization(theta, X: HermitianVar, H, phi: list, X_hat, phi_hat, gain: float, label: str = "theta",
                           curvature: bool = False) -> ConeBlock:
    """``theta <= F(point) + grad F . delta`` with ``F = gain Tr(X H) sum phi^2``.

    With ``curvature`` the row becomes an SOC that also subtracts
    :func:`product_curvature`, which turns the bound into an inner one.
    """
    u_hat = float(np.trace(np.asarray(X_hat) @ H).real)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    du = X.inner(H) - u_hat
    dS = affine_sum(2.0 * ph * (p - ph) for p, ph in zip(phi, phi_hat))
    lin = gain * (u_hat * S_hat + S_hat * du + u_hat * dS)
    q = product_curvature(gain, u_hat, S_hat, du, dS) if curvature else None
    if q is None:
        return ConeBlock("nonneg", [lin - theta], label=label)
    return square_le(q, lin - theta, label=label)


def hessian_upper_bound(tau_hat: float, beta: float) -> np.ndarray:
    """Constant 2x2 matrix dominating the rate-gap Hessian on ``tau >= tau_hat / beta``."""
    if tau_hat <= 0:
        raise ValueError("expansion duration must be positive")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    c = beta / (8.0 * tau_hat)
    return np.array([[9.0 * c, -c], [-c, 9.0 * c]])


def rate_gap_value(theta, tau, target):
    """``target - tau * ln(1 + theta / tau)``; the rate holds iff this is <= 0."""
    return target - tau * np.log1p(theta / tau)


def rate_gap_gradient(theta_hat: float, tau_hat: float) -> np.ndarray:
    r = theta_hat / tau_hat
    return np.array([-tau_hat / (tau_hat + theta_hat), -math.log1p(r) + theta_hat / (tau_hat + theta_hat)])


def rate_gap_hessian(theta: float, tau: float) -> np.ndarray:
    d = (tau + theta) ** 2
    return np.array([[tau / d, -theta / d], [-theta / d, theta**2 / (tau * d)]])


def sq_rate_surrogate_value(theta, tau, theta_hat, tau_hat, target, beta):
    """Quadratic upper model of :func:`rate_gap_value` around the point."""
    grad = rate_gap_gradient(theta_hat, tau_hat)
    Hs = hessian_upper_bound(tau_hat, beta)
    d0 = np.asarray(theta) - theta_hat
    d1 = np.asarray(tau) - tau_hat
    quad = Hs[0, 0] * d0**2 + 2 * Hs[0, 1] * d0 * d1 + Hs[1, 1] * d1**2
    return rate_gap_value(theta_hat, tau_hat, target) + grad[0] * d0 + grad[1] * d1 + quad


def sq_rate_quadratic(theta, tau_m, theta_hat: float, tau_hat: float, target: float, beta: float,
                      label: str = "rate") -> list[ConeBlock]:
    """Rate quadratic as one SOC row plus the domain rows ``theta >= 0``, ``tau >= tau_hat/beta``."""
    grad = rate_gap_gradient(theta_hat, tau_hat)
    L = np.linalg.cholesky(hessian_upper_bound(tau_hat, beta))
    d = [Affine.lift(theta) - theta_hat, Affine.lift(tau_m) - tau_hat]
    lin = rate_gap_value(theta_hat, tau_hat, target) + grad[0] * d[0] + grad[1] * d[1]
    # Delta^T L L^T Delta = ||L^T Delta||^2
    u = [L[0, 0] * d[0] + L[1, 0] * d[1], L[1, 1] * d[1]]
    return [
        square_le(u, -lin, label=label),
        ConeBlock("nonneg", [Affine.lift(theta), Affine.lift(tau_m) - tau_hat / beta], label=f"{label}.domain"),
    ]


# ---------------------------------------------------------------------------
# conic-quadratic track


def cqr_rate_soc(z, tau_m, target: float, label: str = "rate") -> list[ConeBlock]:
    """``z * tau >= target`` as ``z + tau >= ||[2 sqrt(target), z - tau]||`` with ``z >= 0``."""
    if target < 0:
        raise ValueError("rate target must be nonnegative")
    z = Affine.lift(z)
    tau_m = Affine.lift(tau_m)
    return [
        ConeBlock("soc", [z + tau_m, Affine(const=2.0 * math.sqrt(target)), z - tau_m], label=label),
        ConeBlock("nonneg", [z], label=f"{label}.z"),
    ]


def snr_value(gain, u, phi, tau) -> float:
    return gain * u * float(np.sum(np.square(phi))) / tau


def snr_linearization_value(gain, u, phi, tau, u_hat, phi_hat, tau_hat) -> float:
    phi = np.asarray(phi, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    G_hat = gain * u_hat * S_hat / tau_hat
    return (G_hat + gain * S_hat / tau_hat * (u - u_hat)
            + gain * u_hat / tau_hat * float(np.sum(2 * phi_hat * (phi - phi_hat)))
            - G_hat / tau_hat * (tau - tau_hat))


def snr_minorant_value(gain, u, phi, tau, u_hat, phi_hat, tau_hat) -> float:
    """Curvature-corrected expansion of :func:`snr_value` (product part only)."""
    lin = snr_linearization_value(gain, u, phi, tau, u_hat, phi_hat, tau_hat)
    phi = np.asarray(phi, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    if u_hat <= 0 or S_hat <= 0:
        return lin
    du = u - u_hat
    dS = float(np.sum(2 * phi_hat * (phi - phi_hat)))
    return lin - 0.5 * gain / tau_hat * (S_hat / u_hat * du**2 + u_hat / S_hat * dS**2)


def cqr_xi_linearization(xi, X: HermitianVar, H, tau_m, phi: list, X_hat, tau_hat: float, phi_hat, gain: float,
                         label: str = "xi", curvature: bool = False, scale: float = 1.0) -> ConeBlock:
    """``xi <= G(point) + grad G . delta`` with ``G = gain Tr(X H) sum phi^2 / tau``.

    ``curvature`` subtracts :func:`product_curvature` for the ``u S`` part
    at the frozen duration.  ``scale`` (of the order of ``G`` at the point)
    divides the row through; the feasible set does not change.
    """
    if tau_hat <= 0:
        raise InfeasiblePointError("MTI duration at the expansion point must be positive")
    u_hat = float(np.trace(np.asarray(X_hat) @ H).real)
    phi_hat = np.asarray(phi_hat, dtype=float)
    S_hat = float(np.sum(phi_hat**2))
    G_hat = gain * u_hat * S_hat / tau_hat
    du = X.inner(H) - u_hat
    dS = affine_sum(2.0 * ph * (p - ph) for p, ph in zip(phi, phi_hat))
    lin = (G_hat + (gain * S_hat / tau_hat) * du + (gain * u_hat / tau_hat) * dS
           - (G_hat / tau_hat) * (Affine.lift(tau_m) - tau_hat))
    q = product_curvature(gain / tau_hat, u_hat, S_hat, du, dS) if curvature else None
    if scale <= 0:
        raise ValueError("row scale must be positive")
    slack = (lin - xi) * (1.0 / scale)
    if q is None:
        return ConeBlock("nonneg", [slack], label=label)
    return square_le([qk * (1.0 / math.sqrt(scale)) for qk in q], slack, label=label)


# ---------------------------------------------------------------------------
# assembly


def active_devices(instance: NetworkInstance, schedule: ScheduleFrame) -> list[int]:
    return [i for i in range(instance.device_count) if instance.rate_targets[i] > 0 and schedule.mti_slots[i]]


def mti_duration(point: ExpansionPoint, schedule: ScheduleFrame, i: int) -> float:
    return float(sum(point.tau[j] for j in schedule.mti_slots[i]))


def check_point(instance: NetworkInstance, schedule: ScheduleFrame, point: ExpansionPoint, tol: float = 1e-6) -> None:
    """Raise :class:`InfeasiblePointError` unless the point is a valid expansion point."""
    J = instance.slot_count
    if len(point.X) != J or len(point.tau) != J or len(point.gamma) != J:
        raise InfeasiblePointError("expansion point has the wrong number of slots")
    if np.any(point.tau < 0) or np.any(point.phi < 0):
        raise InfeasiblePointError("negative duration or harvest amplitude")
    for j, X in enumerate(point.X):
        tr = max(1.0, float(np.trace(X).real))
        if np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0] < -1e-9 * tr:
            raise InfeasiblePointError(f"covariance of slot {j} is not PSD")
    for i in active_devices(instance, schedule):
        tau_m = mti_duration(point, schedule, i)
        if tau_m <= 0:
            raise InfeasiblePointError(f"device {i} has no MTI time at the expansion point")
        H = instance.channels.gram(i)
        u = float(np.trace(point.X[schedule.mti_slots[i][0]] @ H).real)
        ehs = schedule.ehs_slots(i)
        snr = snr_value(instance.snr_gain(i), u, point.phi[i, ehs], tau_m)
        target = instance.nat_targets[i]
        if rate_gap_value(snr * tau_m, tau_m, target) > tol * max(1.0, target):
            raise InfeasiblePointError(f"rate target of device {i} is violated at the expansion point")


def _assemble_common(instance, schedule, point, config, method):
    schedule.check(instance)
    check_point(instance, schedule, point)
    I, J, N = instance.device_count, instance.slot_count, instance.antenna_count
    prog = ConicProgram()
    X = [prog.add_hermitian(f"X{j}", N) for j in range(J)]
    tau = prog.add_variables("tau", J)
    gamma = prog.add_variables("gamma", J)
    active = active_devices(instance, schedule)
    phi = {}
    for i in active:
        for j in schedule.ehs_slots(i):
            phi[(i, j)] = prog.add_variable(f"phi[{i},{j}]")
    hv = SurrogateVariables(X=X, tau=tau, gamma=gamma, phi=phi, epigraph=[])

    objective = Affine()
    for j in range(J):
        term = dc_objective_surrogate(prog, tau[j], gamma[j], point.tau[j], point.gamma[j], label=f"dc{j}")
        hv.epigraph.append(Affine.var(prog.variable_count - 1))
        objective = objective + term
        if config.penalty > 0:
            objective = objective + rank_one_penalty(point.X[j], X[j], config.penalty)
    prog.minimize(objective)

    prog.add(ConeBlock("nonneg", list(tau), label="duration"))
    prog.add(ConeBlock("nonneg", [instance.frame_length - affine_sum(tau)], label="frame"))
    if config.fixed_durations is not None:
        fixed = np.asarray(config.fixed_durations, dtype=float)
        prog.add(ConeBlock("zero", [tau[j] - fixed[j] for j in range(J)], label="fixed"))
    for j in range(J):
        prog.add(X[j].psd_block(label=f"psd{j}"))
        prog.add(trace_bound(gamma[j], X[j], label=f"trace{j}"))
    for i, slots in enumerate(schedule.mti_slots):
        for j in slots[1:]:
            prog.add(X[j].equal_to(X[slots[0]], label=f"shared{i}"))
    for (i, j), p in phi.items():
        prog.add(harvest_rotated_cone(instance.efficiency[i], tau[j], X[j], instance.channels.gram(i), p,
                                      label=f"harvest[{i},{j}]"))
    return prog, hv, active


def assemble_sq(instance: NetworkInstance, schedule: ScheduleFrame, point: ExpansionPoint,
                config: SurrogateConfig) -> tuple[ConicProgram, SurrogateVariables]:
    """Convex subproblem of the sequential-quadratic track."""
    if point.theta is None:
        raise InfeasiblePointError("sequential-quadratic point needs theta")
    prog, hv, active = _assemble_common(instance, schedule, point, config, "sq")
    for i in active:
        slots = schedule.mti_slots[i]
        ehs = schedule.ehs_slots(i)
        H = instance.channels.gram(i)
        theta = prog.add_variable(f"theta[{i}]")
        hv.theta[i] = theta
        tau_m = affine_sum(hv.tau[j] for j in slots)
        tau_hat = mti_duration(point, schedule, i)
        prog.add(sq_theta_linearization(theta, hv.X[slots[0]], H, [hv.phi[(i, j)] for j in ehs],
                                        point.X[slots[0]], point.phi[i, ehs], instance.snr_gain(i),
                                        label=f"theta[{i}]", curvature=config.curvature))
        prog.extend(sq_rate_quadratic(theta, tau_m, float(point.theta[i]), tau_hat, instance.nat_targets[i],
                                      config.beta, label=f"rate[{i}]"))
    return prog, hv


def assemble_cqr(instance: NetworkInstance, schedule: ScheduleFrame, point: ExpansionPoint,
                 config: SurrogateConfig) -> tuple[ConicProgram, SurrogateVariables]:
    """Convex subproblem of the conic-quadratic track."""
    if config.M < 1:
        raise ConicError("approximation coefficient M must be >= 1")
    prog, hv, active = _assemble_common(instance, schedule, point, config, "cqr")
    for i in active:
        slots = schedule.mti_slots[i]
        ehs = schedule.ehs_slots(i)
        H = instance.channels.gram(i)
        z = prog.add_variable(f"z[{i}]")
        # xi and the tail of the exp chain are stored in units of exp(z_hat)
        z_ref = max(float(point.z[i]), 0.0) if point.z is not None else 0.0
        unit = math.exp(z_ref)
        xi = unit * prog.add_variable(f"xi[{i}]")
        hv.z[i], hv.xi[i] = z, xi
        tau_m = affine_sum(hv.tau[j] for j in slots)
        tau_hat = mti_duration(point, schedule, i)
        prog.extend(cqr_rate_soc(z, tau_m, instance.nat_targets[i], label=f"rate[{i}]"))
        hv.zeta[i], _ = exp_soc_chain(prog, z, xi, config.M, label=f"exp[{i}]", z_ref=z_ref,
                                      center=config.chain_center)
        prog.add(cqr_xi_linearization(xi, hv.X[slots[0]], H, tau_m, [hv.phi[(i, j)] for j in ehs],
                                      point.X[slots[0]], tau_hat, point.phi[i, ehs], instance.snr_gain(i),
                                      label=f"xi[{i}]", curvature=config.curvature, scale=unit))
    return prog, hv
