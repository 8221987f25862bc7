"""Thin scikit-learn style wrappers around the two allocation algorithms.

The allocators are optimizers, not learners: ``fit`` takes a network instance
(not a feature matrix) and solves it.  The wrappers only exist so the
hyperparameters can be handled with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .model import NetworkInstance, ScheduleFrame, validate_solution
from .sca import AlgorithmConfig, run_cqr, run_sq
from .scenarios import tsr_schedule


def check_instance(instance, schedule=None) -> ScheduleFrame:
    """Default to the one-slot-per-device T-SR schedule and check dimensions."""
    if not isinstance(instance, NetworkInstance):
        raise TypeError(f"expected a NetworkInstance, got {type(instance).__name__}")
    if schedule is None:
        schedule = tsr_schedule(instance.device_count, 1, instance.slot_count)
    schedule.check(instance)
    return schedule


class _Allocator(BaseEstimator):
    _method = ""

    def __init__(self, tolerance=1e-6, counter_max=30, penalty_scale=1e-3, penalty_growth=10.0,
                 beta=2.0, M=4, curvature=True, chain_center=False, seed=0):
        self.tolerance = tolerance
        self.counter_max = counter_max
        self.penalty_scale = penalty_scale
        self.penalty_growth = penalty_growth
        self.beta = beta
        self.M = M
        self.curvature = curvature
        self.chain_center = chain_center
        self.seed = seed

    def _config(self) -> AlgorithmConfig:
        return AlgorithmConfig(
            tolerance=self.tolerance, counter_max=self.counter_max, penalty_scale=self.penalty_scale,
            penalty_growth=self.penalty_growth, beta=self.beta, M=self.M, curvature=self.curvature,
            chain_center=self.chain_center, seed=self.seed,
        )

    def _solve(self, instance, schedule):
        raise NotImplementedError

    def fit(self, instance, schedule=None):
        schedule = check_instance(instance, schedule)
        self.instance_ = instance
        self.schedule_ = schedule
        self.report_, self.trace_ = self._solve(instance, schedule)
        return self

    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, instance=None):
        """Beamformers and slot durations of the fitted allocation."""
        self._check_fitted()
        return self.report_.beamformers, self.report_.durations

    def score(self, instance=None, schedule=None):
        """Negative total energy (higher is better), ``-inf`` when infeasible."""
        self._check_fitted()
        if validate_solution(self.instance_, self.schedule_, self.report_):
            return float("-inf")
        return -self.report_.total_energy


class SQAllocator(_Allocator):
    """Sequential-quadratic allocator."""

    _method = "SQ"

    def _solve(self, instance, schedule):
        return run_sq(instance, schedule, self._config())


class CQRAllocator(_Allocator):
    """Conic-quadratic allocator (``M`` sets the exponential-chain depth)."""

    _method = "CQR"

    def _solve(self, instance, schedule):
        return run_cqr(instance, schedule, self._config())
