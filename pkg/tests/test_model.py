import math

import numpy as np
import pytest

from symradio.model import (
    ChannelSet, NetworkInstance, ScheduleFrame, SolutionReport, achievable_rate, build_report, device_rates,
    harvested_energy, snr_at_receiver, total_energy, validate_solution,
)

from conftest import random_psd, scalar_instance


class TestHarvestedEnergy:
    def test_zero_efficiency(self, rng):
        X = random_psd(rng, 3)
        assert harvested_energy(0.0, 1.0, X, random_psd(rng, 3)) == 0.0

    def test_identity_trace(self):
        assert harvested_energy(1.0, 1.0, np.eye(2), np.eye(2)) == pytest.approx(2.0)

    def test_rank_one_forms_agree(self, rng):
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        direct = 0.8 * 1.3 * abs(np.vdot(h, x)) ** 2
        via_trace = harvested_energy(0.8, 1.3, np.outer(x, x.conj()), np.outer(h, h.conj()))
        np.testing.assert_allclose(via_trace, direct, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            harvested_energy(0.5, 1.0, np.eye(2), np.eye(3))

    def test_negative_duration(self):
        with pytest.raises(ValueError):
            harvested_energy(0.5, -1.0, np.eye(2), np.eye(2))


class TestSnr:
    def test_no_reflected_power(self):
        assert snr_at_receiver(100, 1.0, np.eye(2), np.eye(2), 0.0, 1.0, 1e-3) == 0.0

    def test_unit_case(self):
        X = np.diag([1.0, 0.0])
        assert snr_at_receiver(1, 1.0, X, np.eye(2), 1.0, 1.0, 1.0) == pytest.approx(1.0)

    def test_scalar_reduction(self):
        K, g, h, p, eps, tau, s2 = 10, 0.7 - 0.2j, 1.3 + 0.4j, 0.25, 0.6, 2.5, 1e-3
        hand = K * abs(g) ** 2 * abs(h) ** 2 * p * eps / (tau * s2)
        got = snr_at_receiver(K, g, np.array([[p]]), np.array([[abs(h) ** 2]]), eps, tau, s2)
        np.testing.assert_allclose(got, hand, rtol=1e-12)

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            snr_at_receiver(1, 1.0, np.eye(1), np.eye(1), 1.0, 0.0, 1.0)


class TestRateAndEnergy:
    def test_rate_examples(self):
        assert achievable_rate(3.0, 100, 0.0) == 0.0
        assert achievable_rate(100.0, 100, 1.0) == pytest.approx(1.0)
        assert achievable_rate(2.0, 100, 3.0) == pytest.approx(0.04)

    def test_energy_examples(self, rng):
        assert total_energy([1.0, 2.0], [np.zeros((2, 2)), np.zeros((2, 2))]) == 0.0
        assert total_energy([1.0, 2.0], [np.diag([1.0, 2.0]), np.diag([0.25, 0.25])]) == pytest.approx(4.0)
        xs = [rng.standard_normal(3) + 1j * rng.standard_normal(3) for _ in range(2)]
        tau = [0.7, 1.9]
        expected = sum(t * np.linalg.norm(x) ** 2 for t, x in zip(tau, xs))
        np.testing.assert_allclose(total_energy(tau, [np.outer(x, x.conj()) for x in xs]), expected, rtol=1e-12)

    def test_energy_length_mismatch(self):
        with pytest.raises(ValueError):
            total_energy([1.0], [np.eye(1), np.eye(1)])


class TestInstance:
    def test_nat_targets(self):
        inst, _ = scalar_instance()
        np.testing.assert_allclose(inst.nat_targets, [10 * 0.5 * math.log(2)])

    def test_validation(self):
        ch = ChannelSet(h=[[1.0]], g=[1.0])
        with pytest.raises(ValueError):
            NetworkInstance(ch, rate_targets=[-1.0])
        with pytest.raises(ValueError):
            NetworkInstance(ch, rate_targets=[0.1], efficiency=1.5)
        with pytest.raises(ValueError):
            ChannelSet(h=np.ones((2, 3)), g=[1.0])

    def test_schedule_roles(self):
        s = ScheduleFrame(((0,), (1, 2, 3)), 4)
        assert s.role(1, 2) == "MTI" and s.role(0, 2) == "EHS"
        assert s.ehs_slots(1) == [0]
        assert s.is_tsr()
        assert not ScheduleFrame(((0, 2),), 3).is_tsr()
        with pytest.raises(ValueError):
            ScheduleFrame(((5,),), 2)


class TestValidate:
    def test_zero_targets_zero_powers(self):
        inst, sched = scalar_instance(C=0.0)
        report = build_report(inst, sched, [np.zeros(1, complex)] * 2, [5.0, 5.0])
        assert validate_solution(inst, sched, report) == []

    def test_frame_overrun(self):
        inst, sched = scalar_instance(C=0.0)
        report = build_report(inst, sched, [np.zeros(1, complex)] * 2, [5.5, 5.5])
        kinds = [v.constraint for v in validate_solution(inst, sched, report)]
        assert "frame" in kinds

    def test_rate_shortfall_and_harvest_excess(self):
        inst, sched = scalar_instance()
        report = build_report(inst, sched, [np.array([0.01 + 0j])] * 2, [5.0, 5.0])
        assert [v.constraint for v in validate_solution(inst, sched, report)] == ["rate"]
        report.harvested = report.harvested * 2.0 + 1e-3
        assert "harvest" in [v.constraint for v in validate_solution(inst, sched, report)]

    def test_multislot_device_uses_summed_duration(self):
        inst = NetworkInstance(ChannelSet(h=[[1.0]], g=[1.0]), rate_targets=[0.1], spreading_factor=10,
                               receiver_noise=1e-3, slot_count=3)
        sched = ScheduleFrame(((1, 2),), 3)
        X = [np.eye(1) * p for p in (0.2, 0.1, 0.1)]
        tau = [2.0, 1.0, 3.0]
        rates = device_rates(inst, sched, X, tau)
        eps = 0.8 * 2.0 * 0.2
        snr = 10 * 0.1 * eps / (4.0 * 1e-3)
        np.testing.assert_allclose(rates, [4.0 / 10 * math.log2(1 + snr)], rtol=1e-12)

    def test_report_energy_db(self):
        r = SolutionReport(total_energy=10.0, beamformers=[], durations=np.zeros(0), rates=np.zeros(0),
                           harvested=np.zeros((0, 0)), reflected_energy=np.zeros(0), rank_residuals=np.zeros(0))
        assert r.energy_db == pytest.approx(10.0)
        assert r.converged
