import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from symradio.estimators import CQRAllocator, SQAllocator, check_instance

from conftest import seeded_instance


class TestAllocators:
    def test_params_round_trip(self):
        est = CQRAllocator(M=6, counter_max=5)
        assert est.get_params()["M"] == 6
        copy = clone(est)
        assert copy.get_params() == est.get_params()
        est.set_params(beta=3.0)
        assert est.beta == 3.0

    def test_chain_center_reaches_the_solver_config(self):
        assert CQRAllocator(chain_center=True)._config().chain_center
        assert not CQRAllocator()._config().chain_center

    @pytest.mark.parametrize("cls", [SQAllocator, CQRAllocator])
    def test_fit_predict_score(self, cls):
        inst, _ = seeded_instance()
        est = cls(counter_max=5).fit(inst)
        beams, tau = est.predict()
        assert len(beams) == inst.slot_count and tau.sum() <= inst.frame_length + 1e-9
        assert est.score() == pytest.approx(-est.report_.total_energy)
        assert est.trace_.iterations <= 5

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            SQAllocator().predict()

    def test_check_instance(self):
        with pytest.raises(TypeError):
            check_instance(np.zeros((3, 3)))
        inst, _ = seeded_instance()
        assert check_instance(inst).mti_slots == ((0,), (1,), (2,), (3,))
