import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dapn.weighting import (UncertaintyWeights, combine_losses,
                            softmax_likelihood_weight_check,
                            stationary_weight)

D64 = torch.float64


def _losses(values):
    return [torch.tensor(v, dtype=D64) for v in values]


class TestCombine:
    def test_zero_weights_is_plain_sum(self):
        vals = [0.3, 1.7, 2.5, 0.01]
        total = combine_losses(_losses(vals), torch.zeros(4, dtype=D64))
        assert total.item() == sum(vals)

    def test_worked_example(self):
        w = torch.tensor([math.log(2), 0, 0, 0], dtype=D64)
        total = combine_losses(_losses([1, 1, 1, 1]), w)
        assert total.item() == pytest.approx(math.log(2) / 2 + 0.5 + 3,
                                             abs=1e-12)
        assert total.item() == pytest.approx(3.8466, abs=1e-4)

    def test_absent_losses_contribute_nothing(self):
        w = torch.tensor([0.4, -0.2, 3.0, 1.0], dtype=D64)
        l1, l2 = _losses([1.0, 2.0])
        total = combine_losses([l1, l2, None, None], w)
        expected = 0.2 + math.exp(-0.4) * 1.0 - 0.1 + math.exp(0.2) * 2.0
        assert total.item() == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("j", range(4))
    def test_nan_names_component(self, j):
        vals = _losses([1.0] * 4)
        vals[j] = torch.tensor(float("nan"), dtype=D64)
        name = ["lps", "lpd", "ldc", "lds"][j]
        with pytest.raises(FloatingPointError, match=name):
            combine_losses(vals, torch.zeros(4, dtype=D64))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 10.0), min_size=4, max_size=4),
           st.lists(st.floats(-3.0, 3.0), min_size=4, max_size=4))
    def test_weight_gradient_closed_form(self, losses, ws):
        w = torch.tensor(ws, dtype=D64, requires_grad=True)
        combine_losses(_losses(losses), w).backward()
        expected = 0.5 - np.exp(-np.array(ws)) * np.array(losses)
        np.testing.assert_allclose(w.grad.numpy(), expected, atol=1e-6,
                                   rtol=0)

    @pytest.mark.parametrize("loss", [0.2, 1.0, 4.0])
    def test_stationary_point(self, loss):
        w_star = stationary_weight(loss)
        w = torch.tensor([w_star], dtype=D64, requires_grad=True)
        combine_losses([torch.tensor(loss, dtype=D64)], w).backward()
        assert abs(w.grad.item()) < 1e-12

    @pytest.mark.parametrize("loss,w0", [(0.2, 0.0), (3.0, 0.0), (1.0, 2.0)])
    def test_descent_moves_toward_stationary(self, loss, w0):
        target = stationary_weight(loss)
        w = torch.tensor([w0], dtype=D64, requires_grad=True)
        combine_losses([torch.tensor(loss, dtype=D64)], w).backward()
        w_new = w.item() - 0.1 * w.grad.item()
        assert abs(w_new - target) < abs(w0 - target)

    def test_multiplier_monotone(self):
        w = torch.linspace(-3, 3, 50, dtype=D64)
        assert (torch.exp(-w)[1:] < torch.exp(-w)[:-1]).all()

    def test_module_initialised_to_zero(self):
        m = UncertaintyWeights()
        assert m.w.tolist() == [0.0] * 4 and m.w.requires_grad
        assert not UncertaintyWeights(learnable=False).w.requires_grad


class TestScaledLikelihood:
    def test_sigma_one_is_log_softmax(self):
        logits = torch.tensor([0.3, -1.0, 2.0], dtype=D64)
        torch.testing.assert_close(
            softmax_likelihood_weight_check(logits, 2, 1.0),
            torch.log_softmax(logits, -1)[2])

    def test_large_sigma_uniform_limit(self):
        logits = torch.tensor([3.0, -2.0, 0.5, 1.0, 4.0], dtype=D64)
        for c in range(5):
            val = softmax_likelihood_weight_check(logits, c, 1e3).item()
            assert val == pytest.approx(-math.log(5), abs=1e-4)

    @pytest.mark.parametrize("sigma", [0.1, 1.0, 7.0])
    def test_symmetric_pair(self, sigma):
        logits = torch.tensor([1.3, 1.3], dtype=D64)
        assert softmax_likelihood_weight_check(logits, 0, sigma).item() == \
            pytest.approx(math.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_nonpositive_sigma(self, sigma):
        with pytest.raises(ValueError):
            softmax_likelihood_weight_check(torch.zeros(2), 0, sigma)
