import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import t64
from crossdepth.losses import (LossWeights, ssi_loss_single, total_loss, uncertainty_loss,
                               uncertainty_target, urcd_loss, urcd_terms)
from crossdepth.types import BranchOutput, DualOutput

SSI_CONST_LN2 = 2.6845474867792935  # 10 * ln 2 * sqrt(0.15), mpmath
U_1_2 = 0.8111243971624382  # 1 - exp(-1/0.6), mpmath
U_10_11 = 0.2118723722546890  # 1 - exp(-1/4.2), mpmath


def _mask(shape, value=True):
    return torch.full(shape, value, dtype=torch.bool)


class TestSSI:
    def test_zero_when_exact(self):
        gt = t64([[[1.0, 2.0], [3.0, 4.0]]])
        assert ssi_loss_single(gt.clone(), gt, _mask(gt.shape)).item() == 0.0

    def test_constant_log_residual(self):
        gt = t64([[[1.5, 4.0]]])
        loss = ssi_loss_single(2 * gt, gt, _mask(gt.shape), 10.0, 0.85)
        assert loss.item() == pytest.approx(SSI_CONST_LN2, abs=1e-10)

    def test_joint_scale_invariance(self):
        pred, gt = t64([[[1.0, 2.5, 3.0]]]), t64([[[1.2, 2.0, 4.0]]])
        m = _mask(gt.shape)
        assert ssi_loss_single(3.7 * pred, 3.7 * gt, m).item() == pytest.approx(
            ssi_loss_single(pred, gt, m).item(), rel=1e-12)

    def test_matches_oracle_with_mask(self):
        pred = [[1.0, 2.0], [3.0, 0.7]]
        gt = [[1.3, 1.9], [2.0, 5.0]]
        mask = [[True, False], [True, True]]
        got = ssi_loss_single(t64([pred]), t64([gt]), torch.tensor([mask])).item()
        assert got == pytest.approx(oracles.ssi(pred, gt, mask), abs=1e-10)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError, match="no valid pixels"):
            ssi_loss_single(t64([[[1.0]]]), t64([[[1.0]]]), _mask((1, 1, 1), False))

    def test_non_positive_pred_raises(self):
        with pytest.raises(ValueError):
            ssi_loss_single(t64([[[0.0]]]), t64([[[1.0]]]), _mask((1, 1, 1)))

    def test_batch_mean_skips_empty_images(self):
        pred = t64([[[[2.0, 1.0]]], [[[5.0, 5.0]]]])
        gt = t64([[[[1.0, 1.0]]], [[[1.0, 1.0]]]])
        mask = torch.tensor([[[[True, True]]], [[[False, False]]]])
        alone = ssi_loss_single(pred[:1], gt[:1], mask[:1])
        assert ssi_loss_single(pred, gt, mask).item() == alone.item()


class TestUncertaintyTarget:
    def test_zero_residual(self):
        d = t64([[[1.0, 3.0]]])
        assert uncertainty_target(d, d.clone(), _mask(d.shape)).abs().max().item() == 0.0

    @pytest.mark.parametrize("pred, gt, expected", [(1.0, 2.0, U_1_2), (10.0, 11.0, U_10_11)])
    def test_worked_values(self, pred, gt, expected):
        u = uncertainty_target(t64([[[pred]]]), t64([[[gt]]]), _mask((1, 1, 1)), b=0.2)
        assert u.item() == pytest.approx(expected, abs=1e-10)

    def test_off_mask_zero_and_no_grad(self):
        pred = t64([[[1.0, 2.0]]]).requires_grad_()
        u = uncertainty_target(pred, t64([[[2.0, 9.0]]]), torch.tensor([[[True, False]]]))
        assert u[0, 0, 0, 1].item() == 0.0
        assert not u.requires_grad

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_range(self, p, g):
        u = uncertainty_target(t64([[[p]]]), t64([[[g]]]), _mask((1, 1, 1))).item()
        assert 0.0 <= u < 1.0

    @given(st.floats(1.0, 50.0), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
    def test_monotone_in_residual_at_fixed_sum(self, s, a, b):
        lo, hi = sorted((a, b))
        if hi - lo < 1e-6:
            return
        # residual r = frac * s with pred + gt = 2s held fixed
        def u(frac):
            r = frac * s
            return uncertainty_target(t64([[[s + r / 2]]]), t64([[[s - r / 2]]]),
                                      _mask((1, 1, 1))).item()
        assert u(lo) < u(hi)


class TestUncertaintyLoss:
    def test_zero(self):
        u = t64([[[0.1, 0.7]]])
        assert uncertainty_loss(u, u, u, u, _mask(u.shape)).item() == 0.0

    def test_hand_value(self):
        got = uncertainty_loss(t64([[[0.5]]]), t64([[[0.2]]]), t64([[[0.8]]]), t64([[[0.2]]]),
                               _mask((1, 1, 1)))
        assert got.item() == pytest.approx(0.3, abs=1e-12)

    def test_maximal(self):
        z, o = torch.zeros(1, 3, 3, dtype=torch.float64), torch.ones(1, 3, 3, dtype=torch.float64)
        assert uncertainty_loss(z, z, o, o, _mask(z.shape)).item() == 2.0

    def test_empty_mask_raises(self):
        z = torch.zeros(1, 2, 2)
        with pytest.raises(ValueError):
            uncertainty_loss(z, z, z, z, _mask(z.shape, False))


class TestURCD:
    def test_equal_depths(self):
        d = t64([[[1.0, 5.0]]])
        u = t64([[[0.3, 0.9]]])
        assert urcd_loss(d, d.clone(), u, u).item() == 0.0

    def test_hand_value(self):
        d_t, d_c = t64([[[1.0, 2.0]]]), t64([[[1.5, 1.5]]])
        u_c, u_t = t64([[[0.5, 0.0]]]), t64([[[0.0, 0.5]]])
        t1, t2 = urcd_terms(d_t, d_c, u_t, u_c)
        assert t1.item() == pytest.approx(0.375, abs=1e-12)
        assert t2.item() == pytest.approx(0.375, abs=1e-12)
        assert urcd_loss(d_t, d_c, u_t, u_c).item() == pytest.approx(0.75, abs=1e-12)

    def test_fully_uncertain(self):
        d_t, d_c = t64([[[1.0, 9.0]]]), t64([[[4.0, 2.0]]])
        o = torch.ones_like(d_t)
        assert urcd_loss(d_t, d_c, o, o).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            urcd_loss(torch.ones(1, 2, 2), torch.ones(1, 2, 3), torch.ones(1, 2, 2), torch.ones(1, 2, 2))

    def test_valid_only_variant(self):
        d_t, d_c = t64([[[1.0, 2.0]]]), t64([[[1.5, 1.5]]])
        u = torch.zeros_like(d_t)
        mask = torch.tensor([[[True, False]]])
        assert urcd_loss(d_t, d_c, u, u, mask).item() == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.floats(0.5, 10), min_size=8, max_size=8),
           st.lists(st.floats(0, 1), min_size=8, max_size=8))
    def test_swap_symmetry(self, ds, us):
        d_t, d_c = t64([[ds[:4]]]), t64([[ds[4:]]])
        u_t, u_c = t64([[us[:4]]]), t64([[us[4:]]])
        a = urcd_loss(d_t, d_c, u_t, u_c).item()
        b = urcd_loss(d_c, d_t, u_c, u_t).item()
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)
        assert a >= 0


class TestStopGradient:
    def test_term1_grads(self):
        g = torch.Generator().manual_seed(0)
        d_t, d_c = [torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64).add(1).requires_grad_()
                    for _ in range(2)]
        u_t, u_c = [torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64).requires_grad_()
                    for _ in range(2)]
        t1, _ = urcd_terms(d_t, d_c, u_t, u_c)
        grads = torch.autograd.grad(t1, [d_t, d_c, u_t, u_c], allow_unused=True)
        assert grads[0] is not None and grads[0].abs().sum() > 0
        for grad in grads[1:]:
            assert grad is None or grad.abs().max().item() == 0.0

    def test_uncertainty_untouched_by_urcd(self):
        d_t = torch.tensor([[[1.0, 2.0]]], requires_grad=True)
        d_c = torch.tensor([[[2.0, 1.0]]], requires_grad=True)
        u_t = torch.tensor([[[0.2, 0.4]]], requires_grad=True)
        u_c = torch.tensor([[[0.6, 0.1]]], requires_grad=True)
        urcd_loss(d_t, d_c, u_t, u_c).backward()
        assert u_t.grad is None and u_c.grad is None
        assert d_t.grad is not None and d_c.grad is not None


def _bundle_inputs(depth_t, depth_c, unc_t, unc_c):
    return DualOutput(BranchOutput(depth_t, unc_t), BranchOutput(depth_c, unc_c))


class TestTotalLoss:
    def test_perfect_prediction_zero(self):
        gt = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        z = torch.zeros_like(gt)
        b = total_loss(_bundle_inputs(gt.clone(), gt.clone(), z, z), gt, gt > 0)
        assert b.total.item() == 0.0

    def test_weighted_sum_arithmetic(self):
        w = LossWeights()
        assert (w.lambda1, w.lambda2) == (0.1, 0.5)
        assert 2.0 + w.lambda1 * 1.0 + w.lambda2 * 0.4 == pytest.approx(2.3, abs=1e-12)

    def test_bundle_identity(self):
        g = torch.Generator().manual_seed(3)
        gt = torch.rand(2, 1, 4, 4, generator=g, dtype=torch.float64) * 4 + 1
        d_t, d_c = gt * 1.1, gt * 0.8
        u_t, u_c = torch.rand_like(gt) * 0.5, torch.rand_like(gt) * 0.5
        b = total_loss(_bundle_inputs(d_t, d_c, u_t, u_c), gt, gt > 0)
        assert b.total.item() == pytest.approx(
            b.ssi.item() + 0.1 * b.urcd.item() + 0.5 * b.u.item(), rel=1e-14)

    def test_zero_lambdas(self):
        gt = t64([[[[1.0, 2.0]]]])
        b = total_loss(_bundle_inputs(gt * 1.3, gt * 0.7, torch.zeros_like(gt), torch.zeros_like(gt)),
                       gt, gt > 0, LossWeights(lambda1=0.0, lambda2=0.0))
        assert b.total.item() == b.ssi.item()

    def test_cross_distill_off(self):
        gt = t64([[[[1.0, 2.0]]]])
        b = total_loss(_bundle_inputs(gt * 1.3, gt * 0.7, torch.zeros_like(gt), torch.zeros_like(gt)),
                       gt, gt > 0, cross_distill=False)
        assert b.total.item() == b.ssi.item() and b.lambda1 == b.lambda2 == 0.0

    def test_rectify_off_uses_unit_weights(self):
        gt = t64([[[[1.0, 2.0]]]])
        d_t, d_c = gt * 1.3, gt * 0.7
        high = torch.full_like(gt, 0.9)
        b = total_loss(_bundle_inputs(d_t, d_c, high, high), gt, gt > 0, uncertainty_rectify=False)
        z = torch.zeros_like(gt)
        assert b.urcd.item() == pytest.approx(urcd_loss(d_t, d_c, z, z).item(), rel=1e-14)
        assert b.u.item() == 0.0 and b.lambda2 == 0.0


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(eta=1.5)
    with pytest.raises(ValueError):
        LossWeights(b=0.0)
