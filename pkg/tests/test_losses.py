import numpy as np
import pytest

from helpers import finite_difference
from tonekd.losses import (CoalescenceConfig, LossWeights, coalescence_loss,
                           kl_distill, total_loss)
from tonekd.tensor import NumericsError, ShapeError, Tensor


class TestKLDistill:
    def test_identical_logits_give_zero(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
        assert kl_distill(x, x, 1.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_half_half_vs_quarter_three_quarters(self):
        s = Tensor([[0.0, 0.0]])
        t = Tensor([np.log([0.25, 0.75])])
        expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
        assert kl_distill(s, t, 1.0).item() == pytest.approx(expected, abs=1e-9)

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            s = Tensor(rng.normal(size=(3, 6)))
            t = Tensor(rng.normal(size=(3, 6)))
            assert kl_distill(s, t, rng.uniform(0.3, 4.0)).item() >= 0.0

    def test_reverse_direction(self):
        rng = np.random.default_rng(2)
        s = Tensor(rng.normal(size=(2, 4)))
        t = Tensor(rng.normal(size=(2, 4)))
        forward = kl_distill(s, t, 1.0, direction="student_first").item()
        reverse = kl_distill(t, s, 1.0, direction="teacher_first").item()
        assert forward == pytest.approx(reverse, abs=1e-12)

    def test_matches_direct_computation_at_any_temperature(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=(5, 4))
        t = rng.normal(size=(5, 4))
        for tau in (0.5, 1.0, 2.0, 7.0):
            ps = np.exp(s / tau) / np.exp(s / tau).sum(axis=1, keepdims=True)
            pt = np.exp(t / tau) / np.exp(t / tau).sum(axis=1, keepdims=True)
            expected = tau * tau * (ps * np.log(ps / pt)).sum(axis=1).mean()
            got = kl_distill(Tensor(s), Tensor(t), tau).item()
            assert got == pytest.approx(expected, rel=1e-9)

    def test_invalid_arguments(self):
        x = Tensor(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            kl_distill(x, x, 0.0)
        with pytest.raises(ShapeError):
            kl_distill(x, Tensor(np.zeros((3, 2))), 1.0)
        with pytest.raises(ValueError):
            kl_distill(x, x, 1.0, direction="sideways")

    def test_gradient_reaches_student_only(self):
        rng = np.random.default_rng(4)
        s = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        t = Tensor(rng.normal(size=(3, 4)))
        kl_distill(s, t, 2.0).backward()
        assert s.grad is not None
        assert t.grad is None

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        t0 = rng.normal(size=(3, 4))
        s0 = rng.uniform(-2, 2, size=(3, 4))
        s = Tensor(s0, requires_grad=True)
        kl_distill(s, Tensor(t0), 1.5).backward()
        numeric = finite_difference(
            lambda a: kl_distill(Tensor(a), Tensor(t0), 1.5).item(), s0)
        assert np.abs(s.grad - numeric).max() <= 1e-6


class TestCoalescence:
    def unit_diff(self):
        return Tensor([[1.0], [1.0]]), Tensor([[0.0], [0.0]])

    def test_identical_trajectories_zero_both_modes(self):
        h = Tensor(np.random.default_rng(6).normal(size=(5, 3)))
        for mode in ("mean", "weighted_sum"):
            cfg = CoalescenceConfig(alpha=0.7, mode=mode)
            assert coalescence_loss(h, h, cfg).item() == 0.0

    def test_weighted_sum_alpha_zero(self):
        hs, ht = self.unit_diff()
        cfg = CoalescenceConfig(alpha=0.0, mode="weighted_sum")
        assert coalescence_loss(hs, ht, cfg).item() == pytest.approx(2.0, abs=1e-12)

    def test_weighted_sum_alpha_ln2(self):
        hs, ht = self.unit_diff()
        cfg = CoalescenceConfig(alpha=np.log(2.0), mode="weighted_sum")
        assert coalescence_loss(hs, ht, cfg).item() == pytest.approx(0.75, abs=1e-12)

    def test_mean_is_sum_over_t(self):
        rng = np.random.default_rng(7)
        hs = Tensor(rng.normal(size=(6, 4)))
        ht = Tensor(rng.normal(size=(6, 4)))
        mean = coalescence_loss(hs, ht, CoalescenceConfig(mode="mean")).item()
        sums = coalescence_loss(
            hs, ht, CoalescenceConfig(alpha=0.0, mode="weighted_sum")).item()
        assert sums == pytest.approx(6 * mean, rel=1e-12)

    def test_strictly_decreasing_in_alpha(self):
        rng = np.random.default_rng(8)
        hs = Tensor(rng.normal(size=(5, 3)))
        ht = Tensor(rng.normal(size=(5, 3)))
        values = [coalescence_loss(
            hs, ht, CoalescenceConfig(alpha=a, mode="weighted_sum")).item()
            for a in (0.0, 0.25, 0.5, 1.0, 2.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_early_errors_cost_more(self):
        # same total squared error, concentrated early vs late
        early = Tensor([[2.0], [0.0], [0.0], [0.0]])
        late = Tensor([[0.0], [0.0], [0.0], [2.0]])
        zero = Tensor(np.zeros((4, 1)))
        for alpha in (0.1, 0.5, 1.0):
            cfg = CoalescenceConfig(alpha=alpha, mode="weighted_sum")
            assert (coalescence_loss(early, zero, cfg).item()
                    > coalescence_loss(late, zero, cfg).item())

    def test_normalized_variant(self):
        hs, ht = self.unit_diff()
        alpha = 0.3
        cfg = CoalescenceConfig(alpha=alpha, mode="weighted_sum", normalized=True)
        w = np.exp(-alpha * np.arange(1, 3))
        expected = (w * 1.0).sum() / w.sum()
        assert coalescence_loss(hs, ht, cfg).item() == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            coalescence_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))),
                             CoalescenceConfig())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        ht = Tensor(rng.normal(size=(4, 3)))
        for cfg in (CoalescenceConfig(mode="mean"),
                    CoalescenceConfig(alpha=0.4, mode="weighted_sum")):
            h0 = rng.uniform(-2, 2, size=(4, 3))
            h = Tensor(h0, requires_grad=True)
            coalescence_loss(h, ht, cfg).backward()
            numeric = finite_difference(
                lambda a: coalescence_loss(Tensor(a), ht, cfg).item(), h0)
            assert np.abs(h.grad - numeric).max() <= 1e-6


class TestTotalLoss:
    def test_pure_ctc_when_weights_zero(self):
        total, bd = total_loss(Tensor(1.5), Tensor(9.0), Tensor(4.0),
                               LossWeights(lam=0.0, mu=0.0))
        assert total.item() == 1.5
        assert bd.l_total == 1.5

    def test_eq1_arithmetic(self):
        total, bd = total_loss(Tensor(1.0), Tensor(2.0), Tensor(0.0),
                               LossWeights(lam=0.5, mu=0.0))
        assert total.item() == 2.0 and bd.l_total == 2.0

    def test_extended_sum(self):
        total, bd = total_loss(Tensor(1.0), Tensor(2.0), Tensor(4.0),
                               LossWeights(lam=0.5, mu=0.25))
        assert total.item() == 3.0
        assert bd.l_total == pytest.approx(
            bd.l_ctc + 0.5 * bd.l_distill + 0.25 * bd.l_coal, abs=1e-12)

    def test_breakdown_identity_random(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            w = LossWeights(lam=rng.uniform(0, 2), mu=rng.uniform(0, 2))
            parts = [Tensor(v) for v in rng.uniform(0, 5, size=3)]
            total, bd = total_loss(*parts, w)
            assert bd.l_total == pytest.approx(
                bd.l_ctc + w.lam * bd.l_distill + w.mu * bd.l_coal, abs=1e-12)
            assert total.item() == pytest.approx(bd.l_total, abs=1e-12)

    def test_non_finite_component_rejected(self):
        good = Tensor(1.0)
        with pytest.raises(NumericsError):
            total_loss(good, Tensor(np.array(800.0)).exp(), good, LossWeights())

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lam=-0.1)
        with pytest.raises(ValueError):
            LossWeights(temperature=0.0)
        with pytest.raises(ValueError):
            CoalescenceConfig(mode="geometric")
