"""
levy_model 测试
"""
import math

import numpy as np
import pytest

from levy_polling.core.errors import DomainError, ModelValidationError
from levy_polling.core.levy_model import (
    CompoundComponent,
    JumpSpec,
    ServedProcessSpec,
    SubordinatorSpec,
    SwitchSpec,
    mean_rate,
    phi_A_eval,
    phi_eval,
    sample_increment,
    switch_lst,
)
from levy_polling.utils.numerics import forward_derivative


class TestSubordinator:
    def test_phi_closed_form(self, example_input):
        expected = 0.5 * 0.4 / 1.4 + 1.0 * 0.3 / 1.3
        assert phi_eval(example_input, [1.0, 1.0]) == pytest.approx(expected, abs=1e-14)
        assert phi_eval(example_input, [1.0, 1.0]) == pytest.approx(0.373626, abs=1e-6)

    def test_phi_at_zero(self, example_input):
        assert phi_eval(example_input, [0.0, 0.0]) == 0.0

    def test_phi_small_argument_keeps_precision(self, single_input):
        # λ * m * u 的一阶近似
        assert phi_eval(single_input, [1e-12]) == pytest.approx(0.2e-12, rel=1e-9)

    def test_negative_argument_rejected(self, example_input):
        with pytest.raises(DomainError):
            phi_eval(example_input, [-0.1, 1.0])

    def test_dimension_mismatch_rejected(self, example_input):
        with pytest.raises(DomainError):
            phi_eval(example_input, [1.0])

    def test_mean_rate(self, example_input):
        np.testing.assert_allclose(mean_rate(example_input), [0.2, 0.3], atol=1e-15)

    def test_correlated_component(self):
        jump = JumpSpec("exponential", (1.0, 0.5), value=0.4)
        spec = SubordinatorSpec(drift=(0.1, 0.0), components=(CompoundComponent(2.0, jump),))
        s = 1.0 + 0.5 * 2.0
        expected = 0.1 + 2.0 * (0.4 * s / (1.0 + 0.4 * s))
        assert phi_eval(spec, [1.0, 2.0]) == pytest.approx(expected, abs=1e-14)
        np.testing.assert_allclose(mean_rate(spec), [0.1 + 0.8, 0.4], atol=1e-14)

    def test_deterministic_and_discrete_jumps(self):
        det = JumpSpec("deterministic", (1.0,), value=0.5)
        disc = JumpSpec("discrete", (1.0,), points=(0.5, 2.0), weights=(0.25, 0.75))
        spec = SubordinatorSpec(
            drift=(0.0,), components=(CompoundComponent(1.0, det), CompoundComponent(0.2, disc))
        )
        u = 0.7
        expected = (1.0 - math.exp(-0.5 * u)) + 0.2 * (
            0.25 * (1.0 - math.exp(-0.5 * u)) + 0.75 * (1.0 - math.exp(-2.0 * u))
        )
        assert phi_eval(spec, [u]) == pytest.approx(expected, abs=1e-14)
        assert mean_rate(spec)[0] == pytest.approx(0.5 + 0.2 * (0.125 + 1.5), abs=1e-14)

    def test_permuted_exponent(self, example_input):
        u = np.array([0.3, 1.7])
        order = [1, 0]
        permuted = example_input.permuted(order)
        assert permuted.exponent(u[order]) == pytest.approx(example_input.exponent(u), abs=1e-15)

    def test_zero_subordinator(self):
        spec = SubordinatorSpec.zero(3)
        assert spec.is_zero
        assert phi_eval(spec, [1.0, 2.0, 3.0]) == 0.0


class TestJumpValidation:
    def test_unknown_kind(self):
        with pytest.raises(ModelValidationError):
            JumpSpec("pareto", (1.0,), value=1.0)

    def test_scale_must_be_nonzero(self):
        with pytest.raises(ModelValidationError):
            JumpSpec("exponential", (0.0, 0.0), value=1.0)

    def test_discrete_weights_must_sum_to_one(self):
        with pytest.raises(ModelValidationError):
            JumpSpec("discrete", (1.0,), points=(1.0, 2.0), weights=(0.5, 0.4))

    def test_rate_must_be_positive(self):
        with pytest.raises(ModelValidationError):
            CompoundComponent(0.0, JumpSpec("deterministic", (1.0,), value=1.0))

    def test_dimension_consistency(self):
        jump = JumpSpec("deterministic", (1.0, 1.0), value=1.0)
        with pytest.raises(ModelValidationError):
            SubordinatorSpec(drift=(0.0,), components=(CompoundComponent(1.0, jump),))


class TestServedProcess:
    def test_phi_A_can_be_negative(self, example_input):
        served = ServedProcessSpec(example_input, 0)
        expected = 0.5 * 0.04 / 1.04 - 0.1
        assert phi_A_eval(served, [0.1, 0.0]) == pytest.approx(expected, abs=1e-15)
        assert phi_A_eval(served, [0.1, 0.0]) < 0.0

    def test_mean_rate_row(self, example_input):
        served = ServedProcessSpec(example_input, 0)
        np.testing.assert_allclose(mean_rate(served), [-0.8, 0.3], atol=1e-15)

    def test_brownian_term(self, example_input):
        served = ServedProcessSpec(example_input, 1, service_rate=1.5, brownian_sd=0.4)
        u = [0.5, 2.0]
        expected = phi_eval(example_input, u) - 1.5 * 2.0 - 0.5 * 0.16 * 4.0
        assert phi_A_eval(served, u) == pytest.approx(expected, abs=1e-14)

    def test_own_partial_matches_difference(self, example_input):
        served = ServedProcessSpec(example_input, 0, brownian_sd=0.3)
        u = np.array([0.8, 0.4])
        h = 1e-6
        step = np.array([h, 0.0])
        numeric = (served.exponent(u + step) - served.exponent(u - step)) / (2 * h)
        assert served.own_partial(u) == pytest.approx(numeric, abs=1e-8)

    def test_nonnegative_drift_rejected(self):
        spec = SubordinatorSpec(
            drift=(0.0,),
            components=(CompoundComponent(1.0, JumpSpec("exponential", (1.0,), value=1.0)),),
        )
        with pytest.raises(ModelValidationError):
            ServedProcessSpec(spec, 0)

    def test_queue_index_out_of_range(self, example_input):
        with pytest.raises(ModelValidationError):
            ServedProcessSpec(example_input, 2)


class TestSwitch:
    @pytest.mark.parametrize(
        "kind,stages,expected",
        [
            ("deterministic", 1, math.exp(-2.0 * 0.7)),
            ("exponential", 1, 1.0 / (1.0 + 2.0 * 0.7)),
            ("erlang", 3, (1.0 + 2.0 * 0.7 / 3) ** -3),
        ],
    )
    def test_lst(self, example_input, kind, stages, expected):
        switch = SwitchSpec(kind, 2.0, example_input, stages=stages)
        assert switch_lst(switch, 0.7) == pytest.approx(expected, rel=1e-14)
        assert switch_lst(switch, 0.0) == 1.0

    def test_negative_argument_rejected(self, example_input):
        with pytest.raises(DomainError):
            switch_lst(SwitchSpec("deterministic", 1.0, example_input), -1.0)

    def test_mean_ratio_limit(self, example_input):
        switch = SwitchSpec("erlang", 1.5, example_input, stages=2)
        assert switch.mean_ratio(0.0) == 1.5
        s = 1e-9
        assert switch.mean_ratio(s) == pytest.approx(1.5, rel=1e-6)
        s = 0.8
        assert switch.mean_ratio(s) == pytest.approx((1.0 - switch.lst(s)) / s, rel=1e-12)

    def test_invalid_mean(self, example_input):
        with pytest.raises(ModelValidationError):
            SwitchSpec("deterministic", 0.0, example_input)
        with pytest.raises(ModelValidationError):
            SwitchSpec("uniform", 1.0, example_input)

    def test_sample_mean(self, example_input):
        rng = np.random.default_rng(3)
        switch = SwitchSpec("erlang", 2.0, example_input, stages=4)
        samples = [switch.sample(rng) for _ in range(20000)]
        assert np.mean(samples) == pytest.approx(2.0, abs=0.05)


class TestSampleIncrement:
    def test_zero_horizon(self, example_input):
        increment, events = sample_increment(example_input, 0.0, np.random.default_rng(0))
        assert not events
        np.testing.assert_array_equal(increment, [0.0, 0.0])

    def test_negative_horizon_rejected(self, example_input):
        with pytest.raises(DomainError):
            sample_increment(example_input, -1.0, np.random.default_rng(0))

    def test_events_sorted_and_summed(self):
        jump = JumpSpec("deterministic", (1.0, 2.0), value=0.5)
        spec = SubordinatorSpec(drift=(0.1, 0.0), components=(CompoundComponent(3.0, jump),))
        increment, events = sample_increment(spec, 5.0, np.random.default_rng(11))
        times = [e.time for e in events]
        assert times == sorted(times)
        assert all(0.0 <= t <= 5.0 for t in times)
        expected = np.array([0.5, 0.0]) + sum((e.vector for e in events), np.zeros(2))
        np.testing.assert_allclose(increment, expected, atol=1e-12)
        np.testing.assert_allclose(increment[1], len(events) * 1.0, atol=1e-12)

    def test_mean_increment(self, example_input):
        rng = np.random.default_rng(5)
        totals = np.array([sample_increment(example_input, 1.0, rng)[0] for _ in range(20000)])
        # 方差 λ E X^2 = 0.16 与 0.18, 标准误约 0.003
        np.testing.assert_allclose(totals.mean(axis=0), [0.2, 0.3], atol=0.015)

    @pytest.mark.slow
    @pytest.mark.parametrize("which", ["independent", "correlated"])
    def test_transform_matches_exponent(self, example_input, which):
        spec = example_input if which == "independent" else correlated_input()
        rng = np.random.default_rng(13)
        horizon = 0.8
        totals = np.array([sample_increment(spec, horizon, rng)[0] for _ in range(100_000)])
        for u in ([0.5, 0.0], [0.0, 2.0], [1.0, 1.0], [3.0, 0.5]):
            values = np.exp(-totals @ np.array(u))
            stderr = values.std(ddof=1) / math.sqrt(values.size)
            target = math.exp(-horizon * phi_eval(spec, u))
            assert abs(values.mean() - target) <= 4.0 * stderr, (u, values.mean(), target)


def correlated_input() -> SubordinatorSpec:
    """漂移 + 三种跳跃分布, 其中两个分量同时作用于两个队列"""
    return SubordinatorSpec(
        drift=(0.1, 0.05),
        components=(
            CompoundComponent(1.5, JumpSpec("exponential", (1.0, 0.5), value=0.4)),
            CompoundComponent(0.7, JumpSpec("discrete", (0.0, 1.0), points=(0.5, 1.5), weights=(0.3, 0.7))),
            CompoundComponent(0.2, JumpSpec("deterministic", (1.0, 1.0), value=0.8)),
        ),
    )


class TestExponentShape:
    @pytest.mark.parametrize("which", ["independent", "correlated"])
    def test_nonnegative_and_nondecreasing(self, example_input, which):
        spec = example_input if which == "independent" else correlated_input()
        rng = np.random.default_rng(29)
        for _ in range(200):
            u = rng.uniform(0.0, 4.0, size=2)
            delta = rng.uniform(0.0, 1.0, size=2) * rng.integers(0, 2, size=2)
            low = phi_eval(spec, u)
            assert low >= 0.0
            assert phi_eval(spec, u + delta) >= low - 1e-14

    @pytest.mark.parametrize("which", ["independent", "correlated"])
    def test_concave_along_rays(self, example_input, which):
        spec = example_input if which == "independent" else correlated_input()
        rng = np.random.default_rng(31)
        for _ in range(200):
            v = rng.uniform(0.0, 3.0, size=2)
            low, high = np.sort(rng.uniform(0.0, 4.0, size=2))
            mid = phi_eval(spec, 0.5 * (low + high) * v)
            chord = 0.5 * (phi_eval(spec, low * v) + phi_eval(spec, high * v))
            assert mid >= chord - 1e-10

    def test_mean_rate_matches_difference(self):
        spec = correlated_input()
        for j in range(2):
            direction = np.eye(2)[j]
            slope = forward_derivative(lambda t: phi_eval(spec, t * direction), 1e-5)
            assert slope == pytest.approx(mean_rate(spec)[j], rel=1e-6)
