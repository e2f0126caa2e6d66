import math

import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit, logit

from apps.gates.errors import GateDomainError
from apps.gates.services import (
    GateParams,
    draw_uniform,
    expected_l0,
    expected_l0_exact,
    finalize_gate,
    gate_values,
    sample_gate,
)
from apps.tensors import engine as E
from apps.tensors.engine import Tensor
from apps.tensors.tests.gradcheck import assert_grad_close, numeric_grad

STRETCHES = ((-1.5, 1.5), (-0.1, 1.1))


def _chain64(alpha, u, l, r):
    s = expit(logit(u) + alpha)
    return np.clip(s * (r - l) + l, 0.0, 1.0)


class GateParamsTests(SimpleTestCase):
    def test_rejects_interval_not_covering_unit(self):
        for l, r in ((0.0, 1.5), (-1.5, 1.0), (0.5, 2.0)):
            with self.assertRaises(GateDomainError):
                GateParams(np.zeros(2), l, r)

    def test_rejects_non_finite_alpha(self):
        with self.assertRaises(GateDomainError):
            GateParams(np.array([0.0, np.inf]))


class SampleGateTests(SimpleTestCase):
    def test_midpoint_maps_to_lower_edge(self):
        sample = sample_gate(GateParams(np.zeros(1)), [0.5])
        self.assertEqual(sample.s.item(), 0.5)
        self.assertEqual(sample.s_bar.item(), 0.0)
        self.assertEqual(sample.z.item(), 0.0)

    def test_open_gate_clamps_to_one(self):
        sample = sample_gate(GateParams(np.full(1, 5.0)), [0.5])
        self.assertAlmostEqual(sample.s.item(), 0.99331, places=5)
        self.assertAlmostEqual(sample.s_bar.item(), 1.47993, places=4)
        self.assertEqual(sample.z.item(), 1.0)

    def test_interior_value_matches_float64_chain(self):
        sample = sample_gate(GateParams(np.zeros(1)), [0.7311])
        oracle = _chain64(0.0, 0.7311, -1.5, 1.5)
        self.assertAlmostEqual(sample.z.item(), oracle, places=5)
        self.assertAlmostEqual(sample.z.item(), 0.69329, places=3)

    def test_rejects_noise_on_the_boundary(self):
        for u in (0.0, 1.0):
            with self.assertRaises(GateDomainError):
                sample_gate(GateParams(np.zeros(1)), [u])

    def test_rejects_length_mismatch(self):
        with self.assertRaises(GateDomainError):
            sample_gate(GateParams(np.zeros(3)), [0.5, 0.5])

    def test_z_stays_in_unit_interval(self):
        rng = np.random.default_rng(0)
        alpha = rng.normal(scale=4.0, size=1000)
        z = sample_gate(GateParams(alpha), draw_uniform(rng, 1000)).z.data
        self.assertTrue(np.all((z >= 0) & (z <= 1)))

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(1)
        u = draw_uniform(rng, 500)
        previous = None
        for a in np.linspace(-6, 6, 25):
            z = sample_gate(GateParams(np.full(500, a)), u).z.data
            if previous is not None:
                self.assertTrue(np.all(z >= previous))
            previous = z

    def test_pathwise_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        checked = 0
        for _ in range(20):
            alpha = rng.normal(size=4)
            u = draw_uniform(rng, 4)
            z64 = _chain64(alpha, u, -1.5, 1.5)
            if not np.all((z64 > 0.01) & (z64 < 0.99)):
                continue
            leaf = Tensor(alpha, requires_grad=True)
            sample = sample_gate(GateParams(leaf), u)
            E.reduce_sum(sample.z).backward()
            numeric = numeric_grad(lambda a: float(np.sum(_chain64(a, u, -1.5, 1.5))), leaf.data)
            assert_grad_close(leaf.grad, numeric)
            checked += 1
        self.assertGreater(checked, 0)


class ExpectedL0Tests(SimpleTestCase):
    def test_closed_form_examples(self):
        cases = (
            (0.0, -1.5, 1.5, 0.5),
            (5.0, -1.5, 1.5, 0.993307),
            (0.0, -0.1, 1.1, float(expit(math.log(11)))),
        )
        for alpha, l, r, expected in cases:
            p = expected_l0(GateParams(np.array([alpha]), l, r)).item()
            self.assertAlmostEqual(p, expected, places=5)
        self.assertAlmostEqual(float(expit(math.log(11))), 0.9167, places=4)

    def test_matches_monte_carlo(self):
        n = 100_000
        for l, r in STRETCHES:
            for alpha in (-4.0, -1.0, 0.0, 1.0, 4.0):
                rng = np.random.default_rng(int(alpha * 10) + 100)
                params = GateParams(np.full(n, alpha), l, r)
                z = sample_gate(params, draw_uniform(rng, n)).z.data
                empirical = float(np.mean(z != 0))
                closed = float(expected_l0_exact(alpha, l, r))
                self.assertLessEqual(abs(closed - empirical), 5e-3, (alpha, l, r))

    def test_gradient_at_zero(self):
        leaf = Tensor([0.0], requires_grad=True)
        E.reduce_sum(expected_l0(GateParams(leaf))).backward()
        self.assertAlmostEqual(float(leaf.grad[0]), 0.25, places=6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for l, r in STRETCHES:
            for _ in range(20):
                alpha = rng.normal(scale=2.0, size=5)
                leaf = Tensor(alpha, requires_grad=True)
                E.reduce_sum(expected_l0(GateParams(leaf, l, r))).backward()
                numeric = numeric_grad(lambda a: float(np.sum(expected_l0_exact(a, l, r))), leaf.data)
                assert_grad_close(leaf.grad, numeric)


class FinalizeGateTests(SimpleTestCase):
    def test_same_seed_same_gate(self):
        params = GateParams(np.random.default_rng(5).normal(size=200))
        np.testing.assert_array_equal(finalize_gate(params, 11), finalize_gate(params, 11))

    def test_closed_gates_are_exactly_zero(self):
        n = 100_000
        z = finalize_gate(GateParams(np.full(n, -10.0)), 3)
        zero_fraction = float(np.mean(z == 0))
        self.assertLessEqual(abs(zero_fraction - float(expit(10.0))), 5e-3)

    def test_open_gates_are_exactly_one(self):
        z = finalize_gate(GateParams(np.full(10_000, 20.0)), 3)
        self.assertTrue(np.all(z == 1.0))

    def test_zero_probability_matches_closed_form(self):
        n = 100_000
        for alpha in (-1.0, 0.0, 2.0):
            z = finalize_gate(GateParams(np.full(n, alpha)), 7)
            expected = 1.0 - float(expected_l0_exact(alpha))
            self.assertLessEqual(abs(float(np.mean(z == 0)) - expected), 5e-3)

    def test_float64_chain_agrees_with_graph_chain(self):
        rng = np.random.default_rng(6)
        alpha = rng.normal(size=50)
        u = draw_uniform(rng, 50)
        np.testing.assert_allclose(
            gate_values(alpha, u), sample_gate(GateParams(alpha), u).z.data, atol=1e-5
        )
