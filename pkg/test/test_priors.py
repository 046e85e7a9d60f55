import math
from unittest import TestCase

import numpy as np
from scipy.integrate import quad

from jeffmix.fisher import IntegrationSpec, UnknownConfig, fisher_matrix
from jeffmix.mixture import DataSet, MixtureModel, gaussian, log_likelihood, student_t
from jeffmix.priors import (
    LOG_HALF,
    NEG_INFINITY,
    DeltaConditioning,
    HierarchicalParams,
    conditional_delta_log_prior,
    hierarchical_log_posterior,
    hierarchical_log_prior,
    hierarchical_sigma_log_prior,
    jeffreys_log_prior,
    jeffreys_rm_sigma_log_prior,
    log_dirichlet,
    rm_sigma_log_prior,
)
from jeffmix.reparam import (
    ReparamParams,
    natural_to_reparam,
    reparam_jacobian,
    reparam_labels,
    reparam_to_natural,
)


def random_reparam(rng: np.random.Generator, k: int) -> ReparamParams:
    m = k - 1
    return ReparamParams(
        loc=float(rng.uniform(-5, 5)),
        scale=float(rng.uniform(0.2, 3)),
        offsets=tuple(rng.uniform(-3, 3, m)),
        scale_ratios=tuple(rng.uniform(0.3, 3, m)),
        stick_weights=tuple(rng.uniform(0.05, 0.95, m)),
    )


def natural_vector(model: MixtureModel) -> np.ndarray:
    return np.concatenate((model.locs, model.scales, model.weight_array[:-1]))


class TestReparametrization(TestCase):
    def test_identity_point(self):
        model = reparam_to_natural(ReparamParams(0.0, 1.0, (0.0,), (1.0,), (0.5,)))
        self.assertEqual(model, MixtureModel.gaussian((0.5, 0.5), (0, 0), (1, 1)))

    def test_close_means_model(self):
        model = reparam_to_natural(ReparamParams(-1.0, 1.0, (3.0,), (0.5,), (0.5,)))
        self.assertEqual(model, MixtureModel.gaussian((0.5, 0.5), (-1.0, 2.0), (1.0, 0.5)))

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for i in range(100):
            rp = random_reparam(rng, 2 + i % 3)
            back = natural_to_reparam(reparam_to_natural(rp))
            with self.subTest(rp=rp):
                np.testing.assert_allclose(back.to_vector(), rp.to_vector(), rtol=1e-12, atol=1e-12)

    def test_k_component_map(self):
        rp = ReparamParams(1.0, 2.0, (1.0, -2.0), (0.5, 3.0), (0.2, 0.5))
        model = reparam_to_natural(rp)
        np.testing.assert_allclose(model.scales, [2.0, 1.0, 3.0])
        np.testing.assert_allclose(model.locs, [1.0, 3.0, 1.0])
        np.testing.assert_allclose(model.weights, [0.2, 0.4, 0.4])

    def test_labels(self):
        self.assertEqual(reparam_labels(2), ["mu", "tau", "delta", "sigma", "p"])
        self.assertEqual(
            reparam_labels(3), ["mu", "tau", "theta1", "theta2", "sigma1", "sigma2", "p", "q1"]
        )
        self.assertRaises(ValueError, reparam_labels, 1)

    def test_validation(self):
        self.assertRaises(ValueError, ReparamParams, 0.0, 0.0, (0.0,), (1.0,), (0.5,))
        self.assertRaises(ValueError, ReparamParams, 0.0, 1.0, (0.0,), (-1.0,), (0.5,))
        self.assertRaises(ValueError, ReparamParams, 0.0, 1.0, (0.0,), (1.0,), (1.0,))
        self.assertRaises(ValueError, ReparamParams, 0.0, 1.0, (0.0, 1.0), (1.0,), (0.5,))
        single = MixtureModel.gaussian((1.0,), (0.0,), (1.0,))
        self.assertRaises(ValueError, natural_to_reparam, single)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for k in (2, 3, 4):
            rp = random_reparam(rng, k)
            vector = rp.to_vector()
            jacobian = reparam_jacobian(rp)
            numerical = np.empty_like(jacobian)
            for j in range(len(vector)):
                step = 1e-6 * max(1.0, abs(vector[j]))
                up, down = vector.copy(), vector.copy()
                up[j] += step
                down[j] -= step
                numerical[:, j] = (
                    natural_vector(reparam_to_natural(ReparamParams.from_vector(up)))
                    - natural_vector(reparam_to_natural(ReparamParams.from_vector(down)))
                ) / (2 * step)
            with self.subTest(k=k):
                np.testing.assert_allclose(jacobian, numerical, rtol=1e-5, atol=1e-7)


class TestJeffreysPrior(TestCase):
    def test_identical_components(self):
        model = MixtureModel.gaussian((0.5, 0.5), (0, 0), (1, 1))
        self.assertEqual(jeffreys_log_prior(model, UnknownConfig.WEIGHTS_ONLY), NEG_INFINITY)

    def test_disjoint_supports(self):
        model = MixtureModel.gaussian((0.3, 0.7), (-50, 50), (1, 1))
        value = jeffreys_log_prior(model, UnknownConfig.WEIGHTS_ONLY)
        self.assertAlmostEqual(value, 0.5 * math.log(1 / (0.3 * 0.7)), delta=0.02 * 0.7803)

    def test_arcsine_limit(self):
        ps = np.arange(1, 10) / 10
        priors = np.array(
            [
                math.exp(
                    jeffreys_log_prior(
                        MixtureModel.gaussian((p, 1 - p), (-50, 50), (1, 1)),
                        UnknownConfig.WEIGHTS_ONLY,
                    )
                )
                for p in ps
            ]
        )
        arcsine = (ps * (1 - ps)) ** -0.5
        c = np.mean(priors / arcsine)
        np.testing.assert_allclose(priors, c * arcsine, rtol=0.02)

    def test_weights_only_symmetry(self):
        for p in (0.1, 0.25, 0.4):
            left = MixtureModel.gaussian((p, 1 - p), (-1, 1), (1, 1))
            right = MixtureModel.gaussian((1 - p, p), (-1, 1), (1, 1))
            self.assertAlmostEqual(
                jeffreys_log_prior(left, UnknownConfig.WEIGHTS_ONLY),
                jeffreys_log_prior(right, UnknownConfig.WEIGHTS_ONLY),
                places=9,
            )

    def test_weights_only_upper_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            weights = rng.dirichlet(np.ones(3))
            weights[-1] = 1.0 - math.fsum(weights[:-1])
            model = MixtureModel.gaussian(weights, rng.uniform(-5, 5, 3), rng.uniform(0.5, 3, 3))
            bound = 0.5 * sum(math.log(1 / p + 1 / weights[-1]) for p in weights[:-1])
            value = jeffreys_log_prior(model, UnknownConfig.WEIGHTS_ONLY)
            self.assertLessEqual(value, bound + 1e-9)

    def test_student_t_weights(self):
        model = MixtureModel((student_t(3.0, 0.0, 1.0), gaussian(6.0, 1.0)), (0.4, 0.6))
        spec = IntegrationSpec(bounds=(-200.0, 200.0))
        self.assertTrue(math.isfinite(jeffreys_log_prior(model, UnknownConfig.WEIGHTS_ONLY, spec)))

    def test_means_translation_invariance(self):
        config = UnknownConfig.MEANS_ONLY
        first = MixtureModel.gaussian((0.4, 0.6), (0, 3), (1, 0.5))
        second = MixtureModel.gaussian((0.4, 0.6), (5, 8), (1, 0.5))
        self.assertAlmostEqual(
            jeffreys_log_prior(first, config) / jeffreys_log_prior(second, config), 1.0, places=6
        )

    def test_tau_scaling(self):
        rng = np.random.default_rng(8)
        taus = (0.5, 1.0, 2.0, 4.0)
        for _ in range(5):
            mu, delta = rng.uniform(-2, 2), rng.uniform(-3, 3)
            sigma, p = rng.uniform(0.5, 2), rng.uniform(0.2, 0.8)
            scaled = []
            for tau in taus:
                model = reparam_to_natural(ReparamParams(mu, tau, (delta,), (sigma,), (p,)))
                log_prior = jeffreys_log_prior(model, UnknownConfig.ALL_REPARAM)
                scaled.append(math.exp(log_prior) * tau ** 2)
            with self.subTest(mu=mu, delta=delta, sigma=sigma, p=p):
                np.testing.assert_allclose(scaled, scaled[0], rtol=0.02)


class TestConditionalDeltaPrior(TestCase):
    def test_even(self):
        fixed = DeltaConditioning()
        for delta in (0.5, 2.0, 7.0):
            self.assertAlmostEqual(
                conditional_delta_log_prior(delta, fixed),
                conditional_delta_log_prior(-delta, fixed),
                places=8,
            )

    def test_plateau(self):
        fixed = DeltaConditioning()
        at_20 = conditional_delta_log_prior(20.0, fixed)
        at_40 = conditional_delta_log_prior(40.0, fixed)
        self.assertLessEqual(abs(math.exp(at_20) - math.exp(at_40)), 0.01 * math.exp(at_20))
        at_30 = conditional_delta_log_prior(30.0, fixed)
        at_60 = conditional_delta_log_prior(60.0, fixed)
        self.assertLessEqual(abs(at_30 - at_60), 0.01 * abs(at_30))
        self.assertGreater(at_30, conditional_delta_log_prior(0.0, fixed))

    def test_limits(self):
        # at delta = 0 both components coincide: I = p^2 tau^2 / tau^2
        self.assertAlmostEqual(
            conditional_delta_log_prior(0.0, DeltaConditioning()), 0.5 * math.log(0.25), delta=1e-3
        )
        # separated components: I -> (1 - p) tau^2 / (tau sigma)^2
        self.assertAlmostEqual(
            conditional_delta_log_prior(60.0, DeltaConditioning()), 0.5 * math.log(0.5), delta=1e-3
        )

    def test_validation(self):
        self.assertRaises(ValueError, DeltaConditioning(weight=1.0).model, 1.0)
        self.assertRaises(ValueError, DeltaConditioning(scale=0.0).model, 1.0)


class TestRobertMengersenSigmaPrior(TestCase):
    def test_values(self):
        self.assertEqual(rm_sigma_log_prior(0.5), math.log(0.5))
        self.assertEqual(rm_sigma_log_prior(1.0), math.log(0.5))
        self.assertAlmostEqual(rm_sigma_log_prior(2.0), -2.0794415, places=7)
        self.assertRaises(ValueError, rm_sigma_log_prior, 0.0)
        self.assertRaises(ValueError, rm_sigma_log_prior, -1.0)

    def test_normalized(self):
        lower, _ = quad(lambda s: math.exp(rm_sigma_log_prior(s)), 0, 1)
        upper, _ = quad(lambda s: math.exp(rm_sigma_log_prior(s)), 1, np.inf)
        self.assertAlmostEqual(lower + upper, 1.0, delta=1e-6)

    def test_jeffreys_rm_sigma(self):
        model = MixtureModel.gaussian((0.4, 0.6), (0.0, 2.0), (1.0, 2.5))
        fisher = fisher_matrix(model, UnknownConfig.ALL_REPARAM)
        expected = rm_sigma_log_prior(2.5) + 0.5 * fisher.submatrix(
            ["mu", "tau", "delta", "p"]
        ).logdet()
        self.assertAlmostEqual(jeffreys_rm_sigma_log_prior(model), expected, places=12)


class TestHierarchicalPrior(TestCase):
    def test_sigma_branches(self):
        zeta = 1.5
        self.assertAlmostEqual(hierarchical_sigma_log_prior(1.0, zeta), -math.log(2 * zeta))
        # the boundary belongs to the uniform branch
        self.assertAlmostEqual(hierarchical_sigma_log_prior(zeta, zeta), -math.log(2 * zeta))
        self.assertAlmostEqual(
            hierarchical_sigma_log_prior(2 * zeta, zeta), math.log(1 / (8 * zeta))
        )
        self.assertEqual(hierarchical_sigma_log_prior(0.0, zeta), NEG_INFINITY)
        self.assertEqual(hierarchical_sigma_log_prior(1.0, 0.0), NEG_INFINITY)

    def test_sigma_normalized(self):
        zeta = 2.0
        lower, _ = quad(lambda s: math.exp(hierarchical_sigma_log_prior(s, zeta)), 0, zeta)
        upper, _ = quad(lambda s: math.exp(hierarchical_sigma_log_prior(s, zeta)), zeta, np.inf)
        self.assertAlmostEqual(lower + upper, 1.0, delta=1e-6)

    def test_dirichlet(self):
        self.assertAlmostEqual(log_dirichlet((0.5, 0.5)), math.log(2 / math.pi))
        self.assertAlmostEqual(log_dirichlet((1 / 3, 1 / 3, 1 / 3), alpha=1.0), math.log(2.0))
        self.assertEqual(log_dirichlet((0.0, 1.0)), NEG_INFINITY)
        self.assertEqual(log_dirichlet((0.5, 0.6)), NEG_INFINITY)

    def test_log_prior(self):
        params = HierarchicalParams((0.5, 0.5), (-1.0, 2.0), (0.5, 4.0), 0.0, 2.0)
        expected = (
            -0.5 * math.log(2 * math.pi * 4) - 1 / 8
            - 0.5 * math.log(2 * math.pi * 4) - 4 / 8
            - math.log(4.0)
            + LOG_HALF + math.log(2.0) - 2 * math.log(4.0)
            + math.log(2 / math.pi)
            - math.log(2.0)
        )
        self.assertAlmostEqual(hierarchical_log_prior(params), expected, places=12)

    def test_support(self):
        self.assertEqual(
            hierarchical_log_prior(HierarchicalParams((0.5, 0.5), (0, 1), (1, -1), 0.0, 1.0)),
            NEG_INFINITY,
        )
        self.assertEqual(
            hierarchical_log_prior(HierarchicalParams((0.5, 0.5), (0, 1), (1, 1), 0.0, 0.0)),
            NEG_INFINITY,
        )
        self.assertRaises(ValueError, HierarchicalParams, (0.5, 0.5), (0,), (1, 1), 0.0, 1.0)

    def test_posterior(self):
        data = DataSet([-1.2, 0.3, 2.2, 1.9])
        params = HierarchicalParams((0.3, 0.7), (-1.0, 2.0), (1.0, 0.5), 0.5, 1.0)
        model = MixtureModel.gaussian((0.3, 0.7), (-1.0, 2.0), (1.0, 0.5))
        self.assertAlmostEqual(
            hierarchical_log_posterior(params, data),
            hierarchical_log_prior(params) + log_likelihood(model, data),
            places=12,
        )
        self.assertRaises(ValueError, hierarchical_log_posterior, params, DataSet())

    def test_exchangeable(self):
        data = DataSet([-1.2, 0.3, 2.2, 1.9, 0.0])
        params = HierarchicalParams((0.2, 0.3, 0.5), (-1.0, 2.0, 0.5), (1.0, 0.5, 3.0), 0.5, 1.0)
        swapped = HierarchicalParams((0.5, 0.2, 0.3), (0.5, -1.0, 2.0), (3.0, 1.0, 0.5), 0.5, 1.0)
        self.assertAlmostEqual(
            hierarchical_log_posterior(params, data),
            hierarchical_log_posterior(swapped, data),
            places=10,
        )
