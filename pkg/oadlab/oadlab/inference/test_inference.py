# Copyright (c) 2026, OAD Lab contributors
# See license.txt

import math
import unittest

import numpy as np
from scipy import stats

from oadlab.exceptions import ValidationError
from oadlab.oadlab.design_core.design_core import Criterion, InfoMatrix, SingularInformationError
from oadlab.oadlab.error_models.error_models import normal, sample_arrays, student_t
from oadlab.oadlab.fod_solver.fod_solver import solve_fod
from oadlab.oadlab.inference.inference import (
	FitResult,
	InsufficientDataError,
	SupportData,
	analytic_power,
	chi2_test,
	ellipsoid_log_volume,
	fit_mle,
	noncentrality,
	required_noncentrality,
)
from oadlab.oadlab.models.models import build_custom, build_interaction, build_treatment
from oadlab.oadlab.road_engine.road_engine import RoadConfig, run_road
from oadlab.oadlab.utils import get_stream


def make_fit(J, beta_hat=None):
	J = np.asarray(J, dtype=float)
	p = len(J)
	beta_hat = np.zeros(p) if beta_hat is None else np.asarray(beta_hat, dtype=float)
	return FitResult(beta_hat, InfoMatrix(J, "observed"), beta_hat, True, 0.0, np.ones(p))


def simulate(spec, support, counts, beta, err, seed):
	stream = get_stream(seed)
	F = spec.features[list(support)]
	y = []
	for i, n in enumerate(counts):
		eps, _ = sample_arrays(err, n, stream)
		y.append(F[i] @ beta + eps)
	return SupportData.from_exact(spec, support, y)


def cauchy_loglik(residuals):
	return stats.t.logpdf(residuals, 1).sum(axis=-1)


class TestFitMle(unittest.TestCase):
	def test_normal_is_least_squares(self):
		spec = build_custom([[0], [1]], [[0.0], [0.5], [1.0]])
		data = simulate(spec, (0, 1, 2), (4, 7, 5), np.array([1.0, -2.0]), normal(), 3)
		fit = fit_mle(spec, data, normal())

		X = np.repeat(data.features, data.counts, axis=0)
		ols = np.linalg.lstsq(X, np.concatenate(data.y), rcond=None)[0]
		np.testing.assert_allclose(fit.beta_hat, ols, atol=1e-10)
		np.testing.assert_allclose(fit.J.entries, X.T @ X, atol=1e-12)
		self.assertEqual(fit.J.scale, "observed")
		self.assertTrue(fit.converged)

	def test_treatment_interpolates(self):
		spec = build_treatment(3)
		data = simulate(spec, (0, 1, 2), (5, 6, 7), np.array([1.0, 2.0, 3.0]), student_t(1), 4)
		fit = fit_mle(spec, data, student_t(1))
		np.testing.assert_allclose(fit.beta_hat, fit.eta_hat, atol=1e-12)

	def test_interaction_matches_grid_search(self):
		spec = build_interaction(2)
		err = student_t(1)
		data = simulate(spec, range(4), (10, 10, 10, 10), np.ones(4), err, 21)
		fit = fit_mle(spec, data, err)

		for i in range(4):
			y = data.y[i]
			coarse = np.linspace(y.min(), y.max(), 20001)
			best = coarse[np.argmax(cauchy_loglik(y[None, :] - coarse[:, None]))]
			step = coarse[1] - coarse[0]
			fine = np.linspace(best - 2 * step, best + 2 * step, 4001)
			eta = fine[np.argmax(cauchy_loglik(y[None, :] - fine[:, None]))]
			self.assertAlmostEqual(fit.eta_hat[i], eta, delta=1e-3)

		np.testing.assert_allclose(data.features @ fit.beta_hat, fit.eta_hat, atol=1e-10)

	def test_more_points_than_parameters_matches_grid_search(self):
		spec = build_custom([[0], [1]], [[0.0], [0.5], [1.0]])
		err = student_t(1)
		data = simulate(spec, (0, 1, 2), (8, 8, 8), np.array([1.0, 1.0]), err, 9)
		fit = fit_mle(spec, data, err)

		def loglik_grid(b0, b1):
			B0, B1 = np.meshgrid(b0, b1, indexing="ij")
			total = np.zeros(B0.shape)
			for i, x in enumerate((0.0, 0.5, 1.0)):
				means = B0 + B1 * x
				total += cauchy_loglik(data.y[i][None, None, :] - means[..., None])
			return B0, B1, total

		b0, b1 = fit.beta_hat
		B0, B1, total = loglik_grid(
			np.linspace(b0 - 0.5, b0 + 0.5, 401), np.linspace(b1 - 0.5, b1 + 0.5, 401)
		)
		k = np.unravel_index(np.argmax(total), total.shape)
		c0, c1 = B0[k], B1[k]
		B0, B1, total = loglik_grid(
			np.linspace(c0 - 0.005, c0 + 0.005, 201), np.linspace(c1 - 0.005, c1 + 0.005, 201)
		)
		k = np.unravel_index(np.argmax(total), total.shape)

		self.assertAlmostEqual(b0, B0[k], delta=1e-3)
		self.assertAlmostEqual(b1, B1[k], delta=1e-3)
		self.assertTrue(fit.converged)
		self.assertGreater(fit.iterations, 0)

	def test_fit_from_road_state(self):
		spec = build_treatment(3)
		crit = Criterion("D")
		cfg = RoadConfig(k=3, total_n=20)
		fod = solve_fod(spec, crit)
		state = run_road(spec, fod, student_t(2), crit, cfg, get_stream(2), np.ones(3))
		fit = fit_mle(spec, state, student_t(2))
		np.testing.assert_allclose(fit.eta_hat, state.eta_hat)
		np.testing.assert_allclose(fit.i_a, state.i_a)

	def test_errors(self):
		spec = build_treatment(3)
		data = SupportData.from_exact(spec, (0, 1, 2), ([1.0], [], [2.0]))
		self.assertRaises(InsufficientDataError, fit_mle, spec, data, normal())

		data = SupportData.from_exact(spec, (0, 1), ([1.0, 2.0], [2.0]))
		self.assertRaises(SingularInformationError, fit_mle, spec, data, normal())

		self.assertRaises(InsufficientDataError, SupportData.from_exact, spec, (0, 1), ([1.0],))


class TestEllipsoid(unittest.TestCase):
	def test_identity(self):
		expected = math.log(math.pi * stats.chi2.ppf(0.95, 2))
		self.assertAlmostEqual(ellipsoid_log_volume(make_fit(np.eye(2))), expected)
		self.assertAlmostEqual(expected, math.log(math.pi * 5.991), places=3)

	def test_scaling(self):
		J = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])
		shrink = ellipsoid_log_volume(make_fit(J)) - ellipsoid_log_volume(make_fit(4 * J))
		self.assertAlmostEqual(shrink, 3 * math.log(2))

	def test_treatment_uniform(self):
		spec = build_treatment(4)
		data = simulate(spec, range(4), (25, 25, 25, 25), np.zeros(4), normal(), 1)
		fit = fit_mle(spec, data, normal())
		np.testing.assert_allclose(fit.J.entries, 25 * np.eye(4))
		log_ball = 2 * math.log(math.pi) - math.log(2)
		expected = log_ball + 2 * math.log(stats.chi2.ppf(0.95, 4)) - 0.5 * math.log(25.0**4)
		self.assertAlmostEqual(ellipsoid_log_volume(fit), expected)

	def test_singular(self):
		singular = make_fit(np.diag([1.0, 0.0]))
		self.assertRaises(SingularInformationError, ellipsoid_log_volume, singular)


class TestChi2(unittest.TestCase):
	def test_no_departure(self):
		result = chi2_test(make_fit(np.eye(2), [1.0, 2.0]), [1.0, 1.0], C0=3.0)
		self.assertEqual(result.statistic, 0.0)
		self.assertFalse(result.reject)

	def test_reject(self):
		result = chi2_test(make_fit(np.diag([16.0, 1.0]), [1.5, 0.0]), [1.0, 0.0], C0=1.0)
		self.assertAlmostEqual(result.c_value, 16.0)
		self.assertAlmostEqual(result.statistic, 4.0)
		self.assertAlmostEqual(result.critical_value, 3.841, places=3)
		self.assertTrue(result.reject)

	def test_bad_input(self):
		fit = make_fit(np.eye(2))
		self.assertRaises(ValidationError, chi2_test, fit, [1.0, 0.0, 0.0])
		self.assertRaises(ValidationError, chi2_test, fit, [0.0, 0.0])
		self.assertRaises(ValidationError, chi2_test, fit, [1.0, 0.0], alpha=1.5)
		singular = make_fit(np.diag([0.0, 1.0]))
		self.assertRaises(SingularInformationError, chi2_test, singular, [1.0, 0.0])

	def test_noncentrality_matches_simulation(self):
		spec = build_treatment(2)
		c, delta, reps = np.array([1.0, 0.0]), 0.6, 4000
		stats_ = np.empty(reps)
		lam = None
		for r in range(reps):
			data = simulate(spec, (0, 1), (10, 10), np.array([delta, 0.0]), normal(), 100 + r)
			fit = fit_mle(spec, data, normal())
			lam = noncentrality(fit, c, delta)
			stats_[r] = chi2_test(fit, c).statistic
		self.assertAlmostEqual(lam, 3.6)
		self.assertAlmostEqual(stats_.mean() - 1, lam, delta=0.3)


class TestPower(unittest.TestCase):
	def test_analytic_power(self):
		self.assertAlmostEqual(analytic_power(0.0), 0.05)
		self.assertAlmostEqual(analytic_power(7.849), 0.8, places=3)
		self.assertLess(analytic_power(2.0), analytic_power(3.0))

	def test_required_noncentrality(self):
		self.assertAlmostEqual(required_noncentrality(0.8), 7.849, places=2)
		self.assertAlmostEqual(analytic_power(required_noncentrality(0.9)), 0.9, places=8)

	def test_noncentrality_of_info_matrix(self):
		J = InfoMatrix(np.diag([16.0, 1.0]), "observed")
		self.assertAlmostEqual(noncentrality(J, [1.0, 0.0], 0.5), 4.0)


if __name__ == "__main__":
	unittest.main()
