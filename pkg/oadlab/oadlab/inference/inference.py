# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special, stats

from oadlab.config.settings import get_single_value
from oadlab.exceptions import ValidationError, throw
from oadlab.oadlab.design_core.design_core import (
	Criterion,
	InfoMatrix,
	SingularInformationError,
	criterion_value,
	weighted_information,
)
from oadlab.oadlab.error_models.error_models import (
	EstimationError,
	compute_moments,
	derivative,
	location_mle,
	log_density,
	observed_information,
)

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 100
BACKTRACK_LIMIT = 40


class InsufficientDataError(ValidationError):
	pass


@dataclass(frozen=True, eq=False)
class SupportData:
	"""Responses grouped by support point; `features` has one row per point."""

	features: np.ndarray
	y: tuple
	a: tuple = None
	eta_hat: np.ndarray = None
	i_a: np.ndarray = None

	@classmethod
	def from_state(cls, state):
		"""Snapshot of a live experiment, reusing the per-point estimates it already holds."""
		a = tuple(np.array(buf) for buf in state.a) if state.err.has_per_obs_ancillary else None
		y = tuple(np.array(buf) for buf in state.y)
		return cls(state.features, y, a, state.eta_hat.copy(), state.i_a.copy())

	@classmethod
	def from_exact(cls, spec, support, y, a=None):
		features = spec.features[list(support)]
		y = tuple(np.asarray(v, dtype=float).ravel() for v in y)
		if len(y) != len(features):
			throw(
				"Got responses for {0} points, the design has {1}".format(len(y), len(features)),
				InsufficientDataError,
			)
		if a is not None:
			a = tuple(np.asarray(v, dtype=float).ravel() for v in a)
		return cls(features, y, a)

	@property
	def d(self):
		return len(self.y)

	@property
	def counts(self):
		return np.array([len(v) for v in self.y])

	def ancillary(self, i):
		return None if self.a is None else self.a[i]


@dataclass(frozen=True, eq=False)
class FitResult:
	beta_hat: np.ndarray
	J: InfoMatrix
	eta_hat: np.ndarray
	converged: bool
	loglik: float
	i_a: np.ndarray
	iterations: int = 0

	@property
	def p(self):
		return len(self.beta_hat)


@dataclass(frozen=True)
class TestResult:
	statistic: float
	reject: bool
	alpha: float
	c_value: float
	critical_value: float


def _as_data(data):
	if isinstance(data, SupportData):
		return data
	return SupportData.from_state(data)


def _full_loglik(err, data, means):
	return math.fsum(
		float(np.sum(log_density(err, data.y[i] - means[i], data.ancillary(i), normalized=True)))
		for i in range(data.d)
	)


def _score_and_hessian(err, data, means):
	"""Per-point sums of the first and second η-derivatives of the log density."""
	def sums(k):
		residuals = (data.y[i] - means[i] for i in range(data.d))
		return np.array(
			[np.sum(derivative(err, k, u, data.ancillary(i))) for i, u in enumerate(residuals)]
		)

	return sums(1), sums(2)


def _newton(err, data, J, beta):
	"""Maximize the full log likelihood over β. Curvature is -Hessian when it is PD, else J."""
	F = data.features
	loglik = _full_loglik(err, data, F @ beta)

	for iteration in range(1, NEWTON_MAX_ITER + 1):
		first, second = _score_and_hessian(err, data, F @ beta)
		gradient = F.T @ first
		try:
			cf = linalg.cho_factor(-weighted_information(F, second), lower=True)
			step = linalg.cho_solve(cf, gradient)
		except linalg.LinAlgError:
			step = linalg.solve(J, gradient, assume_a="pos")

		t = 1.0
		for _ in range(BACKTRACK_LIMIT):
			candidate = beta + t * step
			value = _full_loglik(err, data, F @ candidate)
			if value >= loglik:
				break
			t *= 0.5
		else:
			return beta, loglik, iteration, True

		beta, loglik = candidate, value
		if np.max(np.abs(t * step)) <= 1e-10 * (1.0 + np.max(np.abs(beta))):
			return beta, loglik, iteration, True

	return beta, loglik, NEWTON_MAX_ITER, False


def fit_mle(spec, data, err):
	"""
	Full-sample MLE of β with J = Fᵀ diag(i_a) F evaluated at the per-point location MLEs η̂.

	`data` is an ExperimentState or SupportData. When the support has exactly p points β̂
	interpolates η̂; otherwise Newton on the full likelihood starts from the
	information-weighted projection of η̂.
	"""
	data = _as_data(data)
	F = data.features
	d, p = F.shape
	if p != spec.p:
		throw("Data has {0} features, {1} has p={2}".format(p, spec.label, spec.p))

	empty = [i for i in range(d) if not len(data.y[i])]
	if empty:
		throw(
			"Support points {0} have no observations".format([i + 1 for i in empty]),
			InsufficientDataError,
		)
	rank = np.linalg.matrix_rank(F)
	if rank < p:
		throw(
			"The support spans {0} of the {1} model dimensions".format(rank, p),
			SingularInformationError,
		)

	if data.eta_hat is not None:
		eta_hat, i_a = data.eta_hat, data.i_a
	else:
		eta_hat = np.array([location_mle(err, data.y[i], data.ancillary(i)) for i in range(d)])
		i_a = np.array(
			[observed_information(err, data.y[i], eta_hat[i], data.ancillary(i)) for i in range(d)]
		)
	floored = np.maximum(i_a, get_single_value("q_floor") * compute_moments(err).mu)
	J = weighted_information(F, floored)

	if d == p:
		beta = linalg.solve(F, eta_hat)
		return FitResult(
			beta, InfoMatrix(J, "observed"), eta_hat, True, _full_loglik(err, data, eta_hat), i_a
		)

	beta = linalg.solve(J, F.T @ (floored * eta_hat), assume_a="pos")
	beta, loglik, iterations, converged = _newton(err, data, J, beta)
	if not converged:
		throw(
			"MLE for {0} did not converge in {1} Newton steps".format(spec.label, iterations),
			EstimationError,
			beta=beta,
		)

	logger.debug("MLE converged in %d Newton steps", iterations)
	return FitResult(beta, InfoMatrix(J, "observed"), eta_hat, True, loglik, i_a, iterations)


def _check_alpha(alpha):
	if not 0 < alpha < 1:
		throw("alpha must be in (0, 1), got {0!r}".format(alpha))


def ellipsoid_log_volume(fit, alpha=0.05):
	"""Log volume of {β : (β̂ - β)ᵀ J (β̂ - β) <= χ²_p(1 - α)}."""
	_check_alpha(alpha)
	J = fit.J.entries
	p = J.shape[0]
	sign, logdet = np.linalg.slogdet(J)
	if sign <= 0:
		throw("Observed information is singular", SingularInformationError)

	log_ball = (p / 2) * math.log(math.pi) - special.gammaln(p / 2 + 1)
	return float(log_ball + (p / 2) * math.log(stats.chi2.ppf(1 - alpha, p)) - 0.5 * logdet)


def _c_value(J, c):
	try:
		return criterion_value(Criterion("C", tuple(c)), J)
	except SingularInformationError:
		throw("Observed information is singular", SingularInformationError)


def chi2_test(fit, c, C0=0.0, alpha=0.05):
	"""Wald test of cᵀβ = C0: c(J) (cᵀβ̂ - C0)² against the χ²₁ quantile."""
	_check_alpha(alpha)
	c = np.asarray(c, dtype=float)
	if c.shape != (fit.p,):
		throw("c must have length p={0}, got {1}".format(fit.p, c.shape))

	c_value = _c_value(fit.J, c)
	statistic = c_value * float(c @ fit.beta_hat - C0) ** 2
	critical = float(stats.chi2.ppf(1 - alpha, 1))
	return TestResult(statistic, bool(statistic >= critical), alpha, c_value, critical)


def noncentrality(fit, c, delta):
	"""λ = δ² c(J) for a true departure cᵀβ - C0 = δ. Takes a FitResult or an InfoMatrix."""
	J = getattr(fit, "J", fit)
	return float(delta) ** 2 * _c_value(J, c)


def analytic_power(lam, alpha=0.05):
	"""Power of the χ²₁ test at noncentrality λ."""
	_check_alpha(alpha)
	if lam < 0:
		throw("Noncentrality must be nonnegative, got {0!r}".format(lam))

	critical = stats.chi2.ppf(1 - alpha, 1)
	if lam == 0:
		return float(alpha)
	return float(stats.ncx2.sf(critical, 1, lam))


def required_noncentrality(power, alpha=0.05):
	"""Smallest λ at which the χ²₁ test reaches `power`."""
	_check_alpha(alpha)
	if not alpha < power < 1:
		throw("Target power must be in (alpha, 1), got {0!r}".format(power))

	upper = 1.0
	while analytic_power(upper, alpha) < power:
		upper *= 2
	return float(optimize.brentq(lambda lam: analytic_power(lam, alpha) - power, 0.0, upper))
