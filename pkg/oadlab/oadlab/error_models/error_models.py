# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

"""
Location-family error distributions.

Every model is written as a log density in the residual u = y - η. Derivatives are taken with
respect to the location η, so odd orders carry the opposite sign of the u-derivative.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special, stats

from oadlab.config.settings import get_single_value
from oadlab.exceptions import NumericalError, ValidationError, throw
from oadlab.oadlab.utils import get_hooks, split_name

logger = logging.getLogger(__name__)

KINDS = ("normal", "student_t", "gamma_hyperbola")
SHORT_NAMES = {"normal": "normal", "student_t": "str", "gamma_hyperbola": "ghr"}

GRID_POINTS = 200
DENSE_GRID_POINTS = 2000
SMALL_SAMPLE = 5
TINY = np.finfo(float).tiny


class MomentComputationError(NumericalError):
	pass


class EstimationError(NumericalError):
	pass


class ErrorDrawError(ValidationError):
	pass


@dataclass(frozen=True)
class ErrorModel:
	kind: str
	v: float = None

	def __post_init__(self):
		if self.kind not in KINDS:
			throw("Unknown error model {0!r}".format(self.kind))
		if self.kind == "normal":
			object.__setattr__(self, "v", None)
		elif self.v is None or not np.isfinite(self.v) or self.v <= 0:
			throw("Shape v of {0} must be positive, got {1!r}".format(self.kind, self.v))
		else:
			object.__setattr__(self, "v", float(self.v))

	@property
	def has_per_obs_ancillary(self):
		return self.kind == "gamma_hyperbola"

	@property
	def label(self):
		if self.kind == "normal":
			return "normal"
		return "{0}:{1:g}".format(SHORT_NAMES[self.kind], self.v)


@dataclass(frozen=True)
class ErrorDraw:
	epsilon: float
	ancillary: float = None


@dataclass(frozen=True)
class ErrorMoments:
	mu: float
	mu3: float
	mu4: float
	gamma_sq: float
	nu20: float
	nu11: float
	nu02: float


def normal():
	return ErrorModel("normal")


def student_t(v):
	return ErrorModel("student_t", v)


def gamma_hyperbola(v):
	return ErrorModel("gamma_hyperbola", v)


def parse_error_model(name):
	"""`normal`, `str:1`, `ghr:0.25`"""
	if isinstance(name, ErrorModel):
		return name

	family, arg = split_name(name, "error model")
	kinds = get_hooks("error_models")
	if family not in kinds:
		throw("Unknown error model {0!r}; expected one of {1}".format(name, ", ".join(kinds)))

	if kinds[family] == "normal":
		if arg:
			throw("The normal error model takes no shape, got {0!r}".format(name))
		return normal()

	try:
		v = float(arg)
	except ValueError:
		throw("Error model {0!r} needs a numeric shape, e.g. {1}:1".format(name, family))

	return ErrorModel(kinds[family], v)


def _check_ancillary(model, a, size=None):
	if model.has_per_obs_ancillary:
		if a is None:
			throw("{0} observations need the ancillary a".format(model.label), ErrorDrawError)
		a = np.asarray(a, dtype=float)
		if size is not None and a.shape != size:
			throw(
				"Got {0} ancillaries for {1} observations".format(a.size, int(np.prod(size))),
				ErrorDrawError,
			)
		if not (a > 0).all():
			throw("Ancillary a must be positive", ErrorDrawError)
		return a

	if a is not None:
		throw("{0} observations take no ancillary".format(model.label), ErrorDrawError)
	return None


def log_density(model, u, a=None, normalized=False):
	"""Log density of the residual u (given a for the gamma hyperbola)."""
	u = np.asarray(u, dtype=float)
	a = _check_ancillary(model, a)

	if model.kind == "normal":
		value = -0.5 * u**2
		if normalized:
			value = value - 0.5 * math.log(2 * math.pi)
	elif model.kind == "student_t":
		if normalized:
			return stats.t.logpdf(u, model.v)
		value = -0.5 * (model.v + 1) * np.log1p(u**2 / model.v)
	else:
		value = -2 * a * np.cosh(u)
		if normalized:
			# 1 / (2 K0(2a))
			value = value - np.log(2 * special.k0e(2 * a)) + 2 * a

	return value


def derivative(model, k, u, a=None):
	"""k-th derivative in η of the log density, vectorized over residuals u (and ancillaries a)."""
	if k not in (1, 2, 3, 4, 5):
		throw("Derivative order must be 1..5, got {0!r}".format(k))

	u = np.asarray(u, dtype=float)
	a = _check_ancillary(model, a)

	if model.kind == "normal":
		if k == 1:
			return u.copy()
		if k == 2:
			return np.full_like(u, -1.0)
		return np.zeros_like(u)

	if model.kind == "gamma_hyperbola":
		if k % 2:
			return 2 * a * np.sinh(u)
		return -2 * a * np.cosh(u)

	v = model.v
	u2 = u**2
	D = v + u2
	if k == 1:
		return (v + 1) * u / D
	if k == 2:
		return -(v + 1) * (v - u2) / D**2
	if k == 3:
		return (v + 1) * 2 * u * (u2 - 3 * v) / D**3
	if k == 4:
		return (v + 1) * 6 * (u2**2 - 6 * v * u2 + v**2) / D**4
	return (v + 1) * 24 * u * (u2**2 - 10 * v * u2 + 5 * v**2) / D**5


def log_density_derivative(model, k, draw):
	return float(derivative(model, k, draw.epsilon, draw.ancillary))


@lru_cache(maxsize=None)
def compute_moments(model):
	"""
	Per-observation information moments and statistical curvature.

	γ² = (ν20 ν02 - ν11²) / ν20³ with ν20 = E[l̇²], ν11 = Cov(l̇, l̈), ν02 = Var(l̈).
	"""
	if model.kind == "normal":
		return ErrorMoments(mu=1.0, mu3=0.0, mu4=0.0, gamma_sq=0.0, nu20=1.0, nu11=0.0, nu02=0.0)

	if model.kind == "student_t":
		e = _student_t_expectations(model)
	else:
		e = _gamma_hyperbola_expectations(model)

	mu = -e["l2"]
	nu20 = e["l1_sq"]
	nu11 = e["l1_l2"] - e["l1"] * e["l2"]
	nu02 = e["l2_sq"] - e["l2"] ** 2
	gamma_sq = max((nu20 * nu02 - nu11**2) / nu20**3, 0.0)

	if not mu > 0:
		throw(
			"Expected information of {0} is not positive ({1})".format(model.label, mu),
			MomentComputationError,
		)

	logger.debug("moments of %s: mu=%.10g gamma_sq=%.10g", model.label, mu, gamma_sq)
	return ErrorMoments(
		mu=mu, mu3=e["l3"], mu4=e["l4"], gamma_sq=gamma_sq, nu20=nu20, nu11=nu11, nu02=nu02
	)


EXPECTATIONS = ("l1", "l2", "l1_sq", "l1_l2", "l2_sq", "l3", "l4")


def _integrands(model, u, a=None):
	l1 = derivative(model, 1, u, a)
	l2 = derivative(model, 2, u, a)
	return np.array(
		[l1, l2, l1**2, l1 * l2, l2**2, derivative(model, 3, u, a), derivative(model, 4, u, a)]
	)


def _check_quadrature(model, values, abserr):
	limit = get_single_value("moment_abserr_limit")
	if not np.all(np.isfinite(values)) or np.max(abserr) > limit:
		throw(
			"Quadrature for {0} did not converge (values={1}, abserr={2}, limit={3})".format(
				model.label, values, abserr, limit
			),
			MomentComputationError,
		)


def _student_t_expectations(model):
	tol = get_single_value("moment_tol")
	values, errors = [], []
	for index in range(len(EXPECTATIONS)):

		def integrand(u):
			return _integrands(model, u)[index] * stats.t.pdf(u, model.v)

		total, abserr = 0.0, 0.0
		for lo, hi in ((-np.inf, 0.0), (0.0, np.inf)):
			value, err = integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=1e-10, limit=500)
			total += value
			abserr += err
		values.append(total)
		errors.append(abserr)

	_check_quadrature(model, np.array(values), np.array(errors))
	return dict(zip(EXPECTATIONS, values))


def _gamma_hyperbola_expectations(model):
	"""
	Expectations over (ε, a) through the two gamma variates z1, z2 ~ Gamma(v) with
	ε = log(z1 / z2) / 2 and a = sqrt(z1 z2).

	Each z is written as t ** (1 / v), which turns the Gamma(v) density into
	exp(-t ** (1 / v)) / Γ(v + 1) on t > 0, bounded even for v < 1.
	"""
	tol = get_single_value("moment_tol")
	v = model.v
	upper = 750.0**v
	norm = math.exp(-special.gammaln(v + 1))

	def z_of(t):
		return max(t ** (1 / v), TINY)

	def inner(t1):
		z1 = z_of(t1)
		w1 = math.exp(-(t1 ** (1 / v))) * norm
		if w1 == 0.0:
			return np.zeros(len(EXPECTATIONS))

		def g(t2):
			w2 = math.exp(-(t2 ** (1 / v))) * norm
			if w2 == 0.0:
				return np.zeros(len(EXPECTATIONS))
			z2 = z_of(t2)
			eps = 0.5 * math.log(z1 / z2)
			a = math.sqrt(z1 * z2)
			return _integrands(model, eps, a) * w2

		value, err = integrate.quad_vec(g, 0.0, upper, epsabs=tol, epsrel=1e-10, limit=500)
		return value * w1

	values, abserr = integrate.quad_vec(inner, 0.0, upper, epsabs=tol, epsrel=1e-10, limit=500)
	_check_quadrature(model, values, np.full(len(EXPECTATIONS), abserr))
	return dict(zip(EXPECTATIONS, values))


def sample_arrays(model, n, stream):
	"""Draw n residuals (and ancillaries) as arrays. Returns (epsilon, a or None)."""
	n = int(n)
	if n < 0:
		throw("Sample size must be nonnegative, got {0}".format(n))

	if model.kind == "normal":
		return stream.standard_normal(n), None
	if model.kind == "student_t":
		return stream.standard_t(model.v, n), None

	z1 = np.maximum(stream.standard_gamma(model.v, n), TINY)
	z2 = np.maximum(stream.standard_gamma(model.v, n), TINY)
	return 0.5 * np.log(z1 / z2), np.sqrt(z1 * z2)


def sample(model, n, stream):
	eps, a = sample_arrays(model, n, stream)
	if a is None:
		return [ErrorDraw(float(e)) for e in eps]
	return [ErrorDraw(float(e), float(x)) for e, x in zip(eps, a)]


def _score(model, y, a):
	return lambda eta: float(np.sum(derivative(model, 1, y - eta, a)))


def _score_prime(model, y, a):
	# d/dη of the score is the sum of second derivatives evaluated at the residuals
	return lambda eta: float(np.sum(derivative(model, 2, y - eta, a)))


def _loglik(model, y, a):
	return lambda eta: float(np.sum(log_density(model, y - eta, a)))


def _grid_mode(model, y, a):
	"""
	Best of the candidates (a dense grid on [min y, max y], every observation, every pairwise
	midpoint and the median), refined between its neighbouring candidates. A mode whose
	likelihood matches the median's to rounding is the median.
	"""
	lo, hi = float(y.min()), float(y.max())
	median = float(np.median(y))
	midpoints = (y[:, None] + y[None, :]) / 2
	candidates = np.unique(
		np.concatenate([np.linspace(lo, hi, DENSE_GRID_POINTS), y, midpoints.ravel(), [median]])
	)
	ll = log_density(model, y[None, :] - candidates[:, None], a).sum(axis=1)
	i = int(np.argmax(ll))
	left, right = candidates[max(i - 1, 0)], candidates[min(i + 1, len(candidates) - 1)]

	loglik = _loglik(model, y, a)
	res = optimize.minimize_scalar(
		lambda eta: -loglik(eta), bounds=(left, right), method="bounded", options={"xatol": 1e-12}
	)
	eta, best = float(res.x), -float(res.fun)
	if ll[i] > best:
		eta, best = float(candidates[i]), float(ll[i])

	if loglik(median) >= best - 1e-12 * max(1.0, abs(best)):
		return median
	return eta


def location_mle(model, y, a=None):
	"""Maximum likelihood estimate of η from observations y sharing the location η."""
	y = np.asarray(y, dtype=float).ravel()
	a = _check_ancillary(model, a, y.shape)
	if not len(y):
		throw("Cannot estimate a location from no observations", EstimationError)
	if not np.all(np.isfinite(y)):
		throw("Observations must be finite", EstimationError, observations=y)

	if model.kind == "normal":
		return float(np.mean(y))

	if model.kind == "gamma_hyperbola":
		# score Σ 2a sinh(y - η) = 0 has the closed form below
		return 0.5 * float(special.logsumexp(y, b=a) - special.logsumexp(-y, b=a))

	if len(y) == 1 or np.ptp(y) == 0:
		return float(y[0])

	if len(y) <= SMALL_SAMPLE:
		eta = _grid_mode(model, y, a)
	else:
		eta = _newton_from_median(model, y, a)

	if not np.isfinite(eta):
		throw(
			"Location estimate for {0} did not converge".format(model.label),
			EstimationError,
			observations=y,
		)
	return float(eta)


def _newton_from_median(model, y, a):
	"""Newton from the median, kept only when no grid point has a higher likelihood."""
	lo, hi = float(y.min()), float(y.max())
	score, score_prime = _score(model, y, a), _score_prime(model, y, a)
	try:
		start = float(np.median(y))
		eta = optimize.newton(score, start, fprime=score_prime, tol=1e-12, maxiter=50)
		if lo <= eta <= hi and score_prime(eta) < 0:
			grid = np.linspace(lo, hi, GRID_POINTS)
			best = log_density(model, y[None, :] - grid[:, None], a).sum(axis=1).max()
			if _loglik(model, y, a)(eta) >= best - 1e-12 * max(1.0, abs(best)):
				return float(eta)
	except (RuntimeError, ZeroDivisionError, OverflowError):
		pass

	logger.debug("Newton missed the mode for %s on %d observations, scanning", model.label, len(y))
	return _grid_mode(model, y, a)


def observed_information(model, y, eta, a=None):
	"""i_a = -Σ l̈(y - η), clipped at zero."""
	y = np.asarray(y, dtype=float)
	a = _check_ancillary(model, a, y.shape)
	return max(-float(np.sum(derivative(model, 2, y - eta, a))), 0.0)


def curvature_oracle(model, n_obs, n_samples, stream):
	"""
	Monte Carlo estimate of γ² from the spread of observed information:
	the variance of sqrt(n) (i_a / (n μ) - 1) over independent samples of size n.
	"""
	mu = compute_moments(model).mu
	values = np.empty(n_samples)
	for r in range(n_samples):
		eps, a = sample_arrays(model, n_obs, stream)
		eta = location_mle(model, eps, a)
		info = observed_information(model, eps, eta, a)
		values[r] = math.sqrt(n_obs) * (info / (n_obs * mu) - 1)
	return float(np.var(values, ddof=1))
