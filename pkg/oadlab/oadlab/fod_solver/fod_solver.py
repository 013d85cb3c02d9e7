# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import logging
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize

from oadlab.config.settings import get_single_value
from oadlab.exceptions import NumericalError, OadlabError, ValidationError, throw
from oadlab.oadlab.design_core.design_core import (
	Design,
	SingularInformationError,
	criterion_value,
	log_criterion_gradient,
	parse_criterion,
	sensitivity_function,
	weighted_information,
)
from oadlab.oadlab.error_models.error_models import compute_moments
from oadlab.oadlab.models.models import get_model
from oadlab.oadlab.utils import get_attr, get_hooks, log_error

logger = logging.getLogger(__name__)

TABLE1_FAMILIES = ("treatment", "interaction", "quadratic")
EXCHANGE_ROUND = 500
POLISH_ROUNDS = 3


class NonConvergenceError(NumericalError):
	pass


class InfeasibleRoundingError(ValidationError):
	pass


class CurvatureComputationError(NumericalError):
	pass


@dataclass(frozen=True)
class FodResult:
	"""
	A continuous optimal design. `get_violation` is min φ / ψ over the candidates, the
	certificate residual relative to ψ = 1/Ψ*.
	"""

	design: Design
	criterion_value: float
	iterations: int
	get_violation: float
	converged: bool = True

	@property
	def support(self):
		return self.design.support

	@property
	def weights(self):
		return self.design.weights

	@property
	def d(self):
		return self.design.d


@dataclass(frozen=True, eq=False)
class CurvatureReport:
	H_star: np.ndarray
	V_star: np.ndarray
	R_star: float
	h: float
	S_star: float
	gamma_sq: float
	n: int
	psi_star: float
	d_scale: str = "root_p"
	a_scale: str = "root"
	analytic: bool = False


def _log_value(crit, M):
	try:
		value = criterion_value(crit, M)
	except SingularInformationError:
		return -np.inf
	return math.log(value) if value > 0 else -np.inf


def _initial_weights(spec, init):
	w = np.zeros(spec.n_candidates)
	if init is None:
		w[:] = 1.0 / spec.n_candidates
		return w

	init.check_for(spec)
	w[list(init.support)] = init.proportions
	return w


def _first_order_step(crit, F, M, w, j, x, log_value):
	"""ξ(j) = (1 - α) ξ(j-1) + α δ_x with α = 1/j, halved until Ψ does not decrease."""
	alpha = 1.0 / j
	target = np.outer(F[x], F[x])
	for _ in range(50):
		M_new = (1 - alpha) * M + alpha * target
		value = _log_value(crit, M_new)
		if value >= log_value - 1e-12:
			w = (1 - alpha) * w
			w[x] += alpha
			return w, M_new, value
		alpha /= 2
	return None


def _line_search(crit, objective, upper):
	res = optimize.minimize_scalar(
		lambda t: -objective(t), bounds=(0.0, upper), method="bounded", options={"xatol": 1e-14}
	)
	return float(res.x)


def _exchange_step(crit, F, M, w, phi, log_value):
	"""Move weight toward the best candidate, then from the worst support point to it."""
	x_min = int(np.argmin(phi))
	target = np.outer(F[x_min], F[x_min])

	alpha = _line_search(crit, lambda a: _log_value(crit, (1 - a) * M + a * target), 1.0 - 1e-12)
	M_new = (1 - alpha) * M + alpha * target
	value = _log_value(crit, M_new)
	if value >= log_value:
		w = (1 - alpha) * w
		w[x_min] += alpha
		M, log_value = M_new, value

	phi = sensitivity_function(crit, M, F)
	support = np.flatnonzero(w > 0)
	x_max = int(support[np.argmax(phi[support])])
	x_min = int(np.argmin(phi))
	if x_max != x_min:
		delta = np.outer(F[x_min], F[x_min]) - np.outer(F[x_max], F[x_max])
		t = _line_search(crit, lambda t: _log_value(crit, M + t * delta), w[x_max])
		M_new = M + t * delta
		value = _log_value(crit, M_new)
		if value >= log_value:
			w = w.copy()
			w[x_max] -= t
			w[x_min] += t
			M, log_value = M_new, value

	return np.maximum(w, 0.0), M, log_value


def _polish(crit, F, w, prune):
	"""Prune tiny weights, then maximize log Ψ over the remaining support with SLSQP."""
	support = np.flatnonzero(w > prune)
	u0 = w[support] / w[support].sum()
	F_s = F[support]

	def objective(u):
		M = weighted_information(F_s, u)
		try:
			value = criterion_value(crit, M)
			if not value > 0:
				return 1e10, np.zeros_like(u)
			return -math.log(value), -log_criterion_gradient(crit, M, F_s)
		except SingularInformationError:
			return 1e10, np.zeros_like(u)

	start = objective(u0)[0]
	res = optimize.minimize(
		objective,
		u0,
		jac=True,
		method="SLSQP",
		bounds=[(0.0, 1.0)] * len(support),
		constraints=[
			{"type": "eq", "fun": lambda u: u.sum() - 1.0, "jac": lambda u: np.ones_like(u)}
		],
		options={"ftol": 1e-16, "maxiter": 1000},
	)

	u = np.clip(res.x, 0.0, None)
	u = np.where(u > prune, u, 0.0)
	u /= u.sum()
	if objective(u)[0] > start:
		u = np.where(u0 > prune, u0, 0.0)
		u /= u.sum()

	polished = np.zeros_like(w)
	polished[support] = u
	return polished


def _trim_support(crit, F, w, tol, prune):
	"""
	Drop support points whose weight is below the `support_tol` setting and re-polish on
	what is left. The trimmed design is kept only if it still certifies.
	"""
	small = (w > 0) & (w < get_single_value("support_tol"))
	if not small.any():
		return None

	trimmed = np.where(small, 0.0, w)
	for _ in range(POLISH_ROUNDS):
		trimmed = _polish(crit, F, trimmed / trimmed.sum(), prune)

	M = weighted_information(F, trimmed)
	log_value = _log_value(crit, M)
	if not np.isfinite(log_value):
		return None

	worst = float(sensitivity_function(crit, M, F).min() * math.exp(log_value))
	if worst < -tol:
		logger.debug("Trimming %d small weights breaks the certificate", small.sum())
		return None
	return trimmed, worst


def solve_fod(spec, crit, init=None, max_iter=None, tol=None, callback=None):
	"""
	Continuous Ψ-optimal design over the candidate set of `spec`.

	First-order steps with α = 1/j, then vertex-exchange rounds with exact line searches
	and an SLSQP polish of the weights on the current support, until every candidate has
	φ / ψ >= -tol. `callback(iteration, psi)` sees every first-order and exchange step.
	"""
	if max_iter is None:
		max_iter = get_single_value("fod_max_iter")
	if tol is None:
		tol = get_single_value("fod_tol")
	first_order_iter = get_single_value("first_order_iter")
	prune = get_single_value("prune_threshold")

	F = spec.features
	if crit.kind == "C":
		crit.vector(spec.p)

	w = _initial_weights(spec, init)
	M = weighted_information(F, w)
	log_value = _log_value(crit, M)
	if not np.isfinite(log_value):
		throw(
			"Initial design for {0} has a singular information matrix".format(spec.label),
			SingularInformationError,
		)

	def violation(M):
		phi = sensitivity_function(crit, M, F)
		return phi, float(phi.min() * math.exp(log_value))

	iterations = 0
	j = np.count_nonzero(w) + 1
	phi, worst = violation(M)
	while worst < -tol and iterations < min(first_order_iter, max_iter):
		step = _first_order_step(crit, F, M, w, j, int(np.argmin(phi)), log_value)
		if step is None:
			break
		w, M, log_value = step
		j += 1
		iterations += 1
		phi, worst = violation(M)
		if callback:
			callback(iterations, math.exp(log_value))

	logger.debug(
		"%s %s: %d first-order steps, violation %.3g", spec.label, crit.label, iterations, worst
	)

	while True:
		for _ in range(POLISH_ROUNDS):
			w = _polish(crit, F, w, prune)
			M = weighted_information(F, w)
			log_value = _log_value(crit, M)
			phi, worst = violation(M)
			if worst >= -tol:
				break

		if worst >= -tol:
			break

		if iterations >= max_iter:
			best = _result(spec, crit, w, iterations, worst, converged=False)
			throw(
				"FOD for {0} under {1} did not certify within {2} iterations "
				"(violation {3:.3g})".format(spec.label, crit.label, max_iter, worst),
				NonConvergenceError,
				best=best,
			)

		for _ in range(min(EXCHANGE_ROUND, max_iter - iterations)):
			w, M, log_value = _exchange_step(crit, F, M, w, phi, log_value)
			iterations += 1
			phi, worst = violation(M)
			if callback:
				callback(iterations, math.exp(log_value))
			if worst >= -tol:
				break

	trimmed = _trim_support(crit, F, w, tol, prune)
	if trimmed is not None:
		w, worst = trimmed

	result = _result(spec, crit, w, iterations, worst)
	logger.info(
		"FOD %s %s: Ψ*=%.10g on %d points after %d iterations",
		spec.label,
		crit.label,
		result.criterion_value,
		result.d,
		iterations,
	)
	return result


def _result(spec, crit, w, iterations, worst, converged=True):
	support = np.flatnonzero(w > 0)
	weights = w[support] / w[support].sum()
	design = Design(tuple(support), weights)
	value = criterion_value(crit, weighted_information(spec.features[support], weights))
	return FodResult(design, value, iterations, worst, converged)


def round_to_exact(design, n):
	"""
	Largest-remainder allocation of n observations: floor(n w_i) each, the rest by largest
	fractional part (lowest index on ties), then every support point topped up to one.
	"""
	n = int(n)
	d = design.d
	if n < d:
		throw(
			"Cannot place {0} observations on {1} support points".format(n, d),
			InfeasibleRoundingError,
		)

	exact = np.array(design.proportions) * n
	counts = np.floor(exact + 1e-9).astype(int)
	fractions = np.round(exact - counts, 12)
	remainder = n - int(counts.sum())
	order = sorted(range(d), key=lambda i: (-fractions[i], i))
	for i in order[:remainder]:
		counts[i] += 1

	for i in range(d):
		if counts[i] == 0:
			donor = int(np.argmax(counts))
			counts[donor] -= 1
			counts[i] += 1

	return Design(design.support, counts, exact=True)


def treatment_d_hessian(w):
	"""Hessian of (Π w_i)^(1/p) in the free weights w_1..w_(d-1)."""
	p = len(w)
	psi = math.exp(np.mean(np.log(w)))
	full = psi * (np.outer(1 / w, 1 / w) / p**2 - np.diag(1 / w**2) / p)
	return _reduce(full)


def treatment_a_hessian(w):
	"""Hessian of (Σ 1/w_i)^(-1/2) in the free weights w_1..w_(d-1)."""
	T = np.sum(1 / w)
	full = 0.75 * np.outer(w**-2, w**-2) / T**2.5 - np.diag(w**-3) / T**1.5
	return _reduce(full)


def _reduce(full):
	d = full.shape[0]
	A = np.vstack([np.eye(d - 1), -np.ones((1, d - 1))])
	return A.T @ full @ A


def numerical_hessian(func, u0, step):
	"""
	Central-difference Hessian at u0, Richardson-extrapolated over steps h and h/2.
	"""
	k = len(u0)

	def central(h):
		H = np.empty((k, k))
		for i in range(k):
			for j in range(i, k):
				ei, ej = np.zeros(k), np.zeros(k)
				ei[i], ej[j] = h, h
				plus = func(u0 + ei + ej) + func(u0 - ei - ej)
				minus = func(u0 + ei - ej) + func(u0 - ei + ej)
				H[i, j] = H[j, i] = (plus - minus) / (4 * h * h)
		return H

	return (4 * central(step / 2) - central(step)) / 3


def score_derivative(w):
	"""ġ(w): (I - 1 w_(d)ᵀ, w_d 1) as a (d-1) x d matrix."""
	d = len(w)
	g = np.zeros((d - 1, d))
	g[:, : d - 1] = np.eye(d - 1) - np.tile(w[: d - 1], (d - 1, 1))
	g[:, d - 1] = w[d - 1]
	return g


def allocation_covariance(w):
	g = score_derivative(np.asarray(w, dtype=float))
	return g @ np.diag(w) @ g.T


def _scales_have_analytic(crit, d_scale, a_scale):
	if crit.kind == "D":
		return d_scale == "root_p"
	return crit.kind == "A" and a_scale == "root"


def design_curvature(spec, crit, fod, d_scale="root_p", a_scale="root"):
	"""
	H* (negative Hessian of w ↦ Ψ(M) in the first d-1 weights at w*), V* and
	R* = tr(H* V*) / (2 Ψ*). Returns (H*, V*, R*, Ψ*, analytic).

	Ψ is taken on `d_scale` for D and `a_scale` for A. On the `root` A scale R* is half
	its value on the `inverse` scale.
	"""
	w = np.asarray(fod.weights, dtype=float)
	d = len(w)
	F = spec.features[list(fod.support)]

	def value(u):
		full = np.append(u, 1.0 - u.sum())
		M = weighted_information(F, full)
		return criterion_value(crit, M, d_scale=d_scale, a_scale=a_scale)

	psi_star = value(w[:-1])
	if d == 1:
		return np.zeros((0, 0)), np.zeros((0, 0)), 0.0, psi_star, False

	analytic = None
	if d == spec.p and _scales_have_analytic(crit, d_scale, a_scale):
		method = get_hooks("analytic_hessians").get(spec.name, {}).get(crit.kind)
		if method:
			analytic = get_attr(method)

	if analytic:
		H = -analytic(w)
	else:
		step = min(get_single_value("hessian_step"), float(w.min()) / 4)
		H = -numerical_hessian(value, w[:-1], step)

	H = 0.5 * (H + H.T)
	smallest = float(np.linalg.eigvalsh(H).min())
	if smallest <= 0:
		throw(
			"Design Hessian of {0} under {1} is not negative definite (eigenvalue {2:.3g}); "
			"is the input design optimal?".format(spec.label, crit.label, -smallest),
			CurvatureComputationError,
		)

	V = allocation_covariance(w)
	R = float(np.trace(H @ V) / (2 * psi_star))
	return H, V, R, psi_star, bool(analytic)


def curvature_report(spec, crit, fod, err, n, d_scale="root_p", a_scale="root"):
	"""Curvature quantities for an experiment of n observations under error model `err`."""
	n = int(n)
	if n < 1:
		throw("Sample size must be positive, got {0}".format(n))

	moments = compute_moments(err)
	H, V, R, psi_star, analytic = design_curvature(
		spec, crit, fod, d_scale=d_scale, a_scale=a_scale
	)

	d = fod.d
	h = 1 + d / (2 * n * moments.mu**2) * (moments.mu3**2 / moments.mu + moments.mu4)
	shortfall = 1 - moments.gamma_sq * R / n
	if shortfall <= 0:
		throw(
			"n={0} is too small for the curvature expansion (γ²R*={1:.3g})".format(
				n, moments.gamma_sq * R
			),
			CurvatureComputationError,
		)

	return CurvatureReport(
		H_star=H,
		V_star=V,
		R_star=R,
		h=h,
		S_star=1 / shortfall,
		gamma_sq=moments.gamma_sq,
		n=n,
		psi_star=psi_star,
		d_scale=d_scale,
		a_scale=a_scale,
		analytic=analytic,
	)


def rstar_closed_form_treatment(s):
	return (s - 1) / 2


def _table1_cell(family, s, kind):
	spec = get_model("{0}:{1}".format(family, s))
	crit = parse_criterion(kind)
	row = {"family": family, "s": s, "p": spec.p, "criterion": crit.label}
	try:
		fod = solve_fod(spec, crit)
		_, _, R, psi_star, _ = design_curvature(spec, crit, fod)
	except OadlabError as e:
		log_error(message=str(e), title="R* table cell {0} s={1} {2}".format(family, s, kind))
		row.update({"R_star": math.nan, "psi_star": math.nan, "d": 0, "status": "failed"})
		return row

	row.update({"R_star": R, "psi_star": psi_star, "d": fod.d, "status": "ok"})
	return row


def table1(
	max_s=9, criteria=("D", "A"), families=TABLE1_FAMILIES, workers=None, quadratic_max_s=None
):
	"""
	R* for every (family, s, criterion) cell, one row per cell. Quadratic cells above
	`quadratic_max_s` (default: the setting) are left out with a warning; a cell whose
	solver fails is marked failed.
	"""
	if max_s < 1:
		throw("max_s must be at least 1, got {0}".format(max_s))

	if quadratic_max_s is None:
		quadratic_max_s = get_single_value("quadratic_max_s")
	if "quadratic" in families and max_s > quadratic_max_s:
		logger.warning(
			"Leaving out quadratic cells s=%d..%d (quadratic_max_s=%d)",
			quadratic_max_s + 1,
			max_s,
			quadratic_max_s,
		)

	cells = [
		(family, s, kind)
		for family in families
		for s in range(1, max_s + 1)
		if not (family == "quadratic" and s > quadratic_max_s)
		for kind in criteria
	]

	workers = workers or get_single_value("workers")
	return Parallel(n_jobs=workers)(delayed(_table1_cell)(*cell) for cell in cells)
