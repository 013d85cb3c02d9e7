# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

"""
Observed-information adaptive design.

After k initial replicates on every support point of the fixed optimal design, each new
observation goes to the support point whose share of observed information ω lags its optimal
weight w* and which most improves the criterion of the observed-information design τ_A.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from oadlab.config.settings import get_single_value
from oadlab.exceptions import NumericalError, OadlabError, ValidationError, throw
from oadlab.oadlab.design_core.design_core import (
	Design,
	InfoMatrix,
	SingularInformationError,
	sensitivity_function,
	weighted_information,
)
from oadlab.oadlab.error_models.error_models import (
	ErrorDrawError,
	compute_moments,
	location_mle,
	observed_information,
	sample_arrays,
)

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class RoadConfigError(ValidationError):
	pass


class DataShapeError(ErrorDrawError):
	pass


class SingularStateError(NumericalError):
	pass


@dataclass(frozen=True)
class RoadConfig:
	k: int = None
	q_floor: float = None
	total_n: int = None

	def __post_init__(self):
		if self.k is None:
			object.__setattr__(self, "k", get_single_value("road_k"))
		if self.q_floor is None:
			object.__setattr__(self, "q_floor", get_single_value("q_floor"))

		if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
			throw("k must be a positive integer, got {0!r}".format(self.k), RoadConfigError)
		if not self.q_floor > 0:
			throw("q_floor must be positive, got {0!r}".format(self.q_floor), RoadConfigError)
		if self.total_n is not None and self.total_n < 1:
			throw("total_n must be positive, got {0!r}".format(self.total_n), RoadConfigError)

	def validate_for(self, d):
		if self.total_n is not None and self.total_n < self.k * d:
			throw(
				"total_n={0} is smaller than the {1} initial observations (k={2}, d={3})".format(
					self.total_n, self.k * d, self.k, d
				),
				RoadConfigError,
			)


@dataclass(eq=False)
class ExperimentState:
	spec: object
	support: tuple
	w_star: np.ndarray
	err: object
	cfg: RoadConfig
	mu: float
	schedule: list
	y: list = field(default_factory=list)
	a: list = field(default_factory=list)
	eta_hat: np.ndarray = None
	i_a: np.ndarray = None
	q: np.ndarray = None
	Q: float = 0.0
	omega: np.ndarray = None
	history: list = field(default_factory=list)

	@property
	def d(self):
		return len(self.support)

	@property
	def j(self):
		return len(self.history)

	@property
	def counts(self):
		return np.array([len(buf) for buf in self.y], dtype=int)

	@property
	def features(self):
		return self.spec.features[list(self.support)]

	@property
	def initializing(self):
		return bool((self.counts < self.cfg.k).any())

	def realized_design(self):
		"""The exact design ξ̌ realized so far, as counts over the FOD support."""
		counts = self.counts
		keep = np.flatnonzero(counts)
		return Design(tuple(self.support[i] for i in keep), counts[keep], exact=True)

	def refresh(self, i):
		"""Recompute η̂_i and i_a for support point i from its buffer, then q, Q and ω."""
		y = np.array(self.y[i])
		a = np.array(self.a[i]) if self.err.has_per_obs_ancillary else None
		if len(y):
			self.eta_hat[i] = location_mle(self.err, y, a)
			self.i_a[i] = observed_information(self.err, y, self.eta_hat[i], a)
		else:
			self.eta_hat[i] = np.nan
			self.i_a[i] = 0.0

		self.q = np.maximum(self.i_a / self.mu, self.cfg.q_floor)
		self.Q = float(self.q.sum())
		self.omega = self.q / self.Q


def init_state(spec, fod, err, cfg=None):
	"""Empty experiment on the support of `fod`, k round-robin replicates scheduled first."""
	cfg = cfg or RoadConfig()
	design = getattr(fod, "design", fod)
	design.check_for(spec)
	if design.d < 1:
		throw("The fixed design has no support points", RoadConfigError)
	cfg.validate_for(design.d)

	d = design.d
	state = ExperimentState(
		spec=spec,
		support=design.support,
		w_star=np.array(design.proportions),
		err=err,
		cfg=cfg,
		mu=compute_moments(err).mu,
		schedule=list(range(d)) * cfg.k,
		y=[[] for _ in range(d)],
		a=[[] for _ in range(d)],
		eta_hat=np.full(d, np.nan),
		i_a=np.zeros(d),
	)
	state.q = np.full(d, cfg.q_floor)
	state.Q = float(state.q.sum())
	state.omega = state.q / state.Q
	return state


def record_response(state, point_index, y, a=None):
	"""Append a response at support point `point_index` (0-based) and refresh the statistics."""
	if isinstance(point_index, bool) or not 0 <= int(point_index) < state.d:
		throw(
			"Point {0} is not a support point (0..{1})".format(point_index, state.d - 1),
			DataShapeError,
		)
	point_index = int(point_index)

	if state.err.has_per_obs_ancillary:
		if a is None:
			throw("{0} responses need the ancillary a".format(state.err.label), DataShapeError)
		if not a > 0:
			throw("Ancillary a must be positive, got {0!r}".format(a), DataShapeError)
	elif a is not None:
		throw("{0} responses take no ancillary".format(state.err.label), DataShapeError)

	if not np.isfinite(y):
		throw("Response must be finite, got {0!r}".format(y), DataShapeError)

	state.y[point_index].append(float(y))
	if a is not None:
		state.a[point_index].append(float(a))
	state.history.append((point_index, float(y), None if a is None else float(a)))
	state.refresh(point_index)
	return state


def tau_information(state):
	"""M(τ_A) = Σ ω_i f_i f_iᵀ."""
	return InfoMatrix(weighted_information(state.features, state.omega))


def observed_information_matrix(state):
	"""J_A(j) / μ = Q M(τ_A) = Σ q_i f_i f_iᵀ."""
	return InfoMatrix(weighted_information(state.features, state.q), scale="observed")


def sequential_step(state):
	"""Weight one more unit of information gets in τ_A: β = 1 / (1 + Q)."""
	return 1.0 / (1.0 + state.Q)


def candidate_points(state):
	"""Support points whose observed share ω_i still lags w*_i."""
	return np.flatnonzero(state.w_star - state.omega > 4 * EPS)


def _next_scheduled(state):
	"""First slot of the round-robin schedule that no response covers yet."""
	counts, seen = state.counts, np.zeros(state.d, dtype=int)
	for i in state.schedule:
		if counts[i] <= seen[i]:
			return i
		seen[i] += 1
	return int(np.argmin(counts))


def next_point(state, crit):
	"""
	Support point (0-based) for the next observation. The initialization schedule governs
	until every point holds k responses, in whatever order they arrived; afterwards the argmin
	of φ(x, τ_A) over the lagging points, or over all support points when none lags. Ties go
	to the lowest index.
	"""
	if state.initializing:
		return _next_scheduled(state)

	try:
		phi = sensitivity_function(crit, tau_information(state), state.features)
	except SingularInformationError:
		throw(
			"Observed-information design is singular after {0} observations".format(state.j),
			SingularStateError,
			step=state.j,
		)

	candidates = candidate_points(state)
	if not len(candidates):
		return int(np.argmin(phi))
	return int(candidates[np.argmin(phi[candidates])])


def iter_road(spec, fod, err, crit, cfg, stream, beta):
	"""Run the adaptive experiment one observation at a time, yielding the state after each."""
	state = init_state(spec, fod, err, cfg)
	if cfg.total_n is None:
		throw("A simulated experiment needs total_n", RoadConfigError)

	beta = np.asarray(beta, dtype=float)
	if beta.shape != (spec.p,):
		throw("beta must have length p={0}, got {1}".format(spec.p, beta.shape), RoadConfigError)
	means = state.features @ beta

	for step in range(cfg.total_n):
		try:
			i = next_point(state, crit)
			eps, a = sample_arrays(err, 1, stream)
			record_response(state, i, means[i] + eps[0], None if a is None else a[0])
		except OadlabError as e:
			context = {**e.context, "step": step + 1}
			throw("step {0}: {1}".format(step + 1, e.message), type(e), **context)
		yield state


def run_road(spec, fod, err, crit, cfg, stream, beta):
	state = None
	for state in iter_road(spec, fod, err, crit, cfg, stream, beta):
		pass
	logger.debug("ROAD finished: counts %s, Q=%.6g", state.counts.tolist(), state.Q)
	return state
