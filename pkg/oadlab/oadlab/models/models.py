# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from oadlab.exceptions import ValidationError, throw
from oadlab.oadlab.utils import get_attr, get_hooks, split_name

logger = logging.getLogger(__name__)

FAMILIES = ("treatment", "interaction", "quadratic", "custom")
QUADRATIC_GRID = (0.0, 0.5, 1.0)
MAX_QUADRATIC_S = 11
GRAM_CONDITION_LIMIT = 1e12


class InvalidDimensionError(ValidationError):
	pass


class CandidateSetTooLargeError(ValidationError):
	pass


class NonIdentifiableModelError(ValidationError):
	pass


class CustomSpecError(ValidationError):
	pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
	"""
	A linear model family y = βᵀf(x) + ε over a finite candidate set.

	The regression map is a monomial basis: feature k of x is prod_j x_j ** exponents[k][j].
	`features` holds f(x) for every candidate point, row i for candidate i.
	"""

	name: str
	s: int
	exponents: tuple
	candidate_points: np.ndarray
	features: np.ndarray = field(init=False, repr=False)

	def __post_init__(self):
		if self.name not in FAMILIES:
			throw("Unknown model family {0}".format(self.name), InvalidDimensionError)

		points = np.array(self.candidate_points, dtype=float)
		if points.ndim != 2 or points.shape[1] != self.s or not len(points):
			throw(
				"Candidate points must be a non-empty list of length-{0} vectors".format(self.s),
				CustomSpecError,
			)
		if len(np.unique(points, axis=0)) != len(points):
			throw("Candidate points of {0} are not distinct".format(self.label), CustomSpecError)

		exponents = np.array(self.exponents, dtype=int).reshape(-1, self.s)
		if len(np.unique(exponents, axis=0)) != len(exponents):
			throw("Basis of {0} repeats a monomial".format(self.label), CustomSpecError)

		features = np.prod(points[:, None, :] ** exponents[None, :, :], axis=2)

		points.setflags(write=False)
		features.setflags(write=False)
		object.__setattr__(self, "candidate_points", points)
		exponents = tuple(tuple(int(e) for e in row) for row in exponents)
		object.__setattr__(self, "exponents", exponents)
		object.__setattr__(self, "features", features)

		self.validate_identifiable()

	@property
	def p(self):
		return len(self.exponents)

	@property
	def n_candidates(self):
		return len(self.candidate_points)

	@property
	def label(self):
		return "{0}:{1}".format(self.name, self.s)

	def regression_map(self, x):
		x = np.asarray(x, dtype=float)
		if x.shape != (self.s,):
			throw("Design point must have {0} factors, got {1}".format(self.s, x.shape))
		return np.prod(x[None, :] ** np.array(self.exponents), axis=1)

	def gram(self):
		return self.features.T @ self.features

	def validate_identifiable(self):
		gram = self.gram()
		if np.linalg.cond(gram) > GRAM_CONDITION_LIMIT:
			throw(
				"{0} is not identifiable on its candidate set (Gram matrix is singular)".format(
					self.label
				),
				NonIdentifiableModelError,
			)


def _check_dimension(s):
	if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s < 1:
		msg = "Number of factors must be a positive integer, got {0!r}"
		throw(msg.format(s), InvalidDimensionError)
	return int(s)


def _unit(s, *positions):
	e = [0] * s
	for i in positions:
		e[i] += 1
	return tuple(e)


def build_treatment(s):
	s = _check_dimension(s)
	exponents = [_unit(s, i) for i in range(s)]
	points = np.eye(s)
	return ModelSpec("treatment", s, tuple(exponents), points)


def build_interaction(s):
	s = _check_dimension(s)
	pairs = list(itertools.combinations(range(s), 2))
	exponents = [_unit(s)] + [_unit(s, i) for i in range(s)] + [_unit(s, i, j) for i, j in pairs]

	# no-treatment point, single treatments, then pairs
	points = [np.zeros(s)]
	points.extend(np.eye(s))
	for i, j in pairs:
		x = np.zeros(s)
		x[[i, j]] = 1.0
		points.append(x)

	return ModelSpec("interaction", s, tuple(exponents), np.array(points))


def build_quadratic(s):
	s = _check_dimension(s)
	if s > MAX_QUADRATIC_S:
		throw(
			"Quadratic model with s={0} needs {1} grid points; use a custom spec instead".format(
				s, 3**s
			),
			CandidateSetTooLargeError,
		)

	pairs = list(itertools.combinations(range(s), 2))
	exponents = (
		[_unit(s)]
		+ [_unit(s, i) for i in range(s)]
		+ [_unit(s, i, i) for i in range(s)]
		+ [_unit(s, i, j) for i, j in pairs]
	)
	points = np.array(list(itertools.product(QUADRATIC_GRID, repeat=s)))
	return ModelSpec("quadratic", s, tuple(exponents), points)


def build_custom(basis, candidate_points):
	try:
		points = np.array(candidate_points, dtype=float)
		basis = np.array(basis, dtype=int)
	except (TypeError, ValueError) as e:
		throw("Custom spec is malformed: {0}".format(e), CustomSpecError)

	if points.ndim != 2 or basis.ndim != 2 or points.shape[1] != basis.shape[1]:
		throw(
			"Custom spec needs `basis` and `candidate_points` as lists of equal-length vectors",
			CustomSpecError,
		)
	if (basis < 0).any():
		throw("Custom basis exponents must be nonnegative", CustomSpecError)

	return ModelSpec("custom", int(points.shape[1]), tuple(map(tuple, basis)), points)


def load_custom(source):
	"""Custom spec from a JSON file path or an already parsed dict.

	{"basis": [[0, 0], [1, 0], [0, 1]], "candidate_points": [[0, 0], [1, 0], [0, 1]]}
	"""
	if isinstance(source, dict):
		doc = source
	else:
		try:
			with open(source, encoding="utf-8") as f:
				doc = json.load(f)
		except OSError as e:
			msg = "Could not read custom spec {0}: {1}"
			throw(msg.format(source, e.strerror), CustomSpecError)
		except json.JSONDecodeError as e:
			throw(
				"Custom spec {0} is not valid JSON (line {1}, column {2})".format(
					source, e.lineno, e.colno
				),
				CustomSpecError,
			)

	for key in ("basis", "candidate_points"):
		if key not in doc:
			throw("Custom spec is missing `{0}`".format(key), CustomSpecError)

	return build_custom(doc["basis"], doc["candidate_points"])


def get_model(name):
	"""Build a spec from `treatment:4`, `interaction:3`, `quadratic:2` or `custom:<file>`."""
	if isinstance(name, ModelSpec):
		return name

	family, arg = split_name(name, "model")
	builders = get_hooks("model_builders")
	if family not in builders:
		throw(
			"Unknown model {0!r}; expected one of {1}".format(name, ", ".join(builders)),
			InvalidDimensionError,
		)

	builder = get_attr(builders[family])
	if family == "custom":
		return builder(arg)

	try:
		s = int(arg)
	except ValueError:
		throw("Model {0!r} needs an integer number of factors".format(name), InvalidDimensionError)

	return builder(s)
