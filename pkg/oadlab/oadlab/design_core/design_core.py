# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from oadlab.exceptions import NumericalError, ValidationError, throw
from oadlab.oadlab.utils import get_hooks, split_name

logger = logging.getLogger(__name__)

D_SCALES = ("root_p", "root_2", "log")
A_SCALES = ("inverse", "root")
SCALES = ("normalized", "observed")


class InvalidDesignError(ValidationError):
	pass


class SingularInformationError(NumericalError):
	pass


@dataclass(frozen=True, eq=False)
class Design:
	"""
	Support points (indices into a spec's candidates) with weights.

	Continuous designs carry weights summing to one; exact designs carry integer counts.
	"""

	support: tuple
	weights: np.ndarray
	exact: bool = False

	def __post_init__(self):
		support = tuple(int(i) for i in self.support)
		weights = np.array(self.weights, dtype=float).ravel()

		if len(support) != len(weights) or not support:
			throw("A design needs one weight per support point", InvalidDesignError)
		if len(set(support)) != len(support):
			msg = "Support points of a design must be distinct: {0}"
			throw(msg.format(support), InvalidDesignError)
		if min(support) < 0:
			throw("Support indices must be nonnegative", InvalidDesignError)
		if not np.all(np.isfinite(weights)) or (weights < 0).any():
			throw("Design weights must be finite and nonnegative", InvalidDesignError)

		if self.exact:
			if not np.all(weights == np.round(weights)):
				throw("Exact designs take integer counts", InvalidDesignError)
		elif abs(weights.sum() - 1.0) > 1e-12:
			throw("Design weights sum to {0!r}, not 1".format(weights.sum()), InvalidDesignError)

		weights.setflags(write=False)
		object.__setattr__(self, "support", support)
		object.__setattr__(self, "weights", weights)

	@classmethod
	def uniform(cls, support):
		support = tuple(support)
		return cls(support, np.full(len(support), 1.0 / len(support)))

	@property
	def d(self):
		return len(self.support)

	@property
	def n(self):
		return int(self.weights.sum()) if self.exact else None

	@property
	def proportions(self):
		return self.weights / self.weights.sum()

	def check_for(self, spec):
		if max(self.support) >= spec.n_candidates:
			throw(
				"Design refers to point {0} but {1} has {2} candidates".format(
					max(self.support), spec.label, spec.n_candidates
				),
				InvalidDesignError,
			)
		return self

	def as_dict(self):
		return {
			"support": list(self.support),
			"weights": self.weights.tolist(),
			"exact": self.exact,
		}


@dataclass(frozen=True)
class Criterion:
	kind: str
	c: tuple = None

	def __post_init__(self):
		if self.kind not in get_hooks("criteria"):
			throw("Unknown criterion {0!r}; expected D, A or c:[...]".format(self.kind))
		if self.kind == "C":
			if self.c is None:
				throw("The c criterion needs a coefficient vector")
			c = tuple(float(x) for x in self.c)
			if not any(c):
				throw("The c vector of a c criterion must be nonzero")
			object.__setattr__(self, "c", c)
		elif self.c is not None:
			throw("Only the c criterion takes a vector")

	@property
	def label(self):
		if self.kind == "C":
			return "c:[{0}]".format(",".join("{0:g}".format(x) for x in self.c))
		return self.kind

	def vector(self, p):
		c = np.array(self.c)
		if len(c) != p:
			throw("c vector has length {0}, the model has p={1}".format(len(c), p))
		return c


@dataclass(frozen=True, eq=False)
class InfoMatrix:
	entries: np.ndarray
	scale: str = "normalized"

	def __post_init__(self):
		entries = np.array(self.entries, dtype=float)
		if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
			throw("An information matrix must be square", InvalidDesignError)
		if self.scale not in SCALES:
			throw("Unknown information scale {0!r}".format(self.scale))
		size = max(1.0, float(np.abs(entries).max(initial=0.0)))
		if not np.allclose(entries, entries.T, rtol=0, atol=1e-12 * size):
			throw("Information matrix is not symmetric", InvalidDesignError)

		entries = 0.5 * (entries + entries.T)
		entries.setflags(write=False)
		object.__setattr__(self, "entries", entries)

	@property
	def p(self):
		return self.entries.shape[0]

	def is_psd(self, tol=1e-10):
		size = max(1.0, float(np.abs(self.entries).max()))
		return bool(np.linalg.eigvalsh(self.entries).min() >= -tol * size)


def _entries(M):
	return M.entries if isinstance(M, InfoMatrix) else np.asarray(M, dtype=float)


def weighted_information(features, weights):
	"""Σ w_i f_i f_iᵀ over the rows of `features`."""
	return (features * weights[:, None]).T @ features


def info_matrix(spec, design):
	"""M = Σ w_i f(x_i) f(x_i)ᵀ, per observation."""
	design.check_for(spec)
	F = spec.features[list(design.support)]
	return InfoMatrix(weighted_information(F, design.proportions))


def _cholesky(M, crit):
	try:
		return linalg.cho_factor(M, lower=True, check_finite=True)
	except (linalg.LinAlgError, ValueError):
		throw(
			"Information matrix is singular; the {0} criterion needs it invertible".format(crit),
			SingularInformationError,
		)


def criterion_value(crit, M, d_scale="root_p", a_scale="inverse"):
	"""
	Ψ(M). D is |M|^(1/p) on the default scale, |M|^(1/2) on `root_2` and log|M| on `log`.
	A singular matrix scores 0 under D (-inf on the log scale). A is 1 / tr(M⁻¹) on the
	default scale and tr(M⁻¹)^(-1/2) on `root`.
	"""
	M = _entries(M)
	p = M.shape[0]

	if crit.kind == "D":
		if d_scale not in D_SCALES:
			throw("Unknown D scale {0!r}".format(d_scale))
		sign, logdet = np.linalg.slogdet(M)
		if sign <= 0:
			return -np.inf if d_scale == "log" else 0.0
		if d_scale == "log":
			return float(logdet)
		return float(np.exp(logdet / (p if d_scale == "root_p" else 2)))

	cf = _cholesky(M, crit.label)
	if crit.kind == "A":
		if a_scale not in A_SCALES:
			throw("Unknown A scale {0!r}".format(a_scale))
		trace = np.trace(linalg.cho_solve(cf, np.eye(p)))
		return float(1.0 / (trace if a_scale == "inverse" else np.sqrt(trace)))

	c = crit.vector(p)
	return float(1.0 / (c @ linalg.cho_solve(cf, c)))


def sensitivity_function(crit, M, features):
	"""
	φ(x) for each row f(x) of `features`: the derivative of ψ = 1/Ψ at M in the direction of
	the one-point design at x. φ >= 0 everywhere at an optimum, zero on its support.

		D: ψ (p - fᵀM⁻¹f) / p
		A: tr(M⁻¹) - fᵀM⁻²f
		c: cᵀM⁻¹c - (fᵀM⁻¹c)²
	"""
	M = _entries(M)
	p = M.shape[0]
	cf = _cholesky(M, crit.label)

	if crit.kind == "D":
		sign, logdet = np.linalg.slogdet(M)
		psi = np.exp(-logdet / p)
		solved = linalg.cho_solve(cf, features.T)
		quad = np.einsum("ij,ij->j", features.T, solved)
		return psi * (p - quad) / p

	if crit.kind == "A":
		inverse = linalg.cho_solve(cf, np.eye(p))
		solved = inverse @ features.T
		return np.trace(inverse) - np.einsum("ij,ij->j", solved, solved)

	c = crit.vector(p)
	m = linalg.cho_solve(cf, c)
	return c @ m - (features @ m) ** 2


def log_criterion_gradient(crit, M, features):
	"""∂ log Ψ(Σ w_i f_i f_iᵀ) / ∂w_i for each row f_i of `features`."""
	M = _entries(M)
	p = M.shape[0]
	cf = _cholesky(M, crit.label)

	if crit.kind == "D":
		solved = linalg.cho_solve(cf, features.T)
		return np.einsum("ij,ij->j", features.T, solved) / p

	if crit.kind == "A":
		inverse = linalg.cho_solve(cf, np.eye(p))
		solved = inverse @ features.T
		return np.einsum("ij,ij->j", solved, solved) / np.trace(inverse)

	c = crit.vector(p)
	m = linalg.cho_solve(cf, c)
	return (features @ m) ** 2 / (c @ m)


def sensitivity(crit, spec, design, x):
	M = info_matrix(spec, design)
	return float(sensitivity_function(crit, M, spec.features[[x]])[0])


@dataclass(frozen=True)
class Certificate:
	optimal: bool
	worst_violation: float
	worst_point: int


def get_certificate(crit, spec, design, tol):
	"""General equivalence check over every candidate: optimal iff min φ >= -tol."""
	phi = sensitivity_function(crit, info_matrix(spec, design), spec.features)
	worst = int(np.argmin(phi))
	return Certificate(bool(phi[worst] >= -tol), float(phi[worst]), worst)


def efficiency_ui(crit, M, psi_star):
	"""Ψ-efficiency of M against the optimal per-observation value Ψ*."""
	if not psi_star > 0:
		throw("Optimal criterion value must be positive, got {0}".format(psi_star))
	return criterion_value(crit, M) / psi_star


def parse_criterion(name):
	"""`D`, `A` or `c:[1,0,1]`"""
	if isinstance(name, Criterion):
		return name

	kind, arg = split_name(name, "criterion")
	kind = kind.upper()
	if kind == "C":
		try:
			c = json.loads(arg)
		except json.JSONDecodeError:
			throw("Criterion {0!r}: expected c:[v1,...,vp]".format(name))
		if not isinstance(c, list) or not all(isinstance(x, (int, float)) for x in c):
			throw("Criterion {0!r}: expected c:[v1,...,vp]".format(name))
		return Criterion("C", tuple(c))

	if arg:
		throw("Criterion {0} takes no argument, got {1!r}".format(kind, name))
	return Criterion(kind)
