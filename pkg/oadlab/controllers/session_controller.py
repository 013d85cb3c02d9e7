# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

"""
Live experiment sessions kept as user-owned JSON files:

	{
	  "model": "treatment:4",
	  "criterion": "D",
	  "error_model": "str:1",
	  "fod": {"support": [1, 2, 3, 4], "weights": [0.25, 0.25, 0.25, 0.25]},
	  "road_config": {"k": 3},
	  "observations": [{"point": 1, "y": 0.31}, {"point": 2, "y": -1.2}]
	}

Indices in the file are 1-based. `fod.support` lists candidate points of the model,
`observations[].point` lists positions within that support. `fod` may be left out, in which
case the fixed optimal design is solved for. The controller never writes the file.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from oadlab.exceptions import OadlabError, ValidationError, throw
from oadlab.oadlab.design_core.design_core import Design, parse_criterion
from oadlab.oadlab.error_models.error_models import parse_error_model
from oadlab.oadlab.fod_solver.fod_solver import solve_fod
from oadlab.oadlab.inference.inference import chi2_test, ellipsoid_log_volume, fit_mle
from oadlab.oadlab.models.models import get_model
from oadlab.oadlab.road_engine.road_engine import (
	DataShapeError,
	RoadConfig,
	init_state,
	next_point,
	record_response,
)

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("model", "criterion", "error_model")
SESSION_FIELDS = set(REQUIRED_FIELDS) | {"fod", "road_config", "observations"}
_EXAMPLES = {"model": "treatment:4", "criterion": "D", "error_model": "str:1"}


class SessionFileError(ValidationError):
	pass


@dataclass(frozen=True)
class Observation:
	point: int
	y: float
	a: float = None


@dataclass(frozen=True, eq=False)
class SessionFile:
	model: str
	criterion: str
	error_model: str
	fod: Design = None
	road_config: RoadConfig = None
	observations: tuple = field(default_factory=tuple)
	path: str = None


def _field_error(name, message, path=None):
	prefix = "{0}: ".format(path) if path else ""
	throw("{0}field `{1}`: {2}".format(prefix, name, message), SessionFileError, field=name)


def _number(value, name, path):
	if isinstance(value, bool) or not isinstance(value, (int, float)):
		_field_error(name, "expected a number, got {0!r}".format(value), path)
	return float(value)


def _parse_fod(doc, path):
	if not isinstance(doc, dict) or "support" not in doc or "weights" not in doc:
		_field_error("fod", "expected {\"support\": [...], \"weights\": [...]}", path)
	support = doc["support"]
	if not isinstance(support, list) or not all(
		isinstance(i, int) and not isinstance(i, bool) and i >= 1 for i in support
	):
		_field_error("fod.support", "expected 1-based candidate indices", path)
	try:
		return Design(tuple(i - 1 for i in support), doc["weights"])
	except (OadlabError, TypeError, ValueError) as e:
		_field_error("fod", str(e), path)


def _parse_road_config(doc, path):
	if not isinstance(doc, dict) or set(doc) - {"k", "q_floor"}:
		_field_error("road_config", "expected an object with `k` and/or `q_floor`", path)
	try:
		return RoadConfig(k=doc.get("k"), q_floor=doc.get("q_floor"))
	except OadlabError as e:
		_field_error("road_config", e.message, path)


def _parse_observations(items, path):
	if not isinstance(items, list):
		_field_error("observations", "expected a list", path)

	observations = []
	for i, item in enumerate(items):
		name = "observations[{0}]".format(i)
		if not isinstance(item, dict) or "point" not in item or "y" not in item:
			_field_error(name, "expected {\"point\": ..., \"y\": ...}", path)
		point = item["point"]
		if isinstance(point, bool) or not isinstance(point, int) or point < 1:
			_field_error(name + ".point", "expected a 1-based support index", path)
		a = item.get("a")
		observations.append(
			Observation(
				point - 1,
				_number(item["y"], name + ".y", path),
				None if a is None else _number(a, name + ".a", path),
			)
		)
	return tuple(observations)


def parse_session(source):
	"""Read a session from a path or an already parsed dict."""
	path = None
	if isinstance(source, dict):
		doc = source
	else:
		path = str(source)
		try:
			with open(path, encoding="utf-8") as f:
				doc = json.load(f)
		except OSError as e:
			throw("Could not read session {0}: {1}".format(path, e.strerror), SessionFileError)
		except json.JSONDecodeError as e:
			throw(
				"{0}: not valid JSON at line {1}, column {2}: {3}".format(
					path, e.lineno, e.colno, e.msg
				),
				SessionFileError,
				line=e.lineno,
				column=e.colno,
			)

	if not isinstance(doc, dict):
		throw("Session must be a JSON object", SessionFileError)
	for name in REQUIRED_FIELDS:
		if name not in doc:
			_field_error(name, "missing", path)
		if not isinstance(doc[name], str):
			_field_error(name, "expected a name such as {0}".format(_EXAMPLES[name]), path)
	unknown = set(doc) - SESSION_FIELDS
	if unknown:
		_field_error(sorted(unknown)[0], "unknown field", path)

	return SessionFile(
		model=doc["model"],
		criterion=doc["criterion"],
		error_model=doc["error_model"],
		fod=_parse_fod(doc["fod"], path) if doc.get("fod") is not None else None,
		road_config=_parse_road_config(doc.get("road_config") or {}, path),
		observations=_parse_observations(doc.get("observations", []), path),
		path=path,
	)


@dataclass(frozen=True)
class Recommendation:
	point: int
	candidate: int
	factors: tuple
	phase: str
	observations: int
	omega: tuple
	w_star: tuple
	Q: float

	def as_dict(self):
		return {
			"point": self.point,
			"candidate": self.candidate,
			"factors": list(self.factors),
			"phase": self.phase,
			"observations": self.observations,
			"omega": list(self.omega),
			"w_star": list(self.w_star),
			"Q": self.Q,
		}


class SessionController:
	def __init__(self, session):
		self.session = session if isinstance(session, SessionFile) else parse_session(session)
		self.validate()

	def validate(self):
		self.set_model()
		self.set_fod()
		self.state = None

	def set_model(self):
		try:
			self.spec = get_model(self.session.model)
		except OadlabError as e:
			_field_error("model", e.message, self.session.path)
		try:
			self.crit = parse_criterion(self.session.criterion)
		except OadlabError as e:
			_field_error("criterion", e.message, self.session.path)
		try:
			self.err = parse_error_model(self.session.error_model)
		except OadlabError as e:
			_field_error("error_model", e.message, self.session.path)

	def set_fod(self):
		if self.session.fod is None:
			self.fod = solve_fod(self.spec, self.crit).design
			logger.info("Solved the fixed design for %s: %s", self.spec.label, self.fod.support)
			return
		try:
			self.fod = self.session.fod.check_for(self.spec)
		except OadlabError as e:
			_field_error("fod", e.message, self.session.path)

	def load_state(self):
		"""Replay the recorded observations into a fresh experiment state."""
		state = init_state(self.spec, self.fod, self.err, self.session.road_config)

		for i, obs in enumerate(self.session.observations):
			try:
				record_response(state, obs.point, obs.y, obs.a)
			except DataShapeError as e:
				_field_error("observations[{0}]".format(i), e.message, self.session.path)

		self.state = state
		return state

	def recommend(self):
		state = self.state or self.load_state()
		i = next_point(state, self.crit)
		candidate = state.support[i]
		return Recommendation(
			point=i + 1,
			candidate=candidate + 1,
			factors=tuple(self.spec.candidate_points[candidate].tolist()),
			phase="initialization" if state.initializing else "adaptive",
			observations=state.j,
			omega=tuple(state.omega.tolist()),
			w_star=tuple(state.w_star.tolist()),
			Q=state.Q,
		)

	def summarize_fit(self, alpha=0.05, c=None, C0=0.0):
		"""β̂, J and the ellipsoid log volume; with c also the χ² test of cᵀβ = C0."""
		state = self.state or self.load_state()
		fit = fit_mle(self.spec, state, self.err)
		summary = {
			"beta_hat": fit.beta_hat.tolist(),
			"J": fit.J.entries.tolist(),
			"eta_hat": fit.eta_hat.tolist(),
			"loglik": fit.loglik,
			"log_volume": ellipsoid_log_volume(fit, alpha),
			"alpha": alpha,
		}
		if c is not None:
			test = chi2_test(fit, np.asarray(c, dtype=float), C0, alpha)
			summary["test"] = {
				"c": list(c),
				"C0": C0,
				"statistic": test.statistic,
				"critical_value": test.critical_value,
				"c_value": test.c_value,
				"reject": test.reject,
			}
		return summary
