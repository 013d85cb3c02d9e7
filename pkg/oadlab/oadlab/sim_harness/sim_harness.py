# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

"""
Seeded Monte Carlo comparison of the adaptive design (ROAD) against the fixed optimal design.

Every replicate r owns one stream per arm, derived from (master_seed, arm, r). All sample sizes
of a replicate are prefixes of the same run, so curves over n are paired within a replicate and
the arms are paired across the same r. Results depend only on the config, never on the number
of workers.
"""

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from oadlab.config.settings import get_settings, get_single_value
from oadlab.exceptions import NumericalError, OadlabError, ValidationError, throw
from oadlab.oadlab.design_core.design_core import (
	D_SCALES,
	Criterion,
	criterion_value,
	info_matrix,
	parse_criterion,
)
from oadlab.oadlab.error_models.error_models import (
	compute_moments,
	parse_error_model,
	sample_arrays,
)
from oadlab.oadlab.fod_solver.fod_solver import curvature_report, round_to_exact, solve_fod
from oadlab.oadlab.inference.inference import (
	SupportData,
	analytic_power,
	chi2_test,
	fit_mle,
	noncentrality,
)
from oadlab.oadlab.models.models import get_model
from oadlab.oadlab.road_engine.road_engine import RoadConfig, iter_road
from oadlab.oadlab.utils import (
	ARM_CODES,
	atomic_write,
	fsum_mean,
	fsum_stderr,
	get_stream,
	log_error,
	new_seed,
)

logger = logging.getLogger(__name__)

ARMS = tuple(ARM_CODES)
RATIO_ARM = "road/fod"
CSV_COLUMNS = ["arm", "n", "metric", "value", "stderr", "replicates", "seed"]
FIGURE_SPECS = (("treatment", 4), ("treatment", 6), ("interaction", 3), ("quadratic", 2))
FIGURE_ERRORS = ("str:1", "ghr:0.25")
# below this many observations per support point the Wald test runs above its nominal size
# for heavy-tailed errors
WALD_MIN_PER_POINT = 30
CONFIG_KEYS = {
	"model",
	"error_model",
	"criterion",
	"k",
	"q_floor",
	"beta",
	"n_grid",
	"replicates",
	"seed",
	"arms",
	"power",
	"d_scale",
	"workers",
}


class HarnessError(NumericalError):
	pass


class SimConfigError(ValidationError):
	pass


@dataclass(frozen=True)
class PowerBlock:
	c: tuple
	C0: float = 0.0
	alpha: float = 0.05
	target: float = 0.8

	def __post_init__(self):
		object.__setattr__(self, "c", tuple(float(x) for x in self.c))
		if not any(self.c):
			throw("power.c must be nonzero", SimConfigError)
		if not 0 < self.alpha < 1:
			throw("power.alpha must be in (0, 1), got {0!r}".format(self.alpha), SimConfigError)
		if not 0 < self.target < 1:
			throw("power.target must be in (0, 1), got {0!r}".format(self.target), SimConfigError)


@dataclass(frozen=True, eq=False)
class SimConfig:
	spec: object
	err: object
	crit: Criterion
	road: RoadConfig
	beta: np.ndarray
	n_grid: tuple = None
	replicates: int = None
	master_seed: int = None
	arms: tuple = ARMS
	power: PowerBlock = None
	d_scale: str = "root_2"
	workers: int = None

	def __post_init__(self):
		beta = np.array(self.beta, dtype=float).ravel()
		if beta.shape != (self.spec.p,):
			throw(
				"beta must have p={0} entries, got {1}".format(self.spec.p, len(beta)),
				SimConfigError,
			)
		beta.setflags(write=False)
		object.__setattr__(self, "beta", beta)

		if self.replicates is None:
			object.__setattr__(self, "replicates", get_settings().default_replicates)
		if self.master_seed is None:
			object.__setattr__(self, "master_seed", new_seed())
			logger.info("No seed given, using %d", self.master_seed)
		if self.workers is None:
			object.__setattr__(self, "workers", get_single_value("workers"))

		if int(self.replicates) != self.replicates or self.replicates < 1:
			throw(
				"replicates must be at least 1, got {0!r}".format(self.replicates), SimConfigError
			)
		if not self.arms or set(self.arms) - set(ARMS):
			throw("arms must be a non-empty subset of {0}".format(list(ARMS)), SimConfigError)
		if self.d_scale not in D_SCALES:
			throw("Unknown d_scale {0!r}".format(self.d_scale), SimConfigError)
		if self.n_grid is not None:
			if not len(self.n_grid):
				throw("n_grid must not be empty", SimConfigError)
			object.__setattr__(self, "n_grid", tuple(sorted({int(n) for n in self.n_grid})))
		if self.power is not None:
			self.power_vector()
		object.__setattr__(self, "arms", tuple(a for a in ARMS if a in self.arms))

	@classmethod
	def from_dict(cls, doc):
		"""
		Build a config from its JSON form, e.g.

			{"model": "interaction:3", "error_model": "str:1", "criterion": "D",
			 "beta": 1, "n_grid": [29, 124], "replicates": 2000, "seed": 7}

		`beta` is a list or a number repeated p times; `n_grid` is a list or "figure".
		"""
		if not isinstance(doc, dict):
			throw("Simulation config must be a JSON object", SimConfigError)
		unknown = set(doc) - CONFIG_KEYS
		if unknown:
			throw("Unknown config fields: {0}".format(", ".join(sorted(unknown))), SimConfigError)
		for key in ("model", "error_model", "criterion", "beta"):
			if key not in doc:
				throw("Config is missing `{0}`".format(key), SimConfigError, field=key)

		spec = get_model(doc["model"])
		beta = doc["beta"]
		if isinstance(beta, (int, float)):
			beta = [beta] * spec.p

		n_grid = doc.get("n_grid", "figure")
		if n_grid == "figure":
			n_grid = None
		elif not isinstance(n_grid, list):
			throw("n_grid must be a list of sample sizes or \"figure\"", SimConfigError)

		power = doc.get("power")
		if power is not None:
			if not isinstance(power, dict) or "c" not in power:
				throw("power must be an object with at least `c`", SimConfigError, field="power")
			extra = set(power) - {"c", "C0", "alpha", "target"}
			if extra:
				throw("Unknown power fields: {0}".format(", ".join(sorted(extra))), SimConfigError)
			power = PowerBlock(**power)

		return cls(
			spec=spec,
			err=parse_error_model(doc["error_model"]),
			crit=parse_criterion(doc["criterion"]),
			road=RoadConfig(k=doc.get("k"), q_floor=doc.get("q_floor")),
			beta=beta,
			n_grid=n_grid,
			replicates=doc.get("replicates"),
			master_seed=doc.get("seed"),
			arms=tuple(doc.get("arms", ARMS)),
			power=power,
			d_scale=doc.get("d_scale", "root_2"),
			workers=doc.get("workers"),
		)

	@classmethod
	def from_json(cls, path):
		try:
			with open(path, encoding="utf-8") as f:
				doc = json.load(f)
		except OSError as e:
			throw("Could not read config {0}: {1}".format(path, e.strerror), SimConfigError)
		except json.JSONDecodeError as e:
			msg = "Config {0} is not valid JSON (line {1}, column {2})"
			throw(msg.format(path, e.lineno, e.colno), SimConfigError)
		return cls.from_dict(doc)

	@classmethod
	def load(cls, source):
		"""A SimConfig as is, a dict in JSON form, or a path to a JSON file."""
		if isinstance(source, cls):
			return source
		if isinstance(source, dict):
			return cls.from_dict(source)
		if isinstance(source, (str, os.PathLike)):
			return cls.from_json(source)
		throw("Expected a simulation config, got {0!r}".format(source), SimConfigError)

	def power_vector(self):
		c = np.array(self.power.c)
		if c.shape != (self.spec.p,):
			throw("power.c must have p={0} entries".format(self.spec.p), SimConfigError)
		return c

	def resolve_n_grid(self, d):
		n_grid = self.n_grid or tuple(figure_n_grid(self.road.k, d))
		if n_grid[0] < self.road.k * d:
			throw(
				"n={0} is below the {1} initial observations (k={2}, d={3})".format(
					n_grid[0], self.road.k * d, self.road.k, d
				),
				SimConfigError,
			)
		return n_grid

	def as_dict(self):
		return {
			"model": self.spec.label,
			"error_model": self.err.label,
			"criterion": self.crit.label,
			"k": self.road.k,
			"beta": self.beta.tolist(),
			"n_grid": None if self.n_grid is None else list(self.n_grid),
			"replicates": self.replicates,
			"seed": self.master_seed,
			"arms": list(self.arms),
			"power": None if self.power is None else asdict(self.power),
			"d_scale": self.d_scale,
		}


@dataclass(frozen=True)
class MetricRow:
	arm: str
	n: int
	metric: str
	value: float
	stderr: float
	replicates: int
	seed: int


@dataclass(eq=False)
class SimResult:
	rows: list
	metadata: dict = field(default_factory=dict)
	config: SimConfig = None

	def get(self, arm, n, metric):
		for row in self.rows:
			if row.arm == arm and row.n == n and row.metric == metric:
				return row
		throw("No {0} result for {1} at n={2}".format(metric, arm, n))

	def to_frame(self):
		return pd.DataFrame([asdict(row) for row in self.rows], columns=CSV_COLUMNS)


@dataclass(frozen=True)
class Outcome:
	"""One fitted replicate at one sample size."""

	psi: float = math.nan
	deviation: tuple = None
	reject: bool = None
	failed: bool = False


def figure_n_grid(k, d):
	return list(range(k * d + 3, k * d + 104))


def figure_cases(replicates=None, master_seed=None):
	"""The efficiency-figure runs: four models, D and A, Student-t(1) and gamma hyperbola(1/4)."""
	cases = []
	for family, s in FIGURE_SPECS:
		for kind in ("D", "A"):
			for err in FIGURE_ERRORS:
				doc = {
					"model": "{0}:{1}".format(family, s),
					"error_model": err,
					"criterion": kind,
					"k": 3,
					"beta": 1,
					"n_grid": "figure",
					"replicates": replicates,
					"seed": master_seed,
				}
				cases.append(SimConfig.from_dict(doc))
	return cases


def _outcome(config, data, c):
	fit = fit_mle(config.spec, data, config.err)
	psi = criterion_value(config.crit, fit.J, config.d_scale)
	reject = None
	if c is not None:
		reject = chi2_test(fit, c, config.power.C0, config.power.alpha).reject
	return Outcome(psi, tuple(fit.beta_hat - config.beta), reject)


def _road_replicate(config, fod, n_grid, r):
	c = config.power_vector() if config.power else None
	cfg = replace(config.road, total_n=n_grid[-1])
	stream = get_stream(config.master_seed, ARM_CODES["road"], r)
	outcomes = []
	wanted = set(n_grid)
	try:
		states = iter_road(config.spec, fod, config.err, config.crit, cfg, stream, config.beta)
		for state in states:
			if state.j not in wanted:
				continue
			try:
				outcomes.append(_outcome(config, SupportData.from_state(state), c))
			except OadlabError as e:
				logger.warning("road replicate %d failed at n=%d: %s", r, state.j, e)
				outcomes.append(Outcome(failed=True))
	except OadlabError as e:
		logger.warning("road replicate %d stopped: %s", r, e)
		outcomes.extend(Outcome(failed=True) for _ in range(len(n_grid) - len(outcomes)))
	return outcomes


def _fod_replicate(config, fod, n_grid, r):
	"""Fixed-design arm: rounded counts at each n, errors drawn once per point and reused."""
	c = config.power_vector() if config.power else None
	stream = get_stream(config.master_seed, ARM_CODES["fod"], r)
	allocations = [round_to_exact(fod.design, n).weights.astype(int) for n in n_grid]
	depth = np.max(allocations, axis=0)
	means = config.spec.features[list(fod.support)] @ config.beta

	pools = [sample_arrays(config.err, depth[i], stream) for i in range(fod.d)]
	outcomes = []
	for n, counts in zip(n_grid, allocations):
		y = [means[i] + pools[i][0][: counts[i]] for i in range(fod.d)]
		a = None
		if config.err.has_per_obs_ancillary:
			a = [pools[i][1][: counts[i]] for i in range(fod.d)]
		try:
			data = SupportData.from_exact(config.spec, fod.support, y, a)
			outcomes.append(_outcome(config, data, c))
		except OadlabError as e:
			logger.warning("fod replicate %d failed at n=%d: %s", r, n, e)
			outcomes.append(Outcome(failed=True))
	return outcomes


REPLICATE_RUNNERS = {"road": _road_replicate, "fod": _fod_replicate}


def _replicate(config, fod, n_grid, r):
	return {arm: REPLICATE_RUNNERS[arm](config, fod, n_grid, r) for arm in config.arms}


def _ratio_stderr(a, b):
	"""Delta-method standard error of mean(a) / mean(b) for paired samples."""
	m = len(a)
	if m < 2:
		return math.nan
	a, b = np.asarray(a), np.asarray(b)
	ma, mb = fsum_mean(a), fsum_mean(b)
	ratio = ma / mb
	da, db = a - ma, b - mb
	var = (
		math.fsum(da * da) - 2 * ratio * math.fsum(da * db) + ratio**2 * math.fsum(db * db)
	) / (m - 1)
	return math.sqrt(max(var, 0.0) / m) / abs(mb)


def _psi_mse_inverse(config, deviations):
	deviations = np.array(deviations)
	if len(deviations) < config.spec.p:
		return math.nan
	mse = deviations.T @ deviations / len(deviations)
	try:
		return criterion_value(config.crit, np.linalg.inv(mse), config.d_scale)
	except (np.linalg.LinAlgError, OadlabError):
		return math.nan


def run_sim(config, fod=None):
	"""Run both arms over the config's n grid and aggregate per (arm, n)."""
	start = time.monotonic()
	fod = fod or solve_fod(config.spec, config.crit)
	n_grid = config.resolve_n_grid(fod.d)
	logger.info(
		"Simulating %s %s %s: %d replicates, n=%d..%d, seed %d",
		config.spec.label,
		config.err.label,
		config.crit.label,
		config.replicates,
		n_grid[0],
		n_grid[-1],
		config.master_seed,
	)

	replicates = Parallel(n_jobs=config.workers)(
		delayed(_replicate)(config, fod, n_grid, r) for r in range(config.replicates)
	)

	rows, failures, used = [], {arm: {} for arm in config.arms}, {}
	cap = get_single_value("failure_cap")
	for t, n in enumerate(n_grid):
		for arm in config.arms:
			failures[arm][n] = sum(rep[arm][t].failed for rep in replicates)
		matched = [
			rep for rep in replicates if not any(rep[arm][t].failed for arm in config.arms)
		]
		excluded = config.replicates - len(matched)
		if excluded > cap * config.replicates:
			msg = "{0} of {1} replicates failed at n={2}, above the {3:.0%} cap".format(
				excluded, config.replicates, n, cap
			)
			log_error(message=msg, title="Simulation {0}".format(config.spec.label))
			throw(msg, HarnessError, n=n, failures=excluded)
		if excluded:
			logger.warning("Excluded %d replicates at n=%d", excluded, n)
		used[n] = len(matched)
		rows.extend(_aggregate(config, n, t, matched))

	metadata = {
		"config": config.as_dict(),
		"fod": fod.design.as_dict(),
		"n_grid": list(n_grid),
		"replicates": config.replicates,
		"used_replicates": {str(n): m for n, m in used.items()},
		"failures": {arm: {str(n): k for n, k in per.items()} for arm, per in failures.items()},
		"seed": config.master_seed,
		"wall_time": time.monotonic() - start,
	}
	return SimResult(rows, metadata, config)


def _aggregate(config, n, t, matched):
	m, seed = len(matched), config.master_seed
	rows, psi, umse = [], {}, {}
	for arm in config.arms:
		outcomes = [rep[arm][t] for rep in matched]
		psi[arm] = [o.psi for o in outcomes]
		umse[arm] = _psi_mse_inverse(config, [o.deviation for o in outcomes])

		mean, stderr = fsum_mean(psi[arm]), fsum_stderr(psi[arm])
		rows.append(MetricRow(arm, n, "psi_J", mean, stderr, m, seed))
		rows.append(MetricRow(arm, n, "psi_mse_inv", umse[arm], math.nan, m, seed))
		if config.power is not None:
			rate = fsum_mean(float(o.reject) for o in outcomes)
			stderr = math.sqrt(rate * (1 - rate) / m) if m else math.nan
			rows.append(MetricRow(arm, n, "reject_rate", rate, stderr, m, seed))

	if len(config.arms) == 2:
		eff_ci = fsum_mean(psi["road"]) / fsum_mean(psi["fod"])
		stderr = _ratio_stderr(psi["road"], psi["fod"])
		rows.append(MetricRow(RATIO_ARM, n, "eff_ci", eff_ci, stderr, m, seed))
		rows.append(
			MetricRow(RATIO_ARM, n, "eff_umse", umse["road"] / umse["fod"], math.nan, m, seed)
		)
	return rows


@dataclass(frozen=True)
class ExpectedGainCheck:
	n: int
	lhs_road: float
	lhs_fod: float
	rhs_road: float
	rhs_fod: float
	z_road: float
	z_fod: float
	ratio: float
	ratio_stderr: float
	S_star: float
	z_ratio: float


def _z(observed, predicted, stderr):
	if not stderr > 0:
		return 0.0 if observed == predicted else math.nan
	return (observed - predicted) / stderr


def expected_gain_check(config, n):
	"""
	Monte Carlo E[Ψ(J/μ)] for both arms at n against hΨ*n (ROAD) and hΨ*(n - γ²R*) (FOD),
	on the |·|^(1/p) scale for D and the 1 / tr(·⁻¹) scale for A.
	"""
	config = replace(config, n_grid=(n,), d_scale="root_p", power=None, arms=ARMS)
	fod = solve_fod(config.spec, config.crit)
	report = curvature_report(config.spec, config.crit, fod, config.err, n, a_scale="inverse")
	result = run_sim(config, fod)
	mu = compute_moments(config.err).mu

	road, fod_row = result.get("road", n, "psi_J"), result.get("fod", n, "psi_J")
	ratio = result.get(RATIO_ARM, n, "eff_ci")
	rhs_road = report.h * report.psi_star * n
	rhs_fod = report.h * report.psi_star * (n - report.gamma_sq * report.R_star)

	return ExpectedGainCheck(
		n=n,
		lhs_road=road.value / mu,
		lhs_fod=fod_row.value / mu,
		rhs_road=rhs_road,
		rhs_fod=rhs_fod,
		z_road=_z(road.value / mu, rhs_road, road.stderr / mu),
		z_fod=_z(fod_row.value / mu, rhs_fod, fod_row.stderr / mu),
		ratio=ratio.value,
		ratio_stderr=ratio.stderr,
		S_star=report.S_star,
		z_ratio=_z(ratio.value, report.S_star, ratio.stderr),
	)


def interpolate_n(points, target):
	"""First n at which the (n, power) curve reaches `target`, linear between grid points."""
	previous = None
	for n, power in points:
		if power >= target:
			if previous is None:
				return float(n)
			n0, p0 = previous
			return n0 + (target - p0) * (n - n0) / (power - p0)
		previous = (n, power)
	return None


@dataclass(frozen=True, eq=False)
class PowerCurve:
	rows: list
	required_n: dict
	target: float
	result: SimResult = None


def power_curve(config):
	"""
	Rejection rates of the χ²₁ test of cᵀβ = C0 for both arms over the n grid, the minimal n
	reaching the target power in each arm, and the analytic power of the fixed design.
	"""
	if config.power is None:
		if config.crit.kind != "C":
			throw("A power curve needs a power block or a c criterion", SimConfigError)
		config = replace(config, power=PowerBlock(config.crit.c))

	fod = solve_fod(config.spec, config.crit)
	result = run_sim(config, fod)
	smallest = result.metadata["n_grid"][0] // fod.d
	if config.err.kind != "normal" and smallest < WALD_MIN_PER_POINT:
		logger.warning(
			"About %d observations per support point at n=%d: the Wald test with observed "
			"information rejects more often than alpha=%g under the null for %s errors",
			smallest,
			result.metadata["n_grid"][0],
			config.power.alpha,
			config.err.label,
		)
	c = config.power_vector()
	delta = float(c @ config.beta - config.power.C0)
	per_obs = info_matrix(config.spec, fod.design).entries * compute_moments(config.err).mu

	rows, required = [], {}
	for arm in config.arms:
		points = []
		for n in result.metadata["n_grid"]:
			row = result.get(arm, n, "reject_rate")
			rows.append({"n": n, "arm": arm, "power": row.value, "stderr": row.stderr})
			points.append((n, row.value))
		required[arm] = interpolate_n(points, config.power.target)

	points = []
	for n in result.metadata["n_grid"]:
		power = analytic_power(noncentrality(n * per_obs, c, delta), config.power.alpha)
		rows.append({"n": n, "arm": "analytic", "power": power, "stderr": 0.0})
		points.append((n, power))
	required["analytic"] = interpolate_n(points, config.power.target)

	for arm, n in required.items():
		logger.info("%s reaches power %.2f at n=%s", arm, config.power.target, n)
	return PowerCurve(rows, required, config.power.target, result)


def _without_nan(value):
	"""Non-finite floats become null so the document stays strict JSON."""
	if isinstance(value, dict):
		return {key: _without_nan(item) for key, item in value.items()}
	if isinstance(value, (list, tuple)):
		return [_without_nan(item) for item in value]
	if isinstance(value, float) and not math.isfinite(value):
		return None
	return value


def _metric_row(doc):
	for key in ("value", "stderr"):
		if doc[key] is None:
			doc = dict(doc, **{key: math.nan})
	return MetricRow(**doc)


def emit_results(result, path, fmt=None):
	"""Write the long-format rows as CSV, or rows plus metadata as JSON. Wall time is left out."""
	fmt = (fmt or os.path.splitext(os.fspath(path))[1].lstrip(".") or "csv").lower()
	if fmt == "csv":
		text = result.to_frame().to_csv(index=False)
	elif fmt == "json":
		metadata = {k: v for k, v in result.metadata.items() if k != "wall_time"}
		doc = {"metadata": metadata, "rows": [asdict(row) for row in result.rows]}
		text = json.dumps(_without_nan(doc), indent=1, allow_nan=False) + "\n"
	else:
		throw("Unknown output format {0!r}; expected csv or json".format(fmt))

	atomic_write(path, text)
	logger.info("Wrote %d rows to %s", len(result.rows), path)
	return path


def load_results(path):
	fmt = os.path.splitext(os.fspath(path))[1].lstrip(".").lower()
	try:
		if fmt == "json":
			with open(path, encoding="utf-8") as f:
				doc = json.load(f)
			return SimResult([_metric_row(row) for row in doc["rows"]], doc["metadata"])

		frame = pd.read_csv(path)
	except OSError as e:
		throw("Could not read results {0}: {1}".format(path, e.strerror), SimConfigError)

	rows = [
		MetricRow(
			str(r.arm),
			int(r.n),
			str(r.metric),
			float(r.value),
			float(r.stderr),
			int(r.replicates),
			int(r.seed),
		)
		for r in frame.itertuples(index=False)
	]
	return SimResult(rows)
