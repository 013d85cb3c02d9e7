# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import os
from dataclasses import dataclass, fields, replace
from functools import lru_cache

from oadlab.exceptions import ValidationError, throw


@dataclass(frozen=True)
class OadlabSettings:
	# design solver
	fod_tol: float = 1e-7
	fod_max_iter: int = 200000
	first_order_iter: int = 2000
	prune_threshold: float = 1e-6
	support_tol: float = 1e-4
	hessian_step: float = 1e-5
	quadratic_max_s: int = 6

	# error models
	moment_tol: float = 1e-8
	moment_abserr_limit: float = 1e-6

	# adaptive engine
	road_k: int = 3
	q_floor: float = 1e-8

	# simulation
	replicates: int = 2000
	full_replicates: int = 10000
	full_sim: bool = False
	failure_cap: float = 0.01
	workers: int = 1

	def validate(self):
		for key in (
			"fod_tol",
			"prune_threshold",
			"support_tol",
			"hessian_step",
			"moment_tol",
			"moment_abserr_limit",
			"q_floor",
		):
			if not getattr(self, key) > 0:
				throw("Setting {0} must be positive, got {1}".format(key, getattr(self, key)))

		for key in (
			"fod_max_iter",
			"first_order_iter",
			"quadratic_max_s",
			"road_k",
			"replicates",
			"full_replicates",
		):
			if getattr(self, key) < 1:
				throw("Setting {0} must be at least 1, got {1}".format(key, getattr(self, key)))

		if self.workers == 0 or self.workers < -1:
			throw("Setting workers must be a positive count or -1, got {0}".format(self.workers))

		if not 0 <= self.failure_cap < 1:
			throw("Setting failure_cap must lie in [0, 1), got {0}".format(self.failure_cap))

		return self

	@property
	def default_replicates(self):
		return self.full_replicates if self.full_sim else self.replicates


def _from_environ(settings):
	overrides = {}
	workers = os.environ.get("OADLAB_WORKERS")
	if workers:
		try:
			overrides["workers"] = int(workers)
		except ValueError:
			throw("OADLAB_WORKERS must be an integer, got {0!r}".format(workers))

	quadratic_max_s = os.environ.get("OADLAB_QUADRATIC_MAX_S")
	if quadratic_max_s:
		try:
			overrides["quadratic_max_s"] = int(quadratic_max_s)
		except ValueError:
			throw("OADLAB_QUADRATIC_MAX_S must be an integer, got {0!r}".format(quadratic_max_s))

	if os.environ.get("OADLAB_FULL_SIM"):
		overrides["full_sim"] = True

	return replace(settings, **overrides)


@lru_cache(maxsize=None)
def get_settings():
	return _from_environ(OadlabSettings()).validate()


def get_single_value(key):
	if key not in {f.name for f in fields(OadlabSettings)}:
		throw("Unknown setting {0}".format(key), ValidationError)
	return getattr(get_settings(), key)
