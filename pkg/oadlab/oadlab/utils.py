# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import importlib
import logging
import math
import os
import tempfile

import numpy as np

from oadlab import hooks
from oadlab.exceptions import ValidationError, throw

logger = logging.getLogger(__name__)

ARM_CODES = {"road": 0, "fod": 1}


class OutputError(ValidationError):
	pass


def log_error(message=None, title=None):
	"""Record a failure without raising, the way background jobs report problems."""
	logger.error("%s: %s", title or "Error", message)


def get_hooks(key):
	return getattr(hooks, key)


def get_attr(method_string):
	"""Resolve a dotted path such as `oadlab.oadlab.models.models.build_treatment`."""
	module_name, _, attr = method_string.rpartition(".")
	if not module_name:
		throw("Not a dotted path: {0}".format(method_string))
	return getattr(importlib.import_module(module_name), attr)


def split_name(name, kind):
	"""Split a `family:arg` name into its two parts. The argument is optional."""
	if not isinstance(name, str) or not name.strip():
		throw("Expected a {0} name, got {1!r}".format(kind, name))
	family, _, arg = name.strip().partition(":")
	return family.strip().lower(), arg.strip()


def new_seed():
	return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))


def get_stream(master_seed, *key):
	"""Independent generator for `key` (e.g. arm code, replicate index) under a master seed.

	Streams depend only on (master_seed, key), never on the order in which workers ask for them.
	"""
	seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
	return np.random.default_rng(seq)


def fsum_mean(values):
	values = list(values)
	if not values:
		return math.nan
	return math.fsum(values) / len(values)


def fsum_stderr(values):
	values = list(values)
	m = len(values)
	if m < 2:
		return math.nan
	mean = fsum_mean(values)
	var = math.fsum((v - mean) ** 2 for v in values) / (m - 1)
	return math.sqrt(var / m)


def atomic_write(path, text):
	"""Write text to `path` through a temporary file in the same directory and a rename."""
	path = os.fspath(path)
	directory = os.path.dirname(os.path.abspath(path))
	try:
		fd, tmp = tempfile.mkstemp(prefix=".oadlab-", dir=directory)
		try:
			with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
				f.write(text)
			os.replace(tmp, path)
		except BaseException:
			if os.path.exists(tmp):
				os.unlink(tmp)
			raise
	except OSError as e:
		throw("Could not write {0}: {1}".format(path, e.strerror or e), OutputError, path=path)
