# Copyright (c) 2026, OAD Lab contributors
# See license.txt

import os
import unittest
from unittest import mock

from oadlab.config.settings import OadlabSettings, _from_environ, get_single_value
from oadlab.exceptions import ValidationError


class TestSettings(unittest.TestCase):
	def test_environment_overrides(self):
		environ = {"OADLAB_WORKERS": "4", "OADLAB_QUADRATIC_MAX_S": "9", "OADLAB_FULL_SIM": "1"}
		with mock.patch.dict(os.environ, environ):
			settings = _from_environ(OadlabSettings()).validate()
		self.assertEqual(settings.workers, 4)
		self.assertEqual(settings.quadratic_max_s, 9)
		self.assertEqual(settings.default_replicates, settings.full_replicates)

	def test_bad_values(self):
		with mock.patch.dict(os.environ, {"OADLAB_QUADRATIC_MAX_S": "many"}):
			self.assertRaises(ValidationError, _from_environ, OadlabSettings())
		self.assertRaises(ValidationError, OadlabSettings(quadratic_max_s=0).validate)
		self.assertRaises(ValidationError, OadlabSettings(support_tol=0).validate)

	def test_unknown_setting(self):
		self.assertRaises(ValidationError, get_single_value, "colour")
		self.assertEqual(get_single_value("support_tol"), 1e-4)


if __name__ == "__main__":
	unittest.main()
