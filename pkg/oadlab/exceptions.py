# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt


class OadlabError(Exception):
	exit_code = 1

	def __init__(self, message="", **context):
		super().__init__(message)
		self.message = message
		self.context = context
		for key, value in context.items():
			setattr(self, key, value)


class ValidationError(OadlabError):
	"""Bad input or configuration."""

	exit_code = 2


class NumericalError(OadlabError):
	"""A numeric routine failed (singular matrix, non-convergence)."""

	exit_code = 3


def throw(msg, exc=ValidationError, **context):
	raise exc(msg, **context)
