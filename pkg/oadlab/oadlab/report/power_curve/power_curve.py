# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

from oadlab.exceptions import throw
from oadlab.oadlab.sim_harness.sim_harness import SimConfig, power_curve


def execute(filters=None):
	return PowerCurveReport(filters).run()


class PowerCurveReport(object):
	"""
	Power of the χ²₁ test of cᵀβ = C0 against n for each arm, with the fixed design's
	analytic power alongside.
	"""

	def __init__(self, filters=None):
		self.filters = dict(filters or {})
		if self.filters.get("config") is None:
			throw("The power curve needs a `config`", field="config")
		self.config = SimConfig.load(self.filters["config"])

	def run(self):
		self.curve = power_curve(self.config)
		self.get_columns()
		self.get_data()
		self.get_chart_data()

		return self.columns, self.data, None, self.chart, self.get_report_summary()

	def get_columns(self):
		self.columns = [
			{"label": "n", "fieldname": "n", "fieldtype": "Int"},
			{"label": "Arm", "fieldname": "arm", "fieldtype": "Data"},
			{"label": "Power", "fieldname": "power", "fieldtype": "Float"},
			{"label": "Std. Error", "fieldname": "stderr", "fieldtype": "Float"},
		]

	def get_data(self):
		self.data = sorted(self.curve.rows, key=lambda row: (row["n"], row["arm"]))

	def get_chart_data(self):
		labels = sorted({row["n"] for row in self.data})
		datasets = []
		for arm in self.curve.required_n:
			values = [row["power"] for row in self.data if row["arm"] == arm]
			datasets.append({"name": arm, "values": values})
		self.chart = {"data": {"labels": labels, "datasets": datasets}, "type": "line"}

	def get_report_summary(self):
		summary = []
		for arm, n in self.curve.required_n.items():
			summary.append(
				{
					"label": "n for power {0:.2f} ({1})".format(self.curve.target, arm),
					"value": None if n is None else round(n, 1),
				}
			)
		return summary
