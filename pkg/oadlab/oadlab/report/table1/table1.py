# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import math

import pandas as pd

from oadlab.exceptions import throw
from oadlab.oadlab.fod_solver.fod_solver import TABLE1_FAMILIES, table1

LONG_COLUMNS = ["family", "s", "p", "criterion", "R_star", "psi_star", "d"]


def execute(filters=None):
	return Table1Report(filters).run()


def get_list(value):
	"""`"D,A"` or `["D", "A"]` as a tuple."""
	if isinstance(value, str):
		value = value.split(",")
	return tuple(v.strip() for v in value if v.strip())


class Table1Report(object):
	"""
	R* of the fixed optimal design for each model family, dimension and criterion.

	`layout` is "long" (one row per cell, the CSV form) or "wide" (one row per family and s,
	one R* column per criterion, the published layout).
	"""

	def __init__(self, filters=None):
		self.filters = dict(filters or {})
		self.max_s = int(self.filters.get("max_s", 9))
		self.criteria = get_list(self.filters.get("criteria", "D,A"))
		self.families = get_list(self.filters.get("families", TABLE1_FAMILIES))
		self.layout = self.filters.get("layout", "long")

		if self.layout not in ("long", "wide"):
			throw("Unknown layout {0!r}; expected long or wide".format(self.layout))
		unknown = set(self.families) - set(TABLE1_FAMILIES)
		if unknown:
			throw("Unknown families for the table: {0}".format(", ".join(sorted(unknown))))

	def run(self):
		self.get_data()
		self.get_columns()
		self.get_chart_data()

		return self.columns, self.data, None, self.chart, self.get_report_summary()

	def get_data(self):
		self.cells = table1(
			self.max_s,
			self.criteria,
			self.families,
			workers=self.filters.get("workers"),
			quadratic_max_s=self.filters.get("quadratic_max_s"),
		)
		frame = pd.DataFrame(self.cells)

		if self.layout == "long":
			self.data = frame[LONG_COLUMNS].to_dict("records")
			return

		# failed cells stay as NaN; only observed (family, s, p) rows appear
		wide = frame.set_index(["family", "s", "p", "criterion"])["R_star"].unstack("criterion")
		wide = wide.reindex(columns=list(self.criteria)).reset_index()
		order = {family: i for i, family in enumerate(self.families)}
		wide = wide.sort_values(["family", "s"], key=lambda col: col.map(order).fillna(col))
		self.data = wide.to_dict("records")

	def get_columns(self):
		if self.layout == "long":
			self.columns = [{"label": name, "fieldname": name} for name in LONG_COLUMNS]
			return

		self.columns = [{"label": name, "fieldname": name} for name in ("family", "s", "p")]
		for kind in self.criteria:
			self.columns.append({"label": "R* ({0})".format(kind), "fieldname": kind})

	def get_chart_data(self):
		datasets = []
		for family in self.families:
			for kind in self.criteria:
				values = [
					cell["R_star"]
					for cell in self.cells
					if cell["family"] == family and cell["criterion"] == kind
				]
				datasets.append({"name": "{0} {1}".format(family, kind), "values": values})

		labels = list(range(1, self.max_s + 1))
		self.chart = {"data": {"labels": labels, "datasets": datasets}, "type": "line"}

	def get_report_summary(self):
		failed = [c for c in self.cells if c["status"] != "ok" or math.isnan(c["R_star"])]
		return [
			{"label": "Cells", "value": len(self.cells)},
			{"label": "Failed", "value": len(failed)},
		]
