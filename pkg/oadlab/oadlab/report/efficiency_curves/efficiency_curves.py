# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

import logging
import os

from oadlab.exceptions import throw
from oadlab.oadlab.sim_harness.sim_harness import (
	RATIO_ARM,
	SimConfig,
	figure_cases,
	load_results,
	run_sim,
)

logger = logging.getLogger(__name__)

METRICS = ("eff_ci", "eff_umse")


def execute(filters=None):
	return EfficiencyCurves(filters).run()


def case_label(config):
	return "{0} {1} {2}".format(config.spec.label, config.crit.label, config.err.label)


class EfficiencyCurves(object):
	"""
	Long-format plot data: one row per (case, n, metric) for the ROAD/FOD efficiency ratios.

	Filters take one of `config` (a single simulation), `figure` (all efficiency-figure cases,
	with optional `replicates` and `seed`) or `results` (a saved results file, not re-run).
	"""

	def __init__(self, filters=None):
		self.filters = dict(filters or {})
		sources = [key for key in ("config", "figure", "results") if self.filters.get(key)]
		if len(sources) != 1:
			throw("Give exactly one of `config`, `figure` or `results`")
		self.source = sources[0]

	def run(self):
		self.get_columns()
		self.get_data()
		self.get_chart_data()

		return self.columns, self.data, None, self.chart

	def get_columns(self):
		self.columns = [
			{"label": "Case", "fieldname": "case", "fieldtype": "Data"},
			{"label": "n", "fieldname": "n", "fieldtype": "Int"},
			{"label": "Metric", "fieldname": "metric", "fieldtype": "Data"},
			{"label": "Value", "fieldname": "value", "fieldtype": "Float"},
			{"label": "Std. Error", "fieldname": "stderr", "fieldtype": "Float"},
			{"label": "Seed", "fieldname": "seed", "fieldtype": "Int"},
		]

	def get_results(self):
		if self.source == "results":
			path = self.filters["results"]
			result = load_results(path)
			# CSV results carry no metadata
			config = result.metadata.get("config")
			if config:
				label = " ".join(config[key] for key in ("model", "criterion", "error_model"))
			else:
				label = os.path.splitext(os.path.basename(os.fspath(path)))[0]
			return [(label, result)]

		if self.source == "config":
			configs = [SimConfig.load(self.filters["config"])]
		else:
			configs = figure_cases(self.filters.get("replicates"), self.filters.get("seed"))

		results = []
		for config in configs:
			logger.info("Efficiency curves for %s", case_label(config))
			results.append((case_label(config), run_sim(config)))
		return results

	def get_data(self):
		self.data = []
		for label, result in self.get_results():
			for row in result.rows:
				if row.arm != RATIO_ARM or row.metric not in METRICS:
					continue
				self.data.append(
					{
						"case": label,
						"n": row.n,
						"metric": row.metric,
						"value": row.value,
						"stderr": row.stderr,
						"seed": row.seed,
					}
				)

		if not self.data:
			throw("No efficiency rows: both arms are needed for the ratio")

	def get_chart_data(self):
		labels = sorted({row["n"] for row in self.data})
		datasets = []
		for case in dict.fromkeys(row["case"] for row in self.data):
			values = [
				row["value"]
				for row in self.data
				if row["case"] == case and row["metric"] == "eff_ci"
			]
			datasets.append({"name": case, "values": values})
		self.chart = {"data": {"labels": labels, "datasets": datasets}, "type": "line"}
