# Copyright (c) 2026, OAD Lab contributors
# See license.txt

import json
import os
import tempfile
import unittest
from unittest.mock import patch

import pandas as pd
from click.testing import CliRunner

from oadlab import __version__
from oadlab.cli import cli, main
from oadlab.oadlab.test_utils import write_json

SESSION = {
	"model": "treatment:4",
	"criterion": "D",
	"error_model": "str:1",
	"fod": {"support": [1, 2, 3, 4], "weights": [0.25, 0.25, 0.25, 0.25]},
	"road_config": {"k": 3},
	"observations": [],
}

SIM_CONFIG = {
	"model": "treatment:2",
	"error_model": "str:1",
	"criterion": "D",
	"beta": 1,
	"n_grid": [8, 10],
	"replicates": 5,
	"workers": 1,
}


class TestCli(unittest.TestCase):
	def setUp(self):
		self.runner = CliRunner()
		self.tmp = tempfile.TemporaryDirectory()
		self.addCleanup(self.tmp.cleanup)

	def path(self, name):
		return os.path.join(self.tmp.name, name)

	def invoke(self, *args):
		return self.runner.invoke(cli, list(args), catch_exceptions=False)

	def read_json(self, name):
		with open(self.path(name)) as f:
			return json.load(f)

	def test_fod_a_optimal_treatment_is_uniform(self):
		result = self.invoke(
			"fod", "--model", "treatment:6", "--criterion", "A", "--out", self.path("fod.json")
		)
		self.assertEqual(result.exit_code, 0)
		doc = self.read_json("fod.json")
		self.assertEqual([p["point"] for p in doc["support"]], [1, 2, 3, 4, 5, 6])
		for point in doc["support"]:
			self.assertAlmostEqual(point["weight"], 1 / 6, places=8)

	def test_fod_csv_with_counts(self):
		out = self.path("fod.csv")
		result = self.invoke(
			"fod", "--model", "treatment:3", "--criterion", "D", "--n", "10", "--csv", "--out", out
		)
		self.assertEqual(result.exit_code, 0)
		frame = pd.read_csv(out)
		self.assertEqual(frame.columns.tolist(), ["point", "factors", "weight", "count"])
		self.assertEqual(frame["count"].tolist(), [4, 3, 3])

	def test_table1(self):
		out = self.path("table1.csv")
		result = self.invoke(
			"table1", "--max-s", "4", "--criteria", "D", "--families", "treatment", "--out", out
		)
		self.assertEqual(result.exit_code, 0)
		frame = pd.read_csv(out)
		self.assertEqual(
			frame.columns.tolist(), ["family", "s", "p", "criterion", "R_star", "psi_star", "d"]
		)
		for row in frame.itertuples():
			self.assertAlmostEqual(row.R_star, (row.s - 1) / 2, places=2)

	def test_simulate_missing_config(self):
		result = self.invoke("simulate", "--config", "missing.json", "--out", self.path("r.csv"))
		self.assertEqual(result.exit_code, 2)
		self.assertIn("missing.json", result.output)

	def test_simulate_prints_seed_and_replays(self):
		config = write_json(self.path("sim.json"), SIM_CONFIG)
		outputs = []
		for name in ("a.csv", "b.csv"):
			out = self.path(name)
			result = self.invoke("simulate", "--config", config, "--seed", "9", "--out", out)
			self.assertEqual(result.exit_code, 0)
			self.assertIn("seed: 9", result.output)
			with open(out) as f:
				outputs.append(f.read())
		self.assertEqual(outputs[0], outputs[1])

	def test_road_next_initialization(self):
		session = write_json(self.path("session.json"), SESSION)
		result = self.invoke("road-next", "--session", session)
		self.assertEqual(result.exit_code, 0)
		self.assertIn("next point: 1", result.output)
		self.assertIn("phase: initialization", result.output)

	def test_road_next_missing_error_model(self):
		doc = {key: value for key, value in SESSION.items() if key != "error_model"}
		session = write_json(self.path("session.json"), doc)
		result = self.invoke("road-next", "--session", session)
		self.assertEqual(result.exit_code, 2)
		self.assertIn("error_model", result.output)

	def test_fit(self):
		observations = [{"point": i % 4 + 1, "y": 0.1 * i} for i in range(12)]
		doc = dict(SESSION, observations=observations)
		session = write_json(self.path("session.json"), doc)
		result = self.invoke(
			"fit", "--session", session, "--c", "1,-1,0,0", "--out", self.path("fit.json")
		)
		self.assertEqual(result.exit_code, 0)
		summary = self.read_json("fit.json")
		self.assertEqual(len(summary["beta_hat"]), 4)
		self.assertIn("reject", summary["test"])

	def test_curvature(self):
		out = self.path("curvature.json")
		result = self.invoke(
			"curvature",
			"--model",
			"treatment:4",
			"--criterion",
			"D",
			"--error-model",
			"str:1",
			"--n",
			"200",
			"--out",
			out,
		)
		self.assertEqual(result.exit_code, 0)
		doc = self.read_json("curvature.json")
		self.assertAlmostEqual(doc["R_star"], 1.5, places=6)
		self.assertAlmostEqual(doc["S_star"], 1.0191, places=3)

	def test_curvature_a_scale(self):
		args = ["--model", "treatment:5", "--criterion", "A", "--error-model", "str:1"]
		for scale, expected in (("root", 2.0), ("inverse", 4.0)):
			out = self.path("{0}.json".format(scale))
			result = self.invoke(
				"curvature", *args, "--n", "200", "--a-scale", scale, "--out", out
			)
			self.assertEqual(result.exit_code, 0)
			doc = self.read_json("{0}.json".format(scale))
			self.assertEqual(doc["a_scale"], scale)
			self.assertAlmostEqual(doc["R_star"], expected, places=4)

	def test_curves_figure_prints_drawn_seed(self):
		columns = [{"fieldname": "case"}, {"fieldname": "seed"}]
		with patch("oadlab.cli.run_report", return_value=(columns, [], None, None)) as report:
			result = self.invoke("curves", "--figure", "--out", self.path("curves.csv"))
		self.assertEqual(result.exit_code, 0)
		seed = report.call_args[0][1]["seed"]
		self.assertIsInstance(seed, int)
		self.assertIn("seed: {0}".format(seed), result.stdout)

	def test_numerical_failure_exits_3(self):
		args = ["--model", "treatment:4", "--criterion", "D", "--error-model", "str:1"]
		result = self.invoke("curvature", *args, "--n", "3")
		self.assertEqual(result.exit_code, 3)

	def test_usage(self):
		self.assertEqual(self.invoke("bogus").exit_code, 2)
		result = self.invoke("--version")
		self.assertEqual(result.exit_code, 0)
		self.assertIn(__version__, result.output)


class TestMain(unittest.TestCase):
	def test_exit_codes(self):
		self.assertEqual(main(["simulate", "--config", "missing.json", "--out", "r.csv"]), 2)
		self.assertEqual(main(["bogus"]), 2)
		self.assertEqual(main(["--version"]), 0)


if __name__ == "__main__":
	unittest.main()
