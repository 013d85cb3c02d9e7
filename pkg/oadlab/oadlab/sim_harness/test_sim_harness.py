# Copyright (c) 2026, OAD Lab contributors
# See license.txt

import json
import math
import os
import tempfile
import unittest
from dataclasses import replace
from unittest.mock import patch

import pandas as pd
from scipy import stats

from oadlab.exceptions import ValidationError
from oadlab.oadlab.error_models.error_models import EstimationError
from oadlab.oadlab.inference import inference
from oadlab.oadlab.sim_harness.sim_harness import (
	CSV_COLUMNS,
	RATIO_ARM,
	HarnessError,
	SimConfig,
	SimConfigError,
	SimResult,
	emit_results,
	figure_cases,
	figure_n_grid,
	interpolate_n,
	load_results,
	power_curve,
	run_sim,
	expected_gain_check,
)
from oadlab.oadlab.utils import OutputError

FULL_SIM = bool(os.environ.get("OADLAB_FULL_SIM"))


def make_config(**overrides):
	doc = {
		"model": "treatment:2",
		"error_model": "normal",
		"criterion": "D",
		"beta": 1,
		"n_grid": [8, 12],
		"replicates": 20,
		"seed": 5,
		"workers": 1,
	}
	doc.update(overrides)
	return SimConfig.from_dict(doc)


class TestSimConfig(unittest.TestCase):
	def test_from_dict(self):
		config = make_config(n_grid=[12, 8, 12], k=2)
		self.assertEqual(config.n_grid, (8, 12))
		self.assertEqual(config.road.k, 2)
		self.assertEqual(config.beta.tolist(), [1.0, 1.0])
		self.assertEqual(config.arms, ("road", "fod"))
		self.assertEqual(config.d_scale, "root_2")

	def test_missing_field(self):
		doc = {"model": "treatment:2", "criterion": "D", "beta": 1}
		with self.assertRaises(SimConfigError) as cm:
			SimConfig.from_dict(doc)
		self.assertIn("error_model", str(cm.exception))
		self.assertEqual(cm.exception.field, "error_model")

	def test_invalid(self):
		self.assertRaises(SimConfigError, make_config, replicates=0)
		self.assertRaises(SimConfigError, make_config, n_grid=[])
		self.assertRaises(SimConfigError, make_config, arms=["road", "bandit"])
		self.assertRaises(SimConfigError, make_config, beta=[1, 2, 3])
		self.assertRaises(SimConfigError, make_config, power={"c": [1, 0, 0]})
		self.assertRaises(SimConfigError, make_config, power={"c": [1, 0], "beta": 2})
		self.assertRaises(SimConfigError, make_config, colour="red")

	def test_n_below_initialization(self):
		self.assertRaises(SimConfigError, run_sim, make_config(n_grid=[5, 8]))

	def test_from_json(self):
		self.assertRaises(SimConfigError, SimConfig.from_json, "/nonexistent/sim.json")
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "sim.json")
			with open(path, "w") as f:
				f.write('{"model": "treatment:2",\n "beta": }')
			with self.assertRaises(SimConfigError) as cm:
				SimConfig.from_json(path)
			self.assertIn("line 2", str(cm.exception))


class TestFigureCases(unittest.TestCase):
	def test_grid(self):
		grid = figure_n_grid(3, 4)
		self.assertEqual((grid[0], grid[-1], len(grid)), (15, 115, 101))

	def test_cases(self):
		cases = figure_cases(replicates=10, master_seed=1)
		self.assertEqual(len(cases), 16)
		labels = {(c.spec.label, c.crit.label, c.err.label) for c in cases}
		self.assertIn(("interaction:3", "D", "str:1"), labels)
		self.assertIn(("quadratic:2", "A", "ghr:0.25"), labels)
		self.assertTrue(all(c.n_grid is None and c.road.k == 3 for c in cases))


class TestRunSim(unittest.TestCase):
	def test_normal_treatment_is_balanced(self):
		result = run_sim(make_config())
		for n in (8, 12):
			self.assertEqual(result.get(RATIO_ARM, n, "eff_ci").value, 1.0)
			self.assertEqual(result.get("road", n, "psi_J").stderr, 0.0)
		# |J|^(1/2) with J = diag(n/2, n/2)
		self.assertAlmostEqual(result.get("fod", 8, "psi_J").value, 4.0)

	def test_rows(self):
		result = run_sim(make_config(error_model="str:1"))
		# per arm: psi_J, psi_mse_inv; ratio: eff_ci, eff_umse
		self.assertEqual(len(result.rows), 2 * (2 * 2 + 2))
		self.assertEqual(result.metadata["used_replicates"], {"8": 20, "12": 20})

	def test_single_arm(self):
		result = run_sim(make_config(arms=["fod"]))
		self.assertEqual({row.arm for row in result.rows}, {"fod"})

	def test_determinism(self):
		config = make_config(error_model="ghr:0.25", model="quadratic:1", n_grid=[12, 15])
		first, second = run_sim(config), run_sim(config)
		pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())

	def test_workers_do_not_change_results(self):
		config = make_config(error_model="str:1", replicates=8)
		parallel = make_config(error_model="str:1", replicates=8, workers=2)
		pd.testing.assert_frame_equal(run_sim(config).to_frame(), run_sim(parallel).to_frame())

	def test_failures_are_excluded_pairwise(self):
		real_fit = inference.fit_mle
		calls = []

		def flaky(*args, **kwargs):
			calls.append(1)
			if len(calls) == 1:
				raise EstimationError("did not converge")
			return real_fit(*args, **kwargs)

		config = make_config(replicates=200, n_grid=[8])
		with patch("oadlab.oadlab.sim_harness.sim_harness.fit_mle", side_effect=flaky):
			result = run_sim(config)
		self.assertEqual(result.metadata["failures"]["road"], {"8": 1})
		self.assertEqual(result.get("fod", 8, "psi_J").replicates, 199)

	def test_failure_cap(self):
		error = EstimationError("did not converge")
		with patch("oadlab.oadlab.sim_harness.sim_harness.fit_mle", side_effect=error):
			self.assertRaises(HarnessError, run_sim, make_config())


class TestExpectedGain(unittest.TestCase):
	def test_normal_predictions_coincide(self):
		check = expected_gain_check(make_config(replicates=10), 10)
		self.assertAlmostEqual(check.rhs_road, check.rhs_fod)
		# Ψ* = 1/2 on the |M|^(1/p) scale
		self.assertAlmostEqual(check.rhs_road, 5.0)
		self.assertAlmostEqual(check.lhs_road, 5.0)
		self.assertAlmostEqual(check.ratio, 1.0)
		self.assertAlmostEqual(check.S_star, 1.0)

	@unittest.skipUnless(FULL_SIM, "set OADLAB_FULL_SIM to run Monte Carlo acceptance")
	def test_student_t_ratio(self):
		config = make_config(
			model="treatment:4", error_model="str:1", replicates=5000, n_grid=[200], workers=-1
		)
		check = expected_gain_check(config, 200)
		self.assertAlmostEqual(check.S_star, 1.0191, places=3)
		self.assertLess(abs(check.z_ratio), 3)

	@unittest.skipUnless(FULL_SIM, "set OADLAB_FULL_SIM to run Monte Carlo acceptance")
	def test_normal_ratio(self):
		config = make_config(model="treatment:4", replicates=5000, n_grid=[200], workers=-1)
		check = expected_gain_check(config, 200)
		self.assertLess(abs(check.ratio - 1.0), 3 * check.ratio_stderr + 1e-12)


class TestPowerCurve(unittest.TestCase):
	def test_interpolate(self):
		points = [(10, 0.3), (20, 0.7), (30, 0.9)]
		self.assertAlmostEqual(interpolate_n(points, 0.8), 25.0)
		self.assertEqual(interpolate_n(points, 0.2), 10.0)
		self.assertIsNone(interpolate_n(points, 0.95))

	def test_normal_fixed_design_matches_analytic(self):
		config = make_config(
			beta=[0.6, 0.0],
			n_grid=[10, 20, 40],
			replicates=400,
			power={"c": [1, 0]},
			arms=["fod"],
		)
		curve = power_curve(config)
		for n in (10, 20, 40):
			simulated = next(r for r in curve.rows if r["n"] == n and r["arm"] == "fod")
			analytic = next(r for r in curve.rows if r["n"] == n and r["arm"] == "analytic")
			expected = stats.ncx2.sf(stats.chi2.ppf(0.95, 1), 1, 0.36 * n / 2)
			self.assertAlmostEqual(analytic["power"], expected)
			self.assertAlmostEqual(simulated["power"], expected, delta=0.08)

	def test_null_calibration(self):
		# known scale: the statistic is exactly χ²₁ under the null
		config = make_config(beta=0, n_grid=[20], replicates=400, power={"c": [1, 1]})
		for row in power_curve(config).rows:
			self.assertAlmostEqual(row["power"], 0.05, delta=0.035)

	def test_null_calibration_heavy_tails(self):
		config = make_config(
			beta=0, n_grid=[200], replicates=400, power={"c": [1, 1]}, error_model="str:1"
		)
		for row in power_curve(config).rows:
			self.assertAlmostEqual(row["power"], 0.05, delta=0.04)

	def test_small_counts_warn_about_size(self):
		config = make_config(
			beta=0, n_grid=[20], replicates=5, power={"c": [1, 1]}, error_model="str:1"
		)
		with self.assertLogs("oadlab.oadlab.sim_harness.sim_harness", "WARNING") as logs:
			power_curve(config)
		self.assertTrue(any("observations per support point" in line for line in logs.output))

	@unittest.skipUnless(FULL_SIM, "set OADLAB_FULL_SIM to run Monte Carlo acceptance")
	def test_null_size_full(self):
		config = make_config(
			beta=0,
			n_grid=[400],
			replicates=10000,
			power={"c": [1, 1]},
			error_model="str:1",
			workers=-1,
		)
		for row in power_curve(config).rows:
			# three standard errors of a 10,000-replicate rate at 0.05
			self.assertAlmostEqual(row["power"], 0.05, delta=0.008)

	def test_needs_c(self):
		self.assertRaises(SimConfigError, power_curve, make_config())

	def test_c_criterion_supplies_power_block(self):
		config = make_config(criterion="c:[1,1]", beta=0.5, n_grid=[10], replicates=10)
		curve = power_curve(config)
		self.assertEqual({r["arm"] for r in curve.rows}, {"road", "fod", "analytic"})

	@unittest.skipUnless(FULL_SIM, "set OADLAB_FULL_SIM to run Monte Carlo acceptance")
	def test_power_anchors(self):
		config = make_config(
			model="treatment:6",
			error_model="str:1",
			criterion="c:[1,1,1,1,1,1]",
			beta=0.5,
			n_grid=list(range(90, 151, 4)),
			replicates=10000,
			workers=-1,
		)
		curve = power_curve(config)
		self.assertAlmostEqual(curve.required_n["road"], 112, delta=6)
		self.assertAlmostEqual(curve.required_n["fod"], 128, delta=6)


class TestFigureAnchors(unittest.TestCase):
	def test_road_beats_fixed_design_under_heavy_tails(self):
		for criterion in ("D", "A"):
			config = make_config(
				model="treatment:4",
				error_model="str:1",
				criterion=criterion,
				n_grid=[30, 60],
				replicates=200,
				seed=13,
			)
			result = run_sim(config)
			for n in (30, 60):
				self.assertGreater(result.get(RATIO_ARM, n, "eff_ci").value, 1.0)

	def test_interaction_d_small_n(self):
		for err, expected in (("str:1", 1.6), ("ghr:0.25", 1.7)):
			config = make_config(
				model="interaction:3",
				error_model=err,
				n_grid=[29],
				replicates=2000,
				workers=-1,
			)
			result = run_sim(config)
			self.assertAlmostEqual(result.get(RATIO_ARM, 29, "eff_ci").value, expected, delta=0.15)

	@unittest.skipUnless(FULL_SIM, "set OADLAB_FULL_SIM to run Monte Carlo acceptance")
	def test_interaction_d(self):
		for err, low, high in (("str:1", 1.6, 1.25), ("ghr:0.25", 1.7, 1.18)):
			config = make_config(
				model="interaction:3",
				error_model=err,
				beta=1,
				n_grid=[29, 124],
				replicates=10000,
				workers=-1,
			)
			result = run_sim(config)
			self.assertAlmostEqual(result.get(RATIO_ARM, 29, "eff_ci").value, low, delta=0.07)
			self.assertAlmostEqual(result.get(RATIO_ARM, 124, "eff_ci").value, high, delta=0.07)


class TestEmitResults(unittest.TestCase):
	@classmethod
	def setUpClass(cls):
		cls.result = run_sim(make_config(error_model="str:1", replicates=10))

	def test_json_round_trip(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = emit_results(self.result, os.path.join(tmp, "out.json"))
			loaded = load_results(path)
			pd.testing.assert_frame_equal(loaded.to_frame(), self.result.to_frame())
			self.assertNotIn("wall_time", loaded.metadata)
			self.assertEqual(loaded.metadata["seed"], 5)

	def test_json_writes_missing_values_as_null(self):
		rows = [replace(self.result.rows[0], stderr=math.nan)] + list(self.result.rows[1:])
		result = SimResult(rows, dict(self.result.metadata, note=math.inf))
		with tempfile.TemporaryDirectory() as tmp:
			path = emit_results(result, os.path.join(tmp, "out.json"))
			with open(path) as f:
				text = f.read()
			loaded = load_results(path)
		self.assertNotIn("NaN", text)
		self.assertNotIn("Infinity", text)
		doc = json.loads(text)
		self.assertIsNone(doc["rows"][0]["stderr"])
		self.assertIsNone(doc["metadata"]["note"])
		self.assertTrue(math.isnan(loaded.rows[0].stderr))
		pd.testing.assert_frame_equal(loaded.to_frame(), result.to_frame())

	def test_csv(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = emit_results(self.result, os.path.join(tmp, "out.csv"))
			frame = pd.read_csv(path)
			self.assertEqual(frame.columns.tolist(), CSV_COLUMNS)
			self.assertEqual(len(frame), len(self.result.rows))
			loaded = load_results(path)
			self.assertEqual([r.metric for r in loaded.rows], [r.metric for r in self.result.rows])

	def test_byte_identical_on_replay(self):
		with tempfile.TemporaryDirectory() as tmp:
			again = run_sim(make_config(error_model="str:1", replicates=10))
			first = emit_results(self.result, os.path.join(tmp, "a.json"))
			second = emit_results(again, os.path.join(tmp, "b.json"))
			with open(first) as f, open(second) as g:
				self.assertEqual(f.read(), g.read())

	def test_bad_path(self):
		self.assertRaises(OutputError, emit_results, self.result, "/nonexistent/dir/out.csv")

	def test_bad_format(self):
		self.assertRaises(ValidationError, emit_results, self.result, "out.xlsx")


if __name__ == "__main__":
	unittest.main()
