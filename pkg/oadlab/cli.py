# Copyright (c) 2026, OAD Lab contributors
# For license information, please see license.txt

"""`oadlab` command line. Exit codes: 0 ok, 2 bad input or usage, 3 numeric failure."""

import json
import logging
from dataclasses import replace

import click
import pandas as pd

from oadlab import __version__
from oadlab.controllers.session_controller import SessionController
from oadlab.exceptions import OadlabError
from oadlab.oadlab.design_core.design_core import A_SCALES, D_SCALES, parse_criterion
from oadlab.oadlab.error_models.error_models import parse_error_model
from oadlab.oadlab.fod_solver.fod_solver import curvature_report, round_to_exact, solve_fod
from oadlab.oadlab.models.models import get_model
from oadlab.oadlab.sim_harness.sim_harness import SimConfig, emit_results, run_sim
from oadlab.oadlab.utils import atomic_write, get_attr, get_hooks, new_seed

logger = logging.getLogger(__name__)


class OadlabGroup(click.Group):
	def invoke(self, ctx):
		try:
			return super().invoke(ctx)
		except OadlabError as e:
			click.secho("Error: {0}".format(e), fg="red", err=True)
			ctx.exit(e.exit_code)


def run_report(name, filters):
	return get_attr(get_hooks("reports")[name])(filters)


def write_output(text, out):
	if out:
		atomic_write(out, text)
		click.echo("Wrote {0}".format(out), err=True)
	else:
		click.echo(text, nl=not text.endswith("\n"))


def dump_json(doc):
	return json.dumps(doc, indent=1) + "\n"


def report_csv(columns, data):
	fieldnames = [c["fieldname"] for c in columns]
	return pd.DataFrame(data, columns=fieldnames).to_csv(index=False)


def load_config(path, replicates=None, seed=None, workers=None):
	config = SimConfig.load(path)
	overrides = {"replicates": replicates, "master_seed": seed, "workers": workers}
	overrides = {key: value for key, value in overrides.items() if value is not None}
	if overrides:
		config = replace(config, **overrides)
	return config


def echo_seed(seed, out):
	# stdout carries the CSV when there is no --out
	click.echo("seed: {0}".format(seed), err=not out)


def parse_vector(value):
	if value is None:
		return None
	try:
		return [float(x) for x in value.strip("[]").split(",")]
	except ValueError:
		raise click.BadParameter("expected comma-separated numbers, got {0!r}".format(value))


config_options = [
	click.option("--config", "config_path", required=True, help="Simulation config JSON."),
	click.option("--replicates", type=int, help="Override the config's replicate count."),
	click.option("--seed", type=int, help="Override the config's master seed."),
	click.option("--workers", type=int, help="Worker processes (default OADLAB_WORKERS or 1)."),
]


def with_config_options(func):
	for option in reversed(config_options):
		func = option(func)
	return func


@click.group(cls=OadlabGroup)
@click.version_option(__version__, prog_name="oadlab")
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress.")
def cli(verbose):
	"""Fixed optimal and observed-information adaptive designs for linear regression."""
	logging.basicConfig(
		level=logging.DEBUG if verbose else logging.WARNING,
		format="%(levelname)s %(name)s: %(message)s",
		force=True,
	)


@cli.command()
@click.option("--model", required=True, help="treatment:4, interaction:3, quadratic:2, ...")
@click.option("--criterion", required=True, help="D, A or c:[v1,...,vp]")
@click.option("--n", "n", type=int, help="Also round the design to n observations.")
@click.option("--json", "fmt", flag_value="json", default=True, help="JSON output (default).")
@click.option("--csv", "fmt", flag_value="csv", help="One CSV row per support point.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write here instead of stdout.")
def fod(model, criterion, n, fmt, out):
	"""Solve for the fixed optimal design."""
	spec = get_model(model)
	result = solve_fod(spec, parse_criterion(criterion))
	counts = round_to_exact(result.design, n).weights if n else None

	points = []
	for i, (index, weight) in enumerate(zip(result.support, result.weights)):
		point = {
			"point": index + 1,
			"factors": spec.candidate_points[index].tolist(),
			"weight": float(weight),
		}
		if counts is not None:
			point["count"] = int(counts[i])
		points.append(point)

	if fmt == "csv":
		frame = pd.DataFrame(points)
		frame["factors"] = [" ".join("{0:g}".format(x) for x in p["factors"]) for p in points]
		write_output(frame.to_csv(index=False), out)
		return

	doc = {
		"model": spec.label,
		"criterion": criterion,
		"criterion_value": result.criterion_value,
		"iterations": result.iterations,
		"get_violation": result.get_violation,
		"support": points,
	}
	write_output(dump_json(doc), out)


@cli.command()
@click.option("--max-s", default=9, show_default=True, type=int)
@click.option("--criteria", default="D,A", show_default=True)
@click.option("--families", default="treatment,interaction,quadratic", show_default=True)
@click.option("--layout", type=click.Choice(["long", "wide"]), default="long", show_default=True)
@click.option("--quadratic-max-s", type=int, help="Largest quadratic s (default 6)")
@click.option("--workers", type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def table1(max_s, criteria, families, layout, quadratic_max_s, workers, out):
	"""R* for each model family, dimension and criterion, as CSV."""
	filters = {
		"max_s": max_s,
		"criteria": criteria,
		"families": families,
		"layout": layout,
		"quadratic_max_s": quadratic_max_s,
		"workers": workers,
	}
	columns, data, _, _, summary = run_report("table1", filters)
	write_output(report_csv(columns, data), out)
	failed = summary[1]["value"]
	if failed:
		click.secho("{0} cells failed, see the log".format(failed), fg="yellow", err=True)


@cli.command()
@with_config_options
@click.option("--out", required=True, type=click.Path(dir_okay=False), help=".csv or .json")
def simulate(config_path, replicates, seed, workers, out):
	"""Run the ROAD vs fixed design Monte Carlo comparison."""
	config = load_config(config_path, replicates, seed, workers)
	echo_seed(config.master_seed, out)
	result = run_sim(config)
	emit_results(result, out)
	click.echo("Wrote {0} rows to {1}".format(len(result.rows), out), err=True)


@cli.command()
@with_config_options
@click.option("--out", type=click.Path(dir_okay=False))
def power(config_path, replicates, seed, workers, out):
	"""Simulated and analytic power of the χ²₁ test against n."""
	config = load_config(config_path, replicates, seed, workers)
	echo_seed(config.master_seed, out)
	columns, data, _, _, summary = run_report("power_curve", {"config": config})
	write_output(report_csv(columns, data), out)
	for item in summary:
		click.echo("{0}: {1}".format(item["label"], item["value"]), err=True)


@cli.command()
@click.option("--config", "config_path", help="Simulation config JSON.")
@click.option("--figure", is_flag=True, help="All efficiency-figure cases.")
@click.option("--results", type=click.Path(exists=True, dir_okay=False), help="Saved results.")
@click.option("--replicates", type=int)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(dir_okay=False))
def curves(config_path, figure, results, replicates, seed, out):
	"""Long-format efficiency curves (eff_ci and eff_umse per n) for plotting."""
	filters = {"results": results, "figure": figure, "replicates": replicates}
	if config_path:
		filters["config"] = load_config(config_path, replicates, seed)
		echo_seed(filters["config"].master_seed, out)
	elif figure:
		# one master seed shared by every figure case
		filters["seed"] = new_seed() if seed is None else seed
		echo_seed(filters["seed"], out)
	columns, data, _, _ = run_report("efficiency_curves", filters)
	write_output(report_csv(columns, data), out)


@cli.command()
@click.option("--session", required=True, type=click.Path(dir_okay=False))
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--c", "c", help="Test cᵀβ = C0 for this comma-separated c.")
@click.option("--C0", "C0", default=0.0, show_default=True, type=float)
@click.option("--out", type=click.Path(dir_okay=False))
def fit(session, alpha, c, C0, out):
	"""Fit β by maximum likelihood to a session's observations."""
	summary = SessionController(session).summarize_fit(alpha, parse_vector(c), C0)
	write_output(dump_json(summary), out)


@cli.command("road-next")
@click.option("--session", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the recommendation as JSON.")
def road_next(session, as_json):
	"""Recommend the next observation of a live session. The file is not modified."""
	rec = SessionController(session).recommend()
	if as_json:
		click.echo(dump_json(rec.as_dict()), nl=False)
		return

	factors = ", ".join("{0:g}".format(x) for x in rec.factors)
	click.echo("next point: {0} (candidate {1}: {2})".format(rec.point, rec.candidate, factors))
	click.echo("phase: {0}, {1} observations".format(rec.phase, rec.observations))
	click.echo("omega:  " + " ".join("{0:.4f}".format(x) for x in rec.omega))
	click.echo("w*:     " + " ".join("{0:.4f}".format(x) for x in rec.w_star))
	click.echo("Q: {0:.6g}".format(rec.Q))


@cli.command()
@click.option("--model", required=True)
@click.option("--criterion", required=True)
@click.option("--error-model", required=True, help="normal, str:v or ghr:v")
@click.option("--n", "n", required=True, type=int)
@click.option("--d-scale", type=click.Choice(D_SCALES), default="root_p", show_default=True)
@click.option("--a-scale", type=click.Choice(A_SCALES), default="root", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
def curvature(model, criterion, error_model, n, d_scale, a_scale, out):
	"""Curvature of the fixed optimal design and the predicted ROAD gain at n."""
	spec = get_model(model)
	crit = parse_criterion(criterion)
	result = solve_fod(spec, crit)
	err = parse_error_model(error_model)
	report = curvature_report(spec, crit, result, err, n, d_scale=d_scale, a_scale=a_scale)
	doc = {
		"model": spec.label,
		"criterion": crit.label,
		"error_model": error_model,
		"n": report.n,
		"d_scale": report.d_scale,
		"a_scale": report.a_scale,
		"psi_star": report.psi_star,
		"R_star": report.R_star,
		"gamma_sq": report.gamma_sq,
		"h": report.h,
		"S_star": report.S_star,
		"analytic_hessian": report.analytic,
		"H_star": report.H_star.tolist(),
		"V_star": report.V_star.tolist(),
	}
	write_output(dump_json(doc), out)


def main(argv=None):
	"""Console entry point; returns the exit code."""
	try:
		rv = cli.main(args=argv, prog_name="oadlab", standalone_mode=False)
	except click.ClickException as e:
		e.show()
		return e.exit_code
	except click.Abort:
		click.echo("Aborted!", err=True)
		return 1
	return rv if isinstance(rv, int) else 0
