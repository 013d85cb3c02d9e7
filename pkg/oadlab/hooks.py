from . import __version__ as app_version  # noqa

app_name = "oadlab"
app_title = "OAD Lab"
app_publisher = "OAD Lab contributors"
app_description = "Observed-information adaptive designs for linear regression"
app_license = "GNU GPL V3"

# Model families
# --------------
# `treatment:4`, `interaction:3`, `quadratic:2`, `custom:path/to/spec.json`

model_builders = {
	"treatment": "oadlab.oadlab.models.models.build_treatment",
	"interaction": "oadlab.oadlab.models.models.build_interaction",
	"quadratic": "oadlab.oadlab.models.models.build_quadratic",
	"custom": "oadlab.oadlab.models.models.load_custom",
}

# Error models
# ------------
# `normal`, `str:1`, `ghr:0.25`

error_models = {
	"normal": "normal",
	"str": "student_t",
	"ghr": "gamma_hyperbola",
}

# Criteria
# --------

# Names Criterion accepts; "C" is the c criterion with its coefficient vector.
criteria = ["D", "A", "C"]

# Analytic design Hessians, keyed by model family then criterion.
# Anything not listed here falls back to the Richardson finite-difference Hessian.

analytic_hessians = {
	"treatment": {
		"D": "oadlab.oadlab.fod_solver.fod_solver.treatment_d_hessian",
		"A": "oadlab.oadlab.fod_solver.fod_solver.treatment_a_hessian",
	},
}

# Reports
# -------

reports = {
	"table1": "oadlab.oadlab.report.table1.table1.execute",
	"power_curve": "oadlab.oadlab.report.power_curve.power_curve.execute",
	"efficiency_curves": "oadlab.oadlab.report.efficiency_curves.efficiency_curves.execute",
}
