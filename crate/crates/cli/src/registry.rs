//! Task, model and observable registries backing `list` and `describe`,
//! and the schema check applied to task parameter tables.

use anyhow::bail;

pub struct ParamInfo {
    pub name: &'static str,
    pub required: bool,
    pub doc: &'static str,
}

pub struct TaskInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub pass_semantics: &'static str,
    pub params: &'static [ParamInfo],
}

/// Stable-ordered task registry.
pub fn tasks() -> &'static [TaskInfo] {
    &TASKS
}

static TASKS: [TaskInfo; 15] = [
    TaskInfo {
        name: "check_conditions",
        summary: "evaluate the rate condition and the certified rate for the model constants",
        pass_semantics: "feasible gate and positive certified rate",
        params: &[],
    },
    TaskInfo {
        name: "verify_dissipativity",
        summary: "sampling falsifier for the declared one-sided constant of the pointwise drift",
        pass_semantics: "zero violations",
        params: &[
            ParamInfo {
                name: "samples",
                required: false,
                doc: "sampled pairs (default seeds.trials)",
            },
            ParamInfo {
                name: "radius",
                required: false,
                doc: "sampling cube radius (default 2.0)",
            },
        ],
    },
    TaskInfo {
        name: "verify_h2",
        summary: "sampling falsifier for the declared segment dissipativity constants",
        pass_semantics: "zero violations",
        params: &[
            ParamInfo {
                name: "samples",
                required: false,
                doc: "sampled segment pairs (default seeds.trials)",
            },
            ParamInfo {
                name: "radius",
                required: false,
                doc: "sampling cube radius (default 2.0)",
            },
        ],
    },
    TaskInfo {
        name: "simulate",
        summary: "integrate one path and export it (CSV plus JSON sidecar)",
        pass_semantics: "none (diagnostic export)",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment: number or array",
            },
            ParamInfo {
                name: "horizon",
                required: false,
                doc: "time span (default grid.horizon)",
            },
            ParamInfo {
                name: "stream",
                required: false,
                doc: "noise stream id (default 0)",
            },
            ParamInfo {
                name: "gamma",
                required: false,
                doc: "true to export the neutral diagnostic column",
            },
        ],
    },
    TaskInfo {
        name: "gamma_consistency",
        summary: "maximum defect of the integral identity for X + L X_t along one path",
        pass_semantics: "defect below max_defect when given, else none",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment: number or array",
            },
            ParamInfo {
                name: "horizon",
                required: false,
                doc: "time span (default grid.horizon)",
            },
            ParamInfo {
                name: "stream",
                required: false,
                doc: "noise stream id (default 0)",
            },
            ParamInfo {
                name: "max_defect",
                required: false,
                doc: "optional acceptance threshold",
            },
        ],
    },
    TaskInfo {
        name: "coupling",
        summary: "one coupling run: paired paths, coupling time, envelope, density",
        pass_semantics: "paths couple no later than one step past the design horizon",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment of the target path",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "initial segment of the auxiliary path",
            },
            ParamInfo {
                name: "t",
                required: true,
                doc: "design horizon of the coupling",
            },
            ParamInfo {
                name: "stream",
                required: false,
                doc: "noise stream id (default 0)",
            },
            ParamInfo {
                name: "tol",
                required: false,
                doc: "coupling threshold (default 1e-8 (1 + gap))",
            },
        ],
    },
    TaskInfo {
        name: "novikov_diagnostic",
        summary: "Monte Carlo check of the exponential integrability behind the density",
        pass_semantics: "no divergence flag",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment of the target path",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "initial segment of the auxiliary path",
            },
            ParamInfo {
                name: "t",
                required: true,
                doc: "design horizon of the coupling",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials (default seeds.trials)",
            },
        ],
    },
    TaskInfo {
        name: "contraction_curve",
        summary: "pathwise squared sup-norm gap of the synchronous difference and its rate",
        pass_semantics: "fitted rate at most -0.9 certified rate (when feasible)",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "first initial segment",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "second initial segment",
            },
            ParamInfo {
                name: "horizon",
                required: false,
                doc: "curve span (default grid.horizon)",
            },
        ],
    },
    TaskInfo {
        name: "exp_moment",
        summary: "E exp(eps ||X_t||_inf^2) across a time grid with heavy-tail flags",
        pass_semantics: "finite, no heavy tail, and flat log-estimates across the grid",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment",
            },
            ParamInfo {
                name: "epsilon",
                required: false,
                doc: "exponent weight (default 0.1 lambda / trace(sigma sigma^T))",
            },
            ParamInfo {
                name: "t_grid",
                required: true,
                doc: "array of evaluation times",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials (default seeds.trials)",
            },
        ],
    },
    TaskInfo {
        name: "harnack_check",
        summary: "two-stage Harnack inequality check with a measured then frozen constant",
        pass_semantics: "frozen constant verifies on fresh seeds",
        params: &[
            ParamInfo {
                name: "observable",
                required: true,
                doc: "observable name (see list)",
            },
            ParamInfo {
                name: "observable_param",
                required: false,
                doc: "scalar parameter for parametric observables",
            },
            ParamInfo {
                name: "xi",
                required: true,
                doc: "left initial segment",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "right initial segment",
            },
            ParamInfo {
                name: "t_total",
                required: true,
                doc: "semigroup time, must exceed r0",
            },
            ParamInfo {
                name: "c",
                required: false,
                doc: "fixed constant; omits the measuring stage",
            },
            ParamInfo {
                name: "factor",
                required: false,
                doc: "freeze factor over the measured constant (default 1.5)",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials per stage (default seeds.trials)",
            },
        ],
    },
    TaskInfo {
        name: "reweighted_law_check",
        summary: "density-reweighted coupling expectations against plain runs",
        pass_semantics: "every observable within 3 combined SE and exclusions below 1%",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment of the target path",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "initial segment of the auxiliary path",
            },
            ParamInfo {
                name: "t",
                required: true,
                doc: "design horizon of the coupling",
            },
            ParamInfo {
                name: "observables",
                required: true,
                doc: "array of observable names",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials (default seeds.trials)",
            },
        ],
    },
    TaskInfo {
        name: "tv_decay",
        summary: "coupling bound E|1 - R| on the total-variation distance across horizons",
        pass_semantics: "significant decreasing trend and rate within 20% of lambda/2",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment of the target path",
            },
            ParamInfo {
                name: "eta",
                required: true,
                doc: "initial segment of the auxiliary path",
            },
            ParamInfo {
                name: "t_grid",
                required: true,
                doc: "array of design horizons",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials per point (default seeds.trials)",
            },
            ParamInfo {
                name: "fit_skip",
                required: false,
                doc: "grid points excluded from the fit (default 0)",
            },
        ],
    },
    TaskInfo {
        name: "wasserstein_cauchy",
        summary: "synchronous restart bound on the Wasserstein distance across overlaps",
        pass_semantics: "significant decreasing trend and rate within 25% of lambda/2",
        params: &[
            ParamInfo {
                name: "xi",
                required: true,
                doc: "initial segment",
            },
            ParamInfo {
                name: "t1_grid",
                required: true,
                doc: "array of overlap lengths",
            },
            ParamInfo {
                name: "delta",
                required: false,
                doc: "restart offset t2 - t1 (default 2 r0)",
            },
            ParamInfo {
                name: "trials",
                required: false,
                doc: "Monte Carlo trials per point (default seeds.trials)",
            },
        ],
    },
    TaskInfo {
        name: "l2_decay",
        summary: "variance of P_t f under the warmed-up empirical law across times",
        pass_semantics: "fitted rate within 30% of the certified rate",
        params: &[
            ParamInfo {
                name: "observable",
                required: true,
                doc: "observable name",
            },
            ParamInfo {
                name: "observable_param",
                required: false,
                doc: "scalar parameter for parametric observables",
            },
            ParamInfo {
                name: "t_grid",
                required: true,
                doc: "array of evaluation times",
            },
            ParamInfo {
                name: "warmup",
                required: true,
                doc: "warmup time before sampling the chain",
            },
            ParamInfo {
                name: "trials_outer",
                required: false,
                doc: "outer samples (default 200)",
            },
            ParamInfo {
                name: "trials_inner",
                required: false,
                doc: "inner trials per sample (default 200)",
            },
        ],
    },
    TaskInfo {
        name: "hyper_check",
        summary: "necessary hypercontractivity condition ||P_t f||_4 <= ||f||_2 on one observable",
        pass_semantics: "4-norm at most the 2-norm plus 3 combined SE",
        params: &[
            ParamInfo {
                name: "observable",
                required: true,
                doc: "observable name",
            },
            ParamInfo {
                name: "observable_param",
                required: false,
                doc: "scalar parameter for parametric observables",
            },
            ParamInfo {
                name: "t",
                required: true,
                doc: "semigroup time",
            },
            ParamInfo {
                name: "warmup",
                required: true,
                doc: "warmup time before sampling the chain",
            },
            ParamInfo {
                name: "trials_outer",
                required: false,
                doc: "outer samples (default 200)",
            },
            ParamInfo {
                name: "trials_inner",
                required: false,
                doc: "inner trials per sample (default 200)",
            },
        ],
    },
];

pub fn is_known_task(name: &str) -> bool {
    tasks().iter().any(|t| t.name == name)
}

pub fn task_info(name: &str) -> Option<&'static TaskInfo> {
    tasks().iter().find(|t| t.name == name)
}

/// Reject unknown and missing parameters before anything runs.
pub fn validate_params(task: &str, params: &toml::Table) -> anyhow::Result<()> {
    let info = task_info(task).expect("caller checked the task name");
    for key in params.keys() {
        if !info.params.iter().any(|p| p.name == key) {
            bail!("task '{task}' has no parameter '{key}'");
        }
    }
    for p in info.params.iter().filter(|p| p.required) {
        if !params.contains_key(p.name) {
            bail!("task '{task}' requires parameter '{}'", p.name);
        }
    }
    Ok(())
}

/// Human-readable registry dump for `list`.
pub fn render_list() -> String {
    let mut out = String::new();
    out.push_str("models:\n");
    for model in neutral_sde::model::builtin_catalog() {
        out.push_str(&format!("  {:<14} {}\n", model.name, model.summary));
        for (name, default, doc) in model.params {
            out.push_str(&format!("      {name:<10} (default {default}) {doc}\n"));
        }
    }
    out.push_str("\ntasks:\n");
    for task in tasks() {
        out.push_str(&format!("  {:<22} {}\n", task.name, task.summary));
    }
    out.push_str("\nobservables:\n");
    for obs in neutral_sde::observables::catalog() {
        let param = obs
            .parameter
            .map(|p| format!(" (parameter: {p})"))
            .unwrap_or_default();
        out.push_str(&format!("  {:<22} {}{}\n", obs.name, obs.summary, param));
    }
    out
}

/// Human-readable task description for `describe`.
pub fn render_describe(name: &str) -> Option<String> {
    let info = task_info(name)?;
    let mut out = format!(
        "{}\n  {}\n  pass: {}\n",
        info.name, info.summary, info.pass_semantics
    );
    if info.params.is_empty() {
        out.push_str("  parameters: none\n");
    } else {
        out.push_str("  parameters:\n");
        for p in info.params {
            let tag = if p.required { "required" } else { "optional" };
            out.push_str(&format!("    {:<18} [{}] {}\n", p.name, tag, p.doc));
        }
    }
    Some(out)
}
