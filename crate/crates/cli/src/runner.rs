//! Task resolution and execution: builds the model, resolves every task's
//! parameters up front, runs the tasks in order and writes the report bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use neutral_sde::coupling::{
    self, default_tolerance, neutral_identity_check, run_coupling, Envelope,
};
use neutral_sde::estimators;
use neutral_sde::model::ConditionReport;
use neutral_sde::observables::{self, Observable};
use neutral_sde::simulate::{derive_seed, generate_noise, steps_for};
use neutral_sde::{ModelSpec, Segment};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;

/// Exit discipline: configuration and resolution problems are validation
/// errors (exit 2), model/simulation errors during execution are runtime
/// faults (exit 3), and failed pass semantics exit 1.
pub enum RunError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

pub struct RunOutcome {
    pub all_passed: bool,
}

enum ResolvedTask {
    CheckConditions,
    VerifyDissipativity {
        samples: usize,
        radius: f64,
    },
    VerifyH2 {
        samples: usize,
        radius: f64,
    },
    Simulate {
        xi: Segment,
        horizon: f64,
        stream: u64,
        gamma: bool,
    },
    GammaConsistency {
        xi: Segment,
        horizon: f64,
        stream: u64,
        max_defect: Option<f64>,
    },
    Coupling {
        xi: Segment,
        eta: Segment,
        t: f64,
        stream: u64,
        tol: Option<f64>,
    },
    Novikov {
        xi: Segment,
        eta: Segment,
        t: f64,
        trials: usize,
    },
    Contraction {
        xi: Segment,
        eta: Segment,
        horizon: f64,
    },
    ExpMoment {
        xi: Segment,
        epsilon: f64,
        t_grid: Vec<f64>,
        trials: usize,
    },
    Harnack {
        observable: String,
        f: Observable,
        xi: Segment,
        eta: Segment,
        t_total: f64,
        c: Option<f64>,
        factor: f64,
        trials: usize,
    },
    LawCheck {
        xi: Segment,
        eta: Segment,
        t: f64,
        observables: Vec<(String, Observable)>,
        trials: usize,
    },
    TvDecay {
        xi: Segment,
        eta: Segment,
        t_grid: Vec<f64>,
        trials: usize,
        fit_skip: usize,
    },
    Wasserstein {
        xi: Segment,
        t1_grid: Vec<f64>,
        delta: f64,
        trials: usize,
    },
    L2Decay {
        observable: String,
        f: Observable,
        t_grid: Vec<f64>,
        warmup: f64,
        outer: usize,
        inner: usize,
        h: f64,
    },
    HyperCheck {
        observable: String,
        f: Observable,
        t: f64,
        warmup: f64,
        outer: usize,
        inner: usize,
        h: f64,
    },
}

struct TaskOutput {
    report: serde_json::Value,
    pass: Option<bool>,
    /// (file suffix, csv text)
    curves: Vec<(String, String)>,
}

#[derive(Serialize)]
struct ManifestTask {
    index: usize,
    name: String,
    pass: Option<bool>,
}

pub fn run(
    config_path: &Path,
    output_override: Option<&Path>,
    seed_override: Option<u64>,
    workers: Option<usize>,
) -> Result<RunOutcome, RunError> {
    // --- validation phase ---
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))
        .map_err(RunError::Validation)?;
    let config = ExperimentConfig::parse(&text).map_err(RunError::Validation)?;
    config.validate().map_err(RunError::Validation)?;
    let spec = config.build_model().map_err(RunError::Validation)?;
    let master_seed = seed_override.unwrap_or(config.seeds.master);
    let resolved: Vec<ResolvedTask> = config
        .tasks
        .iter()
        .map(|task| resolve(&config, &spec, &task.name, &task.params))
        .collect::<anyhow::Result<_>>()
        .map_err(RunError::Validation)?;

    let out_dir: PathBuf = output_override
        .map(Path::to_path_buf)
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(RunError::Validation)?;

    // --- execution phase ---
    let condition = spec.check_conditions();
    let want_json = config.output.formats.iter().any(|f| f == "json");
    let want_csv = config.output.formats.iter().any(|f| f == "csv");
    let mut manifest_tasks = Vec::new();
    let mut all_passed = true;
    for (index, (task, section)) in resolved.iter().zip(&config.tasks).enumerate() {
        let seed = derive_seed(master_seed, index as u64);
        let output = execute(&spec, &condition, task, seed)
            .map_err(|e| RunError::Runtime(anyhow!("task {index} ({}): {e}", section.name)))?;
        if output.pass == Some(false) {
            all_passed = false;
        }
        let stem = format!("{index:02}_{}", section.name);
        if want_json {
            let wrapped = json!({
                "task": section.name,
                "index": index,
                "seed": seed,
                "params": section.params.clone(),
                "condition": condition,
                "report": output.report,
                "pass": output.pass,
            });
            let path = out_dir.join(format!("{stem}.json"));
            let mut body = serde_json::to_string_pretty(&wrapped).expect("reports serialize");
            body.push('\n');
            fs::write(&path, body)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(RunError::Runtime)?;
        }
        if want_csv {
            for (suffix, csv) in &output.curves {
                let path = out_dir.join(format!("{stem}{suffix}.csv"));
                fs::write(&path, csv)
                    .with_context(|| format!("cannot write {}", path.display()))
                    .map_err(RunError::Runtime)?;
            }
        }
        manifest_tasks.push(ManifestTask {
            index,
            name: section.name.clone(),
            pass: output.pass,
        });
    }

    let manifest = json!({
        "config_hash": config_hash(&text),
        "master_seed": master_seed,
        "workers": workers,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0),
        "tasks": manifest_tasks,
        "all_passed": all_passed,
    });
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    fs::write(out_dir.join("manifest.json"), body)
        .context("cannot write manifest")
        .map_err(RunError::Runtime)?;

    Ok(RunOutcome { all_passed })
}

fn config_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::new(), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

// --- parameter resolution ---

fn resolve(
    config: &ExperimentConfig,
    spec: &ModelSpec,
    name: &str,
    params: &toml::Table,
) -> anyhow::Result<ResolvedTask> {
    let default_trials = config.seeds.trials;
    let segment = |key: &str| -> anyhow::Result<Segment> {
        let value = params
            .get(key)
            .ok_or_else(|| anyhow!("missing parameter '{key}'"))?;
        config.segment_from_value(spec, value)
    };
    match name {
        "check_conditions" => Ok(ResolvedTask::CheckConditions),
        "verify_dissipativity" => Ok(ResolvedTask::VerifyDissipativity {
            samples: opt_usize(params, "samples")?.unwrap_or(default_trials),
            radius: opt_f64(params, "radius")?.unwrap_or(2.0),
        }),
        "verify_h2" => Ok(ResolvedTask::VerifyH2 {
            samples: opt_usize(params, "samples")?.unwrap_or(default_trials),
            radius: opt_f64(params, "radius")?.unwrap_or(2.0),
        }),
        "simulate" => Ok(ResolvedTask::Simulate {
            xi: segment("xi")?,
            horizon: opt_f64(params, "horizon")?.unwrap_or(config.grid.horizon),
            stream: opt_u64(params, "stream")?.unwrap_or(0),
            gamma: opt_bool(params, "gamma")?.unwrap_or(false),
        }),
        "gamma_consistency" => Ok(ResolvedTask::GammaConsistency {
            xi: segment("xi")?,
            horizon: opt_f64(params, "horizon")?.unwrap_or(config.grid.horizon),
            stream: opt_u64(params, "stream")?.unwrap_or(0),
            max_defect: opt_f64(params, "max_defect")?,
        }),
        "coupling" => Ok(ResolvedTask::Coupling {
            xi: segment("xi")?,
            eta: segment("eta")?,
            t: req_f64(params, "t")?,
            stream: opt_u64(params, "stream")?.unwrap_or(0),
            tol: opt_f64(params, "tol")?,
        }),
        "novikov_diagnostic" => Ok(ResolvedTask::Novikov {
            xi: segment("xi")?,
            eta: segment("eta")?,
            t: req_f64(params, "t")?,
            trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
        }),
        "contraction_curve" => Ok(ResolvedTask::Contraction {
            xi: segment("xi")?,
            eta: segment("eta")?,
            horizon: opt_f64(params, "horizon")?.unwrap_or(config.grid.horizon),
        }),
        "exp_moment" => {
            let epsilon = match opt_f64(params, "epsilon")? {
                Some(eps) => eps,
                None => {
                    let rate = spec.check_conditions().certified_rate().ok_or_else(|| {
                        anyhow!("exp_moment without 'epsilon' needs a feasible rate certificate")
                    })?;
                    0.1 * rate / spec.noise_trace()
                }
            };
            Ok(ResolvedTask::ExpMoment {
                xi: segment("xi")?,
                epsilon,
                t_grid: f64_array(params, "t_grid")?,
                trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
            })
        }
        "harnack_check" => {
            let (observable, f) = observable_param(params)?;
            Ok(ResolvedTask::Harnack {
                observable,
                f,
                xi: segment("xi")?,
                eta: segment("eta")?,
                t_total: req_f64(params, "t_total")?,
                c: opt_f64(params, "c")?,
                factor: opt_f64(params, "factor")?.unwrap_or(1.5),
                trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
            })
        }
        "reweighted_law_check" => {
            let names = string_array(params, "observables")?;
            let mut pairs = Vec::with_capacity(names.len());
            for name in names {
                let f = observables::by_name(&name, None)
                    .ok_or_else(|| anyhow!("unknown observable '{name}'"))?;
                pairs.push((name, f));
            }
            Ok(ResolvedTask::LawCheck {
                xi: segment("xi")?,
                eta: segment("eta")?,
                t: req_f64(params, "t")?,
                observables: pairs,
                trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
            })
        }
        "tv_decay" => Ok(ResolvedTask::TvDecay {
            xi: segment("xi")?,
            eta: segment("eta")?,
            t_grid: f64_array(params, "t_grid")?,
            trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
            fit_skip: opt_usize(params, "fit_skip")?.unwrap_or(0),
        }),
        "wasserstein_cauchy" => Ok(ResolvedTask::Wasserstein {
            xi: segment("xi")?,
            t1_grid: f64_array(params, "t1_grid")?,
            delta: opt_f64(params, "delta")?.unwrap_or(2.0 * spec.delay()),
            trials: opt_usize(params, "trials")?.unwrap_or(default_trials),
        }),
        "l2_decay" => {
            let (observable, f) = observable_param(params)?;
            Ok(ResolvedTask::L2Decay {
                observable,
                f,
                t_grid: f64_array(params, "t_grid")?,
                warmup: req_f64(params, "warmup")?,
                outer: opt_usize(params, "trials_outer")?.unwrap_or(200),
                inner: opt_usize(params, "trials_inner")?.unwrap_or(200),
                h: config.grid.h,
            })
        }
        "hyper_check" => {
            let (observable, f) = observable_param(params)?;
            Ok(ResolvedTask::HyperCheck {
                observable,
                f,
                t: req_f64(params, "t")?,
                warmup: req_f64(params, "warmup")?,
                outer: opt_usize(params, "trials_outer")?.unwrap_or(200),
                inner: opt_usize(params, "trials_inner")?.unwrap_or(200),
                h: config.grid.h,
            })
        }
        other => bail!("unknown task '{other}'"),
    }
}

fn observable_param(params: &toml::Table) -> anyhow::Result<(String, Observable)> {
    let name = req_string(params, "observable")?;
    let parameter = opt_f64(params, "observable_param")?;
    let f = observables::by_name(&name, parameter)
        .ok_or_else(|| anyhow!("unknown observable '{name}'"))?;
    Ok((name, f))
}

fn number(value: &toml::Value) -> Option<f64> {
    match value {
        toml::Value::Float(v) => Some(*v),
        toml::Value::Integer(v) => Some(*v as f64),
        _ => None,
    }
}

fn opt_f64(params: &toml::Table, key: &str) -> anyhow::Result<Option<f64>> {
    params
        .get(key)
        .map(|v| number(v).ok_or_else(|| anyhow!("parameter '{key}' must be a number")))
        .transpose()
}

fn req_f64(params: &toml::Table, key: &str) -> anyhow::Result<f64> {
    opt_f64(params, key)?.ok_or_else(|| anyhow!("missing parameter '{key}'"))
}

fn opt_usize(params: &toml::Table, key: &str) -> anyhow::Result<Option<usize>> {
    match params.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
        Some(_) => bail!("parameter '{key}' must be a nonnegative integer"),
    }
}

fn opt_u64(params: &toml::Table, key: &str) -> anyhow::Result<Option<u64>> {
    match params.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
        Some(_) => bail!("parameter '{key}' must be a nonnegative integer"),
    }
}

fn opt_bool(params: &toml::Table, key: &str) -> anyhow::Result<Option<bool>> {
    match params.get(key) {
        None => Ok(None),
        Some(toml::Value::Boolean(v)) => Ok(Some(*v)),
        Some(_) => bail!("parameter '{key}' must be a boolean"),
    }
}

fn req_string(params: &toml::Table, key: &str) -> anyhow::Result<String> {
    match params.get(key) {
        Some(toml::Value::String(s)) => Ok(s.clone()),
        Some(_) => bail!("parameter '{key}' must be a string"),
        None => bail!("missing parameter '{key}'"),
    }
}

fn f64_array(params: &toml::Table, key: &str) -> anyhow::Result<Vec<f64>> {
    match params.get(key) {
        Some(toml::Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| number(v).ok_or_else(|| anyhow!("'{key}' entries must be numbers")))
            .collect(),
        Some(_) => bail!("parameter '{key}' must be a nonempty array of numbers"),
        None => bail!("missing parameter '{key}'"),
    }
}

fn string_array(params: &toml::Table, key: &str) -> anyhow::Result<Vec<String>> {
    match params.get(key) {
        Some(toml::Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s.clone()),
                _ => bail!("'{key}' entries must be strings"),
            })
            .collect(),
        Some(_) => bail!("parameter '{key}' must be a nonempty array of strings"),
        None => bail!("missing parameter '{key}'"),
    }
}

// --- execution ---

fn execute(
    spec: &ModelSpec,
    condition: &ConditionReport,
    task: &ResolvedTask,
    seed: u64,
) -> anyhow::Result<TaskOutput> {
    match task {
        ResolvedTask::CheckConditions => {
            let report = json!({
                "condition": condition,
                "sigma_condition_number": spec.sigma_condition(),
                "constants": spec.constants(),
                "kappa": spec.kappa(),
                "r0": spec.delay(),
            });
            Ok(TaskOutput {
                report,
                pass: Some(condition.feasible),
                curves: vec![],
            })
        }
        ResolvedTask::VerifyDissipativity { samples, radius } => {
            let report = spec.verify_dissipativity(*samples, *radius, seed);
            Ok(TaskOutput {
                pass: Some(report.violations == 0),
                report: serde_json::to_value(report)?,
                curves: vec![],
            })
        }
        ResolvedTask::VerifyH2 { samples, radius } => {
            let report = spec.verify_h2(*samples, *radius, seed);
            Ok(TaskOutput {
                pass: Some(report.violations == 0),
                report: serde_json::to_value(report)?,
                curves: vec![],
            })
        }
        ResolvedTask::Simulate {
            xi,
            horizon,
            stream,
            gamma,
        } => {
            let steps = steps_for(*horizon, xi.step())?;
            let noise = generate_noise(seed, *stream, steps, xi.step(), spec.dim());
            let traj = neutral_sde::integrate(spec, xi, *horizon, &noise)?;
            let csv = trajectory_csv(&traj, gamma.then_some(spec.kappa()));
            let report = json!({
                "seed": seed,
                "stream": stream,
                "h": xi.step(),
                "kappa": spec.kappa(),
                "r0": spec.delay(),
                "model": spec.name(),
                "dim": spec.dim(),
                "window_intervals": xi.intervals(),
                "steps": traj.steps(),
                "horizon": horizon,
                "final_sup_norm": traj.final_segment().uniform_norm(),
            });
            Ok(TaskOutput {
                report,
                pass: None,
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::GammaConsistency {
            xi,
            horizon,
            stream,
            max_defect,
        } => {
            let steps = steps_for(*horizon, xi.step())?;
            let noise = generate_noise(seed, *stream, steps, xi.step(), spec.dim());
            let traj = neutral_sde::integrate(spec, xi, *horizon, &noise)?;
            let defect = neutral_sde::simulate::gamma_consistency(&traj, spec, &noise)?;
            let pass = max_defect.map(|bound| defect <= bound);
            Ok(TaskOutput {
                report: json!({ "max_defect": defect, "bound": max_defect, "h": xi.step() }),
                pass,
                curves: vec![],
            })
        }
        ResolvedTask::Coupling {
            xi,
            eta,
            t,
            stream,
            tol,
        } => {
            let h = xi.step();
            let steps = steps_for(*t, h)? + xi.intervals();
            let noise = generate_noise(seed, *stream, steps, h, spec.dim());
            let gap0 = (xi.latest() - eta.latest()).norm();
            let tol = tol.unwrap_or_else(|| default_tolerance(gap0));
            let trace = run_coupling(spec, xi, eta, *t, &noise, tol)?;
            let identity_defect = neutral_identity_check(&trace);
            let envelope_fn =
                Envelope::new(spec.constants().kappa1, xi.latest(), eta.latest(), *t)?;
            let gaps = trace.gaps();
            let max_excess = gaps
                .iter()
                .enumerate()
                .map(|(k, gap)| gap - envelope_fn.value(k as f64 * h))
                .fold(f64::NEG_INFINITY, f64::max);
            let pass = trace.tau.map(|tau| tau <= *t + h + 1e-12);
            let report = json!({
                "tau": trace.tau,
                "log_density": trace.log_density,
                "density": trace.density,
                "neutral_identity_defect": identity_defect,
                "max_envelope_excess": max_excess,
                "tol": tol,
                "t": t,
                "h": h,
            });
            let csv = coupling_csv(&trace);
            Ok(TaskOutput {
                report,
                pass: Some(pass.unwrap_or(false)),
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::Novikov { xi, eta, t, trials } => {
            let report = coupling::novikov_diagnostic(spec, xi, eta, *t, *trials, seed)?;
            Ok(TaskOutput {
                pass: Some(!report.divergence_flag),
                report: serde_json::to_value(report)?,
                curves: vec![],
            })
        }
        ResolvedTask::Contraction { xi, eta, horizon } => {
            let report = estimators::contraction_curve(spec, xi, eta, *horizon)?;
            let mut csv = String::from("t,squared_sup_gap\n");
            for (t, v) in &report.curve {
                let _ = writeln!(csv, "{t},{v}");
            }
            Ok(TaskOutput {
                pass: report.pass,
                report: serde_json::to_value(&report)?,
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::ExpMoment {
            xi,
            epsilon,
            t_grid,
            trials,
        } => {
            let mut reports = Vec::with_capacity(t_grid.len());
            let mut curve = Vec::with_capacity(t_grid.len());
            let mut ok = true;
            for (i, &t) in t_grid.iter().enumerate() {
                let report = estimators::exp_moment(
                    spec,
                    xi,
                    *epsilon,
                    t,
                    *trials,
                    derive_seed(seed, i as u64),
                )?;
                ok &= report.pass.unwrap_or(false);
                curve.push((t, report.point_estimate));
                reports.push(report);
            }
            let slope = neutral_sde::stats::fit_log_slope(&curve);
            if t_grid.len() >= 2 {
                ok &= slope.map(|s| s <= 0.05).unwrap_or(false);
            }
            let mut csv = String::from("t,estimate,std_error\n");
            for (point, report) in curve.iter().zip(&reports) {
                let _ = writeln!(csv, "{},{},{}", point.0, point.1, report.std_error);
            }
            Ok(TaskOutput {
                report: json!({
                    "epsilon": epsilon,
                    "points": reports,
                    "log_slope": slope,
                }),
                pass: Some(ok),
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::Harnack {
            observable,
            f,
            xi,
            eta,
            t_total,
            c,
            factor,
            trials,
        } => {
            let (stage1, stage2) = match c {
                Some(c) => {
                    let only =
                        estimators::harnack_check(spec, f, xi, eta, *t_total, *c, *trials, seed)?;
                    (None, only)
                }
                None => {
                    let (one, two) = estimators::harnack_two_stage(
                        spec, f, xi, eta, *t_total, *factor, *trials, seed,
                    )?;
                    (Some(one), two)
                }
            };
            Ok(TaskOutput {
                pass: Some(stage2.pass),
                report: json!({
                    "observable": observable,
                    "measure_stage": stage1,
                    "verify_stage": stage2,
                }),
                curves: vec![],
            })
        }
        ResolvedTask::LawCheck {
            xi,
            eta,
            t,
            observables,
            trials,
        } => {
            let checks =
                estimators::reweighted_law_check(spec, xi, eta, *t, observables, *trials, seed)?;
            let pass = checks.iter().all(|c| c.pass && c.exclusion_rate < 0.01);
            Ok(TaskOutput {
                pass: Some(pass),
                report: serde_json::to_value(&checks)?,
                curves: vec![],
            })
        }
        ResolvedTask::TvDecay {
            xi,
            eta,
            t_grid,
            trials,
            fit_skip,
        } => {
            let report = estimators::tv_decay(spec, xi, eta, t_grid, *trials, seed, *fit_skip)?;
            let mut csv = String::from("t,bound,std_error,excluded\n");
            for p in &report.points {
                let _ = writeln!(csv, "{},{},{},{}", p.t, p.bound, p.std_error, p.excluded);
            }
            Ok(TaskOutput {
                pass: report.pass,
                report: serde_json::to_value(&report)?,
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::Wasserstein {
            xi,
            t1_grid,
            delta,
            trials,
        } => {
            let report =
                estimators::wasserstein_cauchy_curve(spec, xi, t1_grid, *delta, *trials, seed)?;
            let mut csv = String::from("t1,t2,bound,std_error\n");
            for p in &report.points {
                let _ = writeln!(csv, "{},{},{},{}", p.t1, p.t2, p.bound, p.std_error);
            }
            Ok(TaskOutput {
                pass: report.pass,
                report: serde_json::to_value(&report)?,
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::L2Decay {
            observable,
            f,
            t_grid,
            warmup,
            outer,
            inner,
            h,
        } => {
            let report = estimators::l2_decay(spec, f, t_grid, *warmup, *outer, *inner, *h, seed)?;
            let mut csv = String::from("t,variance,std_error\n");
            for p in &report.points {
                let _ = writeln!(csv, "{},{},{}", p.t, p.variance, p.std_error);
            }
            Ok(TaskOutput {
                pass: report.pass,
                report: json!({ "observable": observable, "decay": report }),
                curves: vec![(String::new(), csv)],
            })
        }
        ResolvedTask::HyperCheck {
            observable,
            f,
            t,
            warmup,
            outer,
            inner,
            h,
        } => {
            let report = estimators::hyper_check(spec, f, *t, *warmup, *outer, *inner, *h, seed)?;
            Ok(TaskOutput {
                pass: Some(report.pass),
                report: json!({ "observable": observable, "check": report }),
                curves: vec![],
            })
        }
    }
}

fn trajectory_csv(traj: &neutral_sde::Trajectory, gamma_kappa: Option<f64>) -> String {
    let dim = traj.dim();
    let mut header = String::from("time");
    for i in 1..=dim {
        let _ = write!(header, ",x_{i}");
    }
    if gamma_kappa.is_some() {
        for i in 1..=dim {
            let _ = write!(header, ",gamma_{i}");
        }
    }
    header.push('\n');
    let gamma = gamma_kappa.map(|kappa| traj.gamma(kappa));
    let m = traj.history() as isize;
    let mut out = header;
    for (row, time) in traj.times().iter().enumerate() {
        let k = row as isize - m;
        let _ = write!(out, "{time}");
        for v in traj.state(k).iter() {
            let _ = write!(out, ",{v}");
        }
        if let Some(gamma) = &gamma {
            if k >= 0 {
                for v in gamma[k as usize].iter() {
                    let _ = write!(out, ",{v}");
                }
            } else {
                for _ in 0..dim {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    out
}

fn coupling_csv(trace: &neutral_sde::coupling::CouplingTrace) -> String {
    let dim = trace.x.dim();
    let mut out = String::from("time");
    for i in 1..=dim {
        let _ = write!(out, ",x_{i}");
    }
    for i in 1..=dim {
        let _ = write!(out, ",y_{i}");
    }
    out.push_str(",gap,envelope,g\n");
    let m = trace.x.history() as isize;
    let h = trace.step();
    let design_steps = (trace.design_horizon() / h).round() as isize;
    for (row, time) in trace.x.times().iter().enumerate() {
        let k = row as isize - m;
        let _ = write!(out, "{time}");
        for v in trace.x.state(k).iter() {
            let _ = write!(out, ",{v}");
        }
        for v in trace.y.state(k).iter() {
            let _ = write!(out, ",{v}");
        }
        if k >= 0 {
            let gap = (trace.x.state(k) - trace.y.state(k)).norm();
            let _ = write!(out, ",{gap}");
            if k <= design_steps {
                let _ = write!(out, ",{}", trace.envelope[k as usize]);
            } else {
                out.push(',');
            }
            let _ = write!(out, ",{}", trace.g_values[k as usize]);
        } else {
            out.push_str(",,,");
        }
        out.push('\n');
    }
    out
}
