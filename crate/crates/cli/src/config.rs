//! Experiment configuration: a nested key-value file (TOML), validated
//! before anything runs.

use std::collections::BTreeMap;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use neutral_sde::model::{builtin_model, linear_model, HypothesisConstants};
use neutral_sde::{ModelSpec, Segment};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tasks: Vec<TaskSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Catalog model name; mutually exclusive with `inline`.
    pub name: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Inline linear model given by its coefficient tables.
    pub inline: Option<InlineModel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub name: String,
    /// Pointwise drift matrix `A` in `Z(x) = A x`.
    pub state_matrix: Vec<Vec<f64>>,
    /// Delayed feedback matrix `B` in `b(phi) = B phi(-r0)`.
    pub delay_matrix: Vec<Vec<f64>>,
    pub kappa: f64,
    pub r0: f64,
    pub sigma: Vec<Vec<f64>>,
    pub state_lip: f64,
    pub segment_lip: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub kappa1: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Global step; must divide the delay and the horizon exactly.
    pub h: f64,
    pub horizon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub master: u64,
    /// Default trial count for Monte Carlo tasks.
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    #[serde(default)]
    pub params: toml::Table,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).context("config does not parse")?;
        Ok(config)
    }

    /// Structural validation that does not need the model built yet.
    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.grid.h > 0.0) {
            bail!("grid.h must be positive");
        }
        if !(self.grid.horizon > 0.0) {
            bail!("grid.horizon must be positive");
        }
        if !divides(self.grid.h, self.grid.horizon) {
            bail!(
                "grid.h = {} does not divide the horizon {}",
                self.grid.h,
                self.grid.horizon
            );
        }
        if self.seeds.trials == 0 {
            bail!("seeds.trials must be >= 1");
        }
        match (&self.model.name, &self.model.inline) {
            (Some(_), Some(_)) => bail!("model.name and model.inline are mutually exclusive"),
            (None, None) => bail!("one of model.name or model.inline is required"),
            _ => {}
        }
        for format in &self.output.formats {
            if format != "json" && format != "csv" {
                bail!("unknown output format '{format}' (known: json, csv)");
            }
        }
        if self.tasks.is_empty() {
            bail!("no tasks configured");
        }
        for task in &self.tasks {
            if !crate::registry::is_known_task(&task.name) {
                bail!("unknown task '{}'", task.name);
            }
            crate::registry::validate_params(&task.name, &task.params)?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> anyhow::Result<ModelSpec> {
        let spec = if let Some(name) = &self.model.name {
            builtin_model(name, &self.model.params)?
        } else {
            let inline = self.model.inline.as_ref().expect("validated");
            linear_model(
                inline.name.clone(),
                matrix(&inline.state_matrix).context("model.inline.state_matrix")?,
                matrix(&inline.delay_matrix).context("model.inline.delay_matrix")?,
                inline.kappa,
                inline.r0,
                matrix(&inline.sigma).context("model.inline.sigma")?,
                HypothesisConstants {
                    state_lip: inline.state_lip,
                    segment_lip: inline.segment_lip,
                    lambda1: inline.lambda1,
                    lambda2: inline.lambda2,
                    kappa1: inline.kappa1,
                },
            )?
        };
        if !divides(self.grid.h, spec.delay()) {
            bail!(
                "grid.h = {} does not divide the model delay r0 = {}",
                self.grid.h,
                spec.delay()
            );
        }
        Ok(spec)
    }

    /// Constant segment from a scalar or vector config value.
    pub fn segment_from_value(
        &self,
        spec: &ModelSpec,
        value: &toml::Value,
    ) -> anyhow::Result<Segment> {
        let values = match value {
            toml::Value::Float(v) => vec![*v],
            toml::Value::Integer(v) => vec![*v as f64],
            toml::Value::Array(items) => items
                .iter()
                .map(|item| match item {
                    toml::Value::Float(v) => Ok(*v),
                    toml::Value::Integer(v) => Ok(*v as f64),
                    other => bail!("segment entries must be numbers, got {other}"),
                })
                .collect::<anyhow::Result<Vec<f64>>>()?,
            other => bail!("segments are a number or an array of numbers, got {other}"),
        };
        if values.len() != spec.dim() {
            bail!(
                "segment has dimension {}, the model needs {}",
                values.len(),
                spec.dim()
            );
        }
        let m = (spec.delay() / self.grid.h).round() as usize;
        Ok(Segment::constant(
            DVector::from_vec(values),
            self.grid.h,
            m,
        )?)
    }
}

fn divides(h: f64, span: f64) -> bool {
    let k = (span / h).round();
    k >= 1.0 && (k * h - span).abs() <= 1e-9 * span.abs().max(1.0)
}

fn matrix(rows: &[Vec<f64>]) -> anyhow::Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        bail!("coefficient tables must be square and nonempty");
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
