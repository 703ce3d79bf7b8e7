//! Run configuration: JSON document, `--set` overrides, presets and series
//! expansion.

use std::path::Path;

use goldenrate::bath::{BathModel, LineshapeMethod};
use goldenrate::quad::QuadTolerances;
use goldenrate::rates::{DisorderModel, FluctuationModel, RateVariant};
use goldenrate::stochastic::{CouplingNoise, GapNoise, RateFunction, TrajectoryEnsemble};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

/// Presets shipped with the tool.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../presets/fig1.json")),
    ("fig2", include_str!("../presets/fig2.json")),
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Lineshape,
    Rate,
    Sweep,
    McValidate,
    MePropagate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Lineshape => "lineshape",
            Command::Rate => "rate",
            Command::Sweep => "sweep",
            Command::McValidate => "mc-validate",
            Command::MePropagate => "me-propagate",
        }
    }
}

/// `points` equally spaced values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl RangeSpec {
    pub fn values(&self, what: &str) -> Result<Vec<f64>, CliError> {
        if self.points == 0 {
            return Err(CliError::validation(format!("{what}: grid needs at least one point")));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(CliError::validation(format!("{what}: grid bounds must be finite")));
        }
        if self.points == 1 {
            return Ok(vec![self.start]);
        }
        if !(self.stop > self.start) {
            return Err(CliError::validation(format!(
                "{what}: stop ({}) must exceed start ({})",
                self.stop, self.start
            )));
        }
        let span = self.stop - self.start;
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| if i == self.points - 1 { self.stop } else { self.start + span * (i as f64 / last) })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineshapeConfig {
    pub method: LineshapeMethod,
    /// Absolute tolerance (relative to λ) of the frequency quadrature.
    pub tol: f64,
    /// Longest tabulated time for the quadrature route.
    pub horizon: f64,
}

impl Default for LineshapeConfig {
    fn default() -> Self {
        Self { method: LineshapeMethod::AnalyticCoth, tol: 1e-10, horizon: 200.0 }
    }
}

/// Fluctuation parameters in the dimensionless form `γ = 1/(ω_c τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationConfig {
    pub gamma_e: f64,
    pub de_sq: f64,
    #[serde(default)]
    pub gamma_f: f64,
}

/// At most one field may be set; none selects the regularized rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluctuation: Option<FluctuationConfig>,
}

impl VariantConfig {
    pub fn to_variant(&self) -> Result<RateVariant, CliError> {
        let chosen = [self.gamma_d.is_some(), self.disorder.is_some(), self.fluctuation.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if chosen > 1 {
            return Err(CliError::validation(
                "variant: set at most one of gamma_d, disorder, fluctuation (they answer different questions)",
            ));
        }
        let v = if let Some(g) = self.gamma_d {
            RateVariant::Damped { gamma_d: g }
        } else if let Some(d) = self.disorder {
            RateVariant::Disorder { disorder: d }
        } else if let Some(f) = self.fluctuation {
            RateVariant::Fluctuation {
                fluctuation: FluctuationModel::from_rates(f.gamma_e, f.de_sq, f.gamma_f)?,
            }
        } else {
            RateVariant::MFgr1
        };
        v.validate()?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<RangeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<RangeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub horizon: f64,
    pub points: usize,
    /// Coupling for the population run; defaults to the top-level `j_sq`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_traj: usize,
    pub tau_e: f64,
    pub de_sq: f64,
    /// Coupling-noise correlation time; absent means no coupling noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub horizon: f64,
    pub mean_gap: f64,
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_eval: Option<f64>,
    #[serde(default = "default_tau_points")]
    pub tau_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationConfig>,
}

fn default_tau_points() -> usize {
    50
}

impl McConfig {
    pub fn ensemble(&self, seed: u64, horizon: f64, n_traj: usize) -> TrajectoryEnsemble {
        let gap = GapNoise { tau_e: self.tau_e, de_sq: self.de_sq };
        let coupling = self.tau_f.map(|tau_f| CouplingNoise { tau_f });
        TrajectoryEnsemble {
            n_traj,
            gap_noise: Some(gap),
            coupling_noise: coupling,
            dt: self.dt.unwrap_or_else(|| TrajectoryEnsemble::default_dt(Some(&gap), coupling.as_ref())),
            horizon,
            master_seed: seed,
        }
    }
}

/// A rate for the master equation: a number or a sampled curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateInput {
    Constant(f64),
    Curve { t0: f64, dt: f64, values: Vec<f64> },
}

impl RateInput {
    pub fn to_function(&self) -> RateFunction {
        match self {
            RateInput::Constant(k) => RateFunction::Constant(*k),
            RateInput::Curve { t0, dt, values } => RateFunction::Curve { t0: *t0, dt: *dt, values: values.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeConfig {
    pub k12: RateInput,
    pub k21: RateInput,
    #[serde(default)]
    pub p2_0: f64,
}

/// One fully resolved run (one output series).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_bath")]
    pub bath: BathModel,
    #[serde(default)]
    pub lineshape: LineshapeConfig,
    #[serde(default)]
    pub tolerances: QuadTolerances,
    #[serde(default = "default_j_sq")]
    pub j_sq: f64,
    #[serde(default)]
    pub variant: VariantConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub me: Option<MeConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn default_name() -> String {
    "run".into()
}

fn default_bath() -> BathModel {
    BathModel::new(1, 1.0, 1.0).expect("default bath is valid")
}

fn default_j_sq() -> f64 {
    1.0
}

/// Recursively overlay `patch` onto `base` (objects merge, everything else
/// replaces).
pub fn deep_merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                deep_merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Apply one `key.path=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. Array elements are addressed by
/// index (`series.1.bath.n=2`).
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("--set expects key=value, got '{assignment}'")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(CliError::validation(format!("--set has an empty key in '{assignment}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    CliError::validation(format!("--set {path}: '{part}' must be an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::validation(format!("--set {path}: index {idx} out of range (length {len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::validation(format!(
                    "--set {path}: '{part}' is inside a value that is not an object"
                )))
            }
        };
    }
    unreachable!("loop returns on the last path element")
}

/// Load a configuration document from a file, a preset name, or a manifest
/// written by an earlier run.
pub fn load_document(config: Option<&Path>, preset: Option<&str>) -> Result<Value, CliError> {
    let text = match (config, preset) {
        (Some(_), Some(_)) => return Err(CliError::validation("use either --config or --preset, not both")),
        (None, None) => return Err(CliError::validation("a configuration is required: pass --config <path> or --preset <name>")),
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?,
        (None, Some(name)) => PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                CliError::validation(format!("unknown preset '{name}'; available: {}", names.join(", ")))
            })?,
    };
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
    // A manifest carries the resolved configuration of the run it describes.
    if doc.get("tool").and_then(Value::as_str) == Some(crate::output::TOOL) {
        return doc
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::validation("manifest has no 'config' entry"));
    }
    Ok(doc)
}

/// Split a document into resolved runs, one per series entry.
pub fn expand(mut doc: Value, command: Command) -> Result<Vec<RunConfig>, CliError> {
    if !doc.is_object() {
        return Err(CliError::validation("config must be a JSON object"));
    }
    let series = match doc.as_object_mut().unwrap().remove("series") {
        None | Some(Value::Null) => vec![Value::Object(Map::new())],
        Some(Value::Array(items)) if !items.is_empty() => items,
        Some(Value::Array(_)) => return Err(CliError::validation("'series' must not be empty")),
        Some(_) => return Err(CliError::validation("'series' must be an array of partial configs")),
    };
    let mut runs = Vec::with_capacity(series.len());
    for (i, patch) in series.iter().enumerate() {
        if !patch.is_object() {
            return Err(CliError::validation(format!("series[{i}] must be an object")));
        }
        let mut merged = doc.clone();
        deep_merge(&mut merged, patch);
        let run: RunConfig = serde_json::from_value(merged)
            .map_err(|e| CliError::validation(format!("series[{i}]: {e}")))?;
        if let Some(c) = run.command {
            if c != command {
                return Err(CliError::validation(format!(
                    "config is for '{}' but the '{}' command was requested",
                    c.as_str(),
                    command.as_str()
                )));
            }
        }
        runs.push(run);
    }
    let mut names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
    for n in &names {
        if n.is_empty() || n.contains(['/', '\\']) || *n == "." || *n == ".." {
            return Err(CliError::validation(format!("series name '{n}' is not a valid file stem")));
        }
    }
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::validation(format!("series name '{}' is used twice", w[0])));
    }
    Ok(runs)
}
