//! TOML experiment configuration. Every key has a default; unknown keys are
//! rejected with the full list of offenders.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use robust_reach::ensemble::{Activation, TrainConfig};
use robust_reach::experiments::{DubinsSetup, PendulumSetup, RowSampling};
use robust_reach::dynamics::PendulumParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub output_dir: String,
    pub pendulum: PendulumSection,
    pub dubins: DubinsSection,
    pub ensemble: EnsembleSection,
    pub bounds: BoundsSection,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub study: StudySection,
    pub filter: FilterSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "runs/default".into(),
            pendulum: PendulumSection::default(),
            dubins: DubinsSection::default(),
            ensemble: EnsembleSection::default(),
            bounds: BoundsSection::default(),
            solver: SolverSection::default(),
            sim: SimSection::default(),
            study: StudySection::default(),
            filter: FilterSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub steps: usize,
    pub dt: f64,
    pub init_lo: Vec<f64>,
    pub init_hi: Vec<f64>,
}

impl From<&RowSampling> for Sampling {
    fn from(s: &RowSampling) -> Self {
        Self {
            steps: s.steps,
            dt: s.dt,
            init_lo: s.init_lo.clone(),
            init_hi: s.init_hi.clone(),
        }
    }
}

impl Sampling {
    fn to_core(&self) -> RowSampling {
        RowSampling {
            steps: self.steps,
            dt: self.dt,
            init_lo: self.init_lo.clone(),
            init_hi: self.init_hi.clone(),
        }
    }
}

impl Default for Sampling {
    fn default() -> Self {
        (&PendulumSetup::default().train_sampling).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumSection {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub friction: f64,
    pub torque_bound: f64,
    pub failure_angle: f64,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub horizon: f64,
    pub snapshot_interval: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub calibration_rows: usize,
    pub train_data: Sampling,
    pub calibration_data: Sampling,
}

impl Default for PendulumSection {
    fn default() -> Self {
        let s = PendulumSetup::default();
        Self {
            mass: s.params.mass,
            length: s.params.length,
            gravity: s.params.gravity,
            friction: s.params.friction,
            torque_bound: s.torque_bound,
            failure_angle: s.failure_angle,
            grid_lo: s.grid_lo.clone(),
            grid_hi: s.grid_hi.clone(),
            grid_counts: s.grid_counts.clone(),
            horizon: s.horizon,
            snapshot_interval: s.snapshot_interval,
            train_rows: 300,
            validation_rows: s.validation_rows,
            calibration_rows: s.calibration_rows,
            train_data: (&s.train_sampling).into(),
            calibration_data: (&s.calibration_sampling).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DubinsSection {
    pub speed: f64,
    pub turn_bound: f64,
    pub gain: f64,
    pub drift: [f64; 3],
    pub half_width: f64,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub train_rows: usize,
    pub data: Sampling,
    pub x0: Vec<f64>,
    pub duration: f64,
}

impl Default for DubinsSection {
    fn default() -> Self {
        let s = DubinsSetup::default();
        Self {
            speed: s.speed,
            turn_bound: s.turn_bound,
            gain: s.gain,
            drift: s.drift,
            half_width: s.half_width,
            grid_lo: s.grid_lo.clone(),
            grid_hi: s.grid_hi.clone(),
            grid_counts: s.grid_counts.clone(),
            train_rows: s.train_rows,
            data: (&s.sampling).into(),
            x0: s.x0.clone(),
            duration: s.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub members: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            members: t.members,
            hidden_layers: t.hidden_layers,
            hidden_width: t.hidden_width,
            activation: t.activation.name().into(),
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsSection {
    pub alpha: f64,
    pub gamma: f64,
    pub coverage: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            gamma: 3.0,
            coverage: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub cfl: f64,
    pub convergence_tol: f64,
    pub max_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            convergence_tol: 1e-3,
            max_steps: DubinsSetup::default().max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub dt: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySection {
    pub seeds: Vec<u64>,
    pub ablation_sizes: Vec<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            ablation_sizes: vec![100, 300, 1000, 3000, 10000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    /// `"auto"` for one grid cell of value, or a number.
    pub epsilon: toml::Value,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            epsilon: toml::Value::String("auto".into()),
        }
    }
}

/// Dotted paths present in `user` but absent from `schema`.
fn unknown_keys(user: &toml::Value, schema: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(u), Some(s)) = (user.as_table(), schema.as_table()) else {
        return;
    };
    for (k, v) in u {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            None => out.push(path),
            // `filter.epsilon` is either a string or a number; no nesting to check.
            Some(sv) => unknown_keys(v, sv, &path, out),
        }
    }
}

/// Sets `a.b.c = value` in a table tree, creating intermediate tables.
fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .with_context(|| format!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Parses `key=value` with the value read as a TOML literal, falling back to a
/// bare string.
fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').with_context(|| format!("override `{s}` is not key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("override `{s}` has an empty key");
    }
    let v = v.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), parsed))
}

#[derive(Debug)]
pub struct SchemaError {
    pub keys: Vec<String>,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown configuration keys: {}", self.keys.join(", "))
    }
}

impl std::error::Error for SchemaError {}

/// A configuration that parses but holds an unusable value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Value>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut tree, &k, v)?;
        }
        let schema = toml::Value::try_from(Config::default())?;
        let mut bad = Vec::new();
        unknown_keys(&tree, &schema, "", &mut bad);
        if !bad.is_empty() {
            return Err(SchemaError { keys: bad }.into());
        }
        let cfg: Config = tree
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("invalid configuration value: {e}")))?;
        cfg.validate().map_err(|e| ConfigError(format!("{e:#}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if Activation::from_name(&self.ensemble.activation).is_none() {
            bail!("ensemble.activation `{}` is not one of tanh, softplus, relu", self.ensemble.activation);
        }
        self.epsilon()?;
        if self.pendulum.grid_lo.len() != 2 || self.pendulum.grid_hi.len() != 2 || self.pendulum.grid_counts.len() != 2 {
            bail!("pendulum grid needs exactly two dimensions");
        }
        if self.dubins.grid_lo.len() != 3 || self.dubins.grid_hi.len() != 3 || self.dubins.grid_counts.len() != 3 {
            bail!("dubins grid needs exactly three dimensions");
        }
        if self.dubins.x0.len() != 3 {
            bail!("dubins.x0 needs three coordinates");
        }
        let b = &self.bounds;
        if !(b.alpha >= 0.0 && b.gamma >= 0.0) {
            bail!("bounds.alpha and bounds.gamma must be non-negative");
        }
        if !(b.coverage > 0.0 && b.coverage < 1.0) {
            bail!("bounds.coverage must lie in (0, 1)");
        }
        let s = &self.solver;
        if !(s.cfl > 0.0 && s.cfl <= 1.0) {
            bail!("solver.cfl must lie in (0, 1]");
        }
        if !(s.convergence_tol > 0.0) {
            bail!("solver.convergence_tol must be positive");
        }
        if !(self.sim.dt > 0.0) {
            bail!("sim.dt must be positive");
        }
        if !(self.pendulum.horizon >= 0.0) {
            bail!("pendulum.horizon must be non-negative");
        }
        if self.ensemble.members < 2 {
            bail!("ensemble.members must be at least 2");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs serialize")
    }

    pub fn epsilon(&self) -> Result<Option<f64>> {
        match &self.filter.epsilon {
            toml::Value::String(s) if s == "auto" => Ok(None),
            toml::Value::Float(v) if *v >= 0.0 => Ok(Some(*v)),
            toml::Value::Integer(v) if *v >= 0 => Ok(Some(*v as f64)),
            other => bail!("filter.epsilon must be \"auto\" or a non-negative number, got {other}"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let e = &self.ensemble;
        TrainConfig {
            members: e.members,
            hidden_layers: e.hidden_layers,
            hidden_width: e.hidden_width,
            activation: Activation::from_name(&e.activation).expect("validated"),
            epochs: e.epochs,
            learning_rate: e.learning_rate,
            batch_size: e.batch_size,
            seed: self.seed,
        }
    }

    pub fn pendulum_setup(&self) -> PendulumSetup {
        let p = &self.pendulum;
        PendulumSetup {
            params: PendulumParams {
                mass: p.mass,
                length: p.length,
                gravity: p.gravity,
                friction: p.friction,
            },
            torque_bound: p.torque_bound,
            failure_angle: p.failure_angle,
            grid_lo: p.grid_lo.clone(),
            grid_hi: p.grid_hi.clone(),
            grid_counts: p.grid_counts.clone(),
            horizon: p.horizon,
            cfl: self.solver.cfl,
            snapshot_interval: p.snapshot_interval,
            train_sampling: p.train_data.to_core(),
            validation_rows: p.validation_rows,
            calibration_sampling: p.calibration_data.to_core(),
            calibration_rows: p.calibration_rows,
            ensemble: self.train_config(),
            alpha: self.bounds.alpha,
            gamma: self.bounds.gamma,
            coverage: self.bounds.coverage,
        }
    }

    pub fn dubins_setup(&self) -> Result<DubinsSetup> {
        let d = &self.dubins;
        Ok(DubinsSetup {
            speed: d.speed,
            turn_bound: d.turn_bound,
            gain: d.gain,
            drift: d.drift,
            half_width: d.half_width,
            grid_lo: d.grid_lo.clone(),
            grid_hi: d.grid_hi.clone(),
            grid_counts: d.grid_counts.clone(),
            cfl: self.solver.cfl,
            convergence_tol: self.solver.convergence_tol,
            max_steps: self.solver.max_steps,
            sampling: d.data.to_core(),
            train_rows: d.train_rows,
            ensemble: self.train_config(),
            alpha: self.bounds.alpha,
            gamma: self.bounds.gamma,
            x0: d.x0.clone(),
            duration: d.duration,
            dt: self.sim.dt,
            epsilon: self.epsilon()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "sede = 1\n[bounds]\nalpha = 2.0\nbeta = 1.0\n[nope]\nx = 1\n").unwrap();
        let err = Config::load(Some(&p), &[]).unwrap_err();
        let schema = err.downcast_ref::<SchemaError>().unwrap();
        assert_eq!(schema.keys, vec!["bounds.beta", "nope", "sede"]);
    }

    #[test]
    fn overrides_parse_as_toml() {
        let c = Config::load(
            None,
            &[
                "bounds.alpha=1.5".into(),
                "study.seeds=[4, 5]".into(),
                "ensemble.activation=softplus".into(),
                "filter.epsilon=0.02".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.bounds.alpha, 1.5);
        assert_eq!(c.study.seeds, vec![4, 5]);
        assert_eq!(c.ensemble.activation, "softplus");
        assert_eq!(c.epsilon().unwrap(), Some(0.02));
        assert!(Config::load(None, &["ensemble.activation=sigmoid".into()]).is_err());
        assert!(Config::load(None, &["filter.epsilon=-1".into()]).is_err());
        assert!(Config::load(None, &["bounds.alpha".into()]).is_err());
    }
}
