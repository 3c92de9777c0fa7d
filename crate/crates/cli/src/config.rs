//! Declarative experiment configs.
//!
//! One TOML document per experiment. The `[instance]` table uses the keys of
//! [`InstanceDoc`]; the remaining tables describe the run length, the sweep
//! grids and the experiment-specific knobs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fadingmem::sim::{LifespanDist, SimConfig, DEFAULT_BATCHES, DEFAULT_MAX_EVENTS};
use fadingmem::{Instance, InstanceDoc};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SteadySweep,
    Trajectories,
    LifespanStudy,
    EtaStudy,
    DeficientSnapshot,
    Limits,
    Fluid,
    Acceptance,
}

/// Run length and replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    /// Horizon at `β = 1`; see `horizon_beta_exponent`.
    pub horizon: f64,
    /// Horizon at update rate `β` is `horizon · β^exponent`.
    pub horizon_beta_exponent: f64,
    pub burn_in_fraction: f64,
    pub n_batches: usize,
    pub seeds: Vec<u64>,
    pub max_events: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            horizon: 5e5,
            horizon_beta_exponent: 0.0,
            burn_in_fraction: 0.1,
            n_batches: DEFAULT_BATCHES,
            seeds: vec![1],
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl RunSpec {
    pub fn horizon_at(&self, beta: f64) -> f64 {
        self.horizon * beta.powf(self.horizon_beta_exponent)
    }

    pub fn sim_config(&self, beta: f64, seed: u64, run_id: u64) -> SimConfig {
        let horizon = self.horizon_at(beta);
        SimConfig {
            horizon,
            burn_in: self.burn_in_fraction * horizon,
            n_batches: self.n_batches,
            seed,
            run_id,
            max_events: self.max_events,
            record_update_samples: false,
        }
    }
}

/// Sweep grids. An empty grid means "the instance value only".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub beta: Vec<f64>,
    pub m: Vec<u64>,
    pub alpha0: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Lifespan families, each scaled to mean `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifespanKind {
    Exponential,
    Constant,
    Pareto,
}

impl LifespanKind {
    pub fn name(self) -> &'static str {
        match self {
            LifespanKind::Exponential => "exponential",
            LifespanKind::Constant => "constant",
            LifespanKind::Pareto => "pareto",
        }
    }

    /// Constant lifespans equal `m`; Pareto lifespans have scale
    /// `m (shape − 1)/shape`, so both have mean `m`.
    pub fn dist(self, m: u64, pareto_shape: f64) -> LifespanDist {
        let m = m as f64;
        match self {
            LifespanKind::Exponential => LifespanDist::Exponential,
            LifespanKind::Constant => LifespanDist::Constant { value: m },
            LifespanKind::Pareto => LifespanDist::Pareto {
                scale: m * (pareto_shape - 1.0) / pareto_shape,
                shape: pareto_shape,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifespanSpec {
    pub kinds: Vec<LifespanKind>,
    pub pareto_shape: f64,
}

impl Default for LifespanSpec {
    fn default() -> Self {
        LifespanSpec {
            kinds: vec![LifespanKind::Exponential],
            pareto_shape: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    /// Scaled time horizon.
    pub t_max: f64,
    /// Scaled grid step of the logged paths.
    pub grid: f64,
    /// RK4 step of the fluid solution.
    pub fluid_step: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            t_max: 10.0,
            grid: 0.01,
            fluid_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaSpec {
    /// Exponents at which the vector field is sampled (two actions only).
    pub field_eta: Vec<f64>,
    /// Grid points per axis of the vector field.
    pub field_points: usize,
}

impl Default for EtaSpec {
    fn default() -> Self {
        EtaSpec {
            field_eta: vec![2.0],
            field_points: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotSpec {
    pub samples: usize,
}

impl Default for SnapshotSpec {
    fn default() -> Self {
        SnapshotSpec { samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidSpec {
    /// Starting point; zeros when empty.
    pub q0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
}

impl Default for FluidSpec {
    fn default() -> Self {
        FluidSpec {
            q0: Vec::new(),
            horizon: 30.0,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub instance: InstanceDoc,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub lifespan: LifespanSpec,
    #[serde(default)]
    pub trajectories: TrajectorySpec,
    #[serde(default)]
    pub eta: EtaSpec,
    #[serde(default)]
    pub snapshot: SnapshotSpec,
    #[serde(default)]
    pub fluid: FluidSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Reads only the `kind` key of a config document.
pub fn peek_kind(text: &str) -> Result<ExperimentKind, CliError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let kind = table
        .get("kind")
        .cloned()
        .ok_or_else(|| CliError::Config("missing `kind`".into()))?;
    kind.try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn scaled_instance(&self) -> Result<Instance, CliError> {
        Instance::try_from(self.instance.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn betas(&self) -> Vec<f64> {
        non_empty_or(&self.sweep.beta, self.instance.beta)
    }

    pub fn ms(&self) -> Vec<u64> {
        non_empty_or(&self.sweep.m, self.instance.m)
    }

    pub fn alpha0s(&self) -> Vec<f64> {
        non_empty_or(&self.sweep.alpha0, self.instance.alpha0)
    }

    /// Adds `offset` to every seed.
    pub fn offset_seeds(&mut self, offset: u64) {
        for s in self.run.seeds.iter_mut() {
            *s = s.wrapping_add(offset);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let base = self.scaled_instance()?;
        for &beta in &self.sweep.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return bad(format!("sweep beta {beta} must be positive"));
            }
        }
        for &m in &self.sweep.m {
            base.with_m(m)
                .realize()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        for &a in &self.sweep.alpha0 {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("sweep alpha0 {a} must be positive"));
            }
        }
        for &eta in &self.sweep.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad(format!("sweep eta {eta} must be positive"));
            }
        }
        let run = &self.run;
        if !(run.horizon > 0.0 && run.horizon.is_finite()) {
            return bad(format!("horizon {} must be positive", run.horizon));
        }
        if !(0.0..1.0).contains(&run.burn_in_fraction) {
            return bad("burn_in_fraction must lie in [0, 1) so that horizon > burn-in".into());
        }
        if run.n_batches < 2 {
            return bad("n_batches must be at least 2".into());
        }
        if run.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let distinct: BTreeSet<u64> = run.seeds.iter().copied().collect();
        if distinct.len() != run.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.lifespan.kinds.is_empty() {
            return bad("lifespan.kinds must not be empty".into());
        }
        if !(self.lifespan.pareto_shape > 1.0) {
            return bad("pareto_shape must exceed 1".into());
        }
        let t = &self.trajectories;
        if !(t.t_max > 0.0 && t.grid > 0.0 && t.grid <= t.t_max && t.fluid_step > 0.0) {
            return bad(
                "trajectory t_max, grid and fluid_step must be positive with grid <= t_max".into(),
            );
        }
        if self.eta.field_points < 2 {
            return bad("eta.field_points must be at least 2".into());
        }
        if self.snapshot.samples == 0 {
            return bad("snapshot.samples must be positive".into());
        }
        if !self.fluid.q0.is_empty() && self.fluid.q0.len() != base.lambda.len() {
            return bad("fluid.q0 must have one entry per action".into());
        }
        if self.kind == ExperimentKind::EtaStudy && self.sweep.eta.is_empty() {
            return bad("eta_study needs a non-empty sweep.eta grid".into());
        }
        if self.kind == ExperimentKind::Acceptance {
            return bad("acceptance configs are read by the `accept` subcommand".into());
        }
        Ok(())
    }
}

fn non_empty_or<T: Copy>(grid: &[T], fallback: T) -> Vec<T> {
    if grid.is_empty() {
        vec![fallback]
    } else {
        grid.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        kind = "steady_sweep"
        [instance]
        K = 4
        lambda = [8.0, 6.0, 4.0, 2.0]
        beta = 1.0
        alpha0 = 1.0
        m = 200
        weight_rule = "linear"
        [run]
        horizon = 1e4
        seeds = [1, 2]
        [sweep]
        beta = [1e-2, 1.0]
    "#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::SteadySweep);
        assert_eq!(cfg.betas(), vec![1e-2, 1.0]);
        assert_eq!(cfg.ms(), vec![200]);
        assert_eq!(cfg.run.n_batches, 32);
        assert_eq!(peek_kind(MINIMAL).unwrap(), ExperimentKind::SteadySweep);
    }

    #[test]
    fn rejects_bad_ordering() {
        let text = MINIMAL.replace("[8.0, 6.0, 4.0, 2.0]", "[6.0, 8.0, 4.0, 2.0]");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn rejects_duplicate_seeds_and_unknown_keys() {
        let dup = MINIMAL.replace("seeds = [1, 2]", "seeds = [3, 3]");
        assert!(ExperimentConfig::from_toml(&dup).is_err());
        let unknown = MINIMAL.replace("horizon = 1e4", "horizon = 1e4\nhorizn = 2");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn horizon_scales_with_beta() {
        let run = RunSpec {
            horizon: 5e5,
            horizon_beta_exponent: -0.5,
            ..RunSpec::default()
        };
        assert!((run.horizon_at(1e-4) - 5e7).abs() < 1e-3);
        assert_eq!(run.horizon_at(1.0), 5e5);
        let sc = run.sim_config(1.0, 3, 4);
        assert_eq!(sc.burn_in, 5e4);
        assert_eq!((sc.seed, sc.run_id), (3, 4));
    }

    #[test]
    fn lifespans_have_mean_m() {
        for kind in [
            LifespanKind::Exponential,
            LifespanKind::Constant,
            LifespanKind::Pareto,
        ] {
            let d = kind.dist(200, 2.0);
            assert_eq!(d.mean(1.0 / 200.0), 200.0);
        }
        assert_eq!(
            LifespanKind::Pareto.dist(200, 2.0),
            LifespanDist::Pareto {
                scale: 100.0,
                shape: 2.0
            }
        );
    }
}
