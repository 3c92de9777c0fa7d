//! The acceptance suite: thirteen checks of the simulator and the limit
//! theory against known values, driven by `configs/acceptance.toml`.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use fadingmem::estimators::{
    compare_to_theory, dominance_check, estimate_replicas, Allowance, Quantity,
};
use fadingmem::fluid::{convergence_rate, integrate, FluidModel, FluidState};
use fadingmem::rng::stream_rng;
use fadingmem::sim::{
    conditional_update_snapshot, simulate, LifespanDist, SimConfig, Trace, DEFAULT_BATCHES,
};
use fadingmem::theory::{
    deficient_transition_matrix, heterogeneous_limits, invariant_state_poly,
    invariant_states_eta_gt1_k2, limit_choice_probs, stationary_distribution, InvariantCase,
    RegimeTag, Stability,
};
use fadingmem::{Instance, SteadyEstimate, WeightRule};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{read_to_string, LifespanKind};
use crate::harness::{fluid_from_origin, paired_path};
use crate::CliError;

/// Identifiers and one-line descriptions of every criterion.
pub const CRITERIA: [(&str, &str); 13] = [
    ("A1", "abundant regime: choice fractions"),
    ("A2", "abundant regime: scaled rewards"),
    ("A3", "deficient regime: choice fractions"),
    ("A4", "deficient regime: scaled rewards"),
    ("A5", "complete oblivion: uniform choice"),
    ("A6", "fluid convergence from random starts"),
    ("A7", "stochastic paths approach the fluid solution"),
    ("A8", "embedded chain matches the deficient closed form"),
    ("A9", "conditional snapshot at update points"),
    ("A10", "polynomial-rule invariant states"),
    ("A11", "stochastic dominance of update-point rewards"),
    ("A12", "insensitivity to the lifespan distribution"),
    ("A13", "heterogeneous decay"),
];

fn default_burn_in() -> f64 {
    0.1
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

/// A simulated parameter point with its expected values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCheck {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub mu0: Option<Vec<f64>>,
    pub alpha0: f64,
    pub m: u64,
    pub beta: f64,
    pub horizon: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    /// One replica per seed; replicas are pooled.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub expected_choice: Vec<f64>,
    #[serde(default)]
    pub expected_qbar: Vec<f64>,
    #[serde(default)]
    pub choice_allowance: f64,
    #[serde(default)]
    pub qbar_allowance: f64,
    /// Wall-clock limit for the pooled run in seconds.
    #[serde(default)]
    pub runtime_limit: Option<f64>,
}

impl SimCheck {
    pub fn instance(&self) -> Instance {
        let mut inst = Instance::uniform(
            self.lambda.clone(),
            self.alpha0,
            self.beta,
            WeightRule::Linear,
            self.m,
        );
        if let Some(mu0) = &self.mu0 {
            inst.mu0 = mu0.clone();
        }
        inst
    }

    fn sim_config(&self, seed: u64, record: bool) -> SimConfig {
        SimConfig {
            burn_in: self.burn_in_fraction * self.horizon,
            n_batches: self.n_batches,
            record_update_samples: record,
            ..SimConfig::new(self.horizon, seed)
        }
    }

    /// Runs every replica in parallel and pools them.
    pub fn run(&self, lifespan: &LifespanDist, record: bool) -> Result<SimRun, CliError> {
        let params = self.instance().realize()?;
        let start = Instant::now();
        let traces = self
            .seeds
            .par_iter()
            .map(|&seed| simulate(&params, lifespan, &self.sim_config(seed, record)))
            .collect::<Result<Vec<Trace>, _>>()?;
        let seconds = start.elapsed().as_secs_f64();
        let est = estimate_replicas(&traces, self.m)?;
        Ok(SimRun {
            traces,
            est,
            seconds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidCheck {
    pub lambda: Vec<f64>,
    pub alpha0: f64,
    pub starts: usize,
    pub seed: u64,
    pub horizon: f64,
    pub step: f64,
    pub expected: Vec<f64>,
    pub tolerance: f64,
    pub max_slope: f64,
    pub min_r_squared: f64,
    pub runtime_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryCheck {
    pub lambda: Vec<f64>,
    pub alpha0: f64,
    pub beta: f64,
    pub ms: Vec<u64>,
    pub seeds: Vec<u64>,
    pub t_max: f64,
    pub grid: f64,
    pub fluid_step: f64,
    /// Upper bound on the median sup-distance at the largest `m`.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddedCheck {
    pub instances: usize,
    pub max_k: usize,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotCheck {
    pub lambda: Vec<f64>,
    pub alpha0: f64,
    pub m: u64,
    pub beta: f64,
    pub samples: usize,
    pub seed: u64,
    pub allowance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialCheck {
    /// Two actions, `η = 1/2`, every coordinate above the floor.
    pub above_floor_lambda: Vec<f64>,
    /// An instance whose smaller actions sit at the floor.
    pub mixed_lambda: Vec<f64>,
    pub mixed_alpha0: f64,
    pub sublinear_eta: f64,
    /// Two actions with `η > 1`.
    pub multi_lambda: Vec<f64>,
    pub multi_eta: f64,
    pub alpha0: f64,
    pub closed_form_tolerance: f64,
    pub oracle_tolerance: f64,
    /// Reference value of the interior state, to two decimals.
    pub interior: Vec<f64>,
    pub interior_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceCheck {
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifespanCheck {
    pub pareto_shape: f64,
    pub allowance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub kind: String,
    pub abundant: SimCheck,
    pub deficient: SimCheck,
    pub oblivion: SimCheck,
    pub fluid: FluidCheck,
    pub trajectories: TrajectoryCheck,
    pub embedded: EmbeddedCheck,
    pub snapshot: SnapshotCheck,
    pub polynomial: PolynomialCheck,
    pub dominance: DominanceCheck,
    pub lifespan: LifespanCheck,
    pub heterogeneous: SimCheck,
}

const BUILTIN: &str = include_str!("../../../configs/acceptance.toml");

impl AcceptanceConfig {
    /// The checked-in acceptance config.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("checked-in acceptance config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: AcceptanceConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn offset_seeds(&mut self, offset: u64) {
        for check in [
            &mut self.abundant,
            &mut self.deficient,
            &mut self.oblivion,
            &mut self.heterogeneous,
        ] {
            for s in &mut check.seeds {
                *s += offset;
            }
        }
        for s in &mut self.trajectories.seeds {
            *s += offset;
        }
        self.fluid.seed += offset;
        self.embedded.seed += offset;
        self.snapshot.seed += offset;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.kind != "acceptance" {
            return bad(format!("kind must be \"acceptance\", got {:?}", self.kind));
        }
        let checks = [
            ("abundant", &self.abundant),
            ("deficient", &self.deficient),
            ("oblivion", &self.oblivion),
            ("heterogeneous", &self.heterogeneous),
        ];
        for (name, check) in checks {
            check
                .instance()
                .realize()
                .map_err(|e| CliError::Config(format!("[{name}] {e}")))?;
            if check.seeds.is_empty() {
                return bad(format!("[{name}] seeds must not be empty"));
            }
            if !(check.horizon > 0.0 && (0.0..1.0).contains(&check.burn_in_fraction)) {
                return bad(format!("[{name}] horizon must exceed the burn-in"));
            }
            let k = check.lambda.len();
            for (field, v) in [
                ("expected_choice", &check.expected_choice),
                ("expected_qbar", &check.expected_qbar),
            ] {
                if !v.is_empty() && v.len() != k {
                    return bad(format!(
                        "[{name}] {field} has {} entries, expected {k}",
                        v.len()
                    ));
                }
            }
        }
        for (name, lambda, alpha0) in [
            ("fluid", &self.fluid.lambda, self.fluid.alpha0),
            (
                "trajectories",
                &self.trajectories.lambda,
                self.trajectories.alpha0,
            ),
            ("snapshot", &self.snapshot.lambda, self.snapshot.alpha0),
        ] {
            Instance::uniform(lambda.clone(), alpha0, 1.0, WeightRule::Linear, 1)
                .realize()
                .map_err(|e| CliError::Config(format!("[{name}] {e}")))?;
        }
        if self.fluid.expected.len() != self.fluid.lambda.len() {
            return bad("[fluid] expected has the wrong length".into());
        }
        if self.trajectories.ms.len() < 2 || self.trajectories.seeds.is_empty() {
            return bad("[trajectories] needs at least two m values and one seed".into());
        }
        if self.embedded.max_k < 2 {
            return bad("[embedded] max_k must be at least 2".into());
        }
        Ok(())
    }
}

/// A pooled set of replicas.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub traces: Vec<Trace>,
    pub est: SteadyEstimate,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub criterion_id: String,
    pub status: Status,
    pub measured: Vec<f64>,
    pub expected: Vec<f64>,
    pub tolerance: Vec<f64>,
    pub seconds: f64,
    pub detail: String,
}

impl CriterionResult {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// `A1 PASS 12.3s measured=[..] expected=[..] tolerance=[..] detail`.
    pub fn line(&self) -> String {
        let fmt = |v: &[f64]| {
            let parts: Vec<String> = v
                .iter()
                .map(|&x| {
                    if x == 0.0 || !x.is_finite() || x.abs() >= 1e-3 {
                        format!("{x:.6}")
                    } else {
                        format!("{x:.3e}")
                    }
                })
                .collect();
            format!("[{}]", parts.join(", "))
        };
        format!(
            "{} {} {:.1}s measured={} expected={} tolerance={} {}",
            self.criterion_id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.seconds,
            fmt(&self.measured),
            fmt(&self.expected),
            fmt(&self.tolerance),
            self.detail
        )
    }
}

struct Outcome {
    pass: bool,
    measured: Vec<f64>,
    expected: Vec<f64>,
    tolerance: Vec<f64>,
    detail: String,
}

/// Runs criteria on demand and shares the long simulations between them.
pub struct Acceptance {
    cfg: AcceptanceConfig,
    abundant: OnceLock<Result<SimRun, String>>,
    deficient: OnceLock<Result<SimRun, String>>,
}

fn shared<'a>(
    cell: &'a OnceLock<Result<SimRun, String>>,
    check: &SimCheck,
    record: bool,
) -> Result<&'a SimRun, CliError> {
    cell.get_or_init(|| {
        check
            .run(&LifespanDist::Exponential, record)
            .map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(|e| CliError::Config(format!("shared run failed: {e}")))
}

/// Compares one quantity of `est` with `expected` at 3 s.e. plus `allowance`.
fn steady_outcome(
    est: &SteadyEstimate,
    quantity: Quantity,
    expected: &[f64],
    allowance: f64,
) -> Result<Outcome, CliError> {
    let (c, q, allow) = match quantity {
        Quantity::ChoiceFrac => (
            Some(expected),
            None,
            Allowance {
                probability: allowance,
                reward: 0.0,
            },
        ),
        Quantity::Qbar => (
            None,
            Some(expected),
            Allowance {
                probability: 0.0,
                reward: allowance,
            },
        ),
    };
    let report = compare_to_theory(est, c, q, 3.0, allow)?;
    Ok(Outcome {
        pass: report.pass(),
        measured: report.checks.iter().map(|c| c.estimate).collect(),
        expected: expected.to_vec(),
        tolerance: report.checks.iter().map(|c| c.bound).collect(),
        detail: String::new(),
    })
}

fn with_runtime(mut out: Outcome, seconds: f64, limit: Option<f64>) -> Outcome {
    out.detail = format!("run {seconds:.1}s");
    if let Some(limit) = limit {
        if seconds >= limit {
            out.pass = false;
            out.detail += &format!(" exceeds the {limit}s target");
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fixed point of `q = λ p(q)` by damped iteration `q ← q + h·drift(q)`.
pub fn damped_fixed_point(
    model: &FluidModel<f64>,
    start: &[f64],
    h: f64,
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let mut q = start.to_vec();
    for _ in 0..max_iter {
        let d = model.drift(&q);
        let step: f64 = d.iter().map(|x| (h * x).abs()).sum();
        for (qi, di) in q.iter_mut().zip(&d) {
            *qi = (*qi + h * di).max(0.0);
        }
        if step < tol {
            return Some(q);
        }
    }
    None
}

/// Newton's method on the two-dimensional drift with a central-difference Jacobian.
fn newton_2d(model: &FluidModel<f64>, start: [f64; 2]) -> Option<[f64; 2]> {
    let mut q = start;
    for _ in 0..100 {
        let f = model.drift(&q);
        let j = jacobian_2d(model, q);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 {
            return None;
        }
        let dx = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
        let dy = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        q = [q[0] - dx, q[1] - dy];
        if dx.abs() + dy.abs() < 1e-14 {
            return Some(q);
        }
    }
    None
}

fn jacobian_2d(model: &FluidModel<f64>, q: [f64; 2]) -> [[f64; 2]; 2] {
    let h = 1e-6;
    let mut j = [[0.0; 2]; 2];
    for col in 0..2 {
        let mut hi = q;
        let mut lo = q;
        hi[col] += h;
        lo[col] -= h;
        let (fh, fl) = (model.drift(&hi), model.drift(&lo));
        for row in 0..2 {
            j[row][col] = (fh[row] - fl[row]) / (2.0 * h);
        }
    }
    j
}

/// Linear stability from the trace and determinant of the Jacobian.
fn jacobian_stable(model: &FluidModel<f64>, q: &[f64]) -> bool {
    let j = jacobian_2d(model, [q[0], q[1]]);
    let trace = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    trace < 0.0 && det > 0.0
}

impl Acceptance {
    pub fn new(cfg: AcceptanceConfig) -> Self {
        Acceptance {
            cfg,
            abundant: OnceLock::new(),
            deficient: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &AcceptanceConfig {
        &self.cfg
    }

    /// Runs one criterion; errors become failures.
    pub fn run(&self, id: &str) -> CriterionResult {
        let start = Instant::now();
        let outcome = match id {
            "A1" => self.a1(),
            "A2" => self.a2(),
            "A3" => self.a3(),
            "A4" => self.a4(),
            "A5" => self.a5(),
            "A6" => self.a6(),
            "A7" => self.a7(),
            "A8" => self.a8(),
            "A9" => self.a9(),
            "A10" => self.a10(),
            "A11" => self.a11(),
            "A12" => self.a12(),
            "A13" => self.a13(),
            other => Err(CliError::Config(format!("unknown criterion {other}"))),
        };
        let seconds = start.elapsed().as_secs_f64();
        match outcome {
            Ok(o) => CriterionResult {
                criterion_id: id.into(),
                status: if o.pass { Status::Pass } else { Status::Fail },
                measured: o.measured,
                expected: o.expected,
                tolerance: o.tolerance,
                seconds,
                detail: o.detail,
            },
            Err(e) => CriterionResult {
                criterion_id: id.into(),
                status: Status::Fail,
                measured: vec![],
                expected: vec![],
                tolerance: vec![],
                seconds,
                detail: format!("error: {e}"),
            },
        }
    }

    /// Every criterion in order.
    pub fn run_all(&self) -> Vec<CriterionResult> {
        CRITERIA.iter().map(|(id, _)| self.run(id)).collect()
    }

    fn abundant_run(&self) -> Result<&SimRun, CliError> {
        shared(&self.abundant, &self.cfg.abundant, true)
    }

    fn deficient_run(&self) -> Result<&SimRun, CliError> {
        shared(&self.deficient, &self.cfg.deficient, false)
    }

    fn a1(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.abundant;
        let run = self.abundant_run()?;
        let out = steady_outcome(
            &run.est,
            Quantity::ChoiceFrac,
            &c.expected_choice,
            c.choice_allowance,
        )?;
        Ok(with_runtime(out, run.seconds, c.runtime_limit))
    }

    fn a2(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.abundant;
        steady_outcome(
            &self.abundant_run()?.est,
            Quantity::Qbar,
            &c.expected_qbar,
            c.qbar_allowance,
        )
    }

    fn a3(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.deficient;
        let run = self.deficient_run()?;
        let out = steady_outcome(
            &run.est,
            Quantity::ChoiceFrac,
            &c.expected_choice,
            c.choice_allowance,
        )?;
        let mut out = with_runtime(out, run.seconds, c.runtime_limit);
        out.detail += &format!(", {} pooled replicas", run.traces.len());
        Ok(out)
    }

    fn a4(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.deficient;
        steady_outcome(
            &self.deficient_run()?.est,
            Quantity::Qbar,
            &c.expected_qbar,
            c.qbar_allowance,
        )
    }

    fn a5(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.oblivion;
        let run = c.run(&LifespanDist::Exponential, false)?;
        steady_outcome(
            &run.est,
            Quantity::ChoiceFrac,
            &c.expected_choice,
            c.choice_allowance,
        )
    }

    fn a6(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.fluid;
        let start = Instant::now();
        let model = FluidModel::linear(c.lambda.clone(), c.alpha0)?;
        let mut rng = stream_rng(c.seed, 0, 0);
        let hi = 2.0 * c.lambda[0];
        let mut worst_dist = 0.0f64;
        let mut worst_slope = f64::NEG_INFINITY;
        let mut worst_r2 = f64::INFINITY;
        for _ in 0..c.starts {
            let q0: Vec<f64> = c.lambda.iter().map(|_| rng.random_range(0.0..hi)).collect();
            let traj = integrate(&model, &FluidState::new(q0)?, c.horizon, c.step)?;
            worst_dist = worst_dist.max(max_abs_diff(traj.final_state(), &c.expected));
            let fit = convergence_rate(&traj, &c.expected)?;
            worst_slope = worst_slope.max(fit.slope);
            worst_r2 = worst_r2.min(fit.r_squared);
        }
        let seconds = start.elapsed().as_secs_f64();
        let pass = worst_dist <= c.tolerance
            && worst_slope < c.max_slope
            && worst_r2 > c.min_r_squared
            && seconds < c.runtime_limit;
        Ok(Outcome {
            pass,
            measured: vec![worst_dist, worst_slope, worst_r2, seconds],
            expected: vec![0.0, c.max_slope, c.min_r_squared, 0.0],
            tolerance: vec![c.tolerance, 0.0, 0.0, c.runtime_limit],
            detail: format!("{} starts; worst distance, slope, R², seconds", c.starts),
        })
    }

    fn a7(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.trajectories;
        let base = Instance::uniform(
            c.lambda.clone(),
            c.alpha0,
            c.beta,
            WeightRule::Linear,
            c.ms[0],
        );
        let fluid = fluid_from_origin(&base, c.t_max, c.fluid_step)?;
        let cells: Vec<(usize, u64, u64)> =
            c.ms.iter()
                .enumerate()
                .flat_map(|(i, &m)| c.seeds.iter().map(move |&s| (i, m, s)))
                .collect();
        let sups = cells
            .par_iter()
            .enumerate()
            .map(|(run_id, &(_, m, seed))| {
                paired_path(
                    &base.with_m(m),
                    &fluid,
                    c.t_max,
                    c.grid,
                    seed,
                    run_id as u64,
                )
                .map(|p| p.sup_distances())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut l1 = vec![Vec::new(); c.ms.len()];
        let mut max = vec![Vec::new(); c.ms.len()];
        for (&(i, _, _), (a, b)) in cells.iter().zip(sups) {
            l1[i].push(a);
            max[i].push(b);
        }
        let medians: Vec<f64> = l1.into_iter().map(median).collect();
        let max_medians: Vec<f64> = max.into_iter().map(median).collect();
        let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
        let last = *medians.last().unwrap_or(&f64::INFINITY);
        let mut expected = vec![f64::NAN; medians.len()];
        let mut tolerance = vec![f64::NAN; medians.len()];
        if let (Some(e), Some(t)) = (expected.last_mut(), tolerance.last_mut()) {
            *e = 0.0;
            *t = c.band;
        }
        Ok(Outcome {
            pass: decreasing && last < c.band,
            measured: medians,
            expected,
            tolerance,
            detail: format!(
                "median sup L1 distance for m = {:?} (max-norm medians {:?}); decreasing: {decreasing}",
                c.ms,
                max_medians
                    .iter()
                    .map(|x| (x * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            ),
        })
    }

    fn a8(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.embedded;
        let mut rng = stream_rng(c.seed, 0, 0);
        let mut worst = 0.0f64;
        for _ in 0..c.instances {
            let k = rng.random_range(2..=c.max_k);
            let mut lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..10.0)).collect();
            lambda.sort_by(|a, b| b.total_cmp(a));
            if lambda[0] == lambda[1] {
                lambda[0] += 1.0;
            }
            let alpha0 = rng.random_range(0.01..5.0);
            let r = deficient_transition_matrix(&lambda, alpha0, &WeightRule::Linear)?;
            let pi = stationary_distribution(&r)?;
            let closed = limit_choice_probs(&lambda, alpha0, RegimeTag::MemoryDeficient)?;
            worst = worst.max(max_abs_diff(&pi, &closed));
        }
        Ok(Outcome {
            pass: worst <= c.tolerance,
            measured: vec![worst],
            expected: vec![0.0],
            tolerance: vec![c.tolerance],
            detail: format!("{} random instances, max |π − c|", c.instances),
        })
    }

    fn a9(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.snapshot;
        let inst = Instance::uniform(c.lambda.clone(), c.alpha0, c.beta, WeightRule::Linear, c.m);
        let rep = conditional_update_snapshot(&inst.realize()?, c.m, c.seed, c.samples)?;
        let k = c.lambda.len();
        let mut out = Outcome {
            pass: rep.pairs.len() >= c.samples,
            measured: vec![],
            expected: vec![],
            tolerance: vec![],
            detail: format!(
                "E[Q_i/m | C = k] row-major, {} samples, per-class {:?}",
                rep.pairs.len(),
                rep.counts
            ),
        };
        for choice in 0..k {
            for i in 0..k {
                let theory = if i == choice { c.lambda[i] } else { 0.0 };
                let bound = 3.0 * rep.se[choice][i] + c.allowance;
                out.pass &= (rep.mean[choice][i] - theory).abs() <= bound;
                out.measured.push(rep.mean[choice][i]);
                out.expected.push(theory);
                out.tolerance.push(bound);
            }
        }
        Ok(out)
    }

    fn a10(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.polynomial;
        let eta = c.sublinear_eta;
        let mut notes = Vec::new();
        let mut measured = Vec::new();

        // (i) all coordinates above the floor: q_k = λ_k^{1/(1−η)} / S^{1/(1−η)}
        // with S = (Σ λ_j^{η/(1−η)})^{1−η}
        let lam = &c.above_floor_lambda;
        let s = lam
            .iter()
            .map(|l| l.powf(eta / (1.0 - eta)))
            .sum::<f64>()
            .powf(1.0 - eta);
        let closed: Vec<f64> = lam
            .iter()
            .map(|l| (l / s).powf(1.0 / (1.0 - eta)))
            .collect();
        let rep = invariant_state_poly(lam, c.alpha0, eta)?;
        let err_i = max_abs_diff(&rep.states[0].q, &closed);
        let res_i = rep.states[0].residual;
        let pass_i = rep.case == InvariantCase::PolyAllAboveFloor
            && err_i <= c.closed_form_tolerance
            && res_i < c.closed_form_tolerance;
        notes.push(format!(
            "(i) {:?} err {err_i:.1e} residual {res_i:.1e}",
            rep.case
        ));
        measured.extend([err_i, res_i]);

        // (ii) mixed case against damped iteration of the fluid map
        let lam = &c.mixed_lambda;
        let rep = invariant_state_poly(lam, c.mixed_alpha0, eta)?;
        let model = FluidModel::new(lam.clone(), c.mixed_alpha0, WeightRule::Polynomial { eta })?;
        let oracle = damped_fixed_point(&model, lam, 0.5, 1e-15, 10_000_000)
            .ok_or_else(|| CliError::Config("damped iteration did not settle".into()))?;
        let err_ii = max_abs_diff(&rep.states[0].q, &oracle);
        let pass_ii =
            matches!(rep.case, InvariantCase::PolyMixed { .. }) && err_ii <= c.oracle_tolerance;
        notes.push(format!("(ii) {:?} err {err_ii:.1e}", rep.case));
        measured.push(err_ii);

        // (iii) η > 1: Newton on the drift locates the interior state, the
        // Jacobian decides stability
        let lam = &c.multi_lambda;
        let eta = c.multi_eta;
        let model = FluidModel::new(lam.clone(), c.alpha0, WeightRule::Polynomial { eta })?;
        let rep = invariant_states_eta_gt1_k2(lam[0], lam[1], eta, c.alpha0)?;
        let interior = newton_2d(&model, [c.interior[0], c.interior[1]])
            .ok_or_else(|| CliError::Config("Newton iteration failed".into()))?;
        let find = |target: &dyn Fn(&[f64]) -> bool| rep.states.iter().find(|s| target(&s.q));
        let near_interior = find(&|q: &[f64]| max_abs_diff(q, &interior) < 1e-6);
        let top1 = 4.0 + 15f64.sqrt();
        let top2 = 3.0 + 8f64.sqrt();
        let lead1 = find(&|q: &[f64]| (q[0] - top1).abs() < 1e-6);
        let lead2 = find(&|q: &[f64]| (q[1] - top2).abs() < 1e-6);
        let mut pass_iii =
            rep.states.len() == 3 && max_abs_diff(&interior, &c.interior) <= c.interior_tolerance;
        let mut err_iii = vec![f64::NAN; 3];
        match (near_interior, lead1, lead2) {
            (Some(s0), Some(s1), Some(s2)) => {
                err_iii = vec![
                    max_abs_diff(&s0.q, &interior),
                    (s1.q[0] - top1).abs(),
                    (s2.q[1] - top2).abs(),
                ];
                pass_iii &= err_iii[0] <= c.oracle_tolerance
                    && err_iii[1] <= c.closed_form_tolerance
                    && err_iii[2] <= c.closed_form_tolerance;
                let labels = [
                    (s0, Stability::Unstable, false),
                    (s1, Stability::Stable, true),
                    (s2, Stability::Stable, true),
                ];
                for (s, label, stable) in labels {
                    pass_iii &= s.stability == label && jacobian_stable(&model, &s.q) == stable;
                }
                notes.push(format!(
                    "(iii) {} states, interior ({:.6}, {:.6}) {:?}, leaders {:?}/{:?}",
                    rep.states.len(),
                    s0.q[0],
                    s0.q[1],
                    s0.stability,
                    s1.stability,
                    s2.stability
                ));
            }
            _ => {
                pass_iii = false;
                notes.push(format!("(iii) states not matched: {:?}", rep.states));
            }
        }
        measured.extend(err_iii);
        Ok(Outcome {
            pass: pass_i && pass_ii && pass_iii,
            measured,
            expected: vec![0.0; 6],
            tolerance: vec![
                c.closed_form_tolerance,
                c.closed_form_tolerance,
                c.oracle_tolerance,
                c.oracle_tolerance,
                c.closed_form_tolerance,
                c.closed_form_tolerance,
            ],
            detail: notes.join("; "),
        })
    }

    fn a11(&self) -> Result<Outcome, CliError> {
        let check = &self.cfg.abundant;
        let run = self.abundant_run()?;
        let mut out = Outcome {
            pass: true,
            measured: vec![],
            expected: vec![],
            tolerance: vec![],
            detail: String::new(),
        };
        let mut samples_used = 0;
        for k in 0..check.lambda.len() {
            let mut samples = Vec::new();
            for t in &run.traces {
                samples.extend(
                    t.update_samples_of(k).ok_or_else(|| {
                        CliError::Config("update samples were not recorded".into())
                    })?,
                );
            }
            let rep = dominance_check(
                &samples,
                check.m,
                check.lambda[0],
                self.cfg.dominance.confidence,
            )?;
            samples_used = rep.n;
            out.pass &= rep.pass;
            out.measured.push(rep.max_excess);
            out.expected.push(0.0);
            out.tolerance.push(rep.band);
        }
        out.detail = format!(
            "max excess of P̂(Q_k ≥ x) over the Poisson tail, {samples_used} samples per action"
        );
        Ok(out)
    }

    fn a12(&self) -> Result<Outcome, CliError> {
        let shape = self.cfg.lifespan.pareto_shape;
        let mut out = Outcome {
            pass: true,
            measured: vec![],
            expected: vec![],
            tolerance: vec![],
            detail: String::new(),
        };
        let mut notes = Vec::new();
        for (name, check) in [
            ("abundant", &self.cfg.abundant),
            ("deficient", &self.cfg.deficient),
        ] {
            for kind in [LifespanKind::Constant, LifespanKind::Pareto] {
                let run = check.run(&kind.dist(check.m, shape), false)?;
                let o = steady_outcome(
                    &run.est,
                    Quantity::ChoiceFrac,
                    &check.expected_choice,
                    self.cfg.lifespan.allowance,
                )?;
                out.pass &= o.pass;
                notes.push(format!(
                    "{name}/{}: {}",
                    kind.name(),
                    if o.pass { "ok" } else { "miss" }
                ));
                out.measured.extend(o.measured);
                out.expected.extend(o.expected);
                out.tolerance.extend(o.tolerance);
            }
        }
        out.detail = notes.join(", ");
        Ok(out)
    }

    fn a13(&self) -> Result<Outcome, CliError> {
        let c = &self.cfg.heterogeneous;
        let inst = c.instance();
        let theory = heterogeneous_limits(
            &inst.lambda,
            &inst.mu0,
            inst.alpha0,
            RegimeTag::MemoryAbundant,
        )?;
        let run = c.run(&LifespanDist::Exponential, false)?;
        let mut out = steady_outcome(
            &run.est,
            Quantity::ChoiceFrac,
            &theory.choice,
            c.choice_allowance,
        )?;
        out.detail = format!("effective rates {:?}", theory.effective_rates);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_config_parses() {
        let cfg = AcceptanceConfig::builtin();
        assert_eq!(cfg.deficient.seeds.len(), 8);
        assert_eq!(cfg.trajectories.seeds.len(), 20);
    }

    #[test]
    fn corrupted_ordering_is_rejected() {
        let text = BUILTIN.replacen(
            "lambda = [8.0, 6.0, 4.0, 2.0]",
            "lambda = [6.0, 8.0, 4.0, 2.0]",
            1,
        );
        assert!(matches!(
            AcceptanceConfig::from_toml(&text),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn damped_iteration_finds_linear_invariant_state() {
        let model = FluidModel::linear(vec![8.0, 6.0, 4.0], 1.0).unwrap();
        let q = damped_fixed_point(&model, &[1.0, 1.0, 1.0], 0.5, 1e-15, 1_000_000).unwrap();
        assert!(max_abs_diff(&q, &[6.0, 0.75, 0.5]) < 1e-12);
    }

    #[test]
    fn newton_and_jacobian_on_quadratic_rule() {
        let model =
            FluidModel::new(vec![8.0, 6.0], 1.0, WeightRule::Polynomial { eta: 2.0 }).unwrap();
        let q = newton_2d(&model, [3.0, 4.0]).unwrap();
        assert!((q[0] - 2.88).abs() < 1e-9 && (q[1] - 3.84).abs() < 1e-9);
        assert!(!jacobian_stable(&model, &q));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn unknown_criterion_fails() {
        let acc = Acceptance::new(AcceptanceConfig::builtin());
        assert!(!acc.run("A99").passed());
        assert!(acc.run("A8").passed());
    }
}
