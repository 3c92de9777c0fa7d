//! Experiment runners. Each returns its artifacts as named byte buffers so
//! callers can write them or compare them.

use fadingmem::estimators::{estimate, estimate_rows, EstimateRow};
use fadingmem::fluid::{integrate, FluidModel, FluidState, FluidTrajectory};
use fadingmem::sim::{conditional_update_snapshot, sample_path, simulate};
use fadingmem::theory::{
    deficient_choice_probs, heterogeneous_limits, invariant_state_linear, invariant_state_poly,
    invariant_states_eta_gt1_k2, InvariantCase, InvariantReport, RegimeTag,
};
use fadingmem::{Instance, WeightRule};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, LifespanKind};
use crate::output::{self, csv_bytes};
use crate::CliError;

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn csv<R: Serialize>(name: &str, schema: &str, rows: &[R]) -> Result<Self, CliError> {
        Ok(Artifact {
            name: name.into(),
            bytes: csv_bytes(schema, rows)?,
        })
    }
}

/// A grid cell that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub run_id: u64,
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<CellFailure>,
}

impl RunOutput {
    fn new(mut artifacts: Vec<Artifact>, failures: Vec<CellFailure>) -> Result<Self, CliError> {
        if !failures.is_empty() {
            artifacts.push(Artifact::csv(
                "failures.csv",
                output::FAILURES_SCHEMA,
                &failures,
            )?);
        }
        Ok(RunOutput {
            artifacts,
            failures,
        })
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool if `None`.
pub fn with_threads<R: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> Result<R, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<RunOutput, CliError> {
    with_threads(threads, || match cfg.kind {
        ExperimentKind::SteadySweep | ExperimentKind::LifespanStudy => run_steady_sweep(cfg),
        ExperimentKind::Trajectories => run_trajectories(cfg),
        ExperimentKind::EtaStudy => run_eta_study(cfg),
        ExperimentKind::DeficientSnapshot => run_snapshot(cfg),
        ExperimentKind::Limits => run_limits(cfg),
        ExperimentKind::Fluid => run_fluid(cfg),
        ExperimentKind::Acceptance => Err(CliError::Config(
            "acceptance configs are read by the `accept` subcommand".into(),
        )),
    })?
}

/// Steady-state row: the trace columns followed by lifespan and theory overlays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyRow {
    pub run_id: u64,
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    pub alpha0: f64,
    pub k: usize,
    pub choice_frac: f64,
    pub choice_se: f64,
    pub qbar: f64,
    pub qbar_se: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub events: u64,
    pub lifespan: &'static str,
    pub c_abundant: Option<f64>,
    pub c_deficient: Option<f64>,
    pub q_abundant: Option<f64>,
    pub q_deficient: Option<f64>,
}

/// Limiting `(c, q)` overlays for both regimes; `None` where no closed form applies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TheoryOverlay {
    pub c_abundant: Option<Vec<f64>>,
    pub q_abundant: Option<Vec<f64>>,
    pub c_deficient: Option<Vec<f64>>,
    pub q_deficient: Option<Vec<f64>>,
}

pub fn theory_overlay(inst: &Instance) -> TheoryOverlay {
    let mut out = TheoryOverlay::default();
    match inst.weight {
        WeightRule::Linear => {
            for regime in [RegimeTag::MemoryAbundant, RegimeTag::MemoryDeficient] {
                if let Ok(h) = heterogeneous_limits(&inst.lambda, &inst.mu0, inst.alpha0, regime) {
                    match regime {
                        RegimeTag::MemoryAbundant => {
                            out.c_abundant = Some(h.choice);
                            out.q_abundant = Some(h.rewards);
                        }
                        RegimeTag::MemoryDeficient => {
                            out.c_deficient = Some(h.choice);
                            out.q_deficient = Some(h.rewards);
                        }
                    }
                }
            }
        }
        weight => {
            let uniform = inst.mu0.iter().all(|&x| x == 1.0);
            if uniform {
                if let Ok(c) = deficient_choice_probs(&inst.lambda, inst.alpha0, &weight) {
                    out.q_deficient =
                        Some(inst.lambda.iter().zip(&c).map(|(l, c)| l * c).collect());
                    out.c_deficient = Some(c);
                }
            }
        }
    }
    out
}

fn pick(v: &Option<Vec<f64>>, j: usize) -> Option<f64> {
    v.as_ref().map(|v| v[j])
}

struct SteadyCell {
    run_id: u64,
    seed: u64,
    lifespan: LifespanKind,
    instance: Instance,
}

fn steady_cells(cfg: &ExperimentConfig) -> Result<Vec<SteadyCell>, CliError> {
    let base = cfg.scaled_instance()?;
    let mut cells = Vec::new();
    for &lifespan in &cfg.lifespan.kinds {
        for m in cfg.ms() {
            for alpha0 in cfg.alpha0s() {
                for beta in cfg.betas() {
                    for &seed in &cfg.run.seeds {
                        let mut instance = base.with_m(m).with_beta(beta);
                        instance.alpha0 = alpha0;
                        cells.push(SteadyCell {
                            run_id: cells.len() as u64,
                            seed,
                            lifespan,
                            instance,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn run_steady_cell(cfg: &ExperimentConfig, cell: &SteadyCell) -> Result<Vec<SteadyRow>, String> {
    let inst = &cell.instance;
    let params = inst.realize().map_err(|e| e.to_string())?;
    let lifespan = cell.lifespan.dist(inst.m, cfg.lifespan.pareto_shape);
    let sim_cfg = cfg.run.sim_config(inst.beta, cell.seed, cell.run_id);
    let trace = simulate(&params, &lifespan, &sim_cfg).map_err(|e| e.to_string())?;
    let est = estimate(&trace, inst.m).map_err(|e| e.to_string())?;
    let theory = theory_overlay(inst);
    Ok(estimate_rows(
        &est,
        &trace,
        cell.run_id,
        cell.seed,
        inst.m,
        inst.beta,
        inst.alpha0,
    )
    .into_iter()
    .enumerate()
    .map(|(j, r): (usize, EstimateRow)| SteadyRow {
        run_id: r.run_id,
        seed: r.seed,
        m: r.m,
        beta: r.beta,
        alpha0: r.alpha0,
        k: r.k,
        choice_frac: r.choice_frac,
        choice_se: r.choice_se,
        qbar: r.qbar,
        qbar_se: r.qbar_se,
        horizon: r.horizon,
        burn_in: r.burn_in,
        events: r.events,
        lifespan: cell.lifespan.name(),
        c_abundant: pick(&theory.c_abundant, j),
        c_deficient: pick(&theory.c_deficient, j),
        q_abundant: pick(&theory.q_abundant, j),
        q_deficient: pick(&theory.q_deficient, j),
    })
    .collect())
}

/// One simulation per `(lifespan, m, α₀, β, seed)` cell, rows in grid order.
pub fn run_steady_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let cells = steady_cells(cfg)?;
    let results: Vec<_> = cells.par_iter().map(|c| run_steady_cell(cfg, c)).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(r) => rows.extend(r),
            Err(error) => {
                log::warn!("cell {} failed: {error}", cell.run_id);
                failures.push(CellFailure {
                    run_id: cell.run_id,
                    seed: cell.seed,
                    m: cell.instance.m,
                    beta: cell.instance.beta,
                    error,
                });
            }
        }
    }
    RunOutput::new(
        vec![Artifact::csv("steady.csv", output::STEADY_SCHEMA, &rows)?],
        failures,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub run_id: u64,
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    pub t: f64,
    pub k: usize,
    pub q_stoch: f64,
    pub q_fluid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub run_id: u64,
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    /// `sup_t ‖Q(mt)/m − q(t)‖₁` over the grid.
    pub sup_l1: f64,
    /// `sup_t max_k |Q_k(mt)/m − q_k(t)|` over the grid.
    pub sup_max: f64,
}

/// Stochastic path and fluid solution on the same scaled grid.
pub struct PairedPath {
    pub scaled: Vec<Vec<f64>>,
    pub fluid: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl PairedPath {
    pub fn sup_distances(&self) -> (f64, f64) {
        let mut l1 = 0.0f64;
        let mut max = 0.0f64;
        for (s, f) in self.scaled.iter().zip(&self.fluid) {
            let d: Vec<f64> = s.iter().zip(f).map(|(a, b)| (a - b).abs()).collect();
            l1 = l1.max(d.iter().sum());
            max = max.max(d.iter().copied().fold(0.0, f64::max));
        }
        (l1, max)
    }
}

/// Fluid solution from the origin, matching the simulator's `Q(0) = 0`.
pub fn fluid_from_origin(
    inst: &Instance,
    t_max: f64,
    step: f64,
) -> Result<FluidTrajectory<f64>, CliError> {
    if inst.mu0.iter().any(|&x| x != 1.0) {
        return Err(CliError::Config(
            "trajectories need uniform unit decay".into(),
        ));
    }
    let model = FluidModel::new(inst.lambda.clone(), inst.alpha0, inst.weight)?;
    Ok(integrate(
        &model,
        &FluidState::zeros(inst.lambda.len()),
        t_max,
        step,
    )?)
}

/// Samples `Q(m t)/m` on `t = 0, grid, …, t_max` and pairs it with `fluid`.
pub fn paired_path(
    inst: &Instance,
    fluid: &FluidTrajectory<f64>,
    t_max: f64,
    grid: f64,
    seed: u64,
    run_id: u64,
) -> Result<PairedPath, CliError> {
    let m = inst.m as f64;
    let params = inst.realize()?;
    let rows = sample_path(&params, t_max * m, grid * m, seed, run_id)?;
    let times: Vec<f64> = (0..rows.len()).map(|j| j as f64 * grid).collect();
    Ok(PairedPath {
        scaled: rows
            .iter()
            .map(|q| q.iter().map(|&x| x as f64 / m).collect())
            .collect(),
        fluid: times.iter().map(|&t| fluid.state_at(t)).collect(),
        times,
    })
}

pub fn run_trajectories(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let base = cfg.scaled_instance()?;
    let spec = &cfg.trajectories;
    let fluid = fluid_from_origin(&base, spec.t_max, spec.fluid_step)?;
    let mut cells = Vec::new();
    for m in cfg.ms() {
        for beta in cfg.betas() {
            for &seed in &cfg.run.seeds {
                cells.push((cells.len() as u64, seed, base.with_m(m).with_beta(beta)));
            }
        }
    }
    let results: Vec<_> = cells
        .par_iter()
        .map(|(run_id, seed, inst)| {
            paired_path(inst, &fluid, spec.t_max, spec.grid, *seed, *run_id)
        })
        .collect();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for ((run_id, seed, inst), result) in cells.iter().zip(results) {
        match result {
            Ok(path) => {
                let (sup_l1, sup_max) = path.sup_distances();
                summary.push(TrajectorySummary {
                    run_id: *run_id,
                    seed: *seed,
                    m: inst.m,
                    beta: inst.beta,
                    sup_l1,
                    sup_max,
                });
                for (j, &t) in path.times.iter().enumerate() {
                    for k in 0..inst.lambda.len() {
                        rows.push(TrajectoryRow {
                            run_id: *run_id,
                            seed: *seed,
                            m: inst.m,
                            beta: inst.beta,
                            t,
                            k: k + 1,
                            q_stoch: path.scaled[j][k],
                            q_fluid: path.fluid[j][k],
                        });
                    }
                }
            }
            Err(e) => failures.push(CellFailure {
                run_id: *run_id,
                seed: *seed,
                m: inst.m,
                beta: inst.beta,
                error: e.to_string(),
            }),
        }
    }
    RunOutput::new(
        vec![
            Artifact::csv("trajectories.csv", output::TRAJECTORY_SCHEMA, &rows)?,
            Artifact::csv(
                "trajectory_summary.csv",
                output::TRAJECTORY_SUMMARY_SCHEMA,
                &summary,
            )?,
        ],
        failures,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaStateRow {
    pub eta: f64,
    pub alpha0: f64,
    /// 1-based index of the invariant state.
    pub state: usize,
    pub case: String,
    pub stability: String,
    pub k: usize,
    pub q: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRow {
    pub eta: f64,
    pub q_1: f64,
    pub q_2: f64,
    pub d_1: f64,
    pub d_2: f64,
}

/// Invariant states for the polynomial rule with exponent `eta`.
pub fn invariant_for_eta(inst: &Instance, eta: f64) -> Result<InvariantReport<f64>, CliError> {
    let lambda = &inst.lambda;
    if eta < 1.0 {
        Ok(invariant_state_poly(lambda, inst.alpha0, eta)?)
    } else if eta == 1.0 {
        Ok(invariant_state_linear(lambda, inst.alpha0)?)
    } else if lambda.len() == 2 {
        Ok(invariant_states_eta_gt1_k2(
            lambda[0],
            lambda[1],
            eta,
            inst.alpha0,
        )?)
    } else {
        Err(CliError::Config(format!(
            "eta = {eta} > 1 is only solved for two actions"
        )))
    }
}

fn label<S: Serialize>(value: &S) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn case_label(case: &InvariantCase) -> String {
    match case {
        InvariantCase::PolyMixed { i_star } => format!("poly_mixed_{i_star}"),
        other => match serde_json::to_value(other) {
            Ok(v) => v["branch"].as_str().unwrap_or_default().to_string(),
            Err(_) => String::new(),
        },
    }
}

fn state_rows(eta: f64, inst: &Instance, report: &InvariantReport<f64>) -> Vec<EtaStateRow> {
    let case = case_label(&report.case);
    let mut rows = Vec::new();
    for (s, state) in report.states.iter().enumerate() {
        for (k, &q) in state.q.iter().enumerate() {
            rows.push(EtaStateRow {
                eta,
                alpha0: inst.alpha0,
                state: s + 1,
                case: case.clone(),
                stability: label(&state.stability),
                k: k + 1,
                q,
                residual: state.residual,
            });
        }
    }
    rows
}

pub fn run_eta_study(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let inst = cfg.scaled_instance()?;
    let mut etas = cfg.sweep.eta.clone();
    for &e in &cfg.eta.field_eta {
        if !etas.contains(&e) {
            etas.push(e);
        }
    }
    let mut states = Vec::new();
    let mut failures = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        match invariant_for_eta(&inst, eta) {
            Ok(report) => states.extend(state_rows(eta, &inst, &report)),
            Err(e) => failures.push(CellFailure {
                run_id: i as u64,
                seed: 0,
                m: inst.m,
                beta: inst.beta,
                error: format!("eta {eta}: {e}"),
            }),
        }
    }
    let mut field = Vec::new();
    if inst.lambda.len() == 2 {
        let n = cfg.eta.field_points;
        for &eta in &cfg.eta.field_eta {
            let model = FluidModel::new(
                inst.lambda.clone(),
                inst.alpha0,
                WeightRule::Polynomial { eta },
            )?;
            for i in 0..n {
                for j in 0..n {
                    let q = [
                        inst.lambda[0] * i as f64 / (n - 1) as f64,
                        inst.lambda[1] * j as f64 / (n - 1) as f64,
                    ];
                    let d = model.drift(&q);
                    field.push(FieldRow {
                        eta,
                        q_1: q[0],
                        q_2: q[1],
                        d_1: d[0],
                        d_2: d[1],
                    });
                }
            }
        }
    }
    let mut artifacts = vec![Artifact::csv(
        "eta_states.csv",
        output::ETA_STATES_SCHEMA,
        &states,
    )?];
    if !field.is_empty() {
        artifacts.push(Artifact::csv(
            "eta_field.csv",
            output::ETA_FIELD_SCHEMA,
            &field,
        )?);
    }
    RunOutput::new(artifacts, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub regime: String,
    pub alpha0: f64,
    pub k: usize,
    pub lambda: f64,
    pub effective_rate: f64,
    pub c: f64,
    pub q: f64,
}

pub fn run_limits(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let inst = cfg.scaled_instance()?;
    let mut rows = Vec::new();
    for alpha0 in cfg.alpha0s() {
        for regime in [RegimeTag::MemoryAbundant, RegimeTag::MemoryDeficient] {
            let h = heterogeneous_limits(&inst.lambda, &inst.mu0, alpha0, regime)?;
            for k in 0..inst.lambda.len() {
                rows.push(LimitRow {
                    regime: label(&regime),
                    alpha0,
                    k: k + 1,
                    lambda: inst.lambda[k],
                    effective_rate: h.effective_rates[k],
                    c: h.choice[k],
                    q: h.rewards[k],
                });
            }
        }
    }
    RunOutput::new(
        vec![Artifact::csv("limits.csv", output::LIMITS_SCHEMA, &rows)?],
        Vec::new(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    /// 1-based choice at update point `n`.
    pub choice: usize,
    /// 1-based action whose reward is reported at update point `n + 1`.
    pub k: usize,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    /// `λ_k` if `k` is the conditioning choice, else 0.
    pub theory: f64,
}

pub fn run_snapshot(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let base = cfg.scaled_instance()?;
    let mut cells = Vec::new();
    for m in cfg.ms() {
        for beta in cfg.betas() {
            for &seed in &cfg.run.seeds {
                cells.push((cells.len() as u64, seed, base.with_m(m).with_beta(beta)));
            }
        }
    }
    let results: Vec<_> = cells
        .par_iter()
        .map(|(_, seed, inst)| {
            let params = inst.realize()?;
            Ok::<_, CliError>(conditional_update_snapshot(
                &params,
                inst.m,
                *seed,
                cfg.snapshot.samples,
            )?)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((run_id, seed, inst), result) in cells.iter().zip(results) {
        match result {
            Ok(rep) => {
                let k = inst.lambda.len();
                for c in 0..k {
                    for i in 0..k {
                        rows.push(SnapshotRow {
                            seed: *seed,
                            m: inst.m,
                            beta: inst.beta,
                            choice: c + 1,
                            k: i + 1,
                            count: rep.counts[c],
                            mean: rep.mean[c][i],
                            se: rep.se[c][i],
                            theory: if c == i { inst.lambda[i] } else { 0.0 },
                        });
                    }
                }
            }
            Err(e) => failures.push(CellFailure {
                run_id: *run_id,
                seed: *seed,
                m: inst.m,
                beta: inst.beta,
                error: e.to_string(),
            }),
        }
    }
    RunOutput::new(
        vec![Artifact::csv(
            "snapshot.csv",
            output::SNAPSHOT_SCHEMA,
            &rows,
        )?],
        failures,
    )
}

pub fn run_fluid(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let inst = cfg.scaled_instance()?;
    let spec = &cfg.fluid;
    let model = FluidModel::new(inst.lambda.clone(), inst.alpha0, inst.weight)?;
    let q0 = if spec.q0.is_empty() {
        FluidState::zeros(inst.lambda.len())
    } else {
        FluidState::new(spec.q0.clone())?
    };
    let traj = integrate(&model, &q0, spec.horizon, spec.step)?;
    let mut bytes = format!("#schema={}\n", output::FLUID_SCHEMA).into_bytes();
    traj.write_csv(&mut bytes)?;
    RunOutput::new(
        vec![Artifact {
            name: "fluid.csv".into(),
            bytes,
        }],
        Vec::new(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    const SWEEP: &str = r#"
        kind = "steady_sweep"
        [instance]
        lambda = [8.0, 6.0, 4.0, 2.0]
        beta = 1.0
        alpha0 = 1.0
        m = 20
        [run]
        horizon = 2e3
        seeds = [5, 6]
        [sweep]
        beta = [0.01, 1.0]
    "#;

    #[test]
    fn sweep_is_reproducible_across_thread_counts() {
        let c = cfg(SWEEP);
        let one = run_experiment(&c, Some(1)).unwrap();
        let four = run_experiment(&c, Some(4)).unwrap();
        assert_eq!(one, four);
        let text = String::from_utf8(one.artifacts[0].bytes.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("#schema=fadingmem.steady.v1"));
        assert!(lines.next().unwrap().starts_with(
            "run_id,seed,m,beta,alpha0,k,choice_frac,choice_se,qbar,qbar_se,horizon,burn_in,events,lifespan"
        ));
        assert_eq!(text.lines().count(), 2 + 2 * 2 * 4);
    }

    #[test]
    fn single_cell_matches_direct_call() {
        let mut c = cfg(SWEEP);
        c.sweep.beta.clear();
        c.run.seeds = vec![9];
        let out = run_steady_sweep(&c).unwrap();
        let inst = c.scaled_instance().unwrap();
        let trace = simulate(
            &inst.realize().unwrap(),
            &fadingmem::LifespanDist::Exponential,
            &c.run.sim_config(1.0, 9, 0),
        )
        .unwrap();
        let est = estimate(&trace, 20).unwrap();
        let text = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
        let first: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(first[6].parse::<f64>().unwrap(), est.choice_frac[0]);
        assert_eq!(first[8].parse::<f64>().unwrap(), est.qbar_scaled[0]);
    }

    #[test]
    fn failing_cell_is_isolated() {
        let mut c = cfg(SWEEP);
        c.run.max_events = 100;
        c.sweep.beta = vec![1.0];
        c.run.seeds = vec![1];
        let out = run_steady_sweep(&c).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert!(out.artifact("failures.csv").is_some());
    }

    #[test]
    fn overlay_uses_effective_rates() {
        let mut inst = Instance::uniform(vec![8.0, 6.0], 0.5, 1.0, WeightRule::Linear, 400);
        inst.mu0 = vec![2.0, 1.0];
        let o = theory_overlay(&inst);
        let c = o.c_abundant.unwrap();
        assert!((c[0] - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn eta_study_outputs() {
        let c = cfg(r#"
            kind = "eta_study"
            [instance]
            lambda = [8.0, 6.0]
            beta = 1.0
            alpha0 = 1.0
            m = 100
            [sweep]
            eta = [0.25, 0.5, 1.0]
            [eta]
            field_eta = [2.0]
            field_points = 5
        "#);
        let out = run_experiment(&c, Some(2)).unwrap();
        assert!(out.failures.is_empty());
        let states =
            String::from_utf8(out.artifact("eta_states.csv").unwrap().bytes.clone()).unwrap();
        // 3 exponents with one state, η = 2 with three, two coordinates each
        assert_eq!(states.lines().count(), 2 + 2 * (3 + 3));
        let field =
            String::from_utf8(out.artifact("eta_field.csv").unwrap().bytes.clone()).unwrap();
        assert_eq!(field.lines().count(), 2 + 25);
    }

    #[test]
    fn trajectory_fluid_column_is_integrator_output() {
        let c = cfg(r#"
            kind = "trajectories"
            [instance]
            lambda = [8.0, 6.0, 4.0]
            beta = 10.0
            alpha0 = 1.0
            m = 20
            [run]
            seeds = [1]
            [trajectories]
            t_max = 2.0
            grid = 0.5
        "#);
        let inst = c.scaled_instance().unwrap();
        let fluid = fluid_from_origin(&inst, 2.0, 1e-3).unwrap();
        let path = paired_path(&inst, &fluid, 2.0, 0.5, 1, 0).unwrap();
        assert_eq!(path.times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        for (t, f) in path.times.iter().zip(&path.fluid) {
            assert_eq!(f, &fluid.state_at(*t));
        }
        let out = run_experiment(&c, None).unwrap();
        assert_eq!(out.artifacts.len(), 2);
    }

    #[test]
    fn limits_and_fluid_outputs() {
        let c = cfg(r#"
            kind = "limits"
            [instance]
            lambda = [8.0, 6.0, 4.0, 2.0]
            beta = 1.0
            alpha0 = 0.5
            m = 200
        "#);
        let out = run_experiment(&c, None).unwrap();
        let text = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
        assert!(text.contains("memory_abundant,0.5,1,8.0,8.0,0.8125"));

        let mut f = c.clone();
        f.kind = ExperimentKind::Fluid;
        f.fluid.horizon = 1.0;
        let out = run_experiment(&f, None).unwrap();
        let text = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
        assert!(text.starts_with("#schema=fadingmem.fluid.v1\nt,q_1,q_2,q_3,q_4\n"));
    }
}
