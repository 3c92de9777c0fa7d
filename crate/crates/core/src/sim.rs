//! Exact event-driven simulation of the joint reward/choice process.
//!
//! Two engines share one driver loop:
//!
//! * the aggregate-rate Gillespie engine for exponential lifespans, which
//!   keeps only the counts `Q_k`;
//! * the scheduled-departure engine, which stores every recallable reward's
//!   expiry time in a min-heap and supports any lifespan distribution.
//!
//! Time is unscaled: a [`ModelParams`] realized from a scaled instance already
//! carries `μ = μ⁰/m` and `α = α₀ m`.
//!
//! The simulator is `f64` only; the generic scalar is reserved for the
//! deterministic parts of the crate.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Pareto, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{choice_distribution, sample_index, ModelError, ModelParams};
use crate::rng::{stream_rng, SimRng};

/// Default hard cap on events per run.
pub const DEFAULT_MAX_EVENTS: u64 = 5_000_000_000;
/// Default number of batches for batch means.
pub const DEFAULT_BATCHES: usize = 32;
/// Default burn-in as a fraction of the horizon.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;
/// Fewest snapshot pairs accepted per conditioning class.
pub const MIN_CLASS_SAMPLES: usize = 30;
/// Leading update points discarded by the snapshot sampler.
pub const SNAPSHOT_WARMUP: usize = 10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("event cap of {limit} reached at t = {}", partial.reached)]
    EventCap { limit: u64, partial: Box<Trace> },
    #[error("departure schedule holds {heap} entries but Q sums to {total}")]
    ScheduleInconsistent { heap: usize, total: u64 },
    #[error("departure schedule missing for a non-exponential lifespan")]
    ScheduleMissing,
    #[error("only {got} snapshot samples with choice {class}; need at least {needed}")]
    InsufficientSamples {
        class: usize,
        got: usize,
        needed: usize,
    },
}

/// Lifespan of a single unit of recallable reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum LifespanDist {
    /// Exponential with the rate `μ_k` of the action that earned the reward.
    Exponential,
    /// Deterministic lifespan.
    Constant { value: f64 },
    /// Pareto with minimum `scale` and tail index `shape > 1`.
    Pareto { scale: f64, shape: f64 },
}

impl LifespanDist {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            LifespanDist::Exponential => true,
            LifespanDist::Constant { value } => value.is_finite() && value > 0.0,
            LifespanDist::Pareto { scale, shape } => {
                scale.is_finite() && scale > 0.0 && shape.is_finite() && shape > 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!(
                "lifespan {self:?} needs positive parameters and Pareto shape > 1"
            )))
        }
    }

    /// Mean lifespan of a reward earned by an action with decay rate `mu`.
    pub fn mean(&self, mu: f64) -> f64 {
        match *self {
            LifespanDist::Exponential => 1.0 / mu,
            LifespanDist::Constant { value } => value,
            LifespanDist::Pareto { scale, shape } => scale * shape / (shape - 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> f64 {
        match *self {
            LifespanDist::Exponential => {
                let e: f64 = Exp1.sample(rng);
                e / mu
            }
            LifespanDist::Constant { value } => value,
            LifespanDist::Pareto { scale, shape } => Pareto::new(scale, shape)
                .expect("validated Pareto parameters")
                .sample(rng),
        }
    }
}

/// Scheduled expiry of one reward.
#[derive(Debug, Clone, Copy)]
pub struct Departure {
    pub time: f64,
    pub action: usize,
}

impl PartialEq for Departure {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Departure {}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.action.cmp(&other.action))
    }
}

pub type DepartureSchedule = BinaryHeap<Reverse<Departure>>;

#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    pub q: Vec<u64>,
    pub choice: usize,
    /// Present only for the scheduled engine.
    pub departures: Option<DepartureSchedule>,
}

impl SystemState {
    /// `Q(0) = 0` with `C(0)` drawn by the reward-matching rule, which is
    /// uniform because every weight equals `w(α)`.
    pub fn initial<R: Rng + ?Sized>(
        params: &ModelParams<f64>,
        scheduled: bool,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        let k = params.k();
        let p = choice_distribution(&vec![0.0; k], params.alpha, &params.weight)?;
        Ok(SystemState {
            t: 0.0,
            q: vec![0; k],
            choice: sample_index(&p, rng),
            departures: scheduled.then(BinaryHeap::new),
        })
    }

    pub fn total_rewards(&self) -> u64 {
        self.q.iter().sum()
    }

    /// Heap size equals `ΣQ` and no entry lies in the past.
    pub fn check_schedule(&self) -> Result<(), SimError> {
        if let Some(heap) = &self.departures {
            let total = self.total_rewards();
            if heap.len() as u64 != total {
                return Err(SimError::ScheduleInconsistent {
                    heap: heap.len(),
                    total,
                });
            }
            if let Some(Reverse(head)) = heap.peek() {
                if head.time < self.t {
                    return Err(SimError::Config(format!(
                        "departure at {} precedes the clock {}",
                        head.time, self.t
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    /// A reward arrived for the current choice.
    Arrival(usize),
    /// A reward of this action expired.
    Departure(usize),
    /// An update point; the payload is the newly sampled choice.
    Update(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    Arrival,
    Departure(usize),
    Update,
}

fn exp_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

fn resample_choice<R: Rng + ?Sized>(
    state: &mut SystemState,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> usize {
    let q: Vec<f64> = state.q.iter().map(|&x| x as f64).collect();
    let p = choice_distribution(&q, params.alpha, &params.weight)
        .expect("alpha > 0 keeps the distribution defined");
    state.choice = sample_index(&p, rng);
    state.choice
}

/// Draws the next event of the aggregate-rate engine without applying it.
fn draw_exponential<R: Rng + ?Sized>(
    state: &SystemState,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> (f64, Pending) {
    let arrival = params.lambda[state.choice];
    let departure: f64 = state
        .q
        .iter()
        .zip(&params.mu)
        .map(|(&n, &mu)| n as f64 * mu)
        .sum();
    let total = arrival + departure + params.beta;
    let at = state.t + exp_time(total, rng);
    let mut u = rng.random::<f64>() * total;
    if u < arrival {
        return (at, Pending::Arrival);
    }
    u -= arrival;
    if u < params.beta {
        return (at, Pending::Update);
    }
    u -= params.beta;
    let mut last = None;
    for (k, (&n, &mu)) in state.q.iter().zip(&params.mu).enumerate() {
        if n == 0 {
            continue;
        }
        last = Some(k);
        let rate = n as f64 * mu;
        if u < rate {
            return (at, Pending::Departure(k));
        }
        u -= rate;
    }
    // rounding pushed u past the last bucket
    match last {
        Some(k) => (at, Pending::Departure(k)),
        None => (at, Pending::Update),
    }
}

/// Draws the next event of the scheduled engine without applying it.
fn draw_scheduled<R: Rng + ?Sized>(
    state: &SystemState,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> Result<(f64, Pending), SimError> {
    let heap = state.departures.as_ref().ok_or(SimError::ScheduleMissing)?;
    // Memorylessness lets both exponential candidates be redrawn every step.
    let arrival = state.t + exp_time(params.lambda[state.choice], rng);
    let update = state.t + exp_time(params.beta, rng);
    let mut next = if arrival <= update {
        (arrival, Pending::Arrival)
    } else {
        (update, Pending::Update)
    };
    if let Some(Reverse(head)) = heap.peek() {
        if head.time < next.0 {
            next = (head.time, Pending::Departure(head.action));
        }
    }
    Ok(next)
}

fn apply<R: Rng + ?Sized>(
    state: &mut SystemState,
    params: &ModelParams<f64>,
    lifespan: &LifespanDist,
    at: f64,
    pending: Pending,
    rng: &mut R,
) -> Result<Event, SimError> {
    state.t = at;
    let event = match pending {
        Pending::Arrival => {
            let k = state.choice;
            state.q[k] += 1;
            if let Some(heap) = state.departures.as_mut() {
                let life = lifespan.sample(params.mu[k], rng);
                heap.push(Reverse(Departure {
                    time: at + life,
                    action: k,
                }));
            }
            Event::Arrival(k)
        }
        Pending::Departure(k) => {
            if let Some(heap) = state.departures.as_mut() {
                heap.pop();
            }
            if state.q[k] == 0 {
                return Err(SimError::ScheduleInconsistent {
                    heap: state.departures.as_ref().map_or(0, |h| h.len()),
                    total: state.total_rewards(),
                });
            }
            state.q[k] -= 1;
            Event::Departure(k)
        }
        Pending::Update => Event::Update(resample_choice(state, params, rng)),
    };
    debug_assert!(state.check_schedule().is_ok());
    Ok(event)
}

/// One step of the aggregate-rate Gillespie engine.
pub fn step_exponential<R: Rng + ?Sized>(
    state: &mut SystemState,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> Event {
    let (at, pending) = draw_exponential(state, params, rng);
    apply(state, params, &LifespanDist::Exponential, at, pending, rng)
        .expect("aggregate engine never departs from an empty action")
}

/// One step of the scheduled-departure engine.
pub fn step_scheduled<R: Rng + ?Sized>(
    state: &mut SystemState,
    params: &ModelParams<f64>,
    lifespan: &LifespanDist,
    rng: &mut R,
) -> Result<Event, SimError> {
    let (at, pending) = draw_scheduled(state, params, rng)?;
    apply(state, params, lifespan, at, pending, rng)
}

/// Stepping engine selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Gillespie for exponential lifespans, scheduled otherwise.
    Auto,
    Aggregate,
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub burn_in: f64,
    pub n_batches: usize,
    pub seed: u64,
    #[serde(default)]
    pub run_id: u64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    /// Keep `Q` at every update point after burn-in.
    #[serde(default)]
    pub record_update_samples: bool,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

impl SimConfig {
    /// Horizon and seed with default burn-in, batches and cap.
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimConfig {
            horizon,
            burn_in: DEFAULT_BURN_IN_FRACTION * horizon,
            n_batches: DEFAULT_BATCHES,
            seed,
            run_id: 0,
            max_events: DEFAULT_MAX_EVENTS,
            record_update_samples: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::Config(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(SimError::Config(format!(
                "burn-in {} must lie in [0, horizon)",
                self.burn_in
            )));
        }
        if self.n_batches < 2 {
            return Err(SimError::Config("at least two batches are required".into()));
        }
        if self.max_events == 0 {
            return Err(SimError::Config("event cap must be positive".into()));
        }
        Ok(())
    }
}

/// Time-weighted occupancy statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub k: usize,
    /// Time after burn-in spent with `C = k`.
    pub choice_time: Vec<f64>,
    /// `∫ Q_k(t) dt` after burn-in.
    pub reward_time_integral: Vec<f64>,
    pub horizon: f64,
    pub burn_in: f64,
    /// Clock value when the run stopped; equals `horizon` unless capped.
    pub reached: f64,
    pub event_count: u64,
    pub update_count: u64,
    /// Per-batch `choice_time`, `n_batches × K`.
    pub batch_choice_time: Vec<Vec<f64>>,
    /// Per-batch `reward_time_integral`, `n_batches × K`.
    pub batch_reward_integral: Vec<Vec<f64>>,
    /// `Q` just before each update point after burn-in, if requested.
    #[serde(skip)]
    pub update_samples: Option<Vec<Vec<u64>>>,
}

impl Trace {
    fn new(k: usize, config: &SimConfig) -> Self {
        Trace {
            k,
            choice_time: vec![0.0; k],
            reward_time_integral: vec![0.0; k],
            horizon: config.horizon,
            burn_in: config.burn_in,
            reached: 0.0,
            event_count: 0,
            update_count: 0,
            batch_choice_time: vec![vec![0.0; k]; config.n_batches],
            batch_reward_integral: vec![vec![0.0; k]; config.n_batches],
            update_samples: config.record_update_samples.then(Vec::new),
        }
    }

    pub fn n_batches(&self) -> usize {
        self.batch_choice_time.len()
    }

    pub fn effective_horizon(&self) -> f64 {
        self.horizon - self.burn_in
    }

    pub fn batch_length(&self) -> f64 {
        self.effective_horizon() / self.n_batches() as f64
    }

    /// Update-point samples of action `k`.
    pub fn update_samples_of(&self, k: usize) -> Option<Vec<u64>> {
        self.update_samples
            .as_ref()
            .map(|rows| rows.iter().map(|q| q[k]).collect())
    }
}

/// Receives the piecewise-constant path from the driver loop.
trait Observer {
    /// The state is constant on `[from, to)`.
    fn hold(&mut self, from: f64, to: f64, state: &SystemState);
    /// An update point at time `at`, called before the state changes.
    fn update(&mut self, _at: f64, _state: &SystemState) {}
    /// Called once at the end with the state at the horizon.
    fn finish(&mut self, _state: &SystemState) {}
}

impl Observer for Trace {
    fn hold(&mut self, from: f64, to: f64, state: &SystemState) {
        let mut from = from.max(self.burn_in);
        if to <= from {
            return;
        }
        let len = to - from;
        self.choice_time[state.choice] += len;
        for (acc, &n) in self.reward_time_integral.iter_mut().zip(&state.q) {
            *acc += n as f64 * len;
        }
        let width = self.batch_length();
        let last = self.n_batches() - 1;
        while from < to {
            let b = (((from - self.burn_in) / width) as usize).min(last);
            let end = if b == last {
                to
            } else {
                (self.burn_in + (b + 1) as f64 * width).min(to)
            };
            let seg = end - from;
            if seg <= 0.0 {
                // a boundary that rounds onto `from` belongs to the next batch
                let next = self.burn_in + (b + 1) as f64 * width;
                from = if next > from { next } else { to };
                continue;
            }
            self.batch_choice_time[b][state.choice] += seg;
            for (acc, &n) in self.batch_reward_integral[b].iter_mut().zip(&state.q) {
                *acc += n as f64 * seg;
            }
            from = end;
        }
    }

    fn update(&mut self, at: f64, state: &SystemState) {
        if at > self.burn_in {
            self.update_count += 1;
            if let Some(rows) = self.update_samples.as_mut() {
                rows.push(state.q.clone());
            }
        }
    }
}

/// Records `Q` at the grid times `0, dt, 2dt, …` up to the horizon.
struct PathRecorder {
    dt: f64,
    next: usize,
    last: usize,
    rows: Vec<Vec<u64>>,
}

impl Observer for PathRecorder {
    fn hold(&mut self, from: f64, to: f64, state: &SystemState) {
        while self.next <= self.last {
            let g = self.next as f64 * self.dt;
            if g < from || g >= to {
                break;
            }
            self.rows.push(state.q.clone());
            self.next += 1;
        }
    }

    fn finish(&mut self, state: &SystemState) {
        while self.next <= self.last {
            self.rows.push(state.q.clone());
            self.next += 1;
        }
    }
}

fn resolve_engine(engine: Engine, lifespan: &LifespanDist) -> Result<bool, SimError> {
    match (engine, lifespan) {
        (Engine::Auto, LifespanDist::Exponential)
        | (Engine::Aggregate, LifespanDist::Exponential) => Ok(false),
        (Engine::Aggregate, _) => Err(SimError::Config(
            "the aggregate engine needs exponential lifespans".into(),
        )),
        _ => Ok(true),
    }
}

/// Runs from `Q(0) = 0` to `horizon`, reporting to `observer`. Returns the
/// number of events applied, or `Err(events)` when the cap is hit.
/// Where the driver loop stopped.
struct Stop {
    events: u64,
    reached: f64,
    /// The event cap ended the run before the horizon.
    capped: bool,
}

fn drive<O: Observer>(
    params: &ModelParams<f64>,
    lifespan: &LifespanDist,
    scheduled: bool,
    horizon: f64,
    max_events: u64,
    rng: &mut SimRng,
    observer: &mut O,
) -> Result<Stop, SimError> {
    let mut state = SystemState::initial(params, scheduled, rng)?;
    let mut events = 0u64;
    loop {
        let (at, pending) = if scheduled {
            draw_scheduled(&state, params, rng)?
        } else {
            draw_exponential(&state, params, rng)
        };
        if at >= horizon {
            observer.hold(state.t, horizon, &state);
            state.t = horizon;
            observer.finish(&state);
            return Ok(Stop {
                events,
                reached: horizon,
                capped: false,
            });
        }
        if events >= max_events {
            observer.hold(state.t, at.min(horizon), &state);
            return Ok(Stop {
                events,
                reached: state.t,
                capped: true,
            });
        }
        observer.hold(state.t, at, &state);
        if pending == Pending::Update {
            observer.update(at, &state);
        }
        apply(&mut state, params, lifespan, at, pending, rng)?;
        events += 1;
    }
}

/// Simulates one run with the engine implied by the lifespan.
pub fn simulate(
    params: &ModelParams<f64>,
    lifespan: &LifespanDist,
    config: &SimConfig,
) -> Result<Trace, SimError> {
    simulate_with_engine(params, lifespan, config, Engine::Auto)
}

pub fn simulate_with_engine(
    params: &ModelParams<f64>,
    lifespan: &LifespanDist,
    config: &SimConfig,
    engine: Engine,
) -> Result<Trace, SimError> {
    params.validate()?;
    lifespan.validate()?;
    config.validate()?;
    let scheduled = resolve_engine(engine, lifespan)?;
    let mut rng = stream_rng(config.seed, config.run_id, 0);
    let mut trace = Trace::new(params.k(), config);
    let outcome = drive(
        params,
        lifespan,
        scheduled,
        config.horizon,
        config.max_events,
        &mut rng,
        &mut trace,
    )?;
    trace.event_count = outcome.events;
    trace.reached = outcome.reached;
    if outcome.capped {
        Err(SimError::EventCap {
            limit: config.max_events,
            partial: Box::new(trace),
        })
    } else {
        Ok(trace)
    }
}

/// `Q` on the grid `0, dt, …, n·dt` with `n = floor(horizon/dt)`, from one
/// aggregate-engine run started at `Q(0) = 0`.
pub fn sample_path(
    params: &ModelParams<f64>,
    horizon: f64,
    dt: f64,
    seed: u64,
    run_id: u64,
) -> Result<Vec<Vec<u64>>, SimError> {
    params.validate()?;
    if !(dt > 0.0 && horizon > 0.0 && dt <= horizon) {
        return Err(SimError::Config(format!(
            "grid step {dt} must lie in (0, horizon]"
        )));
    }
    let last = (horizon / dt + 1e-9).floor() as usize;
    let mut recorder = PathRecorder {
        dt,
        next: 0,
        last,
        rows: Vec::with_capacity(last + 1),
    };
    let mut rng = stream_rng(seed, run_id, 0);
    let outcome = drive(
        params,
        &LifespanDist::Exponential,
        false,
        horizon,
        DEFAULT_MAX_EVENTS,
        &mut rng,
        &mut recorder,
    )?;
    if outcome.capped {
        return Err(SimError::Config(
            "event cap reached while sampling a path".into(),
        ));
    }
    Ok(recorder.rows)
}

/// One `(C[n], Q[n+1])` pair of the snapshot sampler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotPair {
    pub choice: usize,
    pub q: Vec<u64>,
}

/// Reward vectors at update point `n + 1`, grouped by the choice made at `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotReport {
    pub m: u64,
    pub pairs: Vec<SnapshotPair>,
    /// Pairs per conditioning choice.
    pub counts: Vec<usize>,
    /// `mean[k][i]` estimates `E[Q_i/m | C = k]`.
    pub mean: Vec<Vec<f64>>,
    /// Standard errors of `mean`.
    pub se: Vec<Vec<f64>>,
}

/// Samples the process at consecutive update points.
///
/// Between update points the choice is fixed, so each reward already held
/// survives an interval of length `τ` with probability `e^{−μ_k τ}` and the
/// rewards earned in the interval that are still held form a Poisson
/// variable with mean `λ_C (1 − e^{−μ_C τ}) / μ_C`. Jumping from one update
/// point to the next with these exact laws gives the embedded sequence
/// without simulating individual rewards.
pub fn conditional_update_snapshot(
    params: &ModelParams<f64>,
    m: u64,
    seed: u64,
    n_samples: usize,
) -> Result<SnapshotReport, SimError> {
    params.validate()?;
    if m == 0 || n_samples == 0 {
        return Err(SimError::Config("m and n_samples must be positive".into()));
    }
    let ratio = params.beta * m as f64;
    if ratio > 0.01 {
        log::warn!("beta * m = {ratio}: the snapshot targets the memory-deficient regime");
    }
    let k = params.k();
    let mut rng = stream_rng(seed, 0, 1);
    let mut state = SystemState::initial(params, false, &mut rng)?;
    let mut pairs = Vec::with_capacity(n_samples);
    let mut step = 0usize;
    while pairs.len() < n_samples {
        let chosen = state.choice;
        let tau = exp_time(params.beta, &mut rng);
        for (j, n) in state.q.iter_mut().enumerate() {
            let survive = (-params.mu[j] * tau).exp();
            if *n > 0 {
                *n = Binomial::new(*n, survive)
                    .expect("probability in [0, 1]")
                    .sample(&mut rng);
            }
        }
        let mu = params.mu[chosen];
        let mean_new = params.lambda[chosen] * (-(-mu * tau).exp_m1()) / mu;
        if mean_new > 0.0 {
            let fresh: f64 = Poisson::new(mean_new)
                .expect("positive Poisson mean")
                .sample(&mut rng);
            state.q[chosen] += fresh as u64;
        }
        state.t += tau;
        if step >= SNAPSHOT_WARMUP {
            pairs.push(SnapshotPair {
                choice: chosen,
                q: state.q.clone(),
            });
        }
        step += 1;
        resample_choice(&mut state, params, &mut rng);
    }

    let scale = m as f64;
    let mut counts = vec![0usize; k];
    let mut sum = vec![vec![0.0; k]; k];
    let mut sum_sq = vec![vec![0.0; k]; k];
    for pair in &pairs {
        counts[pair.choice] += 1;
        for (i, &n) in pair.q.iter().enumerate() {
            let x = n as f64 / scale;
            sum[pair.choice][i] += x;
            sum_sq[pair.choice][i] += x * x;
        }
    }
    if let Some((class, &got)) = counts
        .iter()
        .enumerate()
        .find(|(_, &c)| c < MIN_CLASS_SAMPLES)
    {
        return Err(SimError::InsufficientSamples {
            class,
            got,
            needed: MIN_CLASS_SAMPLES,
        });
    }
    let mut mean = vec![vec![0.0; k]; k];
    let mut se = vec![vec![0.0; k]; k];
    for c in 0..k {
        let n = counts[c] as f64;
        for i in 0..k {
            let mu = sum[c][i] / n;
            let var = ((sum_sq[c][i] - n * mu * mu) / (n - 1.0)).max(0.0);
            mean[c][i] = mu;
            se[c][i] = (var / n).sqrt();
        }
    }
    Ok(SnapshotReport {
        m,
        pairs,
        counts,
        mean,
        se,
    })
}
