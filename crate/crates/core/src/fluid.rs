//! Deterministic fluid model of the scaled reward process.
//!
//! The fluid solution solves `q̇_k = λ_k p_k(q) − q_k`, where `p(q)` is the
//! reward-matching rule applied to `q` with floor `α₀`. Trajectories are
//! integrated with fixed-step classic RK4 so runs are bit-reproducible.
//!
//! The drift has a kink wherever `q_k = α₀`. RK4 loses its formal order when
//! a step crosses the kink; step halving bounds the actual error.

use std::io;

use thiserror::Error;

use crate::model::{choice_distribution, validate_rates, ModelError, WeightRule};
use crate::scalar::{count, l1_distance, l1_norm, lit, Real};

#[derive(Debug, Error)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state has {got} coordinates, model has {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("step size {0} outside (0, {MAX_STEP}]")]
    InvalidStep(f64),
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
    #[error("coordinate {coord} reached {value} at t = {time}")]
    Negative { time: f64, coord: usize, value: f64 },
    #[error("distance to the invariant state never entered [{lo}, {hi}]")]
    FitWindowNotEntered { lo: f64, hi: f64 },
    #[error("trajectory ends {0} away from the invariant state; integrate longer")]
    NotConverged(f64),
}

/// Largest admissible RK4 step.
pub const MAX_STEP: f64 = 0.01;
/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Negative values above `-CLAMP_THRESHOLD` are rounding noise and clamped to 0.
pub const CLAMP_THRESHOLD: f64 = 1e-12;

/// Scaled recallable rewards, one nonnegative entry per action.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState<T>(Vec<T>);

impl<T: Real> FluidState<T> {
    pub fn new(q: Vec<T>) -> Result<Self, ModelError> {
        if q.is_empty() {
            return Err(ModelError::NoActions);
        }
        for (index, &x) in q.iter().enumerate() {
            if !(x.is_finite() && x >= T::zero()) {
                return Err(ModelError::InvalidEntry { what: "q", index });
            }
        }
        Ok(FluidState(q))
    }

    pub fn zeros(k: usize) -> Self {
        FluidState(vec![T::zero(); k])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> std::ops::Deref for FluidState<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Parameters of the fluid ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel<T> {
    pub lambda: Vec<T>,
    pub alpha0: T,
    pub weight: WeightRule<T>,
}

impl<T: Real> FluidModel<T> {
    pub fn new(lambda: Vec<T>, alpha0: T, weight: WeightRule<T>) -> Result<Self, ModelError> {
        validate_rates(&lambda)?;
        if !(alpha0.is_finite() && alpha0 > T::zero()) {
            return Err(ModelError::InvalidEntry {
                what: "alpha0",
                index: 0,
            });
        }
        weight.validate()?;
        Ok(FluidModel {
            lambda,
            alpha0,
            weight,
        })
    }

    /// Linear reward matching.
    pub fn linear(lambda: Vec<T>, alpha0: T) -> Result<Self, ModelError> {
        Self::new(lambda, alpha0, WeightRule::Linear)
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn choice_probs(&self, q: &[T]) -> Vec<T> {
        // The floor α₀ > 0 keeps every weight positive, and stage states of
        // the integrator may sit a hair below zero, which the floor absorbs.
        let floored: Vec<T> = q.iter().map(|&x| x.max(self.alpha0)).collect();
        choice_distribution(&floored, self.alpha0, &self.weight)
            .expect("positive floor gives a defined distribution")
    }

    /// `λ_k p_k(q) − q_k`, written into `out`.
    pub fn drift_into(&self, q: &[T], out: &mut [T]) {
        let p = self.choice_probs(q);
        for k in 0..q.len() {
            out[k] = self.lambda[k] * p[k] - q[k];
        }
    }

    pub fn drift(&self, q: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); q.len()];
        self.drift_into(q, &mut out);
        out
    }

    /// `‖drift(q)‖₁`: zero exactly at invariant states.
    pub fn residual(&self, q: &[T]) -> T {
        l1_norm(&self.drift(q))
    }

    /// Upper bound on the L1 Lipschitz constant of the drift, from the
    /// column sums of the Jacobian of `p` and the unit decay term.
    pub fn lipschitz_bound(&self) -> T {
        let two = lit::<T>(2.0);
        let lambda1 = self.lambda[0];
        let k: T = count(self.k());
        let sensitivity = match self.weight {
            WeightRule::Linear => two / (k * self.alpha0),
            WeightRule::Polynomial { eta } => two * eta / self.alpha0,
            WeightRule::Exponential { c } => two * c,
        };
        T::one() + lambda1 * sensitivity
    }

    /// Potential `g(q) = Σ_k (q_k ∨ α₀)`.
    pub fn potential(&self, q: &[T]) -> T {
        potential(q, self.alpha0)
    }
}

/// Choice probabilities in the fluid scale, `p_k = w(q_k ∨ α₀) / Σ_i w(q_i ∨ α₀)`.
pub fn fluid_choice_probs<T: Real>(
    q: &FluidState<T>,
    alpha0: T,
    weight: &WeightRule<T>,
) -> Result<Vec<T>, ModelError> {
    if !(alpha0 > T::zero()) {
        return Err(ModelError::InvalidEntry {
            what: "alpha0",
            index: 0,
        });
    }
    choice_distribution(q, alpha0, weight)
}

/// Fluid drift `λ_k p_k(q) − q_k`.
pub fn drift<T: Real>(
    q: &FluidState<T>,
    lambda: &[T],
    alpha0: T,
    weight: &WeightRule<T>,
) -> Result<Vec<T>, FluidError> {
    if lambda.len() != q.len() {
        return Err(FluidError::Dimension {
            got: q.len(),
            expected: lambda.len(),
        });
    }
    let p = fluid_choice_probs(q, alpha0, weight)?;
    Ok(lambda
        .iter()
        .zip(p)
        .zip(q.iter())
        .map(|((&l, pk), &qk)| l * pk - qk)
        .collect())
}

/// Potential `g(q) = Σ_k (q_k ∨ α₀)`.
pub fn potential<T: Real>(q: &[T], alpha0: T) -> T {
    q.iter().fold(T::zero(), |acc, &x| acc + x.max(alpha0))
}

/// Sampled fluid solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<FluidState<T>>,
    pub step_size: T,
    /// `‖drift‖₁` at the final state.
    pub final_residual: T,
}

impl<T: Real> FluidTrajectory<T> {
    pub fn final_state(&self) -> &FluidState<T> {
        self.states
            .last()
            .expect("trajectory has at least the initial state")
    }

    /// Linear interpolation of the sampled path at time `t`.
    pub fn state_at(&self, t: T) -> Vec<T> {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            return self.states[0].to_vec();
        }
        if idx >= self.times.len() {
            return self.final_state().to_vec();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        self.states[idx - 1]
            .iter()
            .zip(self.states[idx].iter())
            .map(|(&a, &b)| a + (b - a) * w)
            .collect()
    }

    /// Writes `t, q_1, …, q_K` rows.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let k = self.states[0].len();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=k).map(|i| format!("q_{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, q) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for x in q.iter() {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Integrates the fluid ODE from `q0` over `[0, horizon]` with RK4 step `dt`.
///
/// States are recorded every `⌈0.01 / dt⌉` steps plus the final instant.
pub fn integrate<T: Real>(
    model: &FluidModel<T>,
    q0: &FluidState<T>,
    horizon: T,
    dt: T,
) -> Result<FluidTrajectory<T>, FluidError> {
    let k = model.k();
    if q0.len() != k {
        return Err(FluidError::Dimension {
            got: q0.len(),
            expected: k,
        });
    }
    if !(dt > T::zero() && dt <= lit(MAX_STEP)) {
        return Err(FluidError::InvalidStep(to_f64(dt)));
    }
    if !(horizon > T::zero() && horizon.is_finite()) {
        return Err(FluidError::InvalidHorizon(to_f64(horizon)));
    }
    let clamp = lit::<T>(CLAMP_THRESHOLD).max(T::epsilon() * lit(16.0));
    let stride = (MAX_STEP / to_f64(dt)).ceil().max(1.0) as usize;
    let full_steps = (horizon / dt)
        .floor()
        .to_usize()
        .expect("finite step count");
    let tail = horizon - dt * count::<T>(full_steps);
    let has_tail = tail > dt * lit(1e-9);

    let half = lit::<T>(0.5);
    let sixth = T::one() / lit(6.0);
    let mut q = q0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![T::zero(); k],
        vec![T::zero(); k],
        vec![T::zero(); k],
        vec![T::zero(); k],
    );
    let mut stage = vec![T::zero(); k];

    let mut times = vec![T::zero()];
    let mut states = vec![q0.clone()];

    let mut rk4 = |q: &mut Vec<T>, h: T, time: T| -> Result<(), FluidError> {
        model.drift_into(q, &mut k1);
        for i in 0..k {
            stage[i] = q[i] + half * h * k1[i];
        }
        model.drift_into(&stage, &mut k2);
        for i in 0..k {
            stage[i] = q[i] + half * h * k2[i];
        }
        model.drift_into(&stage, &mut k3);
        for i in 0..k {
            stage[i] = q[i] + h * k3[i];
        }
        model.drift_into(&stage, &mut k4);
        for i in 0..k {
            let next = q[i] + h * sixth * (k1[i] + lit::<T>(2.0) * (k2[i] + k3[i]) + k4[i]);
            if !next.is_finite() {
                return Err(FluidError::NonFinite { time: to_f64(time) });
            }
            if next < T::zero() {
                if next < -clamp {
                    return Err(FluidError::Negative {
                        time: to_f64(time),
                        coord: i,
                        value: to_f64(next),
                    });
                }
                q[i] = T::zero();
            } else {
                q[i] = next;
            }
        }
        Ok(())
    };

    for step in 1..=full_steps {
        let time = dt * count::<T>(step);
        rk4(&mut q, dt, time)?;
        if step % stride == 0 || (step == full_steps && !has_tail) {
            times.push(time);
            states.push(FluidState(q.clone()));
        }
    }
    if has_tail {
        rk4(&mut q, tail, horizon)?;
        times.push(horizon);
        states.push(FluidState(q.clone()));
    }
    let final_residual = model.residual(&q);
    Ok(FluidTrajectory {
        times,
        states,
        step_size: dt,
        final_residual,
    })
}

/// Log-linear fit of the distance to an invariant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceFit<T> {
    /// Slope of `ln ‖q(t) − q^I‖₁` against `t`.
    pub slope: T,
    pub r_squared: T,
    pub points: usize,
}

/// Distances in `[FIT_LO, FIT_HI]` enter the fit.
pub const FIT_LO: f64 = 1e-8;
pub const FIT_HI: f64 = 1e-1;

/// Fits `ln ‖q(t) − q^I‖₁ ≈ a + slope · t` over the samples whose distance
/// lies in `[1e-8, 1e-1]`.
pub fn convergence_rate<T: Real>(
    traj: &FluidTrajectory<T>,
    q_inv: &[T],
) -> Result<ConvergenceFit<T>, FluidError> {
    let (lo, hi) = (lit::<T>(FIT_LO), lit::<T>(FIT_HI));
    let last = l1_distance(traj.final_state(), q_inv);
    let window: Vec<(T, T)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, q)| (t, l1_distance(q, q_inv)))
        .filter(|&(_, d)| d >= lo && d <= hi)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if window.len() < 3 {
        return Err(FluidError::FitWindowNotEntered {
            lo: FIT_LO,
            hi: FIT_HI,
        });
    }
    if last >= lit(1e-6) {
        return Err(FluidError::NotConverged(to_f64(last)));
    }
    let n: T = count(window.len());
    let mean_t = window.iter().fold(T::zero(), |a, &(t, _)| a + t) / n;
    let mean_y = window.iter().fold(T::zero(), |a, &(_, y)| a + y) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for &(t, y) in &window {
        let (dx, dy) = (t - mean_t, y - mean_y);
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > T::zero() {
        sxy * sxy / (sxx * syy)
    } else {
        T::one()
    };
    Ok(ConvergenceFit {
        slope,
        r_squared,
        points: window.len(),
    })
}
