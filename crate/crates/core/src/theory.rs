//! Closed-form and numerically solved limits of the `m → ∞` system.
//!
//! Covers the limiting choice probabilities and scaled rewards in both
//! regimes, the fluid invariant states for linear and polynomial weights, and
//! the embedded choice chain of the memory-deficient regime.
//!
//! The regime is always an explicit input. Nothing here classifies a finite
//! `(m, β)` pair; [`regime_ratio`] only reports `β · m` as a diagnostic.

use serde::Serialize;
use thiserror::Error;

use crate::fluid::{integrate, FluidError, FluidModel, FluidState, DEFAULT_STEP};
use crate::model::{
    descending_order, effective_reward_rates, validate_rates, ModelError, WeightRule,
};
use crate::roots::{bisect, largest_root, RootError, ROOT_MAX_ITER, ROOT_REL_TOL};
use crate::scalar::{count, l1_distance, lit, Real};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("eta = {0} outside the admissible range {1}")]
    EtaOutOfRange(f64, &'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("matrix is not square row-stochastic: {0}")]
    NotStochastic(String),
    #[error("singular stationary system")]
    Singular,
    #[error("top two effective reward rates tie at {0}; the best action is not unique")]
    EffectiveTie(f64),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

/// Relative speed of choice updates versus memory decay in the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    /// `β_m ≫ 1/m`.
    MemoryAbundant,
    /// `β_m ≪ 1/m`.
    MemoryDeficient,
}

/// `β · m`: large values point to the abundant regime, small ones to the
/// deficient regime.
pub fn regime_ratio(beta: f64, m: u64) -> f64 {
    beta * m as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Unknown,
}

/// Which formula branch produced an [`InvariantReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "branch")]
pub enum InvariantCase {
    /// Linear rule, `α₀ ≤ λ₁/K`: the best action takes the rest of the mass.
    LinearConcentrated,
    /// Linear rule, `α₀ > λ₁/K`: every coordinate sits below the floor.
    LinearOblivious,
    /// Polynomial `η < 1`, `α₀ > λ₁/K`.
    PolyOblivious,
    /// Polynomial `η < 1`, `α₀` small enough that every coordinate is above the floor.
    PolyAllAboveFloor,
    /// Polynomial `η < 1`, intermediate `α₀`: actions `1..=i_star` sit above the floor.
    PolyMixed { i_star: usize },
    /// Polynomial `η > 1`, two actions: several invariant states.
    PolyMultiple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantState<T> {
    pub q: Vec<T>,
    pub stability: Stability,
    /// `‖drift(q)‖₁`.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport<T> {
    pub case: InvariantCase,
    pub states: Vec<InvariantState<T>>,
}

impl<T: Real> InvariantReport<T> {
    pub fn max_residual(&self) -> T {
        self.states
            .iter()
            .fold(T::zero(), |acc, s| acc.max(s.residual))
    }
}

fn check_alpha0<T: Real>(alpha0: T) -> Result<(), TheoryError> {
    if alpha0.is_finite() && alpha0 > T::zero() {
        Ok(())
    } else {
        Err(ModelError::InvalidEntry {
            what: "alpha0",
            index: 0,
        }
        .into())
    }
}

/// `α₀ ≤ λ₁/K`; the boundary belongs to the concentrated branch.
fn concentrated<T: Real>(lambda: &[T], alpha0: T) -> bool {
    alpha0 <= lambda[0] / count(lambda.len())
}

/// Unnormalized deficient-regime weights `(λ_k ∨ α₀) + (K − 1)α₀`.
fn deficient_weights<T: Real>(rates: &[T], alpha0: T) -> Vec<T> {
    let others = count::<T>(rates.len() - 1) * alpha0;
    rates.iter().map(|&l| l.max(alpha0) + others).collect()
}

fn normalize<T: Real>(mut v: Vec<T>) -> Vec<T> {
    let total = v.iter().fold(T::zero(), |a, &x| a + x);
    for x in v.iter_mut() {
        *x = *x / total;
    }
    v
}

/// Limiting steady-state choice probabilities `c_k`.
pub fn limit_choice_probs<T: Real>(
    lambda: &[T],
    alpha0: T,
    regime: RegimeTag,
) -> Result<Vec<T>, TheoryError> {
    validate_rates(lambda)?;
    check_alpha0(alpha0)?;
    let k = lambda.len();
    Ok(match regime {
        RegimeTag::MemoryAbundant if concentrated(lambda, alpha0) => {
            let side = alpha0 / lambda[0];
            let mut c = vec![side; k];
            c[0] = T::one() - count::<T>(k - 1) * side;
            c
        }
        RegimeTag::MemoryAbundant => vec![T::one() / count(k); k],
        RegimeTag::MemoryDeficient => normalize(deficient_weights(lambda, alpha0)),
    })
}

/// Limiting expected scaled recallable rewards `q_k`.
pub fn limit_rewards<T: Real>(
    lambda: &[T],
    alpha0: T,
    regime: RegimeTag,
) -> Result<Vec<T>, TheoryError> {
    validate_rates(lambda)?;
    check_alpha0(alpha0)?;
    let k = lambda.len();
    Ok(match regime {
        RegimeTag::MemoryAbundant if concentrated(lambda, alpha0) => {
            let mut q: Vec<T> = lambda.iter().map(|&l| l / lambda[0] * alpha0).collect();
            q[0] = lambda[0] - count::<T>(k - 1) * alpha0;
            q
        }
        RegimeTag::MemoryAbundant => lambda.iter().map(|&l| l / count(k)).collect(),
        RegimeTag::MemoryDeficient => {
            let c = normalize(deficient_weights(lambda, alpha0));
            lambda.iter().zip(c).map(|(&l, ck)| l * ck).collect()
        }
    })
}

fn state_report<T: Real>(
    model: &FluidModel<T>,
    q: Vec<T>,
    stability: Stability,
) -> InvariantState<T> {
    let residual = model.residual(&q);
    InvariantState {
        q,
        stability,
        residual,
    }
}

/// Unique invariant state of the linear fluid model.
pub fn invariant_state_linear<T: Real>(
    lambda: &[T],
    alpha0: T,
) -> Result<InvariantReport<T>, TheoryError> {
    let model = FluidModel::linear(lambda.to_vec(), alpha0)?;
    let q = limit_rewards(lambda, alpha0, RegimeTag::MemoryAbundant)?;
    let case = if concentrated(lambda, alpha0) {
        InvariantCase::LinearConcentrated
    } else {
        InvariantCase::LinearOblivious
    };
    // Global exponential convergence makes the unique state stable.
    Ok(InvariantReport {
        case,
        states: vec![state_report(&model, q, Stability::Stable)],
    })
}

/// Unique invariant state of the polynomial fluid model with `0 < η < 1`.
pub fn invariant_state_poly<T: Real>(
    lambda: &[T],
    alpha0: T,
    eta: T,
) -> Result<InvariantReport<T>, TheoryError> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(TheoryError::EtaOutOfRange(
            eta.to_f64().unwrap_or(f64::NAN),
            "(0, 1)",
        ));
    }
    let model = FluidModel::new(lambda.to_vec(), alpha0, WeightRule::Polynomial { eta })?;
    let k = lambda.len();
    let kf: T = count(k);
    // exponent η/(1−η); shares are computed relative to λ₁ to avoid overflow
    let expo = eta / (T::one() - eta);
    let rel = |j: usize, i: usize| (lambda[j] / lambda[i]).powf(expo);

    let (case, q) = if alpha0 > lambda[0] / kf {
        (
            InvariantCase::PolyOblivious,
            lambda.iter().map(|&l| l / kf).collect(),
        )
    } else {
        let share_sum = (0..k).fold(T::zero(), |a, j| a + rel(j, 0));
        let all_above: Vec<T> = (0..k).map(|j| lambda[j] * rel(j, 0) / share_sum).collect();
        if alpha0 <= all_above[k - 1] {
            (InvariantCase::PolyAllAboveFloor, all_above)
        } else {
            let (i_star, q) = poly_mixed_case(lambda, alpha0, eta)?;
            (InvariantCase::PolyMixed { i_star: i_star + 1 }, q)
        }
    };
    Ok(InvariantReport {
        case,
        states: vec![state_report(&model, q, Stability::Unknown)],
    })
}

/// Intermediate-`α₀` branch. Returns the 0-based index of the last action
/// above the floor together with the invariant state.
fn poly_mixed_case<T: Real>(
    lambda: &[T],
    alpha0: T,
    eta: T,
) -> Result<(usize, Vec<T>), TheoryError> {
    let k = lambda.len();
    let one = T::one();
    let expo = eta / (one - eta);
    let rel = |j: usize, i: usize| (lambda[j] / lambda[i]).powf(expo);
    // Threshold function with the split after position i (0-based):
    // α₀ · [(K − i − 1) + Σ_{j ≤ i} (λ_j/λ_i)^{η/(1−η)}].
    let threshold = |i: usize| {
        let s = (0..=i).fold(T::zero(), |a, j| a + rel(j, i));
        alpha0 * (count::<T>(k - i - 1) + s)
    };
    // The threshold is non-decreasing in i and λ is non-increasing, so the
    // indices with λ_i ≥ threshold(i) form a prefix; i* is its last element.
    let i_star = (0..k - 1)
        .take_while(|&i| lambda[i] >= threshold(i))
        .last()
        .ok_or_else(|| TheoryError::Internal("no action clears the floor".into()))?;

    let below = count::<T>(k - i_star - 1) * alpha0.powf(eta);
    let above = (0..=i_star).fold(T::zero(), |a, j| a + rel(j, i_star));
    let lam = lambda[i_star];
    let f = |x: T| x.powf(one - eta) - lam / (below + x.powf(eta) * above);
    let x = bisect(f, alpha0, lambda[0], lit(ROOT_REL_TOL), ROOT_MAX_ITER)?;

    let q: Vec<T> = (0..k)
        .map(|j| {
            if j < i_star {
                x * (lambda[j] / lam).powf(one / (one - eta))
            } else if j == i_star {
                x
            } else {
                x.powf(one - eta) * lambda[j] / lam * alpha0.powf(eta)
            }
        })
        .collect();
    if i_star + 1 < k && q[i_star + 1] >= alpha0 {
        return Err(TheoryError::Internal(format!(
            "action {} should sit below the floor",
            i_star + 2
        )));
    }
    Ok((i_star, q))
}

/// Perturbation size, horizon and return threshold of the stability probe.
pub const PROBE_EPS: f64 = 1e-3;
pub const PROBE_HORIZON: f64 = 50.0;
pub const PROBE_RETURN: f64 = 1e-4;

/// Perturbs `q` by `±ε(e₁ − e₂)`, integrates, and reports whether both
/// perturbed paths come back.
pub fn probe_stability<T: Real>(model: &FluidModel<T>, q: &[T]) -> Result<Stability, TheoryError> {
    let eps = lit::<T>(PROBE_EPS);
    for sign in [T::one(), -T::one()] {
        let mut start = q.to_vec();
        start[0] = (start[0] + sign * eps).max(T::zero());
        start[1] = (start[1] - sign * eps).max(T::zero());
        let traj = integrate(
            model,
            &FluidState::new(start)?,
            lit(PROBE_HORIZON),
            lit(DEFAULT_STEP),
        )?;
        if l1_distance(traj.final_state(), q) > lit(PROBE_RETURN) {
            return Ok(Stability::Unstable);
        }
    }
    Ok(Stability::Stable)
}

/// Invariant states of the two-action polynomial model with `η > 1`.
///
/// Reports the interior balance point, the state dominated by action 1, and
/// the state dominated by action 2, each labelled by [`probe_stability`].
pub fn invariant_states_eta_gt1_k2<T: Real>(
    lambda1: T,
    lambda2: T,
    eta: T,
    alpha0: T,
) -> Result<InvariantReport<T>, TheoryError> {
    if !(eta > T::one() && eta.is_finite()) {
        return Err(TheoryError::EtaOutOfRange(
            eta.to_f64().unwrap_or(f64::NAN),
            "(1, inf)",
        ));
    }
    let lambda = vec![lambda1, lambda2];
    let model = FluidModel::new(lambda.clone(), alpha0, WeightRule::Polynomial { eta })?;
    let one = T::one();

    // Interior state: q_k = λ_k^{1/(1−η)} / (λ₁^{η/(1−η)} + λ₂^{η/(1−η)}),
    // evaluated relative to λ₁.
    let p = eta / (one - eta);
    let r = lambda2 / lambda1;
    let denom = one + r.powf(p);
    let interior = vec![lambda1 / denom, lambda1 * r.powf(one / (one - eta)) / denom];
    if !(alpha0 < interior[0]) {
        return Err(TheoryError::Precondition(format!(
            "alpha0 = {alpha0} must be below {}",
            interior[0]
        )));
    }

    let a_eta = alpha0.powf(eta);
    let dominant = |lam: T| -> Result<(T, T), TheoryError> {
        // largest root of λ x^η/(x^η + α₀^η) = x on (α₀, λ]
        let h = |x: T| lam * x.powf(eta) / (x.powf(eta) + a_eta) - x;
        let top = largest_root(h, alpha0, lam, 1000)?;
        Ok((top, a_eta / (top.powf(eta) + a_eta)))
    };
    let (top1, share1) = dominant(lambda1)?;
    let second = vec![top1, lambda2 * share1];
    let (top2, share2) = dominant(lambda2)?;
    let third = vec![lambda1 * share2, top2];
    if !(second[1] < alpha0 && third[0] < alpha0) {
        return Err(TheoryError::Precondition(
            "a dominated coordinate does not sit below the floor".into(),
        ));
    }

    let mut states = Vec::with_capacity(3);
    for q in [interior, second, third] {
        let stability = probe_stability(&model, &q)?;
        states.push(state_report(&model, q, stability));
    }
    Ok(InvariantReport {
        case: InvariantCase::PolyMultiple,
        states,
    })
}

/// Embedded choice-chain kernel of the deficient regime,
/// `R_{k,i} = (q*_{k,i} ∨ α₀) / Σ_j (q*_{k,j} ∨ α₀)` with `q*_{k,i} = 1(k=i)·w(λ_k)`.
pub fn deficient_transition_matrix<T: Real>(
    lambda: &[T],
    alpha0: T,
    weight: &WeightRule<T>,
) -> Result<Vec<Vec<T>>, TheoryError> {
    validate_rates(lambda)?;
    check_alpha0(alpha0)?;
    weight.validate()?;
    let k = lambda.len();
    Ok((0..k)
        .map(|row| {
            let own = weight.weight(lambda[row]).max(alpha0);
            let total = own + count::<T>(k - 1) * alpha0;
            (0..k)
                .map(|col| {
                    if col == row {
                        own / total
                    } else {
                        alpha0 / total
                    }
                })
                .collect()
        })
        .collect())
}

/// Deficient-regime choice probabilities for a general weight,
/// proportional to `(w(λ_k) ∨ α₀) + (K − 1)α₀`.
pub fn deficient_choice_probs<T: Real>(
    lambda: &[T],
    alpha0: T,
    weight: &WeightRule<T>,
) -> Result<Vec<T>, TheoryError> {
    validate_rates(lambda)?;
    check_alpha0(alpha0)?;
    weight.validate()?;
    let transformed: Vec<T> = lambda.iter().map(|&l| weight.weight(l)).collect();
    Ok(normalize(deficient_weights(&transformed, alpha0)))
}

/// Stationary distribution `x = xR`, `Σx = 1`, by Gaussian elimination with
/// partial pivoting.
pub fn stationary_distribution<T: Real>(r: &[Vec<T>]) -> Result<Vec<T>, TheoryError> {
    let k = r.len();
    if k == 0 {
        return Err(TheoryError::NotStochastic("empty matrix".into()));
    }
    let tol = lit::<T>(1e-9);
    for (i, row) in r.iter().enumerate() {
        if row.len() != k {
            return Err(TheoryError::NotStochastic(format!(
                "row {i} has {} entries",
                row.len()
            )));
        }
        if row.iter().any(|&x| !(x.is_finite() && x >= T::zero())) {
            return Err(TheoryError::NotStochastic(format!(
                "row {i} has a bad entry"
            )));
        }
        let s = row.iter().fold(T::zero(), |a, &x| a + x);
        if (s - T::one()).abs() > tol {
            return Err(TheoryError::NotStochastic(format!("row {i} sums to {s}")));
        }
    }
    // Rows of A are the balance equations Σ_i x_i (R_{i,j} − δ_ij) = 0; the
    // last one is replaced by the normalization.
    let mut a: Vec<Vec<T>> = (0..k)
        .map(|j| {
            (0..k)
                .map(|i| r[i][j] - if i == j { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    let mut b = vec![T::zero(); k];
    a[k - 1] = vec![T::one(); k];
    b[k - 1] = T::one();

    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&x, &y| {
                a[x][col]
                    .abs()
                    .partial_cmp(&a[y][col].abs())
                    .expect("finite")
            })
            .expect("non-empty range");
        if a[pivot][col].abs() <= T::epsilon() {
            return Err(TheoryError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let factor = a[row][col] / a[col][col];
            if factor != T::zero() {
                let (upper, lower) = a.split_at_mut(row);
                for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *x = *x - factor * p;
                }
                b[row] = b[row] - factor * b[col];
            }
        }
    }
    let mut x = vec![T::zero(); k];
    for row in (0..k).rev() {
        let tail = (row + 1..k).fold(T::zero(), |acc, c| acc + a[row][c] * x[c]);
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Limits under action-dependent decay `μ_k = μ⁰_k / m`, in the caller's action order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeterogeneousLimits<T> {
    pub effective_rates: Vec<T>,
    pub choice: Vec<T>,
    pub rewards: Vec<T>,
}

/// Applies the uniform-decay limits to the effective rates `λ_k/μ⁰_k`.
pub fn heterogeneous_limits<T: Real>(
    lambda: &[T],
    mu0: &[T],
    alpha0: T,
    regime: RegimeTag,
) -> Result<HeterogeneousLimits<T>, TheoryError> {
    let effective = effective_reward_rates(lambda, mu0)?;
    let order = descending_order(&effective);
    let sorted: Vec<T> = order.iter().map(|&i| effective[i]).collect();
    if sorted.len() >= 2 && sorted[0] == sorted[1] {
        return Err(TheoryError::EffectiveTie(
            sorted[0].to_f64().unwrap_or(f64::NAN),
        ));
    }
    let c_sorted = limit_choice_probs(&sorted, alpha0, regime)?;
    let q_sorted = limit_rewards(&sorted, alpha0, regime)?;
    let mut choice = vec![T::zero(); lambda.len()];
    let mut rewards = vec![T::zero(); lambda.len()];
    for (pos, &orig) in order.iter().enumerate() {
        choice[orig] = c_sorted[pos];
        rewards[orig] = q_sorted[pos];
    }
    Ok(HeterogeneousLimits {
        effective_rates: effective,
        choice,
        rewards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    const L4: [f64; 4] = [8.0, 6.0, 4.0, 2.0];
    use RegimeTag::*;

    #[test]
    fn choice_probs_examples() {
        assert_close(
            &limit_choice_probs(&L4, 0.5, MemoryAbundant).unwrap(),
            &[0.8125, 0.0625, 0.0625, 0.0625],
            1e-15,
        );
        assert_close(
            &limit_choice_probs(&L4, 3.0, MemoryAbundant).unwrap(),
            &[0.25; 4],
            1e-15,
        );
        assert_close(
            &limit_choice_probs(&L4, 0.5, MemoryDeficient).unwrap(),
            &[9.5 / 26.0, 7.5 / 26.0, 5.5 / 26.0, 3.5 / 26.0],
            1e-15,
        );
    }

    #[test]
    fn reward_examples() {
        assert_close(
            &limit_rewards(&L4, 1.0, MemoryAbundant).unwrap(),
            &[5.0, 0.75, 0.5, 0.25],
            1e-15,
        );
        assert_close(
            &limit_rewards(&L4, 1.0, MemoryDeficient).unwrap(),
            &[2.75, 1.6875, 0.875, 0.3125],
            1e-15,
        );
        assert_close(
            &limit_rewards(&L4, 3.0, MemoryAbundant).unwrap(),
            &[2.0, 1.5, 1.0, 0.5],
            1e-15,
        );
    }

    #[test]
    fn linear_invariant_state() {
        let rep = invariant_state_linear(&[8.0, 6.0, 4.0], 1.0).unwrap();
        assert_eq!(rep.case, InvariantCase::LinearConcentrated);
        assert_close(&rep.states[0].q, &[6.0, 0.75, 0.5], 1e-15);
        assert!(rep.max_residual() < 1e-10);

        // boundary α₀ = λ₁/K: first branch, and it agrees with λ_k/K
        let rep = invariant_state_linear(&L4, 2.0).unwrap();
        assert_eq!(rep.case, InvariantCase::LinearConcentrated);
        assert_close(&rep.states[0].q, &[2.0, 1.5, 1.0, 0.5], 1e-15);
        let oblivious: Vec<f64> = L4.iter().map(|l| l / 4.0).collect();
        assert_close(&rep.states[0].q, &oblivious, 1e-15);
    }

    #[test]
    fn abundant_rewards_equal_invariant_state() {
        for alpha0 in [0.1, 0.5, 1.0, 2.0, 2.5, 7.0] {
            let q = limit_rewards(&L4, alpha0, MemoryAbundant).unwrap();
            let rep = invariant_state_linear(&L4, alpha0).unwrap();
            assert_eq!(q, rep.states[0].q);
        }
    }

    #[test]
    fn poly_all_above_floor() {
        let rep = invariant_state_poly(&[8.0, 6.0], 1.0, 0.5).unwrap();
        assert_eq!(rep.case, InvariantCase::PolyAllAboveFloor);
        assert_close(&rep.states[0].q, &[64.0 / 14.0, 36.0 / 14.0], 1e-12);
        assert!(rep.max_residual() < 1e-10);
    }

    #[test]
    fn poly_oblivious() {
        let rep = invariant_state_poly(&L4, 3.0, 0.5).unwrap();
        assert_eq!(rep.case, InvariantCase::PolyOblivious);
        assert_close(&rep.states[0].q, &[2.0, 1.5, 1.0, 0.5], 1e-15);
        assert!(rep.max_residual() < 1e-10);
    }

    /// Damped fixed-point iteration on `q = λ ∘ p(q)`; shares no code with
    /// the branch analysis.
    fn damped_fixed_point(lambda: &[f64], alpha0: f64, eta: f64) -> Vec<f64> {
        let mut q: Vec<f64> = lambda.iter().map(|l| l / lambda.len() as f64).collect();
        for _ in 0..200_000 {
            let w: Vec<f64> = q.iter().map(|x| x.max(alpha0).powf(eta)).collect();
            let s: f64 = w.iter().sum();
            let next: Vec<f64> = lambda.iter().zip(&w).map(|(l, wk)| l * wk / s).collect();
            let delta: f64 = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            for (x, y) in q.iter_mut().zip(&next) {
                *x = 0.5 * *x + 0.5 * y;
            }
            if delta < 1e-15 {
                break;
            }
        }
        q
    }

    #[test]
    fn poly_mixed_case_matches_fixed_point_oracle() {
        let rep = invariant_state_poly(&[8.0, 6.0], 2.8, 0.5).unwrap();
        assert_eq!(rep.case, InvariantCase::PolyMixed { i_star: 1 });
        let q = &rep.states[0].q;
        assert!(q[0] >= 2.8 && q[1] < 2.8, "{q:?}");
        assert!(rep.max_residual() < 1e-10);
        assert_close(q, &damped_fixed_point(&[8.0, 6.0], 2.8, 0.5), 1e-9);
        // √q₁ solves s² + √2.8 s − 8 = 0
        let s = (-(2.8f64.sqrt()) + (2.8 + 32.0f64).sqrt()) / 2.0;
        assert!((q[0] - s * s).abs() < 1e-10);
    }

    #[test]
    fn poly_mixed_case_larger_instances() {
        for (lambda, alpha0, eta) in [
            (vec![8.0, 6.0, 4.0, 2.0], 1.0, 0.5),
            (vec![8.0, 6.0, 4.0, 2.0], 1.6, 0.3),
            (vec![10.0, 9.0, 3.0, 2.5, 1.0], 0.8, 0.7),
        ] {
            let rep = invariant_state_poly(&lambda, alpha0, eta).unwrap();
            assert!(
                matches!(rep.case, InvariantCase::PolyMixed { .. }),
                "{:?}",
                rep.case
            );
            assert!(rep.max_residual() < 1e-10, "{rep:?}");
            assert_close(
                &rep.states[0].q,
                &damped_fixed_point(&lambda, alpha0, eta),
                1e-9,
            );
        }
    }

    #[test]
    fn poly_rejects_eta_outside_unit_interval() {
        assert!(matches!(
            invariant_state_poly(&[8.0, 6.0], 1.0, 1.0),
            Err(TheoryError::EtaOutOfRange(..))
        ));
        assert!(invariant_state_poly(&[8.0, 6.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn poly_concentration_rises_toward_linear() {
        // α₀ far below every Case-2 threshold on the grid
        let alpha0 = 1e-13;
        let mut prev = 0.0;
        for eta in [0.5, 0.7, 0.9, 0.99] {
            let rep = invariant_state_poly(&[8.0, 6.0], alpha0, eta).unwrap();
            assert_eq!(rep.case, InvariantCase::PolyAllAboveFloor, "eta {eta}");
            let q = &rep.states[0].q;
            let share = q[0] / (q[0] + q[1]);
            assert!(share > prev, "eta {eta}: {share} <= {prev}");
            prev = share;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn eta_two_has_three_states() {
        let rep = invariant_states_eta_gt1_k2(8.0, 6.0, 2.0, 1.0).unwrap();
        assert_eq!(rep.states.len(), 3);
        let [a, b, c] = [&rep.states[0], &rep.states[1], &rep.states[2]];
        assert_close(&a.q, &[2.88, 3.84], 1e-12);
        // λ₁ q₁²/(q₁² + q₂²) reproduces q₁
        assert!((8.0 * a.q[0].powi(2) / (a.q[0].powi(2) + a.q[1].powi(2)) - 2.88).abs() < 1e-12);
        let exact = 4.0 + 15f64.sqrt();
        assert!((b.q[0] - exact).abs() < 1e-10);
        assert!((b.q[1] - 6.0 / (8.0 * exact)).abs() < 1e-10);
        assert!((c.q[1] - (3.0 + 8f64.sqrt())).abs() < 1e-10);
        assert!(rep.max_residual() < 1e-10);
        assert_eq!(a.stability, Stability::Unstable);
        assert_eq!(b.stability, Stability::Stable);
        assert_eq!(c.stability, Stability::Stable);
    }

    #[test]
    fn eta_two_precondition() {
        // interior q₁ = 2.88, so α₀ = 3 violates the precondition
        assert!(matches!(
            invariant_states_eta_gt1_k2(8.0, 6.0, 2.0, 3.0),
            Err(TheoryError::Precondition(_))
        ));
        assert!(invariant_states_eta_gt1_k2(8.0, 6.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn transition_matrix_two_actions() {
        let r = deficient_transition_matrix(&[8.0, 6.0], 1.0, &WeightRule::Linear).unwrap();
        assert_close(&r[0], &[8.0 / 9.0, 1.0 / 9.0], 1e-15);
        assert_close(&r[1], &[1.0 / 7.0, 6.0 / 7.0], 1e-15);
        let x = stationary_distribution(&r).unwrap();
        assert_close(&x, &[9.0 / 16.0, 7.0 / 16.0], 1e-15);
    }

    #[test]
    fn transition_matrix_stationary_vector_matches_closed_form() {
        let r = deficient_transition_matrix(&L4, 0.5, &WeightRule::Linear).unwrap();
        for row in &r {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        let x = stationary_distribution(&r).unwrap();
        assert_close(&x, &[9.5 / 26.0, 7.5 / 26.0, 5.5 / 26.0, 3.5 / 26.0], 1e-14);
    }

    #[test]
    fn uniform_kernel_has_uniform_stationary_vector() {
        let r = vec![vec![0.2; 5]; 5];
        assert_close(&stationary_distribution(&r).unwrap(), &[0.2; 5], 1e-15);
    }

    fn power_iteration(r: &[Vec<f64>]) -> Vec<f64> {
        let k = r.len();
        let mut x = vec![1.0 / k as f64; k];
        for _ in 0..100_000 {
            let next: Vec<f64> = (0..k)
                .map(|j| (0..k).map(|i| x[i] * r[i][j]).sum())
                .collect();
            let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if delta < 1e-17 {
                break;
            }
        }
        x
    }

    #[test]
    fn random_positive_kernel_against_power_iteration() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(3, 0, 0);
        for _ in 0..20 {
            let r: Vec<Vec<f64>> = (0..5)
                .map(|_| {
                    let row: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 0.01).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let x = stationary_distribution(&r).unwrap();
            let xr: Vec<f64> = (0..5)
                .map(|j| (0..5).map(|i| x[i] * r[i][j]).sum())
                .collect();
            assert_close(&xr, &x, 1e-12);
            assert_close(&x, &power_iteration(&r), 1e-12);
        }
    }

    #[test]
    fn stationary_rejects_malformed() {
        assert!(stationary_distribution::<f64>(&[]).is_err());
        assert!(stationary_distribution(&[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(stationary_distribution(&[vec![1.0, 0.0]]).is_err());
        // reducible: two absorbing states
        assert!(matches!(
            stationary_distribution(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(TheoryError::Singular)
        ));
    }

    #[test]
    fn weighted_deficient_formula_matches_kernel() {
        for weight in [
            WeightRule::Linear,
            WeightRule::Polynomial { eta: 2.0 },
            WeightRule::Exponential { c: 0.3 },
        ] {
            let r = deficient_transition_matrix(&L4, 1.0, &weight).unwrap();
            let x = stationary_distribution(&r).unwrap();
            assert_close(
                &x,
                &deficient_choice_probs(&L4, 1.0, &weight).unwrap(),
                1e-12,
            );
        }
    }

    #[test]
    fn heterogeneous_examples() {
        let h = heterogeneous_limits(&L4, &[1.0; 4], 1.0, MemoryAbundant).unwrap();
        assert_eq!(
            h.choice,
            limit_choice_probs(&L4, 1.0, MemoryAbundant).unwrap()
        );
        assert_eq!(h.rewards, limit_rewards(&L4, 1.0, MemoryAbundant).unwrap());

        let h = heterogeneous_limits(&[8.0, 6.0], &[2.0, 1.0], 0.5, MemoryAbundant).unwrap();
        assert_eq!(h.effective_rates, vec![4.0, 6.0]);
        assert_close(&h.choice, &[0.5 / 6.0, 1.0 - 0.5 / 6.0], 1e-15);

        assert!(matches!(
            heterogeneous_limits(&[8.0, 4.0], &[2.0, 1.0], 0.5, MemoryAbundant),
            Err(TheoryError::EffectiveTie(_))
        ));
    }

    #[test]
    fn theory_runs_in_f32() {
        let c = limit_choice_probs(&[8.0f32, 6.0, 4.0, 2.0], 1.0, MemoryAbundant).unwrap();
        assert!((c[0] - 0.625).abs() < 1e-6);
        let rep = invariant_state_poly(&[8.0f32, 6.0], 2.8, 0.5).unwrap();
        assert!(rep.max_residual() < 1e-4);
    }

    fn sorted_instance() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (1usize..=8)
            .prop_flat_map(|k| (prop::collection::vec(0.1f64..20.0, k), 0.01f64..10.0))
            .prop_map(|(mut lambda, alpha0)| {
                lambda.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if lambda.len() >= 2 && lambda[0] <= lambda[1] {
                    lambda[0] = lambda[1] + 0.5;
                }
                (lambda, alpha0)
            })
    }

    proptest! {
        #[test]
        fn limits_are_distributions((lambda, alpha0) in sorted_instance()) {
            for regime in [MemoryAbundant, MemoryDeficient] {
                let c = limit_choice_probs(&lambda, alpha0, regime).unwrap();
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(c.iter().all(|&x| x > 0.0));
            }
        }

        #[test]
        fn deficient_kernel_identity((lambda, alpha0) in sorted_instance()) {
            let r = deficient_transition_matrix(&lambda, alpha0, &WeightRule::Linear).unwrap();
            let x = stationary_distribution(&r).unwrap();
            let c = limit_choice_probs(&lambda, alpha0, MemoryDeficient).unwrap();
            for (a, b) in x.iter().zip(&c) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn winner_takes_all((lambda, alpha0) in sorted_instance(), shrink in 0.0f64..1.0) {
            prop_assume!(lambda.len() >= 2 && alpha0 <= lambda[0] / lambda.len() as f64);
            // move λ₂ anywhere in [λ₃, λ₁) while keeping the order
            let mut moved = lambda.clone();
            let floor = if lambda.len() > 2 { lambda[2] } else { 0.01 };
            moved[1] = floor + (lambda[0] - floor) * shrink * 0.999;
            let c = limit_choice_probs(&lambda, alpha0, MemoryAbundant).unwrap();
            let c2 = limit_choice_probs(&moved, alpha0, MemoryAbundant).unwrap();
            let q = limit_rewards(&lambda, alpha0, MemoryAbundant).unwrap();
            let q2 = limit_rewards(&moved, alpha0, MemoryAbundant).unwrap();
            prop_assert_eq!(c[0], c2[0]);
            prop_assert_eq!(q[0], q2[0]);
        }

        #[test]
        fn invariant_states_pass_the_residual_oracle(
            (lambda, alpha0) in sorted_instance(),
            eta in 0.05f64..0.95,
        ) {
            prop_assert!(invariant_state_linear(&lambda, alpha0).unwrap().max_residual() < 1e-10);
            let rep = invariant_state_poly(&lambda, alpha0, eta).unwrap();
            prop_assert!(rep.max_residual() < 1e-10, "{:?}", rep);
        }
    }
}
