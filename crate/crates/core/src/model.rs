//! Problem parameterization, weight functions and the reward-matching rule.
//!
//! At an update point the agent picks action `k` with probability
//! proportional to `w(Q_k ∨ α)`. With the linear weight this is Luce's rule.
//! The scaled family indexed by the memory span `m` uses decay rates
//! `μ_k = μ⁰_k / m` and exploration `α = α₀ · m`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{count, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("the action set is empty")]
    NoActions,
    #[error("{what}[{index}] is not a finite nonnegative number")]
    InvalidEntry { what: &'static str, index: usize },
    #[error("{what} has {got} entries but there are {expected} actions")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("choice distribution undefined: every action has zero weight (alpha = 0 and Q = 0)")]
    UndefinedDistribution,
    #[error("reward rates must be positive and sorted with lambda[0] > lambda[1] >= ... > 0")]
    RateOrdering,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Weight function applied to `Q_k ∨ α` by the reward-matching rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum WeightRule<T> {
    /// `w(x) = x`
    Linear,
    /// `w(x) = x^eta`
    Polynomial { eta: T },
    /// `w(x) = exp(c x)`
    Exponential { c: T },
}

impl<T: Real> WeightRule<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            WeightRule::Linear => Ok(()),
            WeightRule::Polynomial { eta } if eta.is_finite() && eta > T::zero() => Ok(()),
            WeightRule::Exponential { c } if c.is_finite() && c > T::zero() => Ok(()),
            WeightRule::Polynomial { .. } => {
                Err(ModelError::Invalid("eta must be positive".into()))
            }
            WeightRule::Exponential { .. } => Err(ModelError::Invalid("c must be positive".into())),
        }
    }

    /// Evaluates `w(x)` directly. May overflow for the exponential rule.
    pub fn weight(&self, x: T) -> T {
        match *self {
            WeightRule::Linear => x,
            WeightRule::Polynomial { eta } => x.powf(eta),
            WeightRule::Exponential { c } => (c * x).exp(),
        }
    }

    /// `w(x) / w(reference)` for `x <= reference`, computed without forming
    /// either weight. The exponential rule works in log space.
    fn relative(&self, x: T, reference: T) -> T {
        match *self {
            WeightRule::Linear => x / reference,
            WeightRule::Polynomial { eta } => (x / reference).powf(eta),
            WeightRule::Exponential { c } => (c * (x - reference)).exp(),
        }
    }

    /// Whether `w(0) = 0`, i.e. an all-zero input has no defined distribution.
    fn vanishes_at_zero(&self) -> bool {
        !matches!(self, WeightRule::Exponential { .. })
    }
}

/// Reward-matching distribution `p_k = w(Q_k ∨ α) / Σ_i w(Q_i ∨ α)`.
pub fn choice_distribution<T: Real>(
    q: &[T],
    alpha: T,
    weight: &WeightRule<T>,
) -> Result<Vec<T>, ModelError> {
    if q.is_empty() {
        return Err(ModelError::NoActions);
    }
    if !(alpha.is_finite() && alpha >= T::zero()) {
        return Err(ModelError::InvalidEntry {
            what: "alpha",
            index: 0,
        });
    }
    let mut floored = Vec::with_capacity(q.len());
    for (index, &x) in q.iter().enumerate() {
        if !(x.is_finite() && x >= T::zero()) {
            return Err(ModelError::InvalidEntry { what: "Q", index });
        }
        floored.push(x.max(alpha));
    }
    let reference = floored.iter().copied().fold(T::neg_infinity(), T::max);
    if reference == T::zero() && weight.vanishes_at_zero() {
        return Err(ModelError::UndefinedDistribution);
    }
    let mut total = T::zero();
    for x in floored.iter_mut() {
        *x = weight.relative(*x, reference);
        total = total + *x;
    }
    for x in floored.iter_mut() {
        *x = *x / total;
    }
    Ok(floored)
}

/// Draws an action index according to [`choice_distribution`].
pub fn sample_choice<T: Real, R: Rng + ?Sized>(
    q: &[T],
    alpha: T,
    weight: &WeightRule<T>,
    rng: &mut R,
) -> Result<usize, ModelError> {
    let p = choice_distribution(q, alpha, weight)?;
    Ok(sample_index(&p, rng))
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index<T: Real, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &pk) in p.iter().enumerate() {
        let pk = pk.to_f64().unwrap_or(0.0);
        if pk > 0.0 {
            last_positive = k;
        }
        acc += pk;
        if u < acc {
            return k;
        }
    }
    last_positive
}

/// Checks the standing ordering assumption `λ₁ > λ₂ ≥ … ≥ λ_K > 0`.
pub fn validate_rates<T: Real>(lambda: &[T]) -> Result<(), ModelError> {
    if lambda.is_empty() {
        return Err(ModelError::NoActions);
    }
    for (index, &l) in lambda.iter().enumerate() {
        if !(l.is_finite() && l > T::zero()) {
            return Err(ModelError::InvalidEntry {
                what: "lambda",
                index,
            });
        }
    }
    if lambda.len() >= 2 && lambda[0] <= lambda[1] {
        return Err(ModelError::RateOrdering);
    }
    if lambda.windows(2).any(|w| w[0] < w[1]) {
        return Err(ModelError::RateOrdering);
    }
    Ok(())
}

fn validate_positive<T: Real>(what: &'static str, values: &[T]) -> Result<(), ModelError> {
    for (index, &v) in values.iter().enumerate() {
        if !(v.is_finite() && v > T::zero()) {
            return Err(ModelError::InvalidEntry { what, index });
        }
    }
    Ok(())
}

/// Permutation sorting `keys` in non-increasing order; `perm[i]` is the
/// original index placed at sorted position `i`. Stable for ties.
pub fn descending_order<T: Real>(keys: &[T]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..keys.len()).collect();
    perm.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).expect("finite keys"));
    perm
}

/// A fully realized (unscaled) problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Reward rates, sorted with a strict gap at the top.
    pub lambda: Vec<T>,
    /// Per-reward decay rate of each action.
    pub mu: Vec<T>,
    /// Update-point rate.
    pub beta: T,
    /// Unscaled exploration parameter.
    pub alpha: T,
    pub weight: WeightRule<T>,
    /// `order[i]` is the caller's original index of sorted action `i`.
    /// Identity unless built with [`ModelParams::new_unsorted`].
    pub order: Vec<usize>,
}

impl<T: Real> ModelParams<T> {
    pub fn new(
        lambda: Vec<T>,
        mu: Vec<T>,
        beta: T,
        alpha: T,
        weight: WeightRule<T>,
    ) -> Result<Self, ModelError> {
        let order = (0..lambda.len()).collect();
        let params = ModelParams {
            lambda,
            mu,
            beta,
            alpha,
            weight,
            order,
        };
        params.validate()?;
        Ok(params)
    }

    /// Like [`ModelParams::new`] but accepts rates in any order. Actions are
    /// re-sorted by reward rate and the permutation is kept in `order`.
    pub fn new_unsorted(
        lambda: Vec<T>,
        mu: Vec<T>,
        beta: T,
        alpha: T,
        weight: WeightRule<T>,
    ) -> Result<Self, ModelError> {
        if mu.len() != lambda.len() {
            return Err(ModelError::LengthMismatch {
                what: "mu",
                got: mu.len(),
                expected: lambda.len(),
            });
        }
        validate_positive("lambda", &lambda)?;
        let order = descending_order(&lambda);
        let params = ModelParams {
            lambda: order.iter().map(|&i| lambda[i]).collect(),
            mu: order.iter().map(|&i| mu[i]).collect(),
            beta,
            alpha,
            weight,
            order,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        validate_rates(&self.lambda)?;
        if self.mu.len() != self.k() {
            return Err(ModelError::LengthMismatch {
                what: "mu",
                got: self.mu.len(),
                expected: self.k(),
            });
        }
        validate_positive("mu", &self.mu)?;
        validate_positive("beta", &[self.beta])?;
        validate_positive("alpha", &[self.alpha])?;
        self.weight.validate()?;
        if self.order.len() != self.k() {
            return Err(ModelError::Invalid("order is not a permutation".into()));
        }
        Ok(())
    }

    /// Whether every action shares one decay rate.
    pub fn uniform_decay(&self) -> bool {
        self.mu.iter().all(|&m| m == self.mu[0])
    }

    /// Reorders a per-action vector from sorted order back to the caller's order.
    pub fn to_original_order<U: Clone + Default>(&self, sorted: &[U]) -> Vec<U> {
        let mut out = vec![U::default(); sorted.len()];
        for (pos, &orig) in self.order.iter().enumerate() {
            out[orig] = sorted[pos].clone();
        }
        out
    }
}

/// `λ_k / μ⁰_k`: the reward rates of the equivalent uniform-decay problem.
pub fn effective_reward_rates<T: Real>(lambda: &[T], mu0: &[T]) -> Result<Vec<T>, ModelError> {
    if lambda.len() != mu0.len() {
        return Err(ModelError::LengthMismatch {
            what: "mu0",
            got: mu0.len(),
            expected: lambda.len(),
        });
    }
    validate_positive("lambda", lambda)?;
    validate_positive("mu0", mu0)?;
    Ok(lambda.iter().zip(mu0).map(|(&l, &m)| l / m).collect())
}

/// One member of the scaled family: fixed `λ`, `μ⁰`, `α₀`, `β` and memory span `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledInstance<T> {
    pub lambda: Vec<T>,
    pub mu0: Vec<T>,
    pub alpha0: T,
    pub beta: T,
    pub weight: WeightRule<T>,
    pub m: u64,
}

impl<T: Real> ScaledInstance<T> {
    /// Uniform unit decay (`μ⁰ = 1`).
    pub fn uniform(lambda: Vec<T>, alpha0: T, beta: T, weight: WeightRule<T>, m: u64) -> Self {
        let mu0 = vec![T::one(); lambda.len()];
        ScaledInstance {
            lambda,
            mu0,
            alpha0,
            beta,
            weight,
            m,
        }
    }

    pub fn with_m(&self, m: u64) -> Self {
        ScaledInstance { m, ..self.clone() }
    }

    pub fn with_beta(&self, beta: T) -> Self {
        ScaledInstance {
            beta,
            ..self.clone()
        }
    }

    /// Materializes `μ_k = μ⁰_k / m` and `α = α₀ · m`.
    pub fn realize(&self) -> Result<ModelParams<T>, ModelError> {
        if self.m == 0 {
            return Err(ModelError::Invalid("m must be positive".into()));
        }
        if self.mu0.len() != self.lambda.len() {
            return Err(ModelError::LengthMismatch {
                what: "mu0",
                got: self.mu0.len(),
                expected: self.lambda.len(),
            });
        }
        let m: T = count(self.m as usize);
        ModelParams::new(
            self.lambda.clone(),
            self.mu0.iter().map(|&x| x / m).collect(),
            self.beta,
            self.alpha0 * m,
            self.weight,
        )
    }

    pub fn effective_reward_rates(&self) -> Result<Vec<T>, ModelError> {
        effective_reward_rates(&self.lambda, &self.mu0)
    }
}

/// Declarative form of a [`ScaledInstance`], as stored in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
    pub beta: f64,
    pub alpha0: f64,
    pub m: u64,
    #[serde(default = "default_rule")]
    pub weight_rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

fn default_rule() -> String {
    "linear".into()
}

impl InstanceDoc {
    pub fn weight_rule(&self) -> Result<WeightRule<f64>, ModelError> {
        let rule = match self.weight_rule.as_str() {
            "linear" => WeightRule::Linear,
            "polynomial" => WeightRule::Polynomial {
                eta: self
                    .eta
                    .ok_or_else(|| ModelError::Invalid("polynomial rule needs eta".into()))?,
            },
            "exponential" => WeightRule::Exponential {
                c: self
                    .c
                    .ok_or_else(|| ModelError::Invalid("exponential rule needs c".into()))?,
            },
            other => {
                return Err(ModelError::Invalid(format!(
                    "unknown weight_rule {other:?}"
                )))
            }
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl TryFrom<InstanceDoc> for ScaledInstance<f64> {
    type Error = ModelError;

    fn try_from(doc: InstanceDoc) -> Result<Self, ModelError> {
        let weight = doc.weight_rule()?;
        let k = doc.lambda.len();
        if let Some(declared) = doc.k {
            if declared != k {
                return Err(ModelError::LengthMismatch {
                    what: "lambda",
                    got: k,
                    expected: declared,
                });
            }
        }
        let instance = ScaledInstance {
            mu0: doc.mu0.unwrap_or_else(|| vec![1.0; k]),
            lambda: doc.lambda,
            alpha0: doc.alpha0,
            beta: doc.beta,
            weight,
            m: doc.m,
        };
        instance.realize()?;
        Ok(instance)
    }
}

impl From<&ScaledInstance<f64>> for InstanceDoc {
    fn from(inst: &ScaledInstance<f64>) -> Self {
        let (weight_rule, eta, c) = match inst.weight {
            WeightRule::Linear => ("linear", None, None),
            WeightRule::Polynomial { eta } => ("polynomial", Some(eta), None),
            WeightRule::Exponential { c } => ("exponential", None, Some(c)),
        };
        InstanceDoc {
            k: Some(inst.lambda.len()),
            lambda: inst.lambda.clone(),
            mu0: Some(inst.mu0.clone()),
            beta: inst.beta,
            alpha0: inst.alpha0,
            m: inst.m,
            weight_rule: weight_rule.into(),
            eta,
            c,
        }
    }
}
