//! Steady-state estimates from traces and the comparisons built on them.

use serde::Serialize;
use statrs::distribution::{DiscreteCDF, Poisson};
use thiserror::Error;

use crate::sim::Trace;

/// Default number of standard errors in [`compare_to_theory`].
pub const DEFAULT_Z: f64 = 3.0;
/// Default absolute slack on choice probabilities.
pub const DEFAULT_PROB_ALLOWANCE: f64 = 0.02;
/// Default slack on scaled rewards, as a multiple of `λ₁`.
pub const DEFAULT_REWARD_ALLOWANCE_FACTOR: f64 = 0.05;
/// Fewest samples accepted by [`dominance_check`].
pub const MIN_DOMINANCE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("trace has zero effective horizon")]
    Degenerate,
    #[error("batch means need at least two batches, got {0}")]
    TooFewBatches(usize),
    #[error("m must be positive")]
    ZeroScale,
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("dominance check needs at least {needed} samples, got {got}")]
    InsufficientSamples { got: usize, needed: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Time-average choice fractions and scaled rewards with batch-means errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyEstimate {
    pub choice_frac: Vec<f64>,
    pub choice_se: Vec<f64>,
    /// Time-average `Q_k / m`.
    pub qbar_scaled: Vec<f64>,
    pub qbar_se: Vec<f64>,
    pub n_batches: usize,
    pub effective_horizon: f64,
}

/// Batch-means standard error `sqrt(Σ(x_b − x̄)² / (n(n − 1)))`.
fn batch_se(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|x| (x - mean).powi(2)).sum();
    (ss / (n * (n - 1.0))).sqrt()
}

/// Point estimates use the whole-run totals; batches only feed the errors.
pub fn estimate(trace: &Trace, m: u64) -> Result<SteadyEstimate, EstimateError> {
    estimate_replicas(std::slice::from_ref(trace), m)
}

/// Pools independent replicas of one configuration: totals are summed and
/// the batches of all replicas feed a single batch-means error. Every
/// replica must use the same batch length.
pub fn estimate_replicas(traces: &[Trace], m: u64) -> Result<SteadyEstimate, EstimateError> {
    let first = traces
        .first()
        .ok_or_else(|| EstimateError::Invalid("no traces".into()))?;
    if m == 0 {
        return Err(EstimateError::ZeroScale);
    }
    let k = first.k;
    let width = first.batch_length();
    let mut eff = 0.0;
    for t in traces {
        if t.k != k {
            return Err(EstimateError::Dimension {
                what: "replica actions",
                got: t.k,
                expected: k,
            });
        }
        if !(t.effective_horizon() > 0.0) {
            return Err(EstimateError::Degenerate);
        }
        if (t.batch_length() - width).abs() > 1e-9 * width {
            return Err(EstimateError::Invalid(format!(
                "batch lengths differ: {} vs {width}",
                t.batch_length()
            )));
        }
        eff += t.effective_horizon();
    }
    let n: usize = traces.iter().map(Trace::n_batches).sum();
    if n < 2 {
        return Err(EstimateError::TooFewBatches(n));
    }
    let scale = m as f64;
    let total = |field: fn(&Trace) -> &Vec<f64>, j: usize| -> f64 {
        traces.iter().map(|t| field(t)[j]).sum()
    };
    let se = |field: fn(&Trace) -> &Vec<Vec<f64>>, j: usize, div: f64| -> f64 {
        batch_se(traces.iter().flat_map(field).map(move |b| b[j] / div))
    };
    Ok(SteadyEstimate {
        choice_frac: (0..k).map(|j| total(|t| &t.choice_time, j) / eff).collect(),
        choice_se: (0..k)
            .map(|j| se(|t| &t.batch_choice_time, j, width))
            .collect(),
        qbar_scaled: (0..k)
            .map(|j| total(|t| &t.reward_time_integral, j) / (scale * eff))
            .collect(),
        qbar_se: (0..k)
            .map(|j| se(|t| &t.batch_reward_integral, j, width * scale))
            .collect(),
        n_batches: n,
        effective_horizon: eff,
    })
}

/// Absolute slack added to `z · s.e.` in [`compare_to_theory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allowance {
    pub probability: f64,
    pub reward: f64,
}

impl Allowance {
    /// `0.02` on probabilities and `0.05 λ₁` on scaled rewards.
    pub fn defaults(lambda1: f64) -> Self {
        Allowance {
            probability: DEFAULT_PROB_ALLOWANCE,
            reward: DEFAULT_REWARD_ALLOWANCE_FACTOR * lambda1,
        }
    }

    pub fn zero() -> Self {
        Allowance {
            probability: 0.0,
            reward: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    ChoiceFrac,
    Qbar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateCheck {
    pub quantity: Quantity,
    pub index: usize,
    pub estimate: f64,
    pub theory: f64,
    pub se: f64,
    /// `z · se + allowance`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub checks: Vec<CoordinateCheck>,
}

impl ComparisonReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn of(&self, quantity: Quantity) -> impl Iterator<Item = &CoordinateCheck> {
        self.checks.iter().filter(move |c| c.quantity == quantity)
    }

    pub fn quantity_passes(&self, quantity: Quantity) -> bool {
        self.of(quantity).all(|c| c.pass)
    }
}

/// A coordinate passes iff `|estimate − theory| ≤ z · s.e. + allowance`.
/// Either theory vector may be omitted.
pub fn compare_to_theory(
    est: &SteadyEstimate,
    c_theory: Option<&[f64]>,
    q_theory: Option<&[f64]>,
    z: f64,
    allowance: Allowance,
) -> Result<ComparisonReport, EstimateError> {
    let k = est.choice_frac.len();
    let mut checks = Vec::new();
    let groups = [
        (
            Quantity::ChoiceFrac,
            c_theory,
            &est.choice_frac,
            &est.choice_se,
            allowance.probability,
            "c_theory",
        ),
        (
            Quantity::Qbar,
            q_theory,
            &est.qbar_scaled,
            &est.qbar_se,
            allowance.reward,
            "q_theory",
        ),
    ];
    for (quantity, theory, values, ses, slack, what) in groups {
        let Some(theory) = theory else { continue };
        if theory.len() != k {
            return Err(EstimateError::Dimension {
                what,
                got: theory.len(),
                expected: k,
            });
        }
        for index in 0..k {
            let bound = z * ses[index] + slack;
            checks.push(CoordinateCheck {
                quantity,
                index,
                estimate: values[index],
                theory: theory[index],
                se: ses[index],
                bound,
                pass: (values[index] - theory[index]).abs() <= bound,
            });
        }
    }
    Ok(ComparisonReport { checks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub pass: bool,
    pub n: usize,
    /// DKW half-width `sqrt(ln(2/(1 − confidence)) / (2n))`.
    pub band: f64,
    /// Largest `P̂(Q ≥ x) − P(Poisson(mλ₁) ≥ x)` over sampled thresholds `x`.
    pub max_excess: f64,
    /// Threshold attaining `max_excess`.
    pub worst_threshold: u64,
}

/// Checks that the empirical complementary CDF of `samples` lies below the
/// `Poisson(m λ₁)` complementary CDF plus a DKW band.
pub fn dominance_check(
    samples: &[u64],
    m: u64,
    lambda1: f64,
    confidence: f64,
) -> Result<DominanceReport, EstimateError> {
    let n = samples.len();
    if n < MIN_DOMINANCE_SAMPLES {
        return Err(EstimateError::InsufficientSamples {
            got: n,
            needed: MIN_DOMINANCE_SAMPLES,
        });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimateError::Invalid(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    if m == 0 || !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(EstimateError::Invalid(
            "m and lambda1 must be positive".into(),
        ));
    }
    let bound =
        Poisson::new(m as f64 * lambda1).map_err(|e| EstimateError::Invalid(e.to_string()))?;
    let band = ((2.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_threshold = 0;
    let mut i = 0;
    while i < n {
        let x = sorted[i];
        // P̂(Q ≥ x) with i samples strictly below x
        let empirical = (n - i) as f64 / n as f64;
        let theoretical = if x == 0 { 1.0 } else { bound.sf(x - 1) };
        let excess = empirical - theoretical;
        if excess > max_excess {
            max_excess = excess;
            worst_threshold = x;
        }
        while i < n && sorted[i] == x {
            i += 1;
        }
    }
    Ok(DominanceReport {
        pass: max_excess <= band,
        n,
        band,
        max_excess,
        worst_threshold,
    })
}

/// One CSV row of a steady-state run, one row per action.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub run_id: u64,
    pub seed: u64,
    pub m: u64,
    pub beta: f64,
    pub alpha0: f64,
    /// 1-based action index.
    pub k: usize,
    pub choice_frac: f64,
    pub choice_se: f64,
    pub qbar: f64,
    pub qbar_se: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub events: u64,
}

/// Column order of [`EstimateRow`].
pub const ESTIMATE_COLUMNS: [&str; 13] = [
    "run_id",
    "seed",
    "m",
    "beta",
    "alpha0",
    "k",
    "choice_frac",
    "choice_se",
    "qbar",
    "qbar_se",
    "horizon",
    "burn_in",
    "events",
];

/// Expands an estimate into per-action rows.
pub fn estimate_rows(
    est: &SteadyEstimate,
    trace: &Trace,
    run_id: u64,
    seed: u64,
    m: u64,
    beta: f64,
    alpha0: f64,
) -> Vec<EstimateRow> {
    (0..est.choice_frac.len())
        .map(|j| EstimateRow {
            run_id,
            seed,
            m,
            beta,
            alpha0,
            k: j + 1,
            choice_frac: est.choice_frac[j],
            choice_se: est.choice_se[j],
            qbar: est.qbar_scaled[j],
            qbar_se: est.qbar_se[j],
            horizon: trace.horizon,
            burn_in: trace.burn_in,
            events: trace.event_count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScaledInstance, WeightRule};
    use crate::rng::stream_rng;
    use crate::sim::{simulate, LifespanDist, SimConfig};
    use rand_distr::{Distribution, Poisson as PoissonDraw};

    /// Hand-built trace with `n` batches of unit length.
    fn synthetic(choice_batches: Vec<Vec<f64>>, reward_batches: Vec<Vec<f64>>) -> Trace {
        let n = choice_batches.len();
        let k = choice_batches[0].len();
        let sum = |rows: &Vec<Vec<f64>>| (0..k).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
        let mut trace = Trace {
            k,
            choice_time: vec![],
            reward_time_integral: vec![],
            horizon: 0.0,
            burn_in: 0.0,
            reached: 0.0,
            event_count: 0,
            update_count: 0,
            batch_choice_time: vec![],
            batch_reward_integral: vec![],
            update_samples: None,
        };
        trace.choice_time = sum(&choice_batches);
        trace.reward_time_integral = sum(&reward_batches);
        trace.horizon = n as f64 + 10.0;
        trace.burn_in = 10.0;
        trace.reached = trace.horizon;
        trace.batch_choice_time = choice_batches;
        trace.batch_reward_integral = reward_batches;
        trace
    }

    #[test]
    fn arithmetic_example() {
        let batches: Vec<Vec<f64>> = (0..4).map(|_| vec![18.75, 6.25]).collect();
        let mut trace = synthetic(batches.clone(), batches);
        // 4 batches of length 25 after a burn-in of 10
        trace.horizon = 110.0;
        let est = estimate(&trace, 1).unwrap();
        assert_eq!(est.choice_frac, vec![0.75, 0.25]);
        assert_eq!(est.choice_se, vec![0.0, 0.0]);
        assert_eq!(est.effective_horizon, 100.0);
    }

    #[test]
    fn replicas_pool_totals_and_batches() {
        let a = synthetic(
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![vec![2.0, 0.0], vec![1.0, 1.0]],
        );
        let b = synthetic(
            vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            vec![vec![0.0, 4.0], vec![1.0, 1.0]],
        );
        let est = estimate_replicas(&[a.clone(), b], 2).unwrap();
        // four unit batches: choice of action 1 = 1, .5, 0, .5
        assert_eq!(est.choice_frac, vec![0.5, 0.5]);
        assert_eq!(est.qbar_scaled, vec![0.5, 0.75]);
        assert_eq!(est.n_batches, 4);
        assert_eq!(est.effective_horizon, 4.0);
        let se = (0.5f64 / 12.0).sqrt();
        assert!((est.choice_se[0] - se).abs() < 1e-15);
        assert_eq!(
            estimate_replicas(std::slice::from_ref(&a), 2).unwrap(),
            estimate(&a, 2).unwrap()
        );

        let mut wide = a.clone();
        wide.horizon = 14.0;
        wide.reached = 14.0;
        assert!(matches!(
            estimate_replicas(&[a, wide], 1),
            Err(EstimateError::Invalid(_))
        ));
        assert!(matches!(
            estimate_replicas(&[], 1),
            Err(EstimateError::Invalid(_))
        ));
    }

    #[test]
    fn degenerate_trace() {
        let mut trace = synthetic(vec![vec![1.0], vec![1.0]], vec![vec![1.0], vec![1.0]]);
        trace.horizon = trace.burn_in;
        assert_eq!(estimate(&trace, 1), Err(EstimateError::Degenerate));
        let trace = synthetic(vec![vec![1.0], vec![1.0]], vec![vec![1.0], vec![1.0]]);
        assert_eq!(estimate(&trace, 0), Err(EstimateError::ZeroScale));
    }

    #[test]
    fn se_shrinks_like_root_batch_count_on_iid_batches() {
        let mut rng = stream_rng(1, 0, 0);
        use rand::Rng;
        let draws: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        let se_of = |n: usize| {
            let rows: Vec<Vec<f64>> = draws[..n].iter().map(|&x| vec![x, 1.0 - x]).collect();
            estimate(&synthetic(rows.clone(), rows), 1)
                .unwrap()
                .choice_se[0]
        };
        let ratio = se_of(1024) / se_of(4096);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn batch_count_leaves_point_estimates_unchanged() {
        let params =
            ScaledInstance::uniform(vec![8.0, 6.0, 4.0, 2.0], 1.0, 1.0, WeightRule::Linear, 50)
                .realize()
                .unwrap();
        let base = SimConfig::new(1e5, 21);
        let a = simulate(&params, &LifespanDist::Exponential, &base).unwrap();
        let b = simulate(
            &params,
            &LifespanDist::Exponential,
            &SimConfig {
                n_batches: 64,
                ..base
            },
        )
        .unwrap();
        let (ea, eb) = (estimate(&a, 50).unwrap(), estimate(&b, 50).unwrap());
        assert_eq!(ea.choice_frac, eb.choice_frac);
        assert_eq!(ea.qbar_scaled, eb.qbar_scaled);
        for (x, y) in ea.choice_se.iter().zip(&eb.choice_se) {
            assert!((x - y).abs() < 0.5 * x, "{x} vs {y}");
        }
        let sum: f64 = ea.choice_frac.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_action_mean_reward() {
        let m = 100;
        let params = ScaledInstance::uniform(vec![5.0], 1.0, 1.0, WeightRule::Linear, m)
            .realize()
            .unwrap();
        let trace = simulate(&params, &LifespanDist::Exponential, &SimConfig::new(3e5, 2)).unwrap();
        let est = estimate(&trace, m).unwrap();
        assert!((est.qbar_scaled[0] - 5.0).abs() <= 3.0 * est.qbar_se[0]);
        assert_eq!(est.choice_frac, vec![1.0]);
    }

    fn toy_estimate() -> SteadyEstimate {
        SteadyEstimate {
            choice_frac: vec![0.6, 0.4],
            choice_se: vec![0.01, 0.01],
            qbar_scaled: vec![4.0, 1.0],
            qbar_se: vec![0.1, 0.1],
            n_batches: 32,
            effective_horizon: 1.0,
        }
    }

    #[test]
    fn exact_agreement_passes() {
        let est = toy_estimate();
        let rep = compare_to_theory(
            &est,
            Some(&[0.6, 0.4]),
            Some(&[4.0, 1.0]),
            3.0,
            Allowance::zero(),
        )
        .unwrap();
        assert!(rep.pass());
        assert_eq!(rep.checks.len(), 4);
    }

    #[test]
    fn ten_se_miss_fails_without_slack() {
        let est = toy_estimate();
        let rep = compare_to_theory(&est, Some(&[0.5, 0.4]), None, 3.0, Allowance::zero()).unwrap();
        assert!(!rep.checks[0].pass);
        assert!(rep.checks[1].pass);
        assert!(!rep.quantity_passes(Quantity::ChoiceFrac));
    }

    #[test]
    fn slack_is_monotone() {
        let est = toy_estimate();
        let theory = [0.52, 0.47];
        let mut prev_passes = 0;
        for slack in [0.0, 0.01, 0.03, 0.05, 0.1] {
            let allowance = Allowance {
                probability: slack,
                reward: 0.0,
            };
            let rep = compare_to_theory(&est, Some(&theory), None, 3.0, allowance).unwrap();
            let passes = rep.checks.iter().filter(|c| c.pass).count();
            assert!(passes >= prev_passes);
            prev_passes = passes;
        }
        assert_eq!(prev_passes, 2);
    }

    #[test]
    fn comparison_dimension_error() {
        let est = toy_estimate();
        assert!(compare_to_theory(&est, Some(&[1.0]), None, 3.0, Allowance::zero()).is_err());
    }

    fn poisson_samples(mean: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = stream_rng(seed, 0, 0);
        let d = PoissonDraw::new(mean).unwrap();
        (0..n).map(|_| d.sample(&mut rng) as u64).collect()
    }

    #[test]
    fn dominated_samples_pass() {
        let m = 100;
        let rep = dominance_check(&poisson_samples(600.0, 20_000, 1), m, 8.0, 0.99).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn dominating_samples_fail() {
        let m = 100;
        let rep = dominance_check(&poisson_samples(1600.0, 20_000, 2), m, 8.0, 0.99).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_excess > 0.9);
    }

    #[test]
    fn same_law_passes_at_band() {
        let rep = dominance_check(&poisson_samples(800.0, 20_000, 3), 100, 8.0, 0.99).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.band - ((200.0f64).ln() / 40_000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dominance_needs_samples() {
        assert!(matches!(
            dominance_check(&[1, 2, 3], 1, 1.0, 0.99),
            Err(EstimateError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn rows_follow_column_order() {
        let trace = synthetic(vec![vec![0.5, 0.5]; 2], vec![vec![1.0, 2.0]; 2]);
        let est = estimate(&trace, 1).unwrap();
        let rows = estimate_rows(&est, &trace, 7, 9, 1, 1.0, 1.0);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].k, 2);
        let json = serde_json::to_value(&rows[0]).unwrap();
        let keys: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        let mut expected = ESTIMATE_COLUMNS.to_vec();
        expected.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, expected);
    }
}
