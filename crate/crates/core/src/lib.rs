//! Simulation and limit theory for reinforcement with fading memories.
//!
//! An agent repeatedly picks one of `K` actions. The chosen action earns
//! rewards at Poisson rate `λ_k`; each reward is remembered for an
//! exponentially distributed time and then forgotten. At Poisson update
//! points of rate `β` the agent resamples its choice with probability
//! proportional to `w(Q_k ∨ α)`, where `Q_k` counts the rewards of action
//! `k` still in memory.
//!
//! * [`model`]: parameters, weight rules and the reward-matching rule.
//! * [`sim`]: exact event-driven simulation.
//! * [`fluid`]: the fluid ODE, its integrator and convergence diagnostics.
//! * [`theory`]: closed-form limits and invariant states.
//! * [`estimators`]: steady-state estimates and statistical checks.
//!
//! The deterministic modules are generic over [`Real`] (`f32` or `f64`).
//! The simulator and estimators work in `f64`.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod fluid;
pub mod model;
pub mod rng;
pub mod roots;
pub mod scalar;
pub mod sim;
pub mod theory;

pub use estimators::{
    compare_to_theory, dominance_check, estimate, estimate_replicas, Allowance, SteadyEstimate,
};
pub use fluid::{
    convergence_rate, integrate, ConvergenceFit, FluidModel, FluidState, FluidTrajectory,
};
pub use model::{
    choice_distribution, effective_reward_rates, sample_choice, InstanceDoc, ModelError,
    ModelParams, ScaledInstance, WeightRule,
};
pub use scalar::Real;
pub use sim::{simulate, LifespanDist, SimConfig, SimError, Trace};
pub use theory::{
    deficient_transition_matrix, heterogeneous_limits, invariant_state_linear,
    invariant_state_poly, invariant_states_eta_gt1_k2, limit_choice_probs, limit_rewards,
    stationary_distribution, InvariantReport, RegimeTag, Stability,
};

pub type Params = ModelParams<f64>;
pub type Instance = ScaledInstance<f64>;
pub type Weight = WeightRule<f64>;
pub type FluidModelF64 = FluidModel<f64>;
pub type FluidModelF32 = FluidModel<f32>;
pub type FluidStateF64 = FluidState<f64>;
pub type FluidStateF32 = FluidState<f32>;
pub type TrajectoryF64 = FluidTrajectory<f64>;
pub type InvariantReportF64 = InvariantReport<f64>;
