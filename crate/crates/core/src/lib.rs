//! Average-cost POMDP toolkit.
//!
//! The crate turns a partially observed control problem into a fully observed
//! one on the space of posterior distributions, quantizes that space, and
//! provides solvers and diagnostics on top: exact belief filtering,
//! Wasserstein/variation-distance machinery, discounted and average-cost
//! dynamic programming, model robustness gaps, and two Q-learning variants
//! (quantized-belief and finite-observation-window) with their associated
//! approximation-error bounds.

pub mod avgcost;
pub mod beliefmdp;
pub mod error;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod model;
pub mod qlearn;

pub use avgcost::{
    average_cost_exact, robustness_bound, robustness_gap, span, vanishing_discount, AcoeSolution,
    BetaTraceEntry, RobustnessGap, RobustnessMode,
};
pub use beliefmdp::{
    belief_cost, build_quantized_mdp, contraction_ratio, contraction_sweep, eta, kernel_bl_gap,
    q_factors, quantization_error_bound, quantize, quantize_with_cap, value_iteration,
    BeliefMeasure, ContractionSweep, DiscreteMdp, QuantizedBeliefMdp, Quantizer, ValueSolution,
    Weighting,
};
pub use error::{Error, Result};
pub use filter::{
    bayes_update, dual_filter_run, filter_update, predict, predict_obs_likelihoods, simulate,
    ActionSource, Belief, DualFilterConfig, DualFilterStats, Policy, Trajectory,
};
pub use metrics::{
    assumption_report, bl_distance, cost_lipschitz_k1, dobrushin, obs_dobrushin, total_variation,
    transition_dobrushin, transport_lp, tv_lipschitz_alpha, w1, AssumptionReport, Transport,
};
pub use model::{
    builtin, discretize, ex1, ex2, ex3, BuiltinModel, ContinuousSpec1D, CostForm, FinitePomdp,
    KernelFamily, ObsPartition, StateMetric, ValidatedModel,
};
pub use qlearn::{
    greedy_policy, psi, q_learning, window_loss, window_mdp, GreedyPolicy, QTable, QlearnSpace,
    StateKind, WindowIndexer, WindowLoss, WindowLossConfig, WindowMdp, WindowState,
};
