//! Exact Bayes filtering and closed-loop trajectory simulation.
//!
//! The posterior over the hidden state is carried as a [`Belief`] and updated
//! by [`predict`] (transition push-forward), [`bayes_update`] (measurement
//! conditioning), and their composition [`filter_update`]. [`simulate`] rolls
//! out the hidden chain together with its exact filter; [`dual_filter_run`]
//! drives two filters started from different priors on one realization and
//! records how fast they merge.

use std::ops::Deref;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::total_variation;
use crate::model::ValidatedModel;

/// Likelihoods below this are treated as impossible observations.
const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// A probability vector over the hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates nonnegativity and unit mass (tolerance 1e-12), then
    /// renormalizes exactly.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFiniteEntry {
                    matrix: "belief".into(),
                    row: 0,
                    col: i,
                    value: w,
                });
            }
            if w < 0.0 {
                return Err(Error::NegativeEntry {
                    matrix: "belief".into(),
                    row: 0,
                    col: i,
                    value: w,
                });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::RowNotStochastic {
                matrix: "belief".into(),
                row: 0,
                sum,
                tol: 1e-12,
            });
        }
        let mut weights = weights;
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Belief(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn dirac(n: usize, x: usize) -> Self {
        let mut w = vec![0.0; n];
        w[x] = 1.0;
        Belief(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    /// `sum_i z_i f_i`.
    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.0.iter().zip(f).map(|(z, v)| z * v).sum()
    }
}

impl Deref for Belief {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Belief {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_action(model: &ValidatedModel, action: usize) -> Result<()> {
    if action >= model.n_actions {
        return Err(Error::ParamOutOfRange {
            name: "action".into(),
            value: action as f64,
            admissible: format!("index below {}", model.n_actions),
        });
    }
    Ok(())
}

fn check_obs(model: &ValidatedModel, obs: usize) -> Result<()> {
    if obs >= model.n_obs {
        return Err(Error::ParamOutOfRange {
            name: "obs".into(),
            value: obs as f64,
            admissible: format!("index below {}", model.n_obs),
        });
    }
    Ok(())
}

/// Conditions a prior on one measurement: `z_i proportional to prior_i
/// Q(obs | i)`.
pub fn bayes_update(model: &ValidatedModel, prior: &Belief, obs: usize) -> Result<Belief> {
    check_obs(model, obs)?;
    let mut w: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(i, &p)| p * model.observation[i][obs])
        .collect();
    let lik: f64 = w.iter().sum();
    if lik < LIKELIHOOD_FLOOR {
        return Err(Error::ZeroLikelihood { obs });
    }
    w.iter_mut().for_each(|v| *v /= lik);
    Ok(Belief(w))
}

/// Pushes a belief through one transition: `z'_j = sum_i z_i T_u(j | i)`.
pub fn predict(model: &ValidatedModel, belief: &Belief, action: usize) -> Result<Belief> {
    check_action(model, action)?;
    let kernel = &model.transitions[action];
    let n = model.n_states;
    let mut w = vec![0.0; n];
    for (i, &z) in belief.iter().enumerate() {
        if z > 0.0 {
            for (j, &t) in kernel[i].iter().enumerate() {
                w[j] += z * t;
            }
        }
    }
    Ok(Belief(w))
}

/// One full filter step: predict under `action`, then condition on `obs`.
/// Returns the posterior together with the observation's predictive
/// probability `P(obs | belief, action)`.
pub fn filter_update(
    model: &ValidatedModel,
    belief: &Belief,
    action: usize,
    obs: usize,
) -> Result<(Belief, f64)> {
    check_obs(model, obs)?;
    let predicted = predict(model, belief, action)?;
    let mut w: Vec<f64> = predicted
        .iter()
        .enumerate()
        .map(|(j, &p)| p * model.observation[j][obs])
        .collect();
    let lik: f64 = w.iter().sum();
    if lik < LIKELIHOOD_FLOOR {
        return Err(Error::ZeroLikelihood { obs });
    }
    w.iter_mut().for_each(|v| *v /= lik);
    Ok((Belief(w), lik))
}

/// Predictive distribution of the next observation:
/// `P(y' | belief, action) = sum_j (T_u z)(j) Q(y' | j)`.
pub fn predict_obs_likelihoods(
    model: &ValidatedModel,
    belief: &Belief,
    action: usize,
) -> Result<Vec<f64>> {
    let predicted = predict(model, belief, action)?;
    Ok((0..model.n_obs)
        .map(|y| {
            predicted
                .iter()
                .enumerate()
                .map(|(j, &p)| p * model.observation[j][y])
                .sum()
        })
        .collect())
}

/// How actions are chosen during simulation.
pub enum Policy<'a> {
    /// Always the same action.
    Fixed(usize),
    /// Uniform over all actions, independent each step.
    IidUniform,
    /// Independent draws from fixed action weights.
    Iid(&'a [f64]),
    /// Deterministic feedback on the current posterior.
    FromBelief(&'a (dyn Fn(&Belief) -> usize + Sync)),
}

impl Policy<'_> {
    fn validate(&self, model: &ValidatedModel) -> Result<()> {
        match self {
            Policy::Fixed(u) => check_action(model, *u),
            Policy::IidUniform | Policy::FromBelief(_) => Ok(()),
            Policy::Iid(w) => {
                if w.len() != model.n_actions {
                    return Err(Error::LengthMismatch {
                        context: "policy action weights".into(),
                        left: w.len(),
                        right: model.n_actions,
                    });
                }
                Belief::new(w.to_vec())
                    .map(|_| ())
                    .map_err(|_| Error::RowNotStochastic {
                        matrix: "policy action weights".into(),
                        row: 0,
                        sum: w.iter().sum(),
                        tol: 1e-12,
                    })
            }
        }
    }

    fn select(&self, model: &ValidatedModel, belief: &Belief, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Policy::Fixed(u) => *u,
            Policy::IidUniform => rng.random_range(0..model.n_actions),
            Policy::Iid(w) => sample_categorical(rng, w),
            Policy::FromBelief(f) => f(belief),
        }
    }
}

/// Draws an index with probability proportional to `weights`.
pub(crate) fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if r < acc {
                return i;
            }
        }
    }
    last_positive
}

/// A realized hidden trajectory with its synchronized exact filter.
///
/// With horizon `T`: `states`, `observations`, and `beliefs` have length `T`
/// and `actions`, `stage_costs` length `T - 1`. The first belief conditions
/// the prior on the first observation; no action precedes it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub stage_costs: Vec<f64>,
    pub beliefs: Vec<Belief>,
}

impl Trajectory {
    /// Mean of the realized stage costs.
    pub fn average_cost(&self) -> f64 {
        if self.stage_costs.is_empty() {
            return 0.0;
        }
        self.stage_costs.iter().sum::<f64>() / self.stage_costs.len() as f64
    }
}

/// Simulates the hidden chain from `prior` for `horizon` time points under
/// `policy`, running the exact filter alongside.
///
/// The random stream is consumed in a fixed order (initial state, initial
/// observation, then per step: action draw if the policy randomizes, next
/// state, next observation), so a given seed yields one trajectory
/// regardless of how results are consumed.
pub fn simulate(
    model: &ValidatedModel,
    prior: &Belief,
    policy: &Policy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::ParamOutOfRange {
            name: "horizon".into(),
            value: 0.0,
            admissible: "at least 1 time point".into(),
        });
    }
    if prior.len() != model.n_states {
        return Err(Error::LengthMismatch {
            context: "prior".into(),
            left: prior.len(),
            right: model.n_states,
        });
    }
    policy.validate(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut states = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon.saturating_sub(1));
    let mut stage_costs = Vec::with_capacity(horizon.saturating_sub(1));
    let mut beliefs = Vec::with_capacity(horizon);

    let mut x = sample_categorical(&mut rng, prior);
    let mut y = sample_categorical(&mut rng, &model.observation[x]);
    let mut z = bayes_update(model, prior, y)?;
    states.push(x);
    observations.push(y);
    beliefs.push(z.clone());

    for _ in 1..horizon {
        let u = policy.select(model, &z, &mut rng);
        debug_assert!(u < model.n_actions);
        actions.push(u);
        stage_costs.push(model.cost[x][u]);
        x = sample_categorical(&mut rng, &model.transitions[u][x]);
        y = sample_categorical(&mut rng, &model.observation[x]);
        let (next_z, _) = filter_update(model, &z, u, y)?;
        z = next_z;
        states.push(x);
        observations.push(y);
        beliefs.push(z.clone());
    }

    Ok(Trajectory {
        seed,
        states,
        observations,
        actions,
        stage_costs,
        beliefs,
    })
}

/// Which of the two filters the feedback policy reads in
/// [`dual_filter_run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    /// Actions come from the filter started at the mismatched prior
    /// (the controller does not know the true prior).
    MismatchedFilter,
    /// Actions come from the correctly initialized filter.
    TrueFilter,
}

/// Configuration of a filter-merging experiment.
#[derive(Debug, Clone, Copy)]
pub struct DualFilterConfig {
    /// Time points per run.
    pub horizon: usize,
    /// Independent realizations to average over.
    pub n_runs: usize,
    /// Base seed; run `k` uses `seed + k`.
    pub seed: u64,
    pub action_source: ActionSource,
}

/// Per-time-step merging statistics from [`dual_filter_run`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualFilterStats {
    /// Mean total variation between the two posteriors at each time.
    pub mean_tv: Vec<f64>,
    /// Standard error of that mean.
    pub sem_tv: Vec<f64>,
    pub n_runs: usize,
}

/// Runs the hidden chain from the true prior `mu` while two filters track
/// it: one started at `mu`, one at the mismatched prior `nu`. Returns the
/// average total-variation gap between the posteriors at each time step.
///
/// Requires `mu` absolutely continuous with respect to `nu` so the
/// mismatched filter cannot rule out the realized trajectory.
pub fn dual_filter_run(
    model: &ValidatedModel,
    mu: &Belief,
    nu: &Belief,
    policy: &Policy,
    cfg: &DualFilterConfig,
) -> Result<DualFilterStats> {
    if cfg.horizon == 0 || cfg.n_runs == 0 {
        return Err(Error::ParamOutOfRange {
            name: "horizon/n_runs".into(),
            value: 0.0,
            admissible: "positive".into(),
        });
    }
    for (i, (&m, &v)) in mu.iter().zip(nu.iter()).enumerate() {
        if m > 0.0 && v == 0.0 {
            return Err(Error::SupportViolation { index: i });
        }
    }
    policy.validate(model)?;

    let per_run: Vec<Vec<f64>> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + run as u64);
            let mut tv = Vec::with_capacity(cfg.horizon);
            let mut x = sample_categorical(&mut rng, mu);
            let mut y = sample_categorical(&mut rng, &model.observation[x]);
            let mut z_mu = bayes_update(model, mu, y)?;
            let mut z_nu = bayes_update(model, nu, y)?;
            tv.push(total_variation(&z_mu, &z_nu));
            for _ in 1..cfg.horizon {
                let feedback = match cfg.action_source {
                    ActionSource::MismatchedFilter => &z_nu,
                    ActionSource::TrueFilter => &z_mu,
                };
                let u = policy.select(model, feedback, &mut rng);
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                y = sample_categorical(&mut rng, &model.observation[x]);
                z_mu = filter_update(model, &z_mu, u, y)?.0;
                z_nu = filter_update(model, &z_nu, u, y)?.0;
                tv.push(total_variation(&z_mu, &z_nu));
            }
            Ok(tv)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_runs as f64;
    let mut mean_tv = vec![0.0; cfg.horizon];
    let mut sem_tv = vec![0.0; cfg.horizon];
    for t in 0..cfg.horizon {
        let mean = per_run.iter().map(|r| r[t]).sum::<f64>() / n;
        let var = per_run.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        mean_tv[t] = mean;
        sem_tv[t] = (var / n).sqrt();
    }
    Ok(DualFilterStats {
        mean_tv,
        sem_tv,
        n_runs: cfg.n_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ex1;

    fn model() -> ValidatedModel {
        ex1(0.1, None).unwrap()
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.5]).is_ok());
        assert!(matches!(
            Belief::new(vec![0.5, -0.1, 0.6]),
            Err(Error::NegativeEntry { col: 1, .. })
        ));
        assert!(matches!(
            Belief::new(vec![0.5, 0.4]),
            Err(Error::RowNotStochastic { .. })
        ));
        assert!(matches!(
            Belief::new(vec![f64::NAN, 1.0]),
            Err(Error::NonFiniteEntry { .. })
        ));
    }

    #[test]
    fn bayes_update_reweights_by_observation_column() {
        let m = model();
        let z = bayes_update(&m, &Belief::uniform(4), 0).unwrap();
        // proportional to (0.65, 0.65, 0.35, 0.35)
        assert!((z[0] - 0.325).abs() < 1e-15);
        assert!((z[2] - 0.175).abs() < 1e-15);
    }

    #[test]
    fn predict_from_uniform_matches_hand_arithmetic() {
        let m = model();
        let z = predict(&m, &Belief::uniform(4), 0).unwrap();
        let want = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in z.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_update_matches_hand_arithmetic() {
        let m = model();
        let (z0, lik0) = filter_update(&m, &Belief::uniform(4), 0, 0).unwrap();
        assert!((lik0 - 0.55).abs() < 1e-15);
        let want0 = [13.0 / 33.0, 13.0 / 33.0, 7.0 / 66.0, 7.0 / 66.0];
        for (a, b) in z0.iter().zip(want0) {
            assert!((a - b).abs() < 1e-12);
        }
        let (z1, lik1) = filter_update(&m, &Belief::uniform(4), 0, 1).unwrap();
        assert!((lik1 - 0.45).abs() < 1e-15);
        let want1 = [7.0 / 27.0, 7.0 / 27.0, 13.0 / 54.0, 13.0 / 54.0];
        for (a, b) in z1.iter().zip(want1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_likelihoods_sum_to_one() {
        let m = model();
        for seed in 0..5 {
            let z = Belief::new(match seed {
                0 => vec![1.0, 0.0, 0.0, 0.0],
                1 => vec![0.1, 0.2, 0.3, 0.4],
                _ => vec![0.25; 4],
            })
            .unwrap();
            for u in 0..2 {
                let total: f64 = (0..2).map(|y| filter_update(&m, &z, u, y).unwrap().1).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impossible_observation_is_reported() {
        let raw = crate::model::FinitePomdp {
            n_states: 2,
            n_actions: 1,
            n_obs: 2,
            transitions: vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
            observation: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            cost: vec![vec![0.0], vec![0.0]],
            metric: crate::model::StateMetric::Discrete,
        };
        let m = raw.validate().unwrap();
        assert!(matches!(
            filter_update(&m, &Belief::uniform(2), 0, 1),
            Err(Error::ZeroLikelihood { obs: 1 })
        ));
    }

    #[test]
    fn simulate_shapes_and_replay() {
        let m = model();
        let traj = simulate(&m, &Belief::uniform(4), &Policy::IidUniform, 50, 7).unwrap();
        assert_eq!(traj.states.len(), 50);
        assert_eq!(traj.observations.len(), 50);
        assert_eq!(traj.beliefs.len(), 50);
        assert_eq!(traj.actions.len(), 49);
        assert_eq!(traj.stage_costs.len(), 49);
        // first belief conditions the prior on the first observation
        let first = bayes_update(&m, &Belief::uniform(4), traj.observations[0]).unwrap();
        assert_eq!(traj.beliefs[0], first);
        // belief sequence replays from observations and actions
        let mut z = first;
        for t in 1..50 {
            z = filter_update(&m, &z, traj.actions[t - 1], traj.observations[t])
                .unwrap()
                .0;
            assert_eq!(traj.beliefs[t], z);
        }
        // stage costs match the cost table along the path
        for t in 0..49 {
            assert_eq!(traj.stage_costs[t], m.cost[traj.states[t]][traj.actions[t]]);
        }
    }

    #[test]
    fn simulate_is_deterministic_in_the_seed() {
        let m = model();
        let a = simulate(&m, &Belief::uniform(4), &Policy::IidUniform, 200, 11).unwrap();
        let b = simulate(&m, &Belief::uniform(4), &Policy::IidUniform, 200, 11).unwrap();
        let c = simulate(&m, &Belief::uniform(4), &Policy::IidUniform, 200, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn simulate_rejects_empty_horizon_and_bad_policy() {
        let m = model();
        assert!(matches!(
            simulate(&m, &Belief::uniform(4), &Policy::IidUniform, 0, 1),
            Err(Error::ParamOutOfRange { .. })
        ));
        assert!(matches!(
            simulate(&m, &Belief::uniform(4), &Policy::Fixed(9), 10, 1),
            Err(Error::ParamOutOfRange { .. })
        ));
        assert!(matches!(
            simulate(&m, &Belief::uniform(4), &Policy::Iid(&[0.5, 0.4]), 10, 1),
            Err(Error::RowNotStochastic { .. })
        ));
    }

    #[test]
    fn belief_feedback_policy_sees_the_current_posterior() {
        let m = model();
        // act 1 whenever the posterior leans to the costly half
        let rule = |z: &Belief| usize::from(z[2] + z[3] > 0.5);
        let traj = simulate(&m, &Belief::uniform(4), &Policy::FromBelief(&rule), 30, 3).unwrap();
        for t in 0..traj.actions.len() {
            let z = &traj.beliefs[t];
            assert_eq!(traj.actions[t], usize::from(z[2] + z[3] > 0.5));
        }
    }

    #[test]
    fn identical_priors_never_separate() {
        let m = model();
        let cfg = DualFilterConfig {
            horizon: 20,
            n_runs: 8,
            seed: 5,
            action_source: ActionSource::MismatchedFilter,
        };
        let stats = dual_filter_run(
            &m,
            &Belief::uniform(4),
            &Belief::uniform(4),
            &Policy::IidUniform,
            &cfg,
        )
        .unwrap();
        assert!(stats.mean_tv.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn mismatched_priors_merge_on_average() {
        let m = model();
        let mu = Belief::dirac(4, 0);
        let nu = Belief::uniform(4);
        let cfg = DualFilterConfig {
            horizon: 25,
            n_runs: 200,
            seed: 9,
            action_source: ActionSource::MismatchedFilter,
        };
        let stats = dual_filter_run(&m, &mu, &nu, &Policy::IidUniform, &cfg).unwrap();
        assert!(stats.mean_tv[0] > 0.1);
        let tail = stats.mean_tv[24];
        assert!(tail < 0.05 * stats.mean_tv[0], "tail {tail}");
        assert_eq!(stats.n_runs, 200);
    }

    #[test]
    fn support_violation_is_rejected() {
        let m = model();
        let mu = Belief::uniform(4);
        let nu = Belief::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let cfg = DualFilterConfig {
            horizon: 5,
            n_runs: 2,
            seed: 1,
            action_source: ActionSource::MismatchedFilter,
        };
        assert!(matches!(
            dual_filter_run(&m, &mu, &nu, &Policy::IidUniform, &cfg),
            Err(Error::SupportViolation { index: 2 })
        ));
    }
}
