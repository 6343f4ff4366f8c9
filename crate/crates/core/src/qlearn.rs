//! Tabular Q-learning on two finite surrogates of the belief MDP — the
//! quantized-belief chain and the finite-observation-window chain — plus the
//! window construction itself and a sampled estimate of the window
//! approximation loss.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beliefmdp::{belief_cost, DiscreteMdp, Quantizer, DEFAULT_REP_CAP};
use crate::error::{Error, Result};
use crate::filter::{
    bayes_update, filter_update, predict, predict_obs_likelihoods, sample_categorical, Belief,
};
use crate::metrics::total_variation;
use crate::model::ValidatedModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// The last `N+1` observations and `N` actions, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
}

/// Bijection between [`WindowState`]s and dense indices (mixed radix:
/// observations oldest-first are the most significant digits, then actions
/// oldest-first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowIndexer {
    pub n: usize,
    pub n_obs: usize,
    pub n_actions: usize,
}

impl WindowIndexer {
    pub fn count(&self) -> u128 {
        (self.n_obs as u128).pow(self.n as u32 + 1) * (self.n_actions as u128).pow(self.n as u32)
    }

    pub fn encode(&self, w: &WindowState) -> usize {
        debug_assert_eq!(w.observations.len(), self.n + 1);
        debug_assert_eq!(w.actions.len(), self.n);
        let mut idx = 0usize;
        for &y in &w.observations {
            debug_assert!(y < self.n_obs);
            idx = idx * self.n_obs + y;
        }
        for &u in &w.actions {
            debug_assert!(u < self.n_actions);
            idx = idx * self.n_actions + u;
        }
        idx
    }

    pub fn decode(&self, mut idx: usize) -> WindowState {
        let mut actions = vec![0usize; self.n];
        for slot in actions.iter_mut().rev() {
            *slot = idx % self.n_actions;
            idx /= self.n_actions;
        }
        let mut observations = vec![0usize; self.n + 1];
        for slot in observations.iter_mut().rev() {
            *slot = idx % self.n_obs;
            idx /= self.n_obs;
        }
        WindowState {
            observations,
            actions,
        }
    }
}

/// Posterior obtained by pinning the pre-window predictor to `anchor` and
/// filtering through the window: a Bayes update by the oldest observation
/// followed by one filter step per (action, observation) pair.
pub fn psi(model: &ValidatedModel, anchor: &Belief, w: &WindowState) -> Result<Belief> {
    if w.observations.len() != w.actions.len() + 1 {
        return Err(Error::LengthMismatch {
            context: "window".into(),
            left: w.observations.len(),
            right: w.actions.len() + 1,
        });
    }
    let mut z = bayes_update(model, anchor, w.observations[0])?;
    for (k, &u) in w.actions.iter().enumerate() {
        z = filter_update(model, &z, u, w.observations[k + 1])?.0;
    }
    Ok(z)
}

/// The finite MDP on observation windows induced by an anchor prior.
#[derive(Debug, Clone)]
pub struct WindowMdp {
    pub mdp: DiscreteMdp,
    pub indexer: WindowIndexer,
    pub anchor: Belief,
    /// Pinned posterior per window; `None` when the window is impossible
    /// under the anchor.
    pub beliefs: Vec<Option<Belief>>,
    /// `false` for windows with zero probability under the anchor (they are
    /// retained as absorbing zero-cost states).
    pub reachable: Vec<bool>,
}

/// Builds the window MDP: state = window, cost = stage cost at the pinned
/// posterior, transitions = next-observation likelihoods under the pinned
/// posterior with the window shifting and dropping its oldest entries.
pub fn window_mdp(model: &ValidatedModel, n: usize, anchor: &Belief) -> Result<WindowMdp> {
    let indexer = WindowIndexer {
        n,
        n_obs: model.n_obs,
        n_actions: model.n_actions,
    };
    let count = indexer.count();
    if count > DEFAULT_REP_CAP as u128 {
        return Err(Error::TooLarge {
            count,
            cap: DEFAULT_REP_CAP,
        });
    }
    let count = count as usize;

    let rows: Vec<(Option<Belief>, Vec<f64>, Vec<Vec<(usize, f64)>>)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let w = indexer.decode(i);
            match psi(model, anchor, &w) {
                Ok(z) => {
                    let cost: Vec<f64> = (0..model.n_actions)
                        .map(|u| belief_cost(model, &z, u))
                        .collect();
                    let mut kernel_rows = Vec::with_capacity(model.n_actions);
                    for u in 0..model.n_actions {
                        let lik = predict_obs_likelihoods(model, &z, u)?;
                        let mut row = Vec::new();
                        for (y_next, &p) in lik.iter().enumerate() {
                            if p == 0.0 {
                                continue;
                            }
                            let mut succ = WindowState {
                                observations: w.observations[1..].to_vec(),
                                // n = 0 windows carry no actions
                                actions: w.actions.get(1..).unwrap_or(&[]).to_vec(),
                            };
                            succ.observations.push(y_next);
                            succ.actions.push(u);
                            succ.actions.truncate(n);
                            row.push((indexer.encode(&succ), p));
                        }
                        kernel_rows.push(row);
                    }
                    Ok((Some(z), cost, kernel_rows))
                }
                Err(Error::ZeroLikelihood { .. }) => Ok((
                    None,
                    vec![0.0; model.n_actions],
                    vec![vec![(i, 1.0)]; model.n_actions],
                )),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut beliefs = Vec::with_capacity(count);
    let mut reachable = Vec::with_capacity(count);
    let mut cost = Vec::with_capacity(count);
    let mut kernel = vec![Vec::with_capacity(count); model.n_actions];
    for (z, c, k_rows) in rows {
        reachable.push(z.is_some());
        beliefs.push(z);
        cost.push(c);
        for (u, row) in k_rows.into_iter().enumerate() {
            kernel[u].push(row);
        }
    }
    let mdp = DiscreteMdp {
        n_states: count,
        n_actions: model.n_actions,
        cost,
        kernel,
    };
    mdp.validate()?;
    Ok(WindowMdp {
        mdp,
        indexer,
        anchor: anchor.clone(),
        beliefs,
        reachable,
    })
}

/// How a learned table indexes its states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    QuantizedBelief { resolution: usize, n_reps: usize },
    Window { indexer: WindowIndexer },
}

/// A tabular Q function with per-pair visit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
    pub visits: Vec<Vec<u64>>,
    pub kind: StateKind,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, kind: StateKind) -> Self {
        QTable {
            values: vec![vec![0.0; n_actions]; n_states],
            visits: vec![vec![0; n_actions]; n_states],
            kind,
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// One asynchronous update with the visit-count learning rate
    /// `1 / (1 + visits including this one)`; returns the rate applied.
    pub fn update(
        &mut self,
        state: usize,
        action: usize,
        cost: f64,
        next: usize,
        beta: f64,
    ) -> f64 {
        let target = cost + beta * min_of(&self.values[next]);
        self.visits[state][action] += 1;
        let alpha = 1.0 / (1.0 + self.visits[state][action] as f64);
        let q = &mut self.values[state][action];
        *q = (1.0 - alpha) * *q + alpha * target;
        alpha
    }
}

fn min_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Which finite state space a learning run lives on.
#[derive(Debug, Clone)]
pub enum QlearnSpace<'a> {
    Quantized(&'a Quantizer),
    Window { n: usize, anchor: &'a Belief },
}

/// Runs tabular Q-learning on the true partially observed chain (hidden
/// state started uniform) under an i.i.d. exploration policy, mapping
/// experience either to the nearest quantizer representative of the running
/// posterior or to the sliding observation window after a warm-up of `n + 1`
/// unrecorded steps. The stage cost fed to the update is the model cost at
/// the surrogate state (representative or pinned window posterior), and
/// `steps` counts updates. Deterministic in `seed`.
pub fn q_learning(
    model: &ValidatedModel,
    space: QlearnSpace<'_>,
    beta: f64,
    steps: usize,
    seed: u64,
    exploration: &[f64],
) -> Result<QTable> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "beta".into(),
            value: beta,
            admissible: "open interval (0, 1)".into(),
        });
    }
    if steps == 0 {
        return Err(Error::ParamOutOfRange {
            name: "steps".into(),
            value: 0.0,
            admissible: "at least 1".into(),
        });
    }
    if exploration.len() != model.n_actions {
        return Err(Error::LengthMismatch {
            context: "exploration probabilities".into(),
            left: exploration.len(),
            right: model.n_actions,
        });
    }
    let total: f64 = exploration.iter().sum();
    if exploration.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::ParamOutOfRange {
            name: "exploration".into(),
            value: total,
            admissible: "strictly positive entries summing to 1".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = Belief::uniform(model.n_states);
    let mut x = sample_categorical(&mut rng, &prior);
    let mut y = sample_categorical(&mut rng, &model.observation[x]);

    match space {
        QlearnSpace::Quantized(quantizer) => {
            let mut table = QTable::new(
                quantizer.len(),
                model.n_actions,
                StateKind::QuantizedBelief {
                    resolution: quantizer.resolution(),
                    n_reps: quantizer.len(),
                },
            );
            let mut z = bayes_update(model, &prior, y)?;
            let (mut s, _) = quantizer.nearest(&z)?;
            for _ in 0..steps {
                let u = sample_categorical(&mut rng, exploration);
                let cost = belief_cost(model, &quantizer.reps()[s], u);
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                y = sample_categorical(&mut rng, &model.observation[x]);
                z = filter_update(model, &z, u, y)?.0;
                let (s_next, _) = quantizer.nearest(&z)?;
                table.update(s, u, cost, s_next, beta);
                s = s_next;
            }
            Ok(table)
        }
        QlearnSpace::Window { n, anchor } => {
            let indexer = WindowIndexer {
                n,
                n_obs: model.n_obs,
                n_actions: model.n_actions,
            };
            let count = indexer.count();
            if count > DEFAULT_REP_CAP as u128 {
                return Err(Error::TooLarge {
                    count,
                    cap: DEFAULT_REP_CAP,
                });
            }
            let mut table = QTable::new(
                count as usize,
                model.n_actions,
                StateKind::Window { indexer },
            );
            let mut pinned: HashMap<usize, Belief> = HashMap::new();
            let mut obs_hist = vec![y];
            let mut act_hist: Vec<usize> = Vec::new();
            // warm-up: n + 1 exploratory transitions, no updates
            for _ in 0..n + 1 {
                let u = sample_categorical(&mut rng, exploration);
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                y = sample_categorical(&mut rng, &model.observation[x]);
                act_hist.push(u);
                obs_hist.push(y);
            }
            let mut window = WindowState {
                observations: obs_hist[obs_hist.len() - n - 1..].to_vec(),
                actions: act_hist[act_hist.len() - n..].to_vec(),
            };
            let mut s = indexer.encode(&window);
            for _ in 0..steps {
                let u = sample_categorical(&mut rng, exploration);
                let z = match pinned.entry(s) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(slot) => {
                        slot.insert(psi(model, anchor, &window)?)
                    }
                };
                let cost = belief_cost(model, z, u);
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                y = sample_categorical(&mut rng, &model.observation[x]);
                window.observations.rotate_left(1);
                *window.observations.last_mut().expect("n+1 observations") = y;
                if n > 0 {
                    window.actions.rotate_left(1);
                    *window.actions.last_mut().expect("n actions") = u;
                }
                let s_next = indexer.encode(&window);
                table.update(s, u, cost, s_next, beta);
                s = s_next;
            }
            Ok(table)
        }
    }
}

/// Greedy action per state (argmin, ties to the lowest index); states with
/// no visits at all are flagged and assigned action 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyPolicy {
    pub actions: Vec<usize>,
    pub unvisited: Vec<bool>,
}

pub fn greedy_policy(q: &QTable) -> GreedyPolicy {
    let mut actions = Vec::with_capacity(q.n_states());
    let mut unvisited = Vec::with_capacity(q.n_states());
    for (row, visits) in q.values.iter().zip(&q.visits) {
        let fresh = visits.iter().all(|&v| v == 0);
        unvisited.push(fresh);
        if fresh {
            actions.push(0);
            continue;
        }
        let mut best = 0usize;
        for (u, &v) in row.iter().enumerate() {
            if v < row[best] {
                best = u;
            }
        }
        actions.push(best);
    }
    GreedyPolicy { actions, unvisited }
}

/// Monte-Carlo design for [`window_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLossConfig {
    /// Largest window start time evaluated; estimates cover `t = 0..=t_max`.
    pub t_max: usize,
    /// Random stationary window policies sampled into the maximization.
    pub n_policies: usize,
    /// Simulated trajectories per policy.
    pub n_runs: usize,
    pub seed: u64,
}

/// Sampled window-approximation loss per start time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowLoss {
    /// `estimates[t]` approximates the worst-case expected TV gap at time
    /// `t` between the exact posterior and the anchor-pinned one.
    pub estimates: Vec<f64>,
    pub n_policies: usize,
    /// Always true: the policy supremum is replaced by a sampled maximum,
    /// so the estimates are lower bounds.
    pub supremum_sampled: bool,
}

/// Estimates the window loss by simulating the chain (hidden state started
/// uniform) under each policy in a sampled set of stationary window policies
/// plus any caller-supplied ones, comparing in expectation the true
/// posterior of the end-of-window state against the anchor-pinned posterior,
/// and maximizing over the policy set.
pub fn window_loss(
    model: &ValidatedModel,
    n: usize,
    anchor: &Belief,
    config: &WindowLossConfig,
    extra_policies: &[Vec<usize>],
) -> Result<WindowLoss> {
    let indexer = WindowIndexer {
        n,
        n_obs: model.n_obs,
        n_actions: model.n_actions,
    };
    let count = indexer.count();
    if count > DEFAULT_REP_CAP as u128 {
        return Err(Error::TooLarge {
            count,
            cap: DEFAULT_REP_CAP,
        });
    }
    let count = count as usize;
    if config.n_runs == 0 || config.n_policies + extra_policies.len() == 0 {
        return Err(Error::ParamOutOfRange {
            name: "n_runs/policies".into(),
            value: 0.0,
            admissible: "at least one run and one policy".into(),
        });
    }
    for (k, p) in extra_policies.iter().enumerate() {
        if p.len() != count {
            return Err(Error::LengthMismatch {
                context: format!("extra_policies[{k}]"),
                left: p.len(),
                right: count,
            });
        }
        if let Some(&bad) = p.iter().find(|&&u| u >= model.n_actions) {
            return Err(Error::ParamOutOfRange {
                name: format!("extra_policies[{k}]"),
                value: bad as f64,
                admissible: format!("action index below {}", model.n_actions),
            });
        }
    }

    let mut policy_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policies: Vec<Vec<usize>> = (0..config.n_policies)
        .map(|_| {
            (0..count)
                .map(|_| policy_rng.random_range(0..model.n_actions))
                .collect()
        })
        .collect();
    policies.extend(extra_policies.iter().cloned());

    let prior = Belief::uniform(model.n_states);
    let horizon = config.t_max + n + 1;
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..config.n_runs).map(move |r| (p, r)))
        .collect();
    let traces: Vec<(usize, Vec<f64>)> = jobs
        .into_par_iter()
        .map(|(p, r)| -> Result<(usize, Vec<f64>)> {
            let policy = &policies[p];
            let mut rng =
                ChaCha8Rng::seed_from_u64(config.seed + 1 + (p * config.n_runs + r) as u64);
            let mut x = sample_categorical(&mut rng, &prior);
            let mut obs = Vec::with_capacity(horizon);
            let mut acts = Vec::with_capacity(horizon.saturating_sub(1));
            obs.push(sample_categorical(&mut rng, &model.observation[x]));
            for k in 0..horizon - 1 {
                let u = if k < n {
                    rng.random_range(0..model.n_actions)
                } else {
                    let w = WindowState {
                        observations: obs[k - n..=k].to_vec(),
                        actions: acts[k - n..k].to_vec(),
                    };
                    policy[indexer.encode(&w)]
                };
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                obs.push(sample_categorical(&mut rng, &model.observation[x]));
                acts.push(u);
            }
            // exact predictor trace, then per-start-time TV gaps
            let mut gaps = Vec::with_capacity(config.t_max + 1);
            let mut z_pred = prior.clone();
            for t in 0..=config.t_max {
                let mut exact = bayes_update(model, &z_pred, obs[t])?;
                for j in 1..=n {
                    exact = filter_update(model, &exact, acts[t + j - 1], obs[t + j])?.0;
                }
                let w = WindowState {
                    observations: obs[t..=t + n].to_vec(),
                    actions: acts[t..t + n].to_vec(),
                };
                let pinned = psi(model, anchor, &w)?;
                gaps.push(total_variation(&exact, &pinned));
                if t < config.t_max {
                    z_pred = predict(model, &bayes_update(model, &z_pred, obs[t])?, acts[t])?;
                }
            }
            Ok((p, gaps))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_policy = vec![vec![0.0; config.t_max + 1]; policies.len()];
    for (p, gaps) in traces {
        for (acc, g) in per_policy[p].iter_mut().zip(&gaps) {
            *acc += g / config.n_runs as f64;
        }
    }
    let estimates = (0..=config.t_max)
        .map(|t| per_policy.iter().map(|row| row[t]).fold(0.0_f64, f64::max))
        .collect();
    Ok(WindowLoss {
        estimates,
        n_policies: policies.len(),
        supremum_sampled: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefmdp::{q_factors, quantize, value_iteration};
    use crate::model::{ex1, FinitePomdp, StateMetric};

    fn model() -> ValidatedModel {
        ex1(0.1, None).unwrap()
    }

    #[test]
    fn indexer_round_trips_every_window() {
        let idx = WindowIndexer {
            n: 2,
            n_obs: 3,
            n_actions: 2,
        };
        assert_eq!(idx.count(), 27 * 4);
        for i in 0..idx.count() as usize {
            let w = idx.decode(i);
            assert_eq!(idx.encode(&w), i);
            assert!(w.observations.iter().all(|&y| y < 3));
            assert!(w.actions.iter().all(|&u| u < 2));
        }
    }

    #[test]
    fn psi_with_empty_window_is_a_bayes_update() {
        let m = model();
        let anchor = Belief::uniform(4);
        let w = WindowState {
            observations: vec![0],
            actions: vec![],
        };
        let direct = bayes_update(&m, &anchor, 0).unwrap();
        let via_psi = psi(&m, &anchor, &w).unwrap();
        assert_eq!(&*via_psi, &*direct);
    }

    #[test]
    fn psi_matches_joint_path_enumeration() {
        let m = model();
        let anchor = Belief::uniform(4);
        for n in 1..=2usize {
            let idx = WindowIndexer {
                n,
                n_obs: 2,
                n_actions: 2,
            };
            for i in 0..idx.count() as usize {
                let w = idx.decode(i);
                let got = psi(&m, &anchor, &w).unwrap();
                // brute force over hidden paths x_0..x_n
                let mut joint = vec![0.0f64; 4];
                let paths = 4usize.pow(n as u32 + 1);
                for code in 0..paths {
                    let mut digits = Vec::with_capacity(n + 1);
                    let mut c = code;
                    for _ in 0..=n {
                        digits.push(c % 4);
                        c /= 4;
                    }
                    let mut p = anchor[digits[0]] * m.observation[digits[0]][w.observations[0]];
                    for j in 0..n {
                        p *= m.transitions[w.actions[j]][digits[j]][digits[j + 1]]
                            * m.observation[digits[j + 1]][w.observations[j + 1]];
                    }
                    joint[digits[n]] += p;
                }
                let mass: f64 = joint.iter().sum();
                for (a, b) in got.iter().zip(&joint) {
                    assert!((a - b / mass).abs() < 1e-10, "window {w:?}");
                }
            }
        }
    }

    #[test]
    fn window_mdp_counts_states_and_conserves_mass() {
        let m = model();
        let wm = window_mdp(&m, 1, &Belief::uniform(4)).unwrap();
        assert_eq!(wm.mdp.n_states, 8);
        assert!(wm.reachable.iter().all(|&r| r));
        for u in 0..wm.mdp.n_actions {
            for row in &wm.mdp.kernel[u] {
                let mass: f64 = row.iter().map(|&(_, p)| p).sum();
                assert!((mass - 1.0).abs() < 1e-12);
            }
        }
        // cost of a window equals the stage cost at its pinned posterior
        let w = wm.indexer.decode(5);
        let z = psi(&m, &wm.anchor, &w).unwrap();
        for u in 0..2 {
            assert!((wm.mdp.cost[5][u] - belief_cost(&m, &z, u)).abs() < 1e-15);
        }
    }

    #[test]
    fn window_mdp_rejects_oversized_spaces() {
        let m = model();
        assert!(matches!(
            window_mdp(&m, 30, &Belief::uniform(4)),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn impossible_windows_are_flagged_and_absorbing() {
        // identity observations: state 0 can never emit symbol 1 twice in a
        // row under an anchor pinned on state 0's orbit
        let m = FinitePomdp {
            n_states: 2,
            n_actions: 1,
            n_obs: 2,
            transitions: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            observation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            cost: vec![vec![1.0], vec![2.0]],
            metric: StateMetric::Discrete,
        }
        .validate()
        .unwrap();
        let anchor = Belief::uniform(2);
        let wm = window_mdp(&m, 1, &anchor).unwrap();
        // identity emissions with identity dynamics make alternating
        // windows (0 then 1, or 1 then 0) impossible
        let impossible = WindowState {
            observations: vec![0, 1],
            actions: vec![0],
        };
        let i = wm.indexer.encode(&impossible);
        assert!(!wm.reachable[i]);
        assert!(wm.beliefs[i].is_none());
        assert_eq!(wm.mdp.kernel[0][i], vec![(i, 1.0)]);
        assert_eq!(wm.mdp.cost[i][0], 0.0);
    }

    #[test]
    fn learning_rate_replays_a_hand_counter() {
        let mut q = QTable::new(
            2,
            2,
            StateKind::QuantizedBelief {
                resolution: 1,
                n_reps: 2,
            },
        );
        let trace = [(0, 1), (0, 1), (1, 0), (0, 1), (1, 0), (0, 0)];
        let mut counts = std::collections::HashMap::new();
        for &(s, u) in &trace {
            let k = counts.entry((s, u)).and_modify(|c| *c += 1).or_insert(1u64);
            let alpha = q.update(s, u, 1.0, s, 0.5);
            assert_eq!(alpha, 1.0 / (1.0 + *k as f64));
        }
        assert_eq!(q.visits[0][1], 3);
        assert_eq!(q.visits[1][0], 2);
        assert_eq!(q.visits[0][0], 1);
        assert_eq!(q.visits[1][1], 0);
    }

    #[test]
    fn synthetic_replay_converges_to_the_closed_form_fixed_point() {
        // deterministic 2-state, 2-action MDP: next = (s + u) mod 2
        let mdp = DiscreteMdp {
            n_states: 2,
            n_actions: 2,
            cost: vec![vec![1.0, 3.0], vec![2.0, 0.5]],
            kernel: vec![
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                vec![vec![(1, 1.0)], vec![(0, 1.0)]],
            ],
        };
        let beta = 0.2;
        let sol = value_iteration(&mdp, beta, 1e-12, 10_000).unwrap();
        let q_star = q_factors(&mdp, &sol.values, beta);
        let mut q = QTable::new(
            2,
            2,
            StateKind::QuantizedBelief {
                resolution: 1,
                n_reps: 2,
            },
        );
        for step in 0..1_000_000usize {
            let s = (step / 2) % 2;
            let u = step % 2;
            let next = (s + u) % 2;
            q.update(s, u, mdp.cost[s][u], next, beta);
        }
        for s in 0..2 {
            for u in 0..2 {
                assert!(
                    (q.values[s][u] - q_star[s][u]).abs() < 1e-3,
                    "pair ({s},{u}): {} vs {}",
                    q.values[s][u],
                    q_star[s][u]
                );
            }
        }
    }

    #[test]
    fn zero_cost_keeps_q_at_zero() {
        let m = ex1(0.1, Some(vec![vec![0.0, 0.0]; 4])).unwrap();
        let quantizer = quantize(4, 3, StateMetric::Discrete).unwrap();
        let explor = [0.5, 0.5];
        let q = q_learning(&m, QlearnSpace::Quantized(&quantizer), 0.9, 500, 7, &explor).unwrap();
        assert!(q.values.iter().flatten().all(|&v| v == 0.0));
        let anchor = Belief::uniform(4);
        let q = q_learning(
            &m,
            QlearnSpace::Window {
                n: 1,
                anchor: &anchor,
            },
            0.9,
            500,
            7,
            &explor,
        )
        .unwrap();
        assert!(q.values.iter().flatten().all(|&v| v == 0.0));
        let visited: u64 = q.visits.iter().flatten().sum();
        assert_eq!(visited, 500);
    }

    #[test]
    fn q_learning_is_deterministic_in_the_seed() {
        let m = model();
        let quantizer = quantize(4, 3, StateMetric::Discrete).unwrap();
        let explor = [0.5, 0.5];
        let a = q_learning(
            &m,
            QlearnSpace::Quantized(&quantizer),
            0.9,
            2_000,
            3,
            &explor,
        )
        .unwrap();
        let b = q_learning(
            &m,
            QlearnSpace::Quantized(&quantizer),
            0.9,
            2_000,
            3,
            &explor,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = q_learning(
            &m,
            QlearnSpace::Quantized(&quantizer),
            0.9,
            2_000,
            4,
            &explor,
        )
        .unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn q_learning_validates_exploration() {
        let m = model();
        let quantizer = quantize(4, 2, StateMetric::Discrete).unwrap();
        for bad in [vec![0.5, 0.6], vec![1.0, 0.0], vec![0.5, 0.5, 0.0]] {
            assert!(q_learning(&m, QlearnSpace::Quantized(&quantizer), 0.9, 10, 0, &bad).is_err());
        }
    }

    #[test]
    fn window_learning_tracks_its_exact_mdp_when_the_window_suffices() {
        // i.i.d. hidden state: both transition rows equal, so the posterior
        // depends only on the latest observation and the n = 0 window MDP is
        // exact; Q-learning must converge to its fixed point
        let m = FinitePomdp {
            n_states: 2,
            n_actions: 2,
            n_obs: 2,
            transitions: vec![
                vec![vec![0.3, 0.7], vec![0.3, 0.7]],
                vec![vec![0.6, 0.4], vec![0.6, 0.4]],
            ],
            observation: vec![vec![0.8, 0.2], vec![0.25, 0.75]],
            cost: vec![vec![0.0, 0.4], vec![1.0, 0.3]],
            metric: StateMetric::Discrete,
        }
        .validate()
        .unwrap();
        let beta = 0.5;
        // prediction forgets the posterior here, so the window chain's
        // transition law is exact for any anchor and the pinned costs are
        // the ones the learner itself uses; pick the stationary marginal of
        // the uniformly explored mean kernel, (0.45, 0.55)
        let anchor = Belief::new(vec![0.45, 0.55]).unwrap();
        let wm = window_mdp(&m, 0, &anchor).unwrap();
        let sol = value_iteration(&wm.mdp, beta, 1e-12, 10_000).unwrap();
        let q_star = q_factors(&wm.mdp, &sol.values, beta);
        let q = q_learning(
            &m,
            QlearnSpace::Window {
                n: 0,
                anchor: &anchor,
            },
            beta,
            300_000,
            11,
            &[0.5, 0.5],
        )
        .unwrap();
        for s in 0..q.n_states() {
            for u in 0..q.n_actions() {
                assert!(
                    (q.values[s][u] - q_star[s][u]).abs() < 0.05,
                    "pair ({s},{u}): learned {} vs fixed point {}",
                    q.values[s][u],
                    q_star[s][u]
                );
            }
        }
    }

    #[test]
    fn greedy_policy_breaks_ties_low_and_flags_unvisited() {
        let mut q = QTable::new(
            3,
            2,
            StateKind::QuantizedBelief {
                resolution: 1,
                n_reps: 3,
            },
        );
        q.values[0] = vec![1.0, 0.5];
        q.visits[0][1] = 4;
        q.values[1] = vec![0.5, 0.5];
        q.visits[1][0] = 1;
        let g = greedy_policy(&q);
        assert_eq!(g.actions, vec![1, 0, 0]);
        assert_eq!(g.unvisited, vec![false, false, true]);
    }

    #[test]
    fn window_loss_vanishes_when_the_anchor_is_the_prior() {
        let m = model();
        let cfg = WindowLossConfig {
            t_max: 3,
            n_policies: 2,
            n_runs: 40,
            seed: 5,
        };
        let loss = window_loss(&m, 1, &Belief::uniform(4), &cfg, &[]).unwrap();
        assert_eq!(loss.estimates.len(), 4);
        assert!(loss.supremum_sampled);
        assert!(loss.estimates[0] < 1e-12, "t=0 gap {}", loss.estimates[0]);
        assert!(loss.estimates[1] > 1e-4);
    }

    #[test]
    fn window_loss_is_zero_for_identified_states() {
        // one symbol per state: both posteriors collapse to the same Dirac
        let m = FinitePomdp {
            n_states: 2,
            n_actions: 2,
            n_obs: 2,
            transitions: vec![
                vec![vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            ],
            observation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            cost: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            metric: StateMetric::Discrete,
        }
        .validate()
        .unwrap();
        let anchor = Belief::new(vec![0.3, 0.7]).unwrap();
        let cfg = WindowLossConfig {
            t_max: 4,
            n_policies: 2,
            n_runs: 25,
            seed: 9,
        };
        for n in 0..=1usize {
            let loss = window_loss(&m, n, &anchor, &cfg, &[]).unwrap();
            assert!(loss.estimates.iter().all(|&e| e < 1e-12));
        }
    }
}
