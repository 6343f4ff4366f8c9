//! Long-run average cost: vanishing-discount solution of the average-cost
//! optimality equation on the quantized belief MDP, exact policy evaluation
//! through stationary analysis, and robustness of the optimal cost to a
//! wrong prior.

use rayon::prelude::*;
use serde::Serialize;

use crate::beliefmdp::{build_quantized_mdp, value_iteration, DiscreteMdp, Quantizer, Weighting};
use crate::error::{Error, Result};
use crate::filter::{bayes_update, filter_update, sample_categorical, Belief};
use crate::metrics::assumption_report;
use crate::model::ValidatedModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// `max - min` of a vector (0 for an empty one).
pub fn span(values: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// One discount level of the vanishing-discount trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaTraceEntry {
    pub beta: f64,
    /// `(1 - beta) * J_beta(anchor)`, the average-cost estimate at this level.
    pub rho_estimate: f64,
    /// Span of the relative value `J_beta - J_beta(anchor)`.
    pub h_span: f64,
}

/// Solution of the average-cost optimality equation on the quantized chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcoeSolution {
    /// Optimal average cost per step (from the largest discount level).
    pub rho_star: f64,
    /// Relative value, anchored so `h[anchor] = 0`.
    pub h: Vec<f64>,
    /// Anchor representative: the lattice point nearest the uniform belief.
    pub anchor: usize,
    /// Sup-norm defect of `(rho, h)` in the undiscounted optimality
    /// equation.
    pub residual: f64,
    pub beta_trace: Vec<BetaTraceEntry>,
    /// Greedy policy of the largest discount level.
    pub policy: Vec<usize>,
    /// Non-fatal regime notes (e.g. a discount level outside the certified
    /// contraction regime).
    pub warnings: Vec<String>,
}

fn sufficient_iterations(beta: f64, tol: f64, cost_sup: f64) -> usize {
    // after k sweeps the step size is <= beta^k * cost_sup; solve for the
    // stopping threshold tol (1-beta) / (2 beta)
    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let numer = (cost_sup.max(1.0) / threshold).ln();
    let denom = -beta.ln();
    ((numer / denom).ceil() as usize + 16).min(50_000_000)
}

/// Runs discounted value iteration along an increasing `beta_schedule` and
/// assembles the average-cost solution from the largest level: `rho* =
/// (1-beta) J_beta(anchor)`, `h = J_beta - J_beta(anchor)`, with the
/// optimality-equation residual evaluated undiscounted.
pub fn vanishing_discount(
    model: &ValidatedModel,
    quantizer: Quantizer,
    beta_schedule: &[f64],
    tol: f64,
) -> Result<AcoeSolution> {
    if beta_schedule.is_empty() {
        return Err(Error::BadShape {
            what: "beta_schedule".into(),
            got: "empty".into(),
            expected: "at least one discount level".into(),
        });
    }
    for (i, &b) in beta_schedule.iter().enumerate() {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::ParamOutOfRange {
                name: format!("beta_schedule[{i}]"),
                value: b,
                admissible: "open interval (0, 1)".into(),
            });
        }
        if i > 0 && beta_schedule[i - 1] >= b {
            return Err(Error::ParamOutOfRange {
                name: format!("beta_schedule[{i}]"),
                value: b,
                admissible: "strictly increasing schedule".into(),
            });
        }
    }

    let mut warnings = Vec::new();
    match assumption_report(model) {
        Ok(report) => {
            for &beta in beta_schedule {
                if beta * report.cost_contraction >= 1.0 {
                    warnings.push(format!(
                        "discount level {beta} leaves the certified contraction regime \
                         (beta * k2 = {} >= 1); the Lipschitz value bound does not apply",
                        beta * report.cost_contraction
                    ));
                }
            }
        }
        Err(e) => warnings.push(format!("regularity constants unavailable: {e}")),
    }

    let qmdp = build_quantized_mdp(model, quantizer, Weighting::Dirac)?;
    let (anchor, _) = qmdp.quantizer.nearest(&Belief::uniform(model.n_states))?;
    let cost_sup = model.cost_sup();

    let solutions: Vec<_> = beta_schedule
        .par_iter()
        .map(|&beta| {
            let max_iter = sufficient_iterations(beta, tol, cost_sup);
            value_iteration(&qmdp.mdp, beta, tol, max_iter).map(|sol| (beta, sol))
        })
        .collect::<Result<Vec<_>>>()?;

    let beta_trace: Vec<BetaTraceEntry> = solutions
        .iter()
        .map(|(beta, sol)| {
            let h_span = span(
                &sol.values
                    .iter()
                    .map(|v| v - sol.values[anchor])
                    .collect::<Vec<_>>(),
            );
            BetaTraceEntry {
                beta: *beta,
                rho_estimate: (1.0 - beta) * sol.values[anchor],
                h_span,
            }
        })
        .collect();

    let (beta_last, sol_last) = solutions.last().expect("nonempty schedule");
    let rho_star = (1.0 - beta_last) * sol_last.values[anchor];
    let h: Vec<f64> = sol_last
        .values
        .iter()
        .map(|v| v - sol_last.values[anchor])
        .collect();

    // undiscounted optimality-equation defect of (rho_star, h)
    let residual = (0..qmdp.mdp.n_states)
        .map(|s| {
            let best = (0..qmdp.mdp.n_actions)
                .map(|u| {
                    let future: f64 = qmdp.mdp.kernel[u][s].iter().map(|&(j, p)| p * h[j]).sum();
                    qmdp.mdp.cost[s][u] + future
                })
                .fold(f64::INFINITY, f64::min);
            (h[s] + rho_star - best).abs()
        })
        .fold(0.0, f64::max);

    Ok(AcoeSolution {
        rho_star,
        h,
        anchor,
        residual,
        beta_trace,
        policy: sol_last.policy.clone(),
        warnings,
    })
}

/// Exact long-run average cost of a stationary policy on a finite MDP:
/// stationary analysis per closed recurrent class, maximized over classes
/// (limsup convention for arbitrary initial states).
pub fn average_cost_exact(mdp: &DiscreteMdp, policy: &[usize]) -> Result<f64> {
    if policy.len() != mdp.n_states {
        return Err(Error::LengthMismatch {
            context: "policy".into(),
            left: policy.len(),
            right: mdp.n_states,
        });
    }
    for (s, &u) in policy.iter().enumerate() {
        if u >= mdp.n_actions {
            return Err(Error::ParamOutOfRange {
                name: format!("policy[{s}]"),
                value: u as f64,
                admissible: format!("action index below {}", mdp.n_actions),
            });
        }
    }
    let rows: Vec<&[(usize, f64)]> = (0..mdp.n_states)
        .map(|s| mdp.kernel[policy[s]][s].as_slice())
        .collect();

    let classes = closed_recurrent_classes(&rows, mdp.n_states);
    let mut worst = f64::NEG_INFINITY;
    for class in &classes {
        let pi = stationary_on_class(&rows, class)?;
        let avg: f64 = class
            .iter()
            .zip(&pi)
            .map(|(&s, &p)| p * mdp.cost[s][policy[s]])
            .sum();
        worst = worst.max(avg);
    }
    Ok(worst)
}

/// Strongly connected components with no outgoing edges (iterative Tarjan).
fn closed_recurrent_classes(rows: &[&[(usize, f64)]], n: usize) -> Vec<Vec<usize>> {
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comp_of = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0usize;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        // explicit DFS: (node, next edge position)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos == 0 {
                index[v] = counter;
                low[v] = counter;
                counter += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if *pos < rows[v].len() {
                let w = rows[v][*pos].0;
                *pos += 1;
                if index[w] == usize::MAX {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp_of[w] = comps.len();
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
                call.pop();
                if let Some(&mut (parent, _)) = call.last_mut() {
                    low[parent] = low[parent].min(low[v]);
                }
            }
        }
    }

    comps
        .into_iter()
        .enumerate()
        .filter(|(ci, comp)| {
            comp.iter()
                .all(|&s| rows[s].iter().all(|&(j, p)| p == 0.0 || comp_of[j] == *ci))
        })
        .map(|(_, comp)| comp)
        .collect()
}

/// Stationary distribution of the chain restricted to one closed class, by
/// damped power iteration `pi <- pi (P + I) / 2` (the damping removes
/// periodicity).
fn stationary_on_class(rows: &[&[(usize, f64)]], class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    let local: std::collections::HashMap<usize, usize> =
        class.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let max_iter = 2_000_000usize;
    for it in 0..max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &s) in class.iter().enumerate() {
            let half = 0.5 * pi[i];
            next[i] += half;
            for &(j, p) in rows[s] {
                next[local[&j]] += half * p;
            }
        }
        let mass: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= mass);
        let step: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if step <= 1e-12 {
            return Ok(pi);
        }
        if it + 1 == max_iter {
            return Err(Error::NotConverged {
                iterations: max_iter,
                last_step: step,
                threshold: 1e-12,
            });
        }
    }
    unreachable!()
}

/// Which objective a robustness experiment optimizes and evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum RobustnessMode {
    Discounted { beta: f64 },
    Average { beta_schedule: Vec<f64> },
}

/// Monte-Carlo estimate of the cost of acting on a wrong prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessGap {
    /// `J(mu, gamma_nu) - J*(mu)`.
    pub gap: f64,
    /// Standard error of the Monte-Carlo estimate of `J(mu, gamma_nu)`.
    pub stderr: f64,
    /// Estimated cost when the truth starts at `mu` but the controller's
    /// filter starts at `nu`.
    pub j_mu_gamma_nu: f64,
    /// Optimal cost at `mu` from the quantized solution.
    pub j_star_mu: f64,
}

/// Inner value-iteration tolerance used by the robustness experiment.
const ROBUSTNESS_VI_TOL: f64 = 1e-8;

/// Estimates how much is lost by a controller whose filter is initialized at
/// `nu` while the state really starts at `mu`: designs the greedy policy on
/// the quantized belief MDP, simulates the true chain from `mu` with the
/// controller filtering from `nu`, and subtracts the optimal cost at `mu`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_gap(
    model: &ValidatedModel,
    mu: &Belief,
    nu: &Belief,
    quantizer: Quantizer,
    mode: &RobustnessMode,
    horizon: usize,
    n_runs: usize,
    seed: u64,
) -> Result<RobustnessGap> {
    if horizon < 2 || n_runs == 0 {
        return Err(Error::ParamOutOfRange {
            name: "horizon/n_runs".into(),
            value: horizon.min(n_runs) as f64,
            admissible: "horizon >= 2 and n_runs >= 1".into(),
        });
    }
    for (i, (&m, &v)) in mu.iter().zip(nu.iter()).enumerate() {
        if m > 0.0 && v == 0.0 {
            return Err(Error::SupportViolation { index: i });
        }
    }

    let lookup = quantizer.clone();
    let (policy, j_star_mu, discounted_beta) = match mode {
        RobustnessMode::Discounted { beta } => {
            let qmdp = build_quantized_mdp(model, quantizer, Weighting::Dirac)?;
            let max_iter = sufficient_iterations(*beta, ROBUSTNESS_VI_TOL, model.cost_sup());
            let sol = value_iteration(&qmdp.mdp, *beta, ROBUSTNESS_VI_TOL, max_iter)?;
            let (idx, _) = qmdp.quantizer.nearest(mu)?;
            (sol.policy, sol.values[idx], Some(*beta))
        }
        RobustnessMode::Average { beta_schedule } => {
            let acoe = vanishing_discount(model, quantizer, beta_schedule, ROBUSTNESS_VI_TOL)?;
            (acoe.policy, acoe.rho_star, None)
        }
    };

    let per_run: Vec<f64> = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + run as u64);
            let mut x = sample_categorical(&mut rng, mu);
            let mut y = sample_categorical(&mut rng, &model.observation[x]);
            let mut z = bayes_update(model, nu, y)?;
            let mut total = 0.0;
            let mut discount = 1.0;
            for _ in 0..horizon - 1 {
                let (s, _) = lookup.nearest(&z)?;
                let u = policy[s];
                let c = model.cost[x][u];
                match discounted_beta {
                    Some(beta) => {
                        total += discount * c;
                        discount *= beta;
                    }
                    None => total += c,
                }
                x = sample_categorical(&mut rng, &model.transitions[u][x]);
                y = sample_categorical(&mut rng, &model.observation[x]);
                z = filter_update(model, &z, u, y)?.0;
            }
            Ok(match discounted_beta {
                Some(_) => total,
                None => total / (horizon - 1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = n_runs as f64;
    let mean = per_run.iter().sum::<f64>() / n;
    let var = per_run.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    Ok(RobustnessGap {
        gap: mean - j_star_mu,
        stderr,
        j_mu_gamma_nu: mean,
        j_star_mu,
    })
}

/// A-priori discounted robustness bound: minimizes over the lookahead `n`
/// the three-term trade-off between the transient cost, the Lipschitz
/// value gap, and the filter-merging tail:
/// `c_inf (1-beta^n)/(1-beta) + beta^n d k1 / (1 - k2 beta) +
///  4 c_inf / (1-beta) (alpha_bar beta)^n`.
pub fn robustness_bound(
    c_inf: f64,
    beta: f64,
    k1: f64,
    k2: f64,
    d: f64,
    alpha_bar: f64,
) -> Result<(f64, usize)> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "beta".into(),
            value: beta,
            admissible: "open interval (0, 1)".into(),
        });
    }
    if k2 * beta >= 1.0 {
        return Err(Error::InvalidRegime {
            reason: format!(
                "k2 * beta = {} >= 1; the value Lipschitz term diverges",
                k2 * beta
            ),
        });
    }
    let lipschitz = d * k1 / (1.0 - k2 * beta);
    let mut best = (f64::INFINITY, 0usize);
    let mut beta_n = 1.0;
    let mut merge_n = 1.0;
    for n in 0..=10_000usize {
        let value = c_inf * (1.0 - beta_n) / (1.0 - beta)
            + beta_n * lipschitz
            + 4.0 * c_inf / (1.0 - beta) * merge_n;
        if value < best.0 {
            best = (value, n);
        }
        beta_n *= beta;
        merge_n *= alpha_bar * beta;
    }
    Ok(best)
}
