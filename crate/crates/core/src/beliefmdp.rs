//! The fully observed decision process on posterior space.
//!
//! A belief and an action induce a finitely supported distribution over next
//! beliefs (one atom per observation) — the kernel [`eta`] — with stage cost
//! [`belief_cost`]. [`quantize`] grounds the simplex on the type lattice
//! `{k/M}` with Wasserstein-nearest cells, [`build_quantized_mdp`] assembles
//! the induced finite MDP, and [`value_iteration`] solves it. The module also
//! certifies the Wasserstein contraction of the kernel empirically
//! ([`contraction_ratio`], [`contraction_sweep`]).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{predict, Belief};
use crate::metrics::{bl_distance, total_variation, transport_lp, w1};
use crate::model::{StateMetric, ValidatedModel};

/// Default cap on the number of quantizer representatives.
pub const DEFAULT_REP_CAP: usize = 200_000;

/// Atom weights below this are dropped from kernel measures.
const WEIGHT_FLOOR: f64 = 1e-300;

/// A finitely supported distribution over beliefs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefMeasure {
    /// `(belief, weight)` pairs; weights sum to 1.
    pub atoms: Vec<(Belief, f64)>,
}

impl BeliefMeasure {
    /// Barycenter `sum_k weight_k * belief_k`.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.atoms.first().map_or(0, |(b, _)| b.len());
        let mut out = vec![0.0; n];
        for (b, w) in &self.atoms {
            for (o, &z) in out.iter_mut().zip(b.iter()) {
                *o += w * z;
            }
        }
        out
    }
}

/// One-step kernel of the posterior process: an atom per observation `y`
/// holding the updated belief, weighted by the predictive probability of
/// `y`. Atoms with vanishing weight are dropped.
pub fn eta(model: &ValidatedModel, z: &Belief, action: usize) -> Result<BeliefMeasure> {
    let predicted = predict(model, z, action)?;
    let mut atoms = Vec::with_capacity(model.n_obs);
    for y in 0..model.n_obs {
        let mut w: Vec<f64> = predicted
            .iter()
            .enumerate()
            .map(|(j, &p)| p * model.observation[j][y])
            .collect();
        let lik: f64 = w.iter().sum();
        if lik < WEIGHT_FLOOR {
            continue;
        }
        w.iter_mut().for_each(|v| *v /= lik);
        atoms.push((Belief::new(w)?, lik));
    }
    Ok(BeliefMeasure { atoms })
}

/// Stage cost of the posterior process: `sum_x c(x,u) z(x)`.
pub fn belief_cost(model: &ValidatedModel, z: &Belief, action: usize) -> f64 {
    debug_assert!(action < model.n_actions);
    z.iter()
        .enumerate()
        .map(|(x, &p)| p * model.cost[x][action])
        .sum()
}

/// Wasserstein distance between two finitely supported belief measures,
/// with `W1` between atom beliefs as ground cost.
fn belief_measure_w1(a: &BeliefMeasure, b: &BeliefMeasure, metric: &StateMetric) -> Result<f64> {
    let weights_a: Vec<f64> = a.atoms.iter().map(|(_, w)| *w).collect();
    let weights_b: Vec<f64> = b.atoms.iter().map(|(_, w)| *w).collect();
    let mut cost = vec![vec![0.0; b.atoms.len()]; a.atoms.len()];
    for (i, (za, _)) in a.atoms.iter().enumerate() {
        for (j, (zb, _)) in b.atoms.iter().enumerate() {
            cost[i][j] = w1(za, zb, metric)?;
        }
    }
    Ok(transport_lp(&weights_a, &weights_b, &cost)?.value)
}

/// Ratio `W1(eta(.|z,u), eta(.|z',u)) / W1(z, z')`, the empirical one-step
/// Wasserstein contraction of the posterior kernel at one pair.
pub fn contraction_ratio(
    model: &ValidatedModel,
    z: &Belief,
    z_alt: &Belief,
    action: usize,
) -> Result<f64> {
    let base = w1(z, z_alt, &model.metric)?;
    if base < 1e-12 {
        return Err(Error::DegeneratePair { distance: base });
    }
    let a = eta(model, z, action)?;
    let b = eta(model, z_alt, action)?;
    Ok(belief_measure_w1(&a, &b, &model.metric)? / base)
}

/// Bounded-Lipschitz distance between the kernels at `z` and `z'` (ground
/// metric: total variation between atom beliefs). The cited variation bound
/// `(3 - 2 delta_obs)(1 - delta_trans) ||z - z'||_TV` dominates it.
pub fn kernel_bl_gap(
    model: &ValidatedModel,
    z: &Belief,
    z_alt: &Belief,
    action: usize,
) -> Result<f64> {
    let a = eta(model, z, action)?;
    let b = eta(model, z_alt, action)?;
    let mut atoms: Vec<&Belief> = Vec::new();
    let mut p = Vec::new();
    let mut q = Vec::new();
    for (belief, w) in &a.atoms {
        atoms.push(belief);
        p.push(*w);
        q.push(0.0);
    }
    for (belief, w) in &b.atoms {
        atoms.push(belief);
        p.push(0.0);
        q.push(*w);
    }
    let k = atoms.len();
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let t = total_variation(atoms[i], atoms[j]);
            d[i][j] = t;
            d[j][i] = t;
        }
    }
    bl_distance(&p, &q, &StateMetric::Explicit(d))
}

/// Result of a random-pair contraction sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionSweep {
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub n_pairs: usize,
}

/// Samples `n_pairs` belief pairs (uniform-simplex draws mixed with point
/// masses) across all actions and records the largest and mean contraction
/// ratio.
pub fn contraction_sweep(
    model: &ValidatedModel,
    n_pairs: usize,
    seed: u64,
) -> Result<ContractionSweep> {
    if n_pairs == 0 {
        return Err(Error::ParamOutOfRange {
            name: "n_pairs".into(),
            value: 0.0,
            admissible: "positive".into(),
        });
    }
    let n = model.n_states;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0_f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..n_pairs {
        let (z, z_alt) = match k % 3 {
            0 => (sample_simplex(&mut rng, n), sample_simplex(&mut rng, n)),
            1 => {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n);
                if j == i {
                    j = (j + 1) % n;
                }
                (Belief::dirac(n, i), Belief::dirac(n, j))
            }
            _ => (Belief::dirac(n, rng.random_range(0..n)), Belief::uniform(n)),
        };
        for u in 0..model.n_actions {
            match contraction_ratio(model, &z, &z_alt, u) {
                Ok(r) => {
                    max_ratio = max_ratio.max(r);
                    sum += r;
                    count += 1;
                }
                Err(Error::DegeneratePair { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ContractionSweep {
        max_ratio,
        mean_ratio: sum / count.max(1) as f64,
        n_pairs,
    })
}

/// Uniform draw from the probability simplex.
pub(crate) fn sample_simplex(rng: &mut ChaCha8Rng, n: usize) -> Belief {
    let mut w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Belief::new(w).expect("normalized positive weights")
}

/// The type-lattice quantizer of the belief simplex: representatives are all
/// probability vectors with coordinates `k_i / M`, and each belief maps to
/// the Wasserstein-nearest representative (ties to the lowest index).
#[derive(Debug, Clone)]
pub struct Quantizer {
    resolution: usize,
    n_states: usize,
    metric: StateMetric,
    reps: Vec<Belief>,
    l_bar: f64,
    line: Option<LineIndex>,
}

/// Precomputed data for fast W1 evaluation under a line metric.
#[derive(Debug, Clone)]
struct LineIndex {
    order: Vec<usize>,
    gaps: Vec<f64>,
    rep_cdfs: Vec<Vec<f64>>,
}

/// Builds the resolution-`M` lattice quantizer. Fails with
/// [`Error::TooLarge`] when the representative count `C(M+n-1, n-1)`
/// exceeds `cap`.
pub fn quantize_with_cap(
    n_states: usize,
    resolution: usize,
    metric: StateMetric,
    cap: usize,
) -> Result<Quantizer> {
    if n_states == 0 || resolution == 0 {
        return Err(Error::ParamOutOfRange {
            name: "n_states/resolution".into(),
            value: 0.0,
            admissible: "positive".into(),
        });
    }
    let count = composition_count(resolution, n_states);
    if count > cap as u128 {
        return Err(Error::TooLarge { count, cap });
    }
    let m = resolution as f64;
    let mut reps = Vec::with_capacity(count as usize);
    let mut cur = vec![0usize; n_states];
    push_compositions(resolution, 0, &mut cur, &mut |c: &[usize]| {
        let w: Vec<f64> = c.iter().map(|&k| k as f64 / m).collect();
        reps.push(Belief::new(w).expect("lattice point is a belief"));
    });
    let diameter = metric.diameter(n_states);
    let l_bar = n_states as f64 * diameter / (2.0 * m);
    let line = match &metric {
        StateMetric::Line(pts) => {
            let mut order: Vec<usize> = (0..n_states).collect();
            order.sort_by(|&a, &b| pts[a].partial_cmp(&pts[b]).expect("finite points"));
            let gaps: Vec<f64> = (0..n_states - 1)
                .map(|k| pts[order[k + 1]] - pts[order[k]])
                .collect();
            let rep_cdfs = reps.iter().map(|r| cdf_in_order(r, &order)).collect();
            Some(LineIndex {
                order,
                gaps,
                rep_cdfs,
            })
        }
        _ => None,
    };
    Ok(Quantizer {
        resolution,
        n_states,
        metric,
        reps,
        l_bar,
        line,
    })
}

/// [`quantize_with_cap`] with the default representative cap.
pub fn quantize(n_states: usize, resolution: usize, metric: StateMetric) -> Result<Quantizer> {
    quantize_with_cap(n_states, resolution, metric, DEFAULT_REP_CAP)
}

fn composition_count(m: usize, parts: usize) -> u128 {
    // C(m + parts - 1, parts - 1), exact at every intermediate step
    let mut c: u128 = 1;
    for i in 1..parts {
        c = match c.checked_mul((m + i) as u128) {
            Some(v) => v / i as u128,
            None => return u128::MAX,
        };
    }
    c
}

fn push_compositions(
    remaining: usize,
    idx: usize,
    cur: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if idx + 1 == cur.len() {
        cur[idx] = remaining;
        f(cur);
        return;
    }
    for k in 0..=remaining {
        cur[idx] = k;
        push_compositions(remaining - k, idx + 1, cur, f);
    }
}

fn cdf_in_order(z: &[f64], order: &[usize]) -> Vec<f64> {
    let mut acc = 0.0;
    order
        .iter()
        .take(order.len() - 1)
        .map(|&i| {
            acc += z[i];
            acc
        })
        .collect()
}

impl Quantizer {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn metric(&self) -> &StateMetric {
        &self.metric
    }

    pub fn reps(&self) -> &[Belief] {
        &self.reps
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    /// Lattice bound on the worst quantization error:
    /// `n_states * diameter / (2 M)`.
    pub fn l_bar(&self) -> f64 {
        self.l_bar
    }

    /// Index and W1 distance of the nearest representative; ties go to the
    /// lowest index.
    pub fn nearest(&self, z: &[f64]) -> Result<(usize, f64)> {
        if z.len() != self.n_states {
            return Err(Error::LengthMismatch {
                context: "quantizer input".into(),
                left: z.len(),
                right: self.n_states,
            });
        }
        match (&self.metric, &self.line) {
            (StateMetric::Discrete, _) => {
                let mut best = (0usize, f64::INFINITY);
                for (i, r) in self.reps.iter().enumerate() {
                    let d = 0.5 * total_variation(z, r);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                Ok(best)
            }
            (StateMetric::Line(_), Some(line)) => {
                let z_cdf = cdf_in_order(z, &line.order);
                let mut best = (0usize, f64::INFINITY);
                for (i, r_cdf) in line.rep_cdfs.iter().enumerate() {
                    let mut d = 0.0;
                    for k in 0..line.gaps.len() {
                        d += (z_cdf[k] - r_cdf[k]).abs() * line.gaps[k];
                    }
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                Ok(best)
            }
            (metric, _) => {
                let mut best = (0usize, f64::INFINITY);
                for (i, r) in self.reps.iter().enumerate() {
                    let d = w1(z, r, metric)?;
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                Ok(best)
            }
        }
    }
}

/// How each quantization cell is weighted when the finite MDP is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Point mass at the representative itself; kernel and cost are exact
    /// evaluations there.
    Dirac,
    /// Uniform-simplex samples binned to cells; cell rows average the
    /// sampled evaluations, empty cells fall back to the representative.
    MonteCarlo { samples: usize, seed: u64 },
}

/// A finite MDP with sparse transition rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `cost[s][u]`.
    pub cost: Vec<Vec<f64>>,
    /// `kernel[u][s]` = sparse row of `(next_state, probability)`.
    pub kernel: Vec<Vec<Vec<(usize, f64)>>>,
}

impl DiscreteMdp {
    /// Checks shapes, index ranges, row stochasticity (1e-10), and cost
    /// finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.cost.len() != self.n_states
            || self.cost.iter().any(|r| r.len() != self.n_actions)
            || self.kernel.len() != self.n_actions
            || self.kernel.iter().any(|k| k.len() != self.n_states)
        {
            return Err(Error::BadShape {
                what: "finite MDP".into(),
                got: format!(
                    "cost {}x{:?}, {} kernels",
                    self.cost.len(),
                    self.cost.first().map(|r| r.len()),
                    self.kernel.len()
                ),
                expected: format!(
                    "{}x{}, {} kernels",
                    self.n_states, self.n_actions, self.n_actions
                ),
            });
        }
        for (s, row) in self.cost.iter().enumerate() {
            for (u, &c) in row.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::NonFiniteEntry {
                        matrix: "mdp cost".into(),
                        row: s,
                        col: u,
                        value: c,
                    });
                }
            }
        }
        for (u, kernel) in self.kernel.iter().enumerate() {
            for (s, row) in kernel.iter().enumerate() {
                let mut sum = 0.0;
                for &(j, p) in row {
                    if j >= self.n_states {
                        return Err(Error::BadShape {
                            what: format!("mdp kernel[{u}][{s}] target"),
                            got: format!("{j}"),
                            expected: format!("below {}", self.n_states),
                        });
                    }
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::NegativeEntry {
                            matrix: format!("mdp kernel[{u}]"),
                            row: s,
                            col: j,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::RowNotStochastic {
                        matrix: format!("mdp kernel[{u}]"),
                        row: s,
                        sum,
                        tol: 1e-10,
                    });
                }
            }
        }
        Ok(())
    }

    /// Materializes one action's kernel as a dense row-stochastic matrix.
    pub fn dense_kernel(&self, action: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_states]; self.n_states];
        for (s, row) in self.kernel[action].iter().enumerate() {
            for &(j, p) in row {
                out[s][j] += p;
            }
        }
        out
    }
}

/// The quantized belief MDP: lattice representatives as states.
#[derive(Debug, Clone)]
pub struct QuantizedBeliefMdp {
    pub quantizer: Quantizer,
    pub weighting: Weighting,
    pub mdp: DiscreteMdp,
}

/// Assembles the finite MDP induced by a quantizer.
///
/// Dirac weighting evaluates the kernel and cost exactly at each
/// representative: row mass moves to the nearest representative of each
/// posterior atom. Monte-Carlo weighting averages those evaluations over
/// uniform-simplex samples binned per cell.
pub fn build_quantized_mdp(
    model: &ValidatedModel,
    quantizer: Quantizer,
    weighting: Weighting,
) -> Result<QuantizedBeliefMdp> {
    if quantizer.n_states() != model.n_states {
        return Err(Error::LengthMismatch {
            context: "quantizer state dimension".into(),
            left: quantizer.n_states(),
            right: model.n_states,
        });
    }
    let n_q = quantizer.len();

    // (cost row, sparse kernel rows per action) for one belief
    let eval_at = |z: &Belief| -> Result<(Vec<f64>, Vec<Vec<(usize, f64)>>)> {
        let mut cost_row = Vec::with_capacity(model.n_actions);
        let mut rows = Vec::with_capacity(model.n_actions);
        for u in 0..model.n_actions {
            cost_row.push(belief_cost(model, z, u));
            let measure = eta(model, z, u)?;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(measure.atoms.len());
            for (post, w) in &measure.atoms {
                let (j, _) = quantizer.nearest(post)?;
                match row.iter_mut().find(|(t, _)| *t == j) {
                    Some((_, acc)) => *acc += w,
                    None => row.push((j, *w)),
                }
            }
            row.sort_by_key(|&(j, _)| j);
            rows.push(row);
        }
        Ok((cost_row, rows))
    };

    let mut cost = vec![Vec::new(); n_q];
    let mut kernel = vec![vec![Vec::new(); n_q]; model.n_actions];

    match weighting {
        Weighting::Dirac => {
            let evaluated: Vec<_> = quantizer
                .reps()
                .par_iter()
                .map(eval_at)
                .collect::<Result<Vec<_>>>()?;
            for (i, (cost_row, rows)) in evaluated.into_iter().enumerate() {
                cost[i] = cost_row;
                for (u, row) in rows.into_iter().enumerate() {
                    kernel[u][i] = row;
                }
            }
        }
        Weighting::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bins: Vec<Vec<Belief>> = vec![Vec::new(); n_q];
            for _ in 0..samples {
                let z = sample_simplex(&mut rng, model.n_states);
                let (i, _) = quantizer.nearest(&z)?;
                bins[i].push(z);
            }
            let evaluated: Vec<_> = (0..n_q)
                .into_par_iter()
                .map(|i| -> Result<(Vec<f64>, Vec<Vec<(usize, f64)>>)> {
                    if bins[i].is_empty() {
                        return eval_at(&quantizer.reps()[i]);
                    }
                    let mut cost_acc = vec![0.0; model.n_actions];
                    let mut dense = vec![vec![0.0; n_q]; model.n_actions];
                    for z in &bins[i] {
                        let (c_row, rows) = eval_at(z)?;
                        for (u, c) in c_row.into_iter().enumerate() {
                            cost_acc[u] += c;
                        }
                        for (u, row) in rows.into_iter().enumerate() {
                            for (j, w) in row {
                                dense[u][j] += w;
                            }
                        }
                    }
                    let k = bins[i].len() as f64;
                    cost_acc.iter_mut().for_each(|c| *c /= k);
                    let rows = dense
                        .into_iter()
                        .map(|r| {
                            r.into_iter()
                                .enumerate()
                                .filter(|&(_, w)| w > 0.0)
                                .map(|(j, w)| (j, w / k))
                                .collect()
                        })
                        .collect();
                    Ok((cost_acc, rows))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, (cost_row, rows)) in evaluated.into_iter().enumerate() {
                cost[i] = cost_row;
                for (u, row) in rows.into_iter().enumerate() {
                    kernel[u][i] = row;
                }
            }
        }
    }

    let mdp = DiscreteMdp {
        n_states: n_q,
        n_actions: model.n_actions,
        cost,
        kernel,
    };
    mdp.validate()?;
    Ok(QuantizedBeliefMdp {
        quantizer,
        weighting,
        mdp,
    })
}

/// A solved discounted problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    /// Greedy policy from the final values; argmin ties to lowest action.
    pub policy: Vec<usize>,
    /// Final sup-norm iteration step.
    pub residual: f64,
    pub iterations: usize,
}

/// Discounted value iteration from zero, stopping when the sup-norm step
/// falls to `tol (1 - beta) / (2 beta)` so the returned values are within
/// `tol` of the fixed point.
pub fn value_iteration(
    mdp: &DiscreteMdp,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ValueSolution> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "beta".into(),
            value: beta,
            admissible: "open interval (0, 1)".into(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::ParamOutOfRange {
            name: "tol".into(),
            value: tol,
            admissible: "positive".into(),
        });
    }
    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let mut values = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next: Vec<f64> = (0..mdp.n_states)
            .into_par_iter()
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|u| {
                        let future: f64 =
                            mdp.kernel[u][s].iter().map(|&(j, p)| p * values[j]).sum();
                        mdp.cost[s][u] + beta * future
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if residual <= threshold {
            let policy = greedy_from_values(mdp, &values, beta);
            return Ok(ValueSolution {
                values,
                policy,
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_step: residual,
        threshold,
    })
}

/// State-action values `c(s,u) + beta * E[values]`.
pub fn q_factors(mdp: &DiscreteMdp, values: &[f64], beta: f64) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|u| {
                    let future: f64 = mdp.kernel[u][s].iter().map(|&(j, p)| p * values[j]).sum();
                    mdp.cost[s][u] + beta * future
                })
                .collect()
        })
        .collect()
}

fn greedy_from_values(mdp: &DiscreteMdp, values: &[f64], beta: f64) -> Vec<usize> {
    q_factors(mdp, values, beta)
        .into_iter()
        .map(|qs| {
            let mut best = (0usize, f64::INFINITY);
            for (u, q) in qs.into_iter().enumerate() {
                if q < best.1 {
                    best = (u, q);
                }
            }
            best.0
        })
        .collect()
}

/// A-priori gap between the quantized solution and the true discounted
/// value: `2 k1 l_bar / ((1-beta)^2 (1 - beta k2))`.
pub fn quantization_error_bound(k1: f64, k2: f64, beta: f64, l_bar: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::ParamOutOfRange {
            name: "beta".into(),
            value: beta,
            admissible: "open interval (0, 1)".into(),
        });
    }
    if beta * k2 >= 1.0 {
        return Err(Error::InvalidRegime {
            reason: format!(
                "beta * k2 = {} >= 1; the quantization bound needs a contractive regime",
                beta * k2
            ),
        });
    }
    Ok(2.0 * k1 * l_bar / ((1.0 - beta).powi(2) * (1.0 - beta * k2)))
}
