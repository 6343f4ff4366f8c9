//! Acceptance suite: one test per numbered criterion. Each prints a
//! `criterion NN PASS/FAIL` line with the measured quantities, then asserts,
//! so an intentionally honest failure still reports its numbers.

use std::time::{Duration, Instant};

use acpomdp::{
    assumption_report, average_cost_exact, bayes_update, build_quantized_mdp, contraction_sweep,
    discretize, dual_filter_run, ex1, ex2, ex3, filter_update, greedy_policy, q_factors,
    q_learning, quantization_error_bound, quantize, robustness_gap, total_variation, transport_lp,
    value_iteration, vanishing_discount, w1, window_mdp, ActionSource, Belief, DualFilterConfig,
    Policy, QTable, QlearnSpace, RobustnessMode, StateKind, StateMetric, ValidatedModel, Weighting,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn model() -> ValidatedModel {
    ex1(0.1, None).expect("benchmark chain is valid")
}

/// Prints the per-criterion verdict line and fails the test on FAIL.
fn verdict(n: usize, clauses: &[(bool, String)], elapsed: Duration, limit: Duration) {
    let timed_ok = elapsed <= limit;
    let pass = timed_ok && clauses.iter().all(|(ok, _)| *ok);
    println!(
        "criterion {n:02} {}  [{:.2?} of {:.0?} budget]",
        if pass { "PASS" } else { "FAIL" },
        elapsed,
        limit
    );
    for (ok, what) in clauses {
        println!("  [{}] {what}", if *ok { "ok" } else { "VIOLATED" });
    }
    if !timed_ok {
        println!("  [VIOLATED] runtime {elapsed:.2?} over budget {limit:.2?}");
    }
    assert!(pass, "criterion {n} failed; see the clause list above");
}

#[test]
fn criterion_01_benchmark_chain_constants() {
    let t0 = Instant::now();
    let r = assumption_report(&model()).unwrap();
    let clauses = vec![
        (
            (r.obs_dobrushin - 0.7).abs() <= 1e-12,
            format!("observation dobrushin {} = 0.7 exactly", r.obs_dobrushin),
        ),
        (
            (r.transition_dobrushin - 0.5).abs() <= 1e-12,
            format!(
                "transition dobrushin {} = 0.5 exactly",
                r.transition_dobrushin
            ),
        ),
        (
            (r.kernel_lipschitz - 1.0).abs() <= 1e-12,
            format!("kernel tv lipschitz {} = 1 exactly", r.kernel_lipschitz),
        ),
        (
            (r.diameter - 1.0).abs() <= 1e-12,
            format!("diameter {} = 1 exactly", r.diameter),
        ),
        (
            (r.cost_contraction - 0.8).abs() <= 1e-12 && r.cost_contraction < 1.0,
            format!("kernel contraction k2 {} = 0.8 < 1", r.cost_contraction),
        ),
        (
            (r.filter_contraction - 0.65).abs() <= 1e-12 && r.filter_contraction < 1.0,
            format!(
                "filter stability alpha_bar {} = 0.65 < 1",
                r.filter_contraction
            ),
        ),
    ];
    verdict(1, &clauses, t0.elapsed(), Duration::from_secs(1));
}

#[test]
fn criterion_02_additive_noise_grid_constants() {
    let t0 = Instant::now();
    let spec = ex2(7).unwrap();
    let m = discretize(&spec, 20).unwrap();
    let r = assumption_report(&m).unwrap();
    let clauses = vec![
        (
            r.kernel_lipschitz <= 2.0 / 7.0 + 0.02,
            format!(
                "grid kernel lipschitz {} <= 2/7 + 0.02 = {}",
                r.kernel_lipschitz,
                2.0 / 7.0 + 0.02
            ),
        ),
        (
            r.cost_contraction <= 6.0 / 7.0 + 0.06,
            format!(
                "kernel contraction k2 {} <= 6/7 + 0.06 = {}",
                r.cost_contraction,
                6.0 / 7.0 + 0.06
            ),
        ),
        (
            r.cost_contraction < 1.0,
            format!(
                "k2 {} < 1: main contraction assumption holds",
                r.cost_contraction
            ),
        ),
    ];
    verdict(2, &clauses, t0.elapsed(), Duration::from_secs(5));
}

#[test]
fn criterion_03_gaussian_grid_constants() {
    let t0 = Instant::now();
    let spec = ex3(1.5, 0.5, 5).unwrap();
    let m = discretize(&spec, 20).unwrap();
    let r = assumption_report(&m).unwrap();
    let closed_form = 2.0_f64.sqrt() / (1.5 * std::f64::consts::PI.sqrt());
    let ratio = r.kernel_lipschitz / closed_form;
    let clauses = vec![
        (
            (ratio - 1.0).abs() <= 0.05,
            format!(
                "grid kernel lipschitz {} within 5% of the closed form {closed_form} \
                 (ratio {ratio}); the closed form caps the density difference and the \
                 grid maximum sits far below it, so this clause does not hold",
                r.kernel_lipschitz
            ),
        ),
        (
            r.cost_contraction < 1.0,
            format!("k2 {} < 1 under the two-cell readout", r.cost_contraction),
        ),
    ];
    verdict(3, &clauses, t0.elapsed(), Duration::from_secs(5));
}

#[test]
fn criterion_04_kernel_contraction_sweep() {
    let t0 = Instant::now();
    // 500 pairs x 2 actions = 1000 sampled (z, z', u) triples
    let sweep = contraction_sweep(&model(), 500, 2024).unwrap();
    let clauses = vec![(
        sweep.max_ratio <= 0.8 + 1e-9,
        format!(
            "max one-step W1 ratio {} <= k2 = 0.8 over 1000 triples (mean {})",
            sweep.max_ratio, sweep.mean_ratio
        ),
    )];
    verdict(4, &clauses, t0.elapsed(), Duration::from_secs(30));
}

#[test]
fn criterion_05_value_function_lipschitz_bound() {
    let t0 = Instant::now();
    let m = model();
    let quantizer = quantize(4, 20, StateMetric::Discrete).unwrap();
    let l_bar = quantizer.l_bar();
    let qmdp = build_quantized_mdp(&m, quantizer, Weighting::Dirac).unwrap();
    let tol = 1e-6;
    let beta = 0.9;
    let sol = value_iteration(&qmdp.mdp, beta, tol, 100_000).unwrap();
    let k = 1.0 / (1.0 - beta * 0.8);
    let slack = 2.0 * tol + k * l_bar;
    let reps = qmdp.quantizer.reps();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            let lhs = (sol.values[i] - sol.values[j]).abs();
            let rhs = k * 0.5 * total_variation(&reps[i], &reps[j]) + slack;
            worst = worst.max(lhs - rhs);
        }
    }
    let clauses = vec![(
        worst <= 0.0,
        format!(
            "all {} representative pairs obey |J(z_i) - J(z_j)| <= K W1 + 2 tol + K l_bar \
             (worst margin {worst:.3e}, K = {k})",
            reps.len() * (reps.len() - 1) / 2
        ),
    )];
    verdict(5, &clauses, t0.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_06_vanishing_discount_trace() {
    let t0 = Instant::now();
    let m = model();
    let quantizer = quantize(4, 20, StateMetric::Discrete).unwrap();
    let l_bar = quantizer.l_bar();
    let schedule = [0.9, 0.99, 0.999];
    let sol = vanishing_discount(&m, quantizer, &schedule, 1e-6).unwrap();
    let mut clauses = Vec::new();
    for e in &sol.beta_trace {
        let k_beta = 1.0 / (1.0 - e.beta * 0.8);
        let bound = 5.0 + 2.0 * k_beta * l_bar;
        clauses.push((
            e.h_span <= bound,
            format!(
                "beta {}: normalized value spread {} <= k1 d / (1 - k2) + 2 K l_bar = {bound}",
                e.beta, e.h_span
            ),
        ));
    }
    let d01 = (sol.beta_trace[1].rho_estimate - sol.beta_trace[0].rho_estimate).abs();
    let d12 = (sol.beta_trace[2].rho_estimate - sol.beta_trace[1].rho_estimate).abs();
    clauses.push((
        d12 <= d01,
        format!("rho estimates Cauchy: |delta| {d12:.6e} <= previous {d01:.6e}"),
    ));
    let residual_cap = 5e-3 * m.cost_sup();
    clauses.push((
        sol.residual <= residual_cap,
        format!(
            "optimality-equation residual {} <= 5e-3 * cost sup = {residual_cap}",
            sol.residual
        ),
    ));
    println!("  rho* = {}", sol.rho_star);
    verdict(6, &clauses, t0.elapsed(), Duration::from_secs(600));
}

#[test]
fn criterion_07_greedy_average_cost_consistency() {
    let m = model();
    let quantizer = quantize(4, 20, StateMetric::Discrete).unwrap();
    let l_bar = quantizer.l_bar();
    let qmdp = build_quantized_mdp(&m, quantizer.clone(), Weighting::Dirac).unwrap();
    let sol = vanishing_discount(&m, quantizer, &[0.9, 0.99, 0.999], 1e-6).unwrap();
    // the budget covers the exact policy evaluation, given the solve above
    let t0 = Instant::now();
    let avg = average_cost_exact(&qmdp.mdp, &sol.policy).unwrap();
    let qbound = quantization_error_bound(1.0, 0.8, 0.999, l_bar).unwrap();
    let cap = sol.rho_star + sol.residual + qbound;
    let clauses = vec![(
        avg <= cap,
        format!(
            "exact average cost of the greedy policy {avg} <= rho* + residual + \
             quantization bound = {cap} (rho* {}, residual {:.3e})",
            sol.rho_star, sol.residual
        ),
    )];
    verdict(7, &clauses, t0.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_08_prior_robustness_gap() {
    let t0 = Instant::now();
    let m = model();
    let mu = Belief::uniform(4);
    let nu = Belief::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    let quantizer = quantize(4, 20, StateMetric::Discrete).unwrap();
    let mode = RobustnessMode::Average {
        beta_schedule: vec![0.9, 0.99, 0.999],
    };
    let g = robustness_gap(&m, &mu, &nu, quantizer, &mode, 100_000, 20, 4242).unwrap();
    let cap = (0.01 * m.cost_sup()).max(3.0 * g.stderr);
    let clauses = vec![(
        g.gap.abs() <= cap,
        format!(
            "|J(mu, gamma_nu) - rho*| = {:.6e} <= max(0.01 cost sup, 3 stderr) = {cap:.6e} \
             (mismatched cost {}, rho* {}, stderr {:.3e})",
            g.gap.abs(),
            g.j_mu_gamma_nu,
            g.j_star_mu,
            g.stderr
        ),
    )];
    verdict(8, &clauses, t0.elapsed(), Duration::from_secs(300));
}

#[test]
fn criterion_09_filter_stability_envelope() {
    let t0 = Instant::now();
    let m = model();
    let mu = Belief::uniform(4);
    let nu = Belief::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    let cfg = DualFilterConfig {
        horizon: 21,
        n_runs: 200,
        seed: 99,
        action_source: ActionSource::MismatchedFilter,
    };
    let stats = dual_filter_run(&m, &mu, &nu, &Policy::IidUniform, &cfg).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = 0;
    for (t, &tv) in stats.mean_tv.iter().enumerate() {
        let envelope = 4.0 * 0.65_f64.powi(t as i32);
        if tv - envelope > worst {
            worst = tv - envelope;
            worst_t = t;
        }
    }
    let clauses = vec![(
        worst <= 0.0,
        format!(
            "mean posterior TV dominated by 4 * 0.65^t for t <= 20 over 200 runs \
             (tv[0] {}, worst margin {worst:.3e} at t = {worst_t})",
            stats.mean_tv[0]
        ),
    )];
    verdict(9, &clauses, t0.elapsed(), Duration::from_secs(60));
}

fn visited_gap(table: &QTable, target: &[Vec<f64>]) -> (f64, usize) {
    let mut gap = 0.0f64;
    let mut visited_pairs = 0usize;
    for (s, (row, visits)) in table.values.iter().zip(&table.visits).enumerate() {
        for (u, (&v, &n)) in row.iter().zip(visits).enumerate() {
            if n > 0 {
                visited_pairs += 1;
                gap = gap.max((v - target[s][u]).abs());
            }
        }
    }
    (gap, visited_pairs)
}

#[test]
fn criterion_10_q_learning_agreement() {
    let t0 = Instant::now();
    let m = model();
    let beta = 0.9;
    let steps = 1_000_000;
    let explor = [0.5, 0.5];
    let value_tol = 0.05 * m.cost_sup() / (1.0 - beta);
    let avg_tol = 0.05 * m.cost_sup();

    // quantized variant against the value-iteration table of the quantized MDP
    let quantizer = quantize(4, 10, StateMetric::Discrete).unwrap();
    let q_table = q_learning(
        &m,
        QlearnSpace::Quantized(&quantizer),
        beta,
        steps,
        7,
        &explor,
    )
    .unwrap();
    let qmdp = build_quantized_mdp(&m, quantizer, Weighting::Dirac).unwrap();
    let vi = value_iteration(&qmdp.mdp, beta, 1e-9, 100_000).unwrap();
    let (gap_q, visited_q) = visited_gap(&q_table, &q_factors(&qmdp.mdp, &vi.values, beta));

    // window variant against its own finite MDP; the anchor is the
    // stationary hidden-state law under uniform exploration (uniform here)
    let anchor = Belief::uniform(4);
    let w_table = q_learning(
        &m,
        QlearnSpace::Window {
            n: 1,
            anchor: &anchor,
        },
        beta,
        steps,
        8,
        &explor,
    )
    .unwrap();
    let wm = window_mdp(&m, 1, &anchor).unwrap();
    let vi_w = value_iteration(&wm.mdp, beta, 1e-9, 100_000).unwrap();
    let (gap_w, visited_w) = visited_gap(&w_table, &q_factors(&wm.mdp, &vi_w.values, beta));

    // both greedy policies, evaluated exactly, against the average-cost solution
    let rho = vanishing_discount(
        &m,
        quantize(4, 20, StateMetric::Discrete).unwrap(),
        &[0.9, 0.99, 0.999],
        1e-6,
    )
    .unwrap()
    .rho_star;
    let avg_q = average_cost_exact(&qmdp.mdp, &greedy_policy(&q_table).actions).unwrap();
    let avg_w = average_cost_exact(&wm.mdp, &greedy_policy(&w_table).actions).unwrap();

    let clauses = vec![
        (
            gap_q <= value_tol,
            format!(
                "quantized: max visited |Q - Q*_VI| = {gap_q} <= {value_tol} \
                 ({visited_q} visited pairs); the 1/(1+visits) rate leaves an \
                 O(visits^(beta-1)) transient far above this tolerance at 1e6 steps"
            ),
        ),
        (
            gap_w <= value_tol,
            format!(
                "window: max visited |Q - Q*_VI| = {gap_w} <= {value_tol} \
                 ({visited_w} visited pairs); same learning-rate transient"
            ),
        ),
        (
            (avg_q - rho).abs() <= avg_tol,
            format!("quantized greedy exact average {avg_q} within {avg_tol} of rho* {rho}"),
        ),
        (
            (avg_w - rho).abs() <= avg_tol,
            format!("window greedy exact average {avg_w} within {avg_tol} of rho* {rho}"),
        ),
    ];
    verdict(10, &clauses, t0.elapsed(), Duration::from_secs(900));
}

/// Posterior of the final hidden state by explicit joint-path summation.
fn joint_enumeration_posterior(
    model: &ValidatedModel,
    prior: &[f64],
    obs: &[usize],
    acts: &[usize],
) -> Option<Vec<f64>> {
    let n = model.n_states;
    let horizon = obs.len();
    let mut marginal = vec![0.0f64; n];
    for code in 0..n.pow(horizon as u32) {
        let mut digits = Vec::with_capacity(horizon);
        let mut c = code;
        for _ in 0..horizon {
            digits.push(c % n);
            c /= n;
        }
        let mut p = prior[digits[0]] * model.observation[digits[0]][obs[0]];
        for j in 0..acts.len() {
            p *= model.transitions[acts[j]][digits[j]][digits[j + 1]]
                * model.observation[digits[j + 1]][obs[j + 1]];
        }
        marginal[digits[horizon - 1]] += p;
    }
    let mass: f64 = marginal.iter().sum();
    if mass < 1e-300 {
        return None;
    }
    Some(marginal.iter().map(|m| m / mass).collect())
}

#[test]
fn criterion_11_oracle_suites() {
    let t0 = Instant::now();
    let mut clauses = Vec::new();

    // (a) recursive filter vs joint enumeration, all strings to horizon 5
    let m = model();
    let prior = Belief::uniform(4);
    let mut filter_worst = 0.0f64;
    let mut strings = 0usize;
    for horizon in 1..=5usize {
        for oc in 0..2usize.pow(horizon as u32) {
            let obs: Vec<usize> = (0..horizon).map(|k| (oc >> k) & 1).collect();
            for ac in 0..2usize.pow(horizon as u32 - 1) {
                let acts: Vec<usize> = (0..horizon - 1).map(|k| (ac >> k) & 1).collect();
                strings += 1;
                let brute = joint_enumeration_posterior(&m, &prior, &obs, &acts)
                    .expect("benchmark chain has full support");
                let mut z = bayes_update(&m, &prior, obs[0]).unwrap();
                for (j, &u) in acts.iter().enumerate() {
                    z = filter_update(&m, &z, u, obs[j + 1]).unwrap().0;
                }
                for (a, b) in z.iter().zip(&brute) {
                    filter_worst = filter_worst.max((a - b).abs());
                }
            }
        }
    }
    clauses.push((
        filter_worst <= 1e-10,
        format!("filter vs joint enumeration on {strings} strings: worst gap {filter_worst:.3e}"),
    ));

    // (b) closed-form W1 vs exact transport on 500 random cases
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w1_worst = 0.0f64;
    for case in 0..500 {
        let n = 2 + case % 4;
        let draw = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let metric = if case % 2 == 0 {
            StateMetric::Discrete
        } else {
            let mut pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in 1..n {
                if pts[k] - pts[k - 1] < 1e-3 {
                    pts[k] = pts[k - 1] + 1e-3;
                }
            }
            StateMetric::Line(pts)
        };
        let closed = w1(&p, &q, &metric).unwrap();
        let lp = transport_lp(&p, &q, &metric.to_matrix(n)).unwrap().value;
        w1_worst = w1_worst.max((closed - lp).abs());
    }
    clauses.push((
        w1_worst <= 1e-10,
        format!("closed-form W1 vs transport solve on 500 cases: worst gap {w1_worst:.3e}"),
    ));

    // (c) value iteration vs finite-horizon dynamic programming
    let quantizer = quantize(4, 4, StateMetric::Discrete).unwrap();
    let qmdp = build_quantized_mdp(&m, quantizer, Weighting::Dirac).unwrap();
    let beta = 0.9;
    let sol = value_iteration(&qmdp.mdp, beta, 1e-12, 100_000).unwrap();
    let horizon = 150;
    let mut dp = vec![0.0f64; qmdp.mdp.n_states];
    for _ in 0..horizon {
        dp = (0..qmdp.mdp.n_states)
            .map(|s| {
                (0..qmdp.mdp.n_actions)
                    .map(|u| {
                        qmdp.mdp.cost[s][u]
                            + beta
                                * qmdp.mdp.kernel[u][s]
                                    .iter()
                                    .map(|&(j, p)| p * dp[j])
                                    .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    let tail = beta.powi(horizon) * m.cost_sup() / (1.0 - beta);
    let dp_worst = sol
        .values
        .iter()
        .zip(&dp)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    clauses.push((
        dp_worst <= tail + 1e-9,
        format!(
            "value iteration vs {horizon}-step dynamic programming: worst gap {dp_worst:.3e} \
             <= discount tail {tail:.3e} + 1e-9"
        ),
    ));

    // (d) learning-rate bookkeeping replays a hand counter exactly
    let mut table = QTable::new(
        2,
        2,
        StateKind::QuantizedBelief {
            resolution: 1,
            n_reps: 2,
        },
    );
    let mut counts = std::collections::HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rate_exact = true;
    for _ in 0..200 {
        let s = rng.random_range(0..2);
        let u = rng.random_range(0..2);
        let k = counts.entry((s, u)).and_modify(|c| *c += 1).or_insert(1u64);
        let alpha = table.update(s, u, 1.0, s, 0.5);
        rate_exact &= alpha == 1.0 / (1.0 + *k as f64);
    }
    clauses.push((
        rate_exact,
        "learning rate equals 1/(1 + visit count) on a 200-step replay".to_string(),
    ));

    verdict(11, &clauses, t0.elapsed(), Duration::from_secs(120));
}
