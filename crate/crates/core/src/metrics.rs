//! Distances between probability vectors and kernel regularity diagnostics.
//!
//! Total variation here is the unnormalized mass difference `sum_i |p_i -
//! q_i|`, so two distinct point masses are at distance 2. The Wasserstein-1
//! distance uses closed forms where they exist (discrete and line metrics)
//! and an exact transportation solve otherwise. The bounded-Lipschitz
//! distance maximizes `sum_i (p_i - q_i) f(i)` over functions with
//! `sup |f| + Lip(f) <= 1`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::model::{StateMetric, ValidatedModel};

/// Residual capacities at or below this are treated as saturated.
const FLOW_EPS: f64 = 1e-13;

/// Acceptable mismatch between total supply and total demand.
const MASS_TOL: f64 = 1e-9;

/// `sum_i |p_i - q_i|`. Panics if the slices differ in length.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "total_variation: length mismatch");
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Wasserstein-1 distance between two probability vectors over states
/// `0..n` under the given metric.
///
/// Discrete metric: half the total variation. Line metric: integral of the
/// absolute CDF difference. Explicit metric: exact optimal-transport value.
pub fn w1(p: &[f64], q: &[f64], metric: &StateMetric) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            context: "w1 arguments".into(),
            left: p.len(),
            right: q.len(),
        });
    }
    match metric {
        StateMetric::Discrete => Ok(0.5 * total_variation(p, q)),
        StateMetric::Line(pts) => {
            if pts.len() != p.len() {
                return Err(Error::LengthMismatch {
                    context: "w1 line points".into(),
                    left: pts.len(),
                    right: p.len(),
                });
            }
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| pts[a].partial_cmp(&pts[b]).expect("finite points"));
            let mut acc = 0.0;
            let mut total = 0.0;
            for k in 0..idx.len().saturating_sub(1) {
                acc += p[idx[k]] - q[idx[k]];
                total += acc.abs() * (pts[idx[k + 1]] - pts[idx[k]]);
            }
            Ok(total)
        }
        StateMetric::Explicit(m) => Ok(transport_lp(p, q, m)?.value),
    }
}

/// An optimal transportation plan and its cost.
#[derive(Debug, Clone)]
pub struct Transport {
    pub value: f64,
    /// `plan[i][j]` = mass moved from source atom i to sink atom j.
    pub plan: Vec<Vec<f64>>,
}

/// Solves `min sum_ij plan[i][j] cost[i][j]` over nonnegative plans with
/// row sums `mu` and column sums `nu`, exactly, by successive
/// shortest-path augmentation with node potentials.
///
/// Costs must be finite and nonnegative; total supply and demand must agree
/// to within 1e-9.
pub fn transport_lp(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> Result<Transport> {
    let n = mu.len();
    let m = nu.len();
    if cost.len() != n || cost.iter().any(|r| r.len() != m) {
        return Err(Error::BadShape {
            what: "transport cost matrix".into(),
            got: format!("{}x{:?}", cost.len(), cost.first().map(|r| r.len())),
            expected: format!("{n}x{m}"),
        });
    }
    for (name, v) in [("supply", mu), ("demand", nu)] {
        for (i, &x) in v.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::NegativeEntry {
                    matrix: format!("transport {name}"),
                    row: 0,
                    col: i,
                    value: x,
                });
            }
        }
    }
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::NonFiniteEntry {
                    matrix: "transport cost".into(),
                    row: i,
                    col: j,
                    value: c,
                });
            }
        }
    }
    let supply: f64 = mu.iter().sum();
    let demand: f64 = nu.iter().sum();
    if (supply - demand).abs() > MASS_TOL {
        return Err(Error::Infeasible {
            reason: format!("transport supply {supply} != demand {demand}"),
        });
    }

    // Min-cost flow network: node 0 = source, 1..=n atoms of mu,
    // n+1..=n+m atoms of nu, n+m+1 = sink.
    let n_nodes = n + m + 2;
    let (src, snk) = (0, n + m + 1);
    struct Arc {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut arcs: Vec<Arc> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let add_edge = |arcs: &mut Vec<Arc>,
                    adj: &mut Vec<Vec<usize>>,
                    a: usize,
                    b: usize,
                    cap: f64,
                    cost: f64| {
        adj[a].push(arcs.len());
        arcs.push(Arc { to: b, cap, cost });
        adj[b].push(arcs.len());
        arcs.push(Arc {
            to: a,
            cap: 0.0,
            cost: -cost,
        });
    };
    for (i, &s) in mu.iter().enumerate() {
        if s > 0.0 {
            add_edge(&mut arcs, &mut adj, src, 1 + i, s, 0.0);
        }
    }
    for (i, &s) in mu.iter().enumerate() {
        if s > 0.0 {
            for (j, &d) in nu.iter().enumerate() {
                if d > 0.0 {
                    add_edge(&mut arcs, &mut adj, 1 + i, 1 + n + j, supply, cost[i][j]);
                }
            }
        }
    }
    for (j, &d) in nu.iter().enumerate() {
        if d > 0.0 {
            add_edge(&mut arcs, &mut adj, 1 + n + j, snk, d, 0.0);
        }
    }

    let mut potential = vec![0.0_f64; n_nodes];
    let mut routed = 0.0;
    loop {
        // Dijkstra over reduced costs (dense scan; the network is tiny).
        let mut dist = vec![f64::INFINITY; n_nodes];
        let mut prev_arc = vec![usize::MAX; n_nodes];
        let mut done = vec![false; n_nodes];
        dist[src] = 0.0;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..n_nodes {
                if !done[v] && dist[v] < best_d {
                    best = v;
                    best_d = dist[v];
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            for &a in &adj[best] {
                let arc = &arcs[a];
                if arc.cap <= FLOW_EPS {
                    continue;
                }
                let reduced = best_d + arc.cost + potential[best] - potential[arc.to];
                if reduced < dist[arc.to] - 1e-15 {
                    dist[arc.to] = reduced;
                    prev_arc[arc.to] = a;
                }
            }
        }
        if !dist[snk].is_finite() {
            break;
        }
        for v in 0..n_nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = snk;
        while v != src {
            let a = prev_arc[v];
            bottleneck = bottleneck.min(arcs[a].cap);
            v = arcs[a ^ 1].to;
        }
        let mut v = snk;
        while v != src {
            let a = prev_arc[v];
            arcs[a].cap -= bottleneck;
            arcs[a ^ 1].cap += bottleneck;
            v = arcs[a ^ 1].to;
        }
        routed += bottleneck;
    }
    if (routed - supply).abs() > MASS_TOL {
        return Err(Error::Infeasible {
            reason: format!("transport routed {routed} of {supply} mass"),
        });
    }

    // Forward flow on arc a equals the capacity accumulated on its twin.
    let mut plan = vec![vec![0.0; m]; n];
    let mut value = 0.0;
    let mut a = 0;
    while a < arcs.len() {
        let from = arcs[a ^ 1].to;
        let to = arcs[a].to;
        if (1..=n).contains(&from) && (n + 1..=n + m).contains(&to) {
            let f = arcs[a ^ 1].cap;
            plan[from - 1][to - n - 1] = f;
            value += f * arcs[a].cost;
        }
        a += 2;
    }
    Ok(Transport { value, plan })
}

/// Bounded-Lipschitz distance: `max sum_i (p_i - q_i) f_i` subject to
/// `|f_i| <= s`, `|f_i - f_j| <= L d(i,j)`, `s + L <= 1`.
pub fn bl_distance(p: &[f64], q: &[f64], metric: &StateMetric) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            context: "bl_distance arguments".into(),
            left: p.len(),
            right: q.len(),
        });
    }
    let n = p.len();
    let d = metric.to_matrix(n);
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let f: Vec<_> = (0..n)
        .map(|i| pb.add_var(p[i] - q[i], (-1.0, 1.0)))
        .collect();
    let s = pb.add_var(0.0, (0.0, 1.0));
    let l = pb.add_var(0.0, (0.0, 1.0));
    for i in 0..n {
        pb.add_constraint(&[(f[i], 1.0), (s, -1.0)][..], ComparisonOp::Le, 0.0);
        pb.add_constraint(&[(f[i], -1.0), (s, -1.0)][..], ComparisonOp::Le, 0.0);
        for j in 0..n {
            if i != j {
                pb.add_constraint(
                    &[(f[i], 1.0), (f[j], -1.0), (l, -d[i][j])][..],
                    ComparisonOp::Le,
                    0.0,
                );
            }
        }
    }
    pb.add_constraint(&[(s, 1.0), (l, 1.0)][..], ComparisonOp::Le, 1.0);
    let sol = pb.solve().map_err(|e| Error::Infeasible {
        reason: format!("bounded-Lipschitz program: {e}"),
    })?;
    // Clamp the tiny negatives the simplex can produce at p == q.
    Ok(sol.objective().max(0.0))
}

/// Ergodicity coefficient of a row-stochastic matrix: the minimum over row
/// pairs of the overlap `sum_j min(P[i][j], P[k][j])`. A single-row matrix
/// has coefficient 1.
pub fn dobrushin<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    let k = rows.len();
    if k <= 1 {
        return 1.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let overlap: f64 = rows[i]
                .as_ref()
                .iter()
                .zip(rows[j].as_ref())
                .map(|(a, b)| a.min(*b))
                .sum();
            best = best.min(overlap);
        }
    }
    best
}

/// Ergodicity coefficient of the observation channel.
pub fn obs_dobrushin(model: &ValidatedModel) -> f64 {
    dobrushin(&model.observation)
}

/// Ergodicity coefficient of the transition family: the worst per-action
/// coefficient. Rows are only compared within one action because the
/// posterior contraction couples two filters driven by the same action.
pub fn transition_dobrushin(model: &ValidatedModel) -> f64 {
    model
        .transitions
        .iter()
        .map(|kernel| dobrushin(kernel))
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `alpha` with `||T(.|x,u) - T(.|x',u)||_TV <= alpha d(x,x')` over
/// all actions and state pairs.
///
/// Fails with [`Error::ZeroDistance`] if two states at distance zero have
/// different transition rows.
pub fn tv_lipschitz_alpha(model: &ValidatedModel) -> Result<f64> {
    let mut alpha = 0.0_f64;
    for kernel in &model.transitions {
        for i in 0..model.n_states {
            for j in i + 1..model.n_states {
                let tv = total_variation(&kernel[i], &kernel[j]);
                let d = model.metric.distance(i, j);
                if d <= 0.0 {
                    if tv > 1e-12 {
                        return Err(Error::ZeroDistance { i, j });
                    }
                    continue;
                }
                alpha = alpha.max(tv / d);
            }
        }
    }
    Ok(alpha)
}

/// Smallest `k1` with `|c(x,u) - c(x',u)| <= k1 d(x,x')` over all actions
/// and state pairs.
pub fn cost_lipschitz_k1(model: &ValidatedModel) -> Result<f64> {
    let mut k1 = 0.0_f64;
    for i in 0..model.n_states {
        for j in i + 1..model.n_states {
            let gap = model.cost[i]
                .iter()
                .zip(&model.cost[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let d = model.metric.distance(i, j);
            if d <= 0.0 {
                if gap > 1e-12 {
                    return Err(Error::ZeroDistance { i, j });
                }
                continue;
            }
            k1 = k1.max(gap / d);
        }
    }
    Ok(k1)
}

/// The regularity constants a model exposes to the belief-space machinery.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AssumptionReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    /// Diameter of the state space.
    pub diameter: f64,
    /// Largest absolute stage cost.
    pub cost_sup: f64,
    /// Lipschitz constant of the stage cost in the state.
    pub cost_lipschitz: f64,
    /// Variation-distance Lipschitz constant of the transition kernel.
    pub kernel_lipschitz: f64,
    /// Ergodicity coefficient of the observation channel.
    pub obs_dobrushin: f64,
    /// Ergodicity coefficient of the transition family.
    pub transition_dobrushin: f64,
    /// Expected one-step variation contraction of the posterior process:
    /// `(1 - transition_dobrushin) (2 - obs_dobrushin)`.
    pub filter_contraction: f64,
    /// Wasserstein contraction modulus of the posterior kernel:
    /// `kernel_lipschitz * diameter * (3 - 2 obs_dobrushin) / 2`.
    pub cost_contraction: f64,
}

impl AssumptionReport {
    /// Lipschitz bound `k1 / (1 - beta k2)` for discounted values on
    /// belief space; requires `beta * cost_contraction < 1`.
    pub fn lipschitz_k(&self, beta: f64) -> Result<f64> {
        let bk2 = beta * self.cost_contraction;
        if bk2 >= 1.0 {
            return Err(Error::InvalidRegime {
                reason: format!(
                    "beta * cost_contraction = {bk2} >= 1; the value-function Lipschitz bound needs beta * k2 < 1"
                ),
            });
        }
        Ok(self.cost_lipschitz / (1.0 - bk2))
    }

    /// Whether both contraction moduli certify geometric regularity.
    pub fn is_contractive(&self) -> bool {
        self.filter_contraction < 1.0 && self.cost_contraction < 1.0
    }
}

/// Computes every regularity constant of [`AssumptionReport`] for a model.
pub fn assumption_report(model: &ValidatedModel) -> Result<AssumptionReport> {
    let delta_obs = obs_dobrushin(model);
    let delta_trans = transition_dobrushin(model);
    let alpha = tv_lipschitz_alpha(model)?;
    let k1 = cost_lipschitz_k1(model)?;
    let diameter = model.metric.diameter(model.n_states);
    Ok(AssumptionReport {
        n_states: model.n_states,
        n_actions: model.n_actions,
        n_obs: model.n_obs,
        diameter,
        cost_sup: model.cost_sup(),
        cost_lipschitz: k1,
        kernel_lipschitz: alpha,
        obs_dobrushin: delta_obs,
        transition_dobrushin: delta_trans,
        filter_contraction: (1.0 - delta_trans) * (2.0 - delta_obs),
        cost_contraction: alpha * diameter * (3.0 - 2.0 * delta_obs) / 2.0,
    })
}
