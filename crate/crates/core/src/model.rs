//! Finite POMDP models, built-in examples, and discretization of 1-D
//! continuous specifications.
//!
//! A [`FinitePomdp`] bundles per-action transition kernels, an observation
//! channel, a stage-cost table, and a metric on the state space. Models are
//! consumed through [`ValidatedModel`], obtained from
//! [`FinitePomdp::validate`], which certifies stochasticity and metric axioms
//! once so downstream code can rely on them.

use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for row-sum and metric checks.
pub const VALIDATION_TOL: f64 = 1e-12;

/// Kernel rows whose unnormalized mass falls below this are rejected.
pub const UNDERFLOW_TOL: f64 = 1e-9;

/// Metric on a finite state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMetric {
    /// d(i,j) = 1 for i != j.
    Discrete,
    /// States sit at the given coordinates on the real line, d = |x_i - x_j|.
    Line(Vec<f64>),
    /// Explicit distance matrix.
    Explicit(Vec<Vec<f64>>),
}

impl StateMetric {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            StateMetric::Discrete => {
                if i == j {
                    0.0
                } else {
                    1.0
                }
            }
            StateMetric::Line(pts) => (pts[i] - pts[j]).abs(),
            StateMetric::Explicit(m) => m[i][j],
        }
    }

    /// Largest pairwise distance among `n` states.
    pub fn diameter(&self, n: usize) -> f64 {
        match self {
            StateMetric::Discrete => {
                if n > 1 {
                    1.0
                } else {
                    0.0
                }
            }
            StateMetric::Line(pts) => {
                let lo = pts.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = pts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if n > 1 {
                    hi - lo
                } else {
                    0.0
                }
            }
            StateMetric::Explicit(m) => {
                m.iter().flat_map(|r| r.iter().cloned()).fold(0.0, f64::max)
            }
        }
    }

    /// Materialize the full n x n distance matrix.
    pub fn to_matrix(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| self.distance(i, j)).collect())
            .collect()
    }
}

/// A finite partially observed Markov decision process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePomdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    /// `transitions[u][x][x']` = probability of moving x -> x' under action u.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `observation[x][y]` = probability of measurement y in state x.
    pub observation: Vec<Vec<f64>>,
    /// `cost[x][u]` = stage cost.
    pub cost: Vec<Vec<f64>>,
    pub metric: StateMetric,
}

impl FinitePomdp {
    /// Largest absolute stage cost.
    pub fn cost_sup(&self) -> f64 {
        self.cost
            .iter()
            .flat_map(|r| r.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Checks shapes, stochasticity of all kernel rows, finiteness of costs,
    /// and the metric axioms; returns the certified model.
    pub fn validate(self) -> Result<ValidatedModel> {
        let n = self.n_states;
        if n == 0 || self.n_actions == 0 || self.n_obs == 0 {
            return Err(Error::BadShape {
                what: "model dimensions".into(),
                got: format!("({}, {}, {})", n, self.n_actions, self.n_obs),
                expected: "all positive".into(),
            });
        }
        if self.transitions.len() != self.n_actions {
            return Err(Error::BadShape {
                what: "transitions".into(),
                got: format!("{} kernels", self.transitions.len()),
                expected: format!("{} kernels", self.n_actions),
            });
        }
        for (u, kernel) in self.transitions.iter().enumerate() {
            check_stochastic(&format!("transitions[{u}]"), kernel, n, n)?;
        }
        check_stochastic("observation", &self.observation, n, self.n_obs)?;
        check_shape("cost", &self.cost, n, self.n_actions)?;
        for (x, row) in self.cost.iter().enumerate() {
            for (u, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry {
                        matrix: "cost".into(),
                        row: x,
                        col: u,
                        value: v,
                    });
                }
            }
        }
        self.validate_metric()?;
        Ok(ValidatedModel { inner: self })
    }

    fn validate_metric(&self) -> Result<()> {
        let n = self.n_states;
        match &self.metric {
            StateMetric::Discrete => Ok(()),
            StateMetric::Line(pts) => {
                if pts.len() != n {
                    return Err(Error::BadShape {
                        what: "metric line points".into(),
                        got: format!("{}", pts.len()),
                        expected: format!("{n}"),
                    });
                }
                for (i, &p) in pts.iter().enumerate() {
                    if !p.is_finite() {
                        return Err(Error::NonFiniteEntry {
                            matrix: "metric line points".into(),
                            row: 0,
                            col: i,
                            value: p,
                        });
                    }
                }
                Ok(())
            }
            StateMetric::Explicit(m) => {
                check_shape("metric", m, n, n)?;
                for i in 0..n {
                    if m[i][i] != 0.0 {
                        return Err(Error::MetricAsymmetry { i, j: i });
                    }
                    for j in 0..n {
                        let d = m[i][j];
                        if !d.is_finite() {
                            return Err(Error::NonFiniteEntry {
                                matrix: "metric".into(),
                                row: i,
                                col: j,
                                value: d,
                            });
                        }
                        if d < 0.0 {
                            return Err(Error::NegativeEntry {
                                matrix: "metric".into(),
                                row: i,
                                col: j,
                                value: d,
                            });
                        }
                        if (d - m[j][i]).abs() > VALIDATION_TOL {
                            return Err(Error::MetricAsymmetry { i, j });
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            if m[i][k] > m[i][j] + m[j][k] + VALIDATION_TOL {
                                return Err(Error::MetricViolation { i, j, k });
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

fn check_shape(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows {
        return Err(Error::BadShape {
            what: name.into(),
            got: format!("{} rows", m.len()),
            expected: format!("{rows} rows"),
        });
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::BadShape {
                what: format!("{name} row {i}"),
                got: format!("{} columns", row.len()),
                expected: format!("{cols} columns"),
            });
        }
    }
    Ok(())
}

fn check_stochastic(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    check_shape(name, m, rows, cols)?;
    for (i, row) in m.iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry {
                    matrix: name.into(),
                    row: i,
                    col: j,
                    value: v,
                });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry {
                    matrix: name.into(),
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::RowNotStochastic {
                matrix: name.into(),
                row: i,
                sum,
                tol: VALIDATION_TOL,
            });
        }
    }
    Ok(())
}

/// A [`FinitePomdp`] that passed [`FinitePomdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    inner: FinitePomdp,
}

impl ValidatedModel {
    pub fn into_inner(self) -> FinitePomdp {
        self.inner
    }
}

impl Deref for ValidatedModel {
    type Target = FinitePomdp;

    fn deref(&self) -> &FinitePomdp {
        &self.inner
    }
}

/// Transition kernel family of a 1-D continuous model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Uniform on (0, min(hi, 1 + (x+u)/7)) where hi is the interval's upper
    /// endpoint.
    ClippedUniform,
    /// Normal with mean x+u restricted to the interval and renormalized.
    TruncatedNormal { sigma: f64 },
}

/// Observation channel of a 1-D continuous model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsPartition {
    /// Deterministic finite-valued readout: observation index = number of cut
    /// points at or below x.
    Cuts(Vec<f64>),
    /// Piecewise-constant observation densities: `rows[k]` is the observation
    /// distribution on the k-th segment delimited by `cuts`.
    PiecewiseConstant { cuts: Vec<f64>, rows: Vec<Vec<f64>> },
}

/// Stage-cost form of a 1-D continuous model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    XPlusU,
    XMinusU,
}

impl CostForm {
    pub fn eval(self, x: f64, u: f64) -> f64 {
        match self {
            CostForm::XPlusU => x + u,
            CostForm::XMinusU => x - u,
        }
    }
}

/// A continuous-state model on a compact interval with finitely many actions,
/// meant to be ground through [`discretize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec1D {
    pub interval: (f64, f64),
    pub kernel_family: KernelFamily,
    pub action_set: Vec<f64>,
    pub obs_partition: ObsPartition,
    pub cost_fn: CostForm,
}

/// Result of [`builtin`]: either an already-finite model or a continuous
/// specification awaiting discretization.
#[derive(Debug, Clone)]
pub enum BuiltinModel {
    Finite(ValidatedModel),
    Continuous(ContinuousSpec1D),
}

/// The 4-state / 2-action / 2-observation benchmark chain.
///
/// `eps` controls how informative the observation channel is; it must lie in
/// (0, 1/2). `cost_override` replaces the default stage-cost table
/// c(x,u) = 1{x in {2,3}} + u/10.
pub fn ex1(eps: f64, cost_override: Option<Vec<Vec<f64>>>) -> Result<ValidatedModel> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::ParamOutOfRange {
            name: "eps".into(),
            value: eps,
            admissible: "open interval (0, 1/2)".into(),
        });
    }
    let third = 1.0 / 3.0;
    let sixth = 1.0 / 6.0;
    let t0 = vec![
        vec![0.5, third, sixth, 0.0],
        vec![0.0, 0.5, sixth, third],
        vec![0.5, sixth, 0.0, third],
        vec![third, third, third, 0.0],
    ];
    let t1 = vec![
        vec![third, 0.5, sixth, 0.0],
        vec![0.0, third, 0.5, sixth],
        vec![0.5, third, 0.0, sixth],
        vec![third, third, third, 0.0],
    ];
    let informative = vec![0.75 - eps, 0.25 + eps];
    let blur = vec![0.25 + eps, 0.75 - eps];
    let observation = vec![informative.clone(), informative, blur.clone(), blur];
    let cost = cost_override.unwrap_or_else(|| {
        vec![
            vec![0.0, 0.1],
            vec![0.0, 0.1],
            vec![1.0, 1.1],
            vec![1.0, 1.1],
        ]
    });
    FinitePomdp {
        n_states: 4,
        n_actions: 2,
        n_obs: 2,
        transitions: vec![t0, t1],
        observation,
        cost,
        metric: StateMetric::Discrete,
    }
    .validate()
}

/// Clipped-uniform model on [0,2] with cost x+u, actions uniformly spread
/// over [0,12], and a deterministic two-cell readout split at x = 1.
pub fn ex2(n_actions: usize) -> Result<ContinuousSpec1D> {
    if n_actions < 2 {
        return Err(Error::ParamOutOfRange {
            name: "n_actions".into(),
            value: n_actions as f64,
            admissible: "at least 2".into(),
        });
    }
    Ok(ContinuousSpec1D {
        interval: (0.0, 2.0),
        kernel_family: KernelFamily::ClippedUniform,
        action_set: linspace(0.0, 12.0, n_actions),
        obs_partition: ObsPartition::Cuts(vec![1.0]),
        cost_fn: CostForm::XPlusU,
    })
}

/// Truncated-normal model on [0,1] with cost x-u, actions uniformly spread
/// over [-p,p], and a deterministic two-cell readout split at x = 1/2.
pub fn ex3(sigma: f64, p: f64, n_actions: usize) -> Result<ContinuousSpec1D> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "sigma".into(),
            value: sigma,
            admissible: "positive".into(),
        });
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::ParamOutOfRange {
            name: "p".into(),
            value: p,
            admissible: "positive".into(),
        });
    }
    if n_actions < 2 {
        return Err(Error::ParamOutOfRange {
            name: "n_actions".into(),
            value: n_actions as f64,
            admissible: "at least 2".into(),
        });
    }
    Ok(ContinuousSpec1D {
        interval: (0.0, 1.0),
        kernel_family: KernelFamily::TruncatedNormal { sigma },
        action_set: linspace(-p, p, n_actions),
        obs_partition: ObsPartition::Cuts(vec![0.5]),
        cost_fn: CostForm::XMinusU,
    })
}

/// Builds a named example model from string-keyed parameters.
///
/// Recognized names: `ex1` (key `eps`), `ex2` (key `n_actions`), `ex3`
/// (keys `sigma`, `p`, `n_actions`). Missing keys fall back to defaults
/// (eps 0.1, sigma 1.5, p 0.5, n_actions 7 for ex2 and 5 for ex3).
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<BuiltinModel> {
    let check_keys = |allowed: &[&str]| -> Result<()> {
        for key in params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::UnknownParam {
                    name: key.clone(),
                    admissible: allowed.join(", "),
                });
            }
        }
        Ok(())
    };
    let int_param = |key: &str, default: usize| -> Result<usize> {
        match params.get(key) {
            None => Ok(default),
            Some(&v) => {
                if v.fract() == 0.0 && v >= 0.0 && v <= usize::MAX as f64 {
                    Ok(v as usize)
                } else {
                    Err(Error::ParamOutOfRange {
                        name: key.into(),
                        value: v,
                        admissible: "nonnegative integer".into(),
                    })
                }
            }
        }
    };
    match name {
        "ex1" => {
            check_keys(&["eps"])?;
            let eps = params.get("eps").copied().unwrap_or(0.1);
            Ok(BuiltinModel::Finite(ex1(eps, None)?))
        }
        "ex2" => {
            check_keys(&["n_actions"])?;
            Ok(BuiltinModel::Continuous(ex2(int_param("n_actions", 7)?)?))
        }
        "ex3" => {
            check_keys(&["sigma", "p", "n_actions"])?;
            let sigma = params.get("sigma").copied().unwrap_or(1.5);
            let p = params.get("p").copied().unwrap_or(0.5);
            Ok(BuiltinModel::Continuous(ex3(
                sigma,
                p,
                int_param("n_actions", 5)?,
            )?))
        }
        other => Err(Error::UnknownParam {
            name: other.into(),
            admissible: "ex1, ex2, ex3".into(),
        }),
    }
}

/// Grounds a 1-D continuous specification on a uniform grid of `n_grid`
/// cells.
///
/// Each transition row holds the exact kernel mass of every cell, computed in
/// closed form and renormalized; states sit at cell midpoints and inherit the
/// line metric. Deterministic observation channels are evaluated at
/// midpoints; piecewise-constant ones are averaged over each cell.
pub fn discretize(spec: &ContinuousSpec1D, n_grid: usize) -> Result<ValidatedModel> {
    if n_grid < 2 {
        return Err(Error::ParamOutOfRange {
            name: "n_grid".into(),
            value: n_grid as f64,
            admissible: "at least 2".into(),
        });
    }
    let (lo, hi) = spec.interval;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::ParamOutOfRange {
            name: "interval".into(),
            value: hi - lo,
            admissible: "finite interval of positive length".into(),
        });
    }
    if spec.action_set.is_empty() {
        return Err(Error::BadShape {
            what: "action_set".into(),
            got: "0 actions".into(),
            expected: "at least 1".into(),
        });
    }
    let edges = linspace(lo, hi, n_grid + 1);
    let mids: Vec<f64> = (0..n_grid)
        .map(|i| 0.5 * (edges[i] + edges[i + 1]))
        .collect();

    let mut transitions = Vec::with_capacity(spec.action_set.len());
    for &u in &spec.action_set {
        let mut kernel = Vec::with_capacity(n_grid);
        for &x in &mids {
            let mut row: Vec<f64> = match &spec.kernel_family {
                KernelFamily::ClippedUniform => {
                    let b = (1.0 + (x + u) / 7.0).min(hi);
                    (0..n_grid)
                        .map(|j| {
                            let a = edges[j].clamp(0.0, b);
                            let c = edges[j + 1].clamp(0.0, b);
                            (c - a) / b
                        })
                        .collect()
                }
                KernelFamily::TruncatedNormal { sigma } => {
                    let mu = x + u;
                    let z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
                    if z < UNDERFLOW_TOL {
                        return Err(Error::NumericalUnderflow {
                            row: mids.iter().position(|&m| m == x).unwrap_or(0),
                            mass: z,
                        });
                    }
                    (0..n_grid)
                        .map(|j| {
                            (normal_cdf((edges[j + 1] - mu) / sigma)
                                - normal_cdf((edges[j] - mu) / sigma))
                                / z
                        })
                        .collect()
                }
            };
            let mass: f64 = row.iter().sum();
            if mass < UNDERFLOW_TOL {
                let i = mids.iter().position(|&m| m == x).unwrap_or(0);
                return Err(Error::NumericalUnderflow { row: i, mass });
            }
            for v in &mut row {
                *v /= mass;
            }
            kernel.push(row);
        }
        transitions.push(kernel);
    }

    let (n_obs, observation) = discretize_observation(&spec.obs_partition, lo, hi, &edges, &mids)?;

    let cost = mids
        .iter()
        .map(|&x| {
            spec.action_set
                .iter()
                .map(|&u| spec.cost_fn.eval(x, u))
                .collect()
        })
        .collect();

    FinitePomdp {
        n_states: n_grid,
        n_actions: spec.action_set.len(),
        n_obs,
        transitions,
        observation,
        cost,
        metric: StateMetric::Line(mids),
    }
    .validate()
}

fn discretize_observation(
    partition: &ObsPartition,
    lo: f64,
    hi: f64,
    edges: &[f64],
    mids: &[f64],
) -> Result<(usize, Vec<Vec<f64>>)> {
    match partition {
        ObsPartition::Cuts(cuts) => {
            for (i, &c) in cuts.iter().enumerate() {
                let sorted = i == 0 || cuts[i - 1] < c;
                if !(c > lo && c < hi && sorted) {
                    return Err(Error::ParamOutOfRange {
                        name: format!("obs cut {i}"),
                        value: c,
                        admissible: "strictly increasing, interior to the interval".into(),
                    });
                }
            }
            let n_obs = cuts.len() + 1;
            let observation = mids
                .iter()
                .map(|&x| {
                    let y = cuts.iter().filter(|&&c| x >= c).count();
                    let mut row = vec![0.0; n_obs];
                    row[y] = 1.0;
                    row
                })
                .collect();
            Ok((n_obs, observation))
        }
        ObsPartition::PiecewiseConstant { cuts, rows } => {
            for (i, &c) in cuts.iter().enumerate() {
                let sorted = i == 0 || cuts[i - 1] < c;
                if !(c > lo && c < hi && sorted) {
                    return Err(Error::ParamOutOfRange {
                        name: format!("obs cut {i}"),
                        value: c,
                        admissible: "strictly increasing, interior to the interval".into(),
                    });
                }
            }
            if rows.len() != cuts.len() + 1 {
                return Err(Error::BadShape {
                    what: "obs density rows".into(),
                    got: format!("{}", rows.len()),
                    expected: format!("{}", cuts.len() + 1),
                });
            }
            let n_obs = rows[0].len();
            check_stochastic("obs density rows", rows, rows.len(), n_obs)?;
            // segment boundaries including interval endpoints
            let mut bounds = Vec::with_capacity(cuts.len() + 2);
            bounds.push(lo);
            bounds.extend_from_slice(cuts);
            bounds.push(hi);
            let n_grid = mids.len();
            let mut observation = Vec::with_capacity(n_grid);
            for j in 0..n_grid {
                let (a, b) = (edges[j], edges[j + 1]);
                let width = b - a;
                let mut row = vec![0.0; n_obs];
                for (seg, seg_row) in rows.iter().enumerate() {
                    let overlap = (b.min(bounds[seg + 1]) - a.max(bounds[seg])).max(0.0);
                    if overlap > 0.0 {
                        for (y, &p) in seg_row.iter().enumerate() {
                            row[y] += p * overlap / width;
                        }
                    }
                }
                observation.push(row);
            }
            Ok((n_obs, observation))
        }
    }
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(t / std::f64::consts::SQRT_2))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
