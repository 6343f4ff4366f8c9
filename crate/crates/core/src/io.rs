//! File formats for the command-line tool: model JSON, plain-text reports,
//! and CSV emitters. Every float prints with 17 significant digits so
//! outputs are diff-stable and parse back to the identical bit pattern.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::avgcost::{AcoeSolution, RobustnessGap};
use crate::error::{Error, Result};
use crate::filter::{Belief, DualFilterStats, Trajectory};
use crate::metrics::AssumptionReport;
use crate::model::ValidatedModel;
use crate::qlearn::{QTable, StateKind, WindowLoss};

/// 17 significant digits: enough to reproduce any `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads and validates a model from a JSON file.
pub fn load_model(path: &Path) -> Result<ValidatedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let model: crate::model::FinitePomdp =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    model.validate()
}

/// Writes a text file, wrapping failures with the path.
pub fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Pretty JSON for any serializable result type.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("result types serialize infallibly");
    out.push('\n');
    out
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Human-readable assumption report with verdict lines. `beta` additionally
/// prints the discounted value Lipschitz constant when the regime allows.
pub fn render_assumption_report(report: &AssumptionReport, beta: Option<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "assumption report");
    let _ = writeln!(
        s,
        "  states: {}  actions: {}  observations: {}",
        report.n_states, report.n_actions, report.n_obs
    );
    let _ = writeln!(
        s,
        "  state metric diameter (d):     {}",
        fmt_f64(report.diameter)
    );
    let _ = writeln!(
        s,
        "  cost sup norm:                 {}",
        fmt_f64(report.cost_sup)
    );
    let _ = writeln!(
        s,
        "  cost lipschitz (k1):           {}",
        fmt_f64(report.cost_lipschitz)
    );
    let _ = writeln!(
        s,
        "  kernel tv lipschitz (alpha):   {}  [estimated on the model's own state set]",
        fmt_f64(report.kernel_lipschitz)
    );
    let _ = writeln!(
        s,
        "  obs dobrushin (delta_q):       {}",
        fmt_f64(report.obs_dobrushin)
    );
    let _ = writeln!(
        s,
        "  trans dobrushin (delta_t):     {}",
        fmt_f64(report.transition_dobrushin)
    );
    let _ = writeln!(
        s,
        "  filter stability (alpha_bar):  {}  stable: {}",
        fmt_f64(report.filter_contraction),
        yes_no(report.filter_contraction < 1.0)
    );
    let _ = writeln!(
        s,
        "  kernel contraction (k2):       {}  contractive: {}",
        fmt_f64(report.cost_contraction),
        yes_no(report.cost_contraction < 1.0)
    );
    if let Some(beta) = beta {
        match report.lipschitz_k(beta) {
            Ok(k) => {
                let _ = writeln!(s, "  value lipschitz at beta={}: {}", beta, fmt_f64(k));
            }
            Err(e) => {
                let _ = writeln!(s, "  value lipschitz at beta={beta}: unavailable ({e})");
            }
        }
    }
    let _ = writeln!(s, "  passes: {}", yes_no(report.is_contractive()));
    s
}

/// Trajectory CSV: one row per time point; the final row has no action or
/// cost because none is taken there.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let n = t.beliefs.first().map_or(0, |b| b.len());
    let mut s = String::from("t,state,obs,action,cost");
    for i in 0..n {
        let _ = write!(s, ",belief{i}");
    }
    s.push('\n');
    for k in 0..t.states.len() {
        let action = t.actions.get(k).map_or(String::new(), |u| u.to_string());
        let cost = t.stage_costs.get(k).map_or(String::new(), |c| fmt_f64(*c));
        let _ = write!(
            s,
            "{},{},{},{},{}",
            k, t.states[k], t.observations[k], action, cost
        );
        for v in t.beliefs[k].iter() {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// Dual-filter merging CSV: `t,mean_tv,sem_tv`.
pub fn stability_csv(stats: &DualFilterStats) -> String {
    let mut s = String::from("t,mean_tv,sem_tv\n");
    for (k, (m, e)) in stats.mean_tv.iter().zip(&stats.sem_tv).enumerate() {
        let _ = writeln!(s, "{},{},{}", k, fmt_f64(*m), fmt_f64(*e));
    }
    s
}

/// Q-table CSV: `state,action,value,visits`.
pub fn qtable_csv(q: &QTable) -> String {
    let mut s = String::from("state,action,value,visits\n");
    for (state, (row, visits)) in q.values.iter().zip(&q.visits).enumerate() {
        for (action, (v, n)) in row.iter().zip(visits).enumerate() {
            let _ = writeln!(s, "{},{},{},{}", state, action, fmt_f64(*v), n);
        }
    }
    s
}

/// Sidecar JSON describing what each Q-table state index denotes: the
/// representative belief for quantized tables (pass the quantizer's
/// representatives) or the decoded window tuple for window tables.
pub fn qtable_sidecar(q: &QTable, reps: Option<&[Belief]>) -> Result<String> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        kind: &'a StateKind,
        states: serde_json::Value,
    }
    let states = match &q.kind {
        StateKind::QuantizedBelief { n_reps, .. } => {
            let reps = reps.ok_or_else(|| Error::BadShape {
                what: "sidecar representatives".into(),
                got: "none".into(),
                expected: "the quantizer's representative list".into(),
            })?;
            if reps.len() != *n_reps {
                return Err(Error::LengthMismatch {
                    context: "sidecar representatives".into(),
                    left: reps.len(),
                    right: *n_reps,
                });
            }
            serde_json::to_value(reps).expect("beliefs serialize infallibly")
        }
        StateKind::Window { indexer } => {
            let windows: Vec<_> = (0..indexer.count() as usize)
                .map(|i| indexer.decode(i))
                .collect();
            serde_json::to_value(&windows).expect("windows serialize infallibly")
        }
    };
    Ok(to_json(&Sidecar {
        kind: &q.kind,
        states,
    }))
}

/// Vanishing-discount trace CSV: `beta,rho_estimate,h_span`.
pub fn beta_trace_csv(sol: &AcoeSolution) -> String {
    let mut s = String::from("beta,rho_estimate,h_span\n");
    for e in &sol.beta_trace {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_f64(e.beta),
            fmt_f64(e.rho_estimate),
            fmt_f64(e.h_span)
        );
    }
    s
}

/// Relative-value table CSV: per representative, `h`, the greedy action, and
/// the representative's coordinates.
pub fn h_table_csv(sol: &AcoeSolution, reps: &[Belief]) -> String {
    let n = reps.first().map_or(0, |b| b.len());
    let mut s = String::from("state,h,greedy_action");
    for i in 0..n {
        let _ = write!(s, ",z{i}");
    }
    s.push('\n');
    for (k, (h, rep)) in sol.h.iter().zip(reps).enumerate() {
        let _ = write!(s, "{},{},{}", k, fmt_f64(*h), sol.policy[k]);
        for v in rep.iter() {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// Window-loss CSV: `t,estimate` (sampled lower bound on the loss).
pub fn window_loss_csv(loss: &WindowLoss) -> String {
    let mut s = String::from("t,estimate\n");
    for (t, e) in loss.estimates.iter().enumerate() {
        let _ = writeln!(s, "{},{}", t, fmt_f64(*e));
    }
    s
}

/// Plain-text robustness summary, optionally with the a-priori bound.
pub fn robustness_report(gap: &RobustnessGap, bound: Option<(f64, usize)>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "robustness report");
    let _ = writeln!(
        s,
        "  mismatched-prior cost:  {}",
        fmt_f64(gap.j_mu_gamma_nu)
    );
    let _ = writeln!(s, "  optimal cost:           {}", fmt_f64(gap.j_star_mu));
    let _ = writeln!(s, "  gap:                    {}", fmt_f64(gap.gap));
    let _ = writeln!(s, "  stderr:                 {}", fmt_f64(gap.stderr));
    if let Some((value, argmin)) = bound {
        let _ = writeln!(s, "  a-priori bound:         {}", fmt_f64(value));
        let _ = writeln!(s, "  bound minimizer n:      {argmin}");
    }
    s
}
