//! Command-line front end: loads a model, dispatches one analysis pipeline,
//! and writes its reports and CSV tables under an output directory.
//!
//! Exit status: 0 on success, 1 on any validation or input error, 2 when an
//! iterative solve fails to converge within its budget.

use std::collections::BTreeMap;
use std::path::PathBuf;

use acpomdp::io::{
    self, beta_trace_csv, fmt_f64, h_table_csv, qtable_csv, qtable_sidecar,
    render_assumption_report, robustness_report, save_text, stability_csv, to_json, trajectory_csv,
    window_loss_csv,
};
use acpomdp::{
    assumption_report, average_cost_exact, build_quantized_mdp, builtin, discretize,
    dual_filter_run, greedy_policy, q_factors, q_learning, quantize, robustness_bound,
    robustness_gap, value_iteration, vanishing_discount, window_loss, window_mdp, ActionSource,
    Belief, BuiltinModel, DualFilterConfig, Error, Policy, QlearnSpace, Result, RobustnessMode,
    ValidatedModel, Weighting, WindowLossConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable holding the default output directory.
const OUT_ENV: &str = "ACPOMDP_OUT";

/// Value-iteration sweep budget for the CLI pipelines.
const MAX_VI_ITERATIONS: usize = 100_000;

#[derive(Parser)]
#[command(
    name = "acpomdp",
    version,
    about = "Solver and verification toolkit for average-cost control of \
             partially observed Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the model's contraction and regularity constants
    Check(CheckArgs),
    /// Solve the average-cost problem on a quantized belief lattice
    Solve(SolveArgs),
    /// Run tabular Q-learning and compare it against value iteration
    Qlearn(QlearnArgs),
    /// Sample one controlled trajectory with its filter path
    Simulate(SimulateArgs),
    /// Measure the cost of starting the controller from a wrong prior
    Robustness(RobustnessArgs),
    /// Track how fast two differently initialized filters merge
    Stability(StabilityArgs),
    /// Solve the finite-window surrogate and estimate its approximation loss
    Window(WindowArgs),
}

/// Model selection shared by every subcommand.
///
/// Continuous built-ins are grounded on a uniform grid before analysis; the
/// reserved parameter `grid` (default 20) selects the cell count, e.g.
/// `--builtin ex2 --param n_actions=7 --param grid=40`.
#[derive(Args)]
struct ModelArgs {
    /// Model file (JSON; see the README for the schema)
    #[arg(long, value_name = "PATH", conflicts_with_all = ["builtin", "param"])]
    model: Option<PathBuf>,
    /// Built-in model name: ex1, ex2, or ex3
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,
    /// Built-in parameter as key=value (repeatable)
    #[arg(long = "param", value_name = "K=V")]
    param: Vec<String>,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (default: $ACPOMDP_OUT, else the working directory)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// What to print on stdout; files are always written
    #[arg(long, value_enum, default_value_t = Format::Report)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    /// Human-readable summary
    Report,
    /// The pipeline's primary machine-readable table
    Csv,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also report the value Lipschitz constant at this discount level
    #[arg(long)]
    beta: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Belief-lattice resolution (points per simplex axis)
    #[arg(long, value_name = "M", default_value_t = 20)]
    resolution: usize,
    /// Increasing discount levels approaching 1, comma-separated
    #[arg(long, value_name = "B1,B2,..", default_value = "0.9,0.99,0.999")]
    beta_schedule: String,
    /// Value-iteration accuracy per discount level
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct QlearnArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Discount level
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    /// Belief-lattice resolution for the quantized variant
    #[arg(long, value_name = "M", default_value_t = 10)]
    resolution: usize,
    /// Use the finite-window variant with this window length instead
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    /// Learning updates to perform
    #[arg(long, default_value_t = 100_000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Accuracy of the reference value-iteration solve
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Time points in the trajectory
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply this fixed action throughout (default: uniform random actions)
    #[arg(long, value_name = "U")]
    action: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Belief-lattice resolution for the reference solve
    #[arg(long, value_name = "M", default_value_t = 20)]
    resolution: usize,
    /// Evaluate the discounted criterion at this level instead of the
    /// average-cost criterion
    #[arg(long)]
    beta: Option<f64>,
    /// Discount levels for the average-cost solve, comma-separated
    #[arg(long, value_name = "B1,B2,..", default_value = "0.9,0.99,0.999")]
    beta_schedule: String,
    /// Steps per simulated run
    #[arg(long, default_value_t = 100_000)]
    horizon: usize,
    /// Independent runs averaged into the estimate
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// True initial distribution, comma-separated (default uniform)
    #[arg(long, value_name = "P0,P1,..")]
    mu: Option<String>,
    /// Controller's assumed initial distribution (default uniform)
    #[arg(long, value_name = "P0,P1,..")]
    nu: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Time points tracked per run
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    /// Independent runs averaged per time point
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// True initial distribution, comma-separated (default uniform)
    #[arg(long, value_name = "P0,P1,..")]
    mu: Option<String>,
    /// Mismatched filter initialization (default uniform)
    #[arg(long, value_name = "P0,P1,..")]
    nu: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct WindowArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Window length (past actions kept; observations kept is one more)
    #[arg(long, value_name = "N", default_value_t = 1)]
    window: usize,
    /// Discount level for the surrogate solve
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    /// Accuracy of the surrogate value iteration
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Largest window start time in the loss estimate
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Simulated runs per sampled policy in the loss estimate
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are successes, not validation errors
            if e.use_stderr() {
                e.print().expect("stderr is writable");
                std::process::exit(1);
            }
            e.exit();
        }
    };
    let status = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NotConverged { .. } => 2,
                _ => 1,
            }
        }
    };
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    std::process::exit(status);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Check(a) => check(a),
        Command::Solve(a) => solve(a),
        Command::Qlearn(a) => qlearn(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Robustness(a) => robustness(a),
        Command::Stability(a) => stability(a),
        Command::Window(a) => window(a),
    }
}

// ---- shared plumbing -------------------------------------------------------

fn bad_flag(flag: &str, got: &str, expected: &str) -> Error {
    Error::BadShape {
        what: flag.into(),
        got: got.into(),
        expected: expected.into(),
    }
}

fn load_model(args: &ModelArgs) -> Result<ValidatedModel> {
    match (&args.model, &args.builtin) {
        (Some(path), None) => io::load_model(path),
        (None, Some(name)) => {
            let mut params = BTreeMap::new();
            for raw in &args.param {
                let (key, value) = raw
                    .split_once('=')
                    .ok_or_else(|| bad_flag("--param", raw, "key=value"))?;
                let value: f64 = value
                    .parse()
                    .map_err(|_| bad_flag("--param", raw, "a numeric value"))?;
                params.insert(key.to_string(), value);
            }
            let grid = match params.remove("grid") {
                None => 20,
                Some(g) if g.fract() == 0.0 && g >= 2.0 && g <= 100_000.0 => g as usize,
                Some(g) => {
                    return Err(Error::ParamOutOfRange {
                        name: "grid".into(),
                        value: g,
                        admissible: "integer in [2, 100000]".into(),
                    })
                }
            };
            match builtin(name, &params)? {
                BuiltinModel::Finite(m) => Ok(m),
                BuiltinModel::Continuous(spec) => discretize(&spec, grid),
            }
        }
        _ => Err(bad_flag(
            "model selection",
            "neither flag",
            "exactly one of --model or --builtin",
        )),
    }
}

fn parse_schedule(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad_flag("--beta-schedule", raw, "comma-separated numbers"))
        })
        .collect()
}

fn parse_prior(raw: &Option<String>, flag: &str, n: usize) -> Result<Belief> {
    match raw {
        None => Ok(Belief::uniform(n)),
        Some(raw) => {
            let weights = raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| bad_flag(flag, raw, "comma-separated weights"))
                })
                .collect::<Result<Vec<f64>>>()?;
            if weights.len() != n {
                return Err(Error::LengthMismatch {
                    context: flag.into(),
                    left: weights.len(),
                    right: n,
                });
            }
            Belief::new(weights)
        }
    }
}

fn out_dir(args: &OutArgs) -> Result<PathBuf> {
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(dir)
}

/// Writes every artifact, then prints either the report or the primary CSV.
fn emit(args: &OutArgs, files: &[(&str, String)], report: &str, csv: Option<&str>) -> Result<()> {
    let dir = out_dir(args)?;
    for (name, text) in files {
        save_text(&dir.join(name), text)?;
    }
    match args.format {
        Format::Report => print!("{report}"),
        Format::Csv => print!("{}", csv.unwrap_or(report)),
    }
    Ok(())
}

// ---- subcommands -----------------------------------------------------------

fn check(args: CheckArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let report = assumption_report(&model)?;
    let text = render_assumption_report(&report, args.beta);
    let json = to_json(&report);
    emit(
        &args.out,
        &[("report.txt", text.clone()), ("report.json", json.clone())],
        &text,
        Some(&json),
    )
}

fn solve(args: SolveArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let schedule = parse_schedule(&args.beta_schedule)?;
    let quantizer = quantize(model.n_states, args.resolution, model.metric.clone())?;
    let reps = quantizer.reps().to_vec();
    let sol = vanishing_discount(&model, quantizer, &schedule, args.tol)?;

    let mut report = String::from("average-cost solution\n");
    report.push_str(&format!("  lattice states:    {}\n", reps.len()));
    report.push_str(&format!("  anchor state:      {}\n", sol.anchor));
    report.push_str(&format!("  optimal rate rho*: {}\n", fmt_f64(sol.rho_star)));
    report.push_str(&format!("  equation residual: {}\n", fmt_f64(sol.residual)));
    for e in &sol.beta_trace {
        report.push_str(&format!(
            "  beta {}: rho estimate {}  relative-value span {}\n",
            e.beta,
            fmt_f64(e.rho_estimate),
            fmt_f64(e.h_span)
        ));
    }
    for w in &sol.warnings {
        report.push_str(&format!("  warning: {w}\n"));
    }

    let trace = beta_trace_csv(&sol);
    emit(
        &args.out,
        &[
            ("beta_trace.csv", trace.clone()),
            ("h_table.csv", h_table_csv(&sol, &reps)),
            ("solution.json", to_json(&sol)),
            ("solve_report.txt", report.clone()),
        ],
        &report,
        Some(&trace),
    )
}

fn qlearn(args: QlearnArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let exploration = vec![1.0 / model.n_actions as f64; model.n_actions];
    let anchor = Belief::uniform(model.n_states);

    // learn, then solve the matching finite surrogate as the reference
    let (table, ref_mdp, sidecar, space_line) = match args.window {
        None => {
            let quantizer = quantize(model.n_states, args.resolution, model.metric.clone())?;
            let table = q_learning(
                &model,
                QlearnSpace::Quantized(&quantizer),
                args.beta,
                args.steps,
                args.seed,
                &exploration,
            )?;
            let sidecar = qtable_sidecar(&table, Some(quantizer.reps()))?;
            let line = format!(
                "quantized belief lattice, resolution {} ({} states)",
                args.resolution,
                quantizer.len()
            );
            let qmdp = build_quantized_mdp(&model, quantizer, Weighting::Dirac)?;
            (table, qmdp.mdp, sidecar, line)
        }
        Some(n) => {
            let table = q_learning(
                &model,
                QlearnSpace::Window { n, anchor: &anchor },
                args.beta,
                args.steps,
                args.seed,
                &exploration,
            )?;
            let sidecar = qtable_sidecar(&table, None)?;
            let wm = window_mdp(&model, n, &anchor)?;
            let line = format!(
                "observation window of length {} ({} states, {} reachable)",
                n,
                wm.mdp.n_states,
                wm.reachable.iter().filter(|&&r| r).count()
            );
            (table, wm.mdp, sidecar, line)
        }
    };
    let vi = value_iteration(&ref_mdp, args.beta, args.tol, MAX_VI_ITERATIONS)?;
    let target = q_factors(&ref_mdp, &vi.values, args.beta);

    let mut max_gap = 0.0f64;
    let mut visited = 0usize;
    let mut total = 0usize;
    for (s, (row, visits)) in table.values.iter().zip(&table.visits).enumerate() {
        for (u, (&v, &n)) in row.iter().zip(visits).enumerate() {
            total += 1;
            if n > 0 {
                visited += 1;
                max_gap = max_gap.max((v - target[s][u]).abs());
            }
        }
    }
    let greedy = greedy_policy(&table);
    let learned_avg = average_cost_exact(&ref_mdp, &greedy.actions)?;
    let reference_avg = average_cost_exact(&ref_mdp, &vi.policy)?;

    let mut report = String::from("q-learning report\n");
    report.push_str(&format!("  state space:          {space_line}\n"));
    report.push_str(&format!(
        "  beta {}  steps {}  seed {}\n",
        args.beta, args.steps, args.seed
    ));
    report.push_str(&format!("  visited pairs:        {visited} of {total}\n"));
    report.push_str(&format!(
        "  max |Q - Q_VI| (visited): {}\n",
        fmt_f64(max_gap)
    ));
    report.push_str(&format!(
        "  learned greedy average cost:   {}\n",
        fmt_f64(learned_avg)
    ));
    report.push_str(&format!(
        "  reference greedy average cost: {}\n",
        fmt_f64(reference_avg)
    ));
    if greedy.unvisited.iter().any(|&f| f) {
        let n_unvisited = greedy.unvisited.iter().filter(|&&f| f).count();
        report.push_str(&format!(
            "  warning: {n_unvisited} states never visited; their greedy action \
             defaults to 0\n"
        ));
    }

    let csv = qtable_csv(&table);
    emit(
        &args.out,
        &[
            ("qtable.csv", csv.clone()),
            ("qtable_states.json", sidecar),
            ("qlearn_report.txt", report.clone()),
        ],
        &report,
        Some(&csv),
    )
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let policy = match args.action {
        Some(u) => Policy::Fixed(u),
        None => Policy::IidUniform,
    };
    let prior = Belief::uniform(model.n_states);
    let traj = acpomdp::simulate(&model, &prior, &policy, args.horizon, args.seed)?;

    let mut report = String::from("simulation report\n");
    report.push_str(&format!(
        "  horizon {}  seed {}  policy: {}\n",
        args.horizon,
        args.seed,
        match args.action {
            Some(u) => format!("fixed action {u}"),
            None => "uniform random actions".into(),
        }
    ));
    report.push_str(&format!(
        "  realized average cost: {}\n",
        fmt_f64(traj.average_cost())
    ));

    let csv = trajectory_csv(&traj);
    emit(
        &args.out,
        &[
            ("trajectory.csv", csv.clone()),
            ("simulate_report.txt", report.clone()),
        ],
        &report,
        Some(&csv),
    )
}

fn robustness(args: RobustnessArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mu = parse_prior(&args.mu, "--mu", model.n_states)?;
    let nu = parse_prior(&args.nu, "--nu", model.n_states)?;
    let quantizer = quantize(model.n_states, args.resolution, model.metric.clone())?;
    let mode = match args.beta {
        Some(beta) => RobustnessMode::Discounted { beta },
        None => RobustnessMode::Average {
            beta_schedule: parse_schedule(&args.beta_schedule)?,
        },
    };
    let gap = robustness_gap(
        &model,
        &mu,
        &nu,
        quantizer,
        &mode,
        args.horizon,
        args.runs,
        args.seed,
    )?;

    // theoretical accompaniment; omitted when the model leaves the regime
    let bound = assumption_report(&model).ok().and_then(|r| {
        let beta = match &mode {
            RobustnessMode::Discounted { beta } => *beta,
            RobustnessMode::Average { beta_schedule } => *beta_schedule.last()?,
        };
        robustness_bound(
            r.cost_sup,
            beta,
            r.cost_lipschitz,
            r.cost_contraction,
            r.diameter,
            r.filter_contraction,
        )
        .ok()
    });

    let report = robustness_report(&gap, bound);
    let json = to_json(&gap);
    emit(
        &args.out,
        &[
            ("robustness.txt", report.clone()),
            ("robustness.json", json.clone()),
        ],
        &report,
        Some(&json),
    )
}

fn stability(args: StabilityArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mu = parse_prior(&args.mu, "--mu", model.n_states)?;
    let nu = parse_prior(&args.nu, "--nu", model.n_states)?;
    let cfg = DualFilterConfig {
        horizon: args.horizon,
        n_runs: args.runs,
        seed: args.seed,
        action_source: ActionSource::MismatchedFilter,
    };
    let stats = dual_filter_run(&model, &mu, &nu, &Policy::IidUniform, &cfg)?;

    // least-squares geometric decay rate of the positive mean-gap entries
    let points: Vec<(f64, f64)> = stats
        .mean_tv
        .iter()
        .enumerate()
        .filter(|(_, &tv)| tv > 0.0)
        .map(|(t, &tv)| (t as f64, tv.ln()))
        .collect();
    let fitted_rate = if points.len() >= 2 {
        let n = points.len() as f64;
        let mean_t = points.iter().map(|(t, _)| t).sum::<f64>() / n;
        let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
        let cov: f64 = points
            .iter()
            .map(|(t, y)| (t - mean_t) * (y - mean_y))
            .sum();
        let var: f64 = points.iter().map(|(t, _)| (t - mean_t).powi(2)).sum();
        Some((cov / var).exp())
    } else {
        None
    };

    let mut report = String::from("filter stability report\n");
    report.push_str(&format!(
        "  horizon {}  runs {}  seed {}\n",
        args.horizon, args.runs, args.seed
    ));
    match fitted_rate {
        Some(rate) => report.push_str(&format!(
            "  fitted geometric decay rate per step: {}\n",
            fmt_f64(rate)
        )),
        None => report.push_str("  fitted decay rate unavailable (gap hit zero)\n"),
    }
    if let Ok(r) = assumption_report(&model) {
        report.push_str(&format!(
            "  certified rate alpha_bar: {}{}\n",
            fmt_f64(r.filter_contraction),
            if r.filter_contraction < 1.0 {
                ""
            } else {
                "  (not stable)"
            }
        ));
    }

    let csv = stability_csv(&stats);
    emit(
        &args.out,
        &[
            ("stability.csv", csv.clone()),
            ("stability_report.txt", report.clone()),
        ],
        &report,
        Some(&csv),
    )
}

fn window(args: WindowArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let anchor = Belief::uniform(model.n_states);
    let wm = window_mdp(&model, args.window, &anchor)?;
    let vi = value_iteration(&wm.mdp, args.beta, args.tol, MAX_VI_ITERATIONS)?;
    let loss = window_loss(
        &model,
        args.window,
        &anchor,
        &WindowLossConfig {
            t_max: args.horizon,
            n_policies: 8,
            n_runs: args.runs,
            seed: args.seed,
        },
        &[],
    )?;

    let reachable = wm.reachable.iter().filter(|&&r| r).count();
    let mut report = String::from("window surrogate report\n");
    report.push_str(&format!(
        "  window length {}  states {}  reachable {}\n",
        args.window, wm.mdp.n_states, reachable
    ));
    report.push_str(&format!(
        "  value iteration: residual {} after {} sweeps at beta {}\n",
        fmt_f64(vi.residual),
        vi.iterations,
        args.beta
    ));
    if let (Some(first), Some(last)) = (loss.estimates.first(), loss.estimates.last()) {
        report.push_str(&format!(
            "  sampled approximation loss: {} at t = 0, {} at t = {}\n",
            fmt_f64(*first),
            fmt_f64(*last),
            loss.estimates.len() - 1
        ));
    }
    report.push_str(&format!(
        "  policies sampled: {} (sampled maximum, so the loss is a lower bound)\n",
        loss.n_policies
    ));

    let csv = window_loss_csv(&loss);
    emit(
        &args.out,
        &[
            ("window_solution.json", to_json(&vi)),
            ("window_loss.csv", csv.clone()),
            ("window_report.txt", report.clone()),
        ],
        &report,
        Some(&csv),
    )
}
