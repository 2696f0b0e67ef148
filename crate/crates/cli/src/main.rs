//! `erpomdp` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 validation error,
//! 3 solver did not converge (policy still written), 4 resource guard.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use erpomdp::entropy::{build_pwlc, default_base_points, linear_cost_planes};
use erpomdp::estimation::{identity_residuals, InfoPolicy, TablePolicy};
use erpomdp::format::parse_base_points;
use erpomdp::harness::{build_gridworld, simulate_episodes, CriteriaReport, GridSpec, Horizon};
use erpomdp::par::with_threads;
use erpomdp::{solve, AlphaPolicy, Error, PomdpModel, SolverConfig};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "erpomdp", version, about = "Entropy-regularized POMDP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file.
    Validate {
        model: PathBuf,
        /// Print a JSON object instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Solve for an alpha-vector policy.
    Solve(SolveArgs),
    /// Monte Carlo evaluation of one or more policies.
    Simulate(SimulateArgs),
    /// Exact entropies and identity residuals by enumeration.
    Oracle(OracleArgs),
    /// Build a grid-world model from a grid spec.
    BuildGrid(BuildGridArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    /// Tangent-plane approximation of the entropy cost (any weights).
    Pwlc,
    /// Exact linear cost (requires beta == lambda).
    Linear,
}

#[derive(Args)]
struct SolveArgs {
    model: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Base points for pwlc mode (default: barycenter plus near-vertex points).
    #[arg(long)]
    base_points: Option<PathBuf>,
    #[arg(long, default_value_t = SolverConfig::default().belief_set_size)]
    belief_set_size: usize,
    #[arg(long, default_value_t = SolverConfig::default().expansion_rounds)]
    expansion_rounds: usize,
    #[arg(long, default_value_t = SolverConfig::default().bellman_residual_tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iterations)]
    max_iterations: usize,
    /// Do not add vertex beliefs to the belief set.
    #[arg(long)]
    no_vertices: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    /// `label=path`; repeat for several policies.
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// `fixed:T` or `geometric`.
    #[arg(long, default_value = "fixed:100")]
    horizon: Horizon,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Criteria report CSV (one row per policy and criterion).
    #[arg(long)]
    out: PathBuf,
    /// Per-episode long-format CSV.
    #[arg(long)]
    episodes_out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    model: PathBuf,
    /// JSON policy table over information states (default: uniform).
    #[arg(long)]
    policy_table: Option<PathBuf>,
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BuildGridArgs {
    spec: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(c)) = err.downcast_ref::<Exit>() {
        return *c;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::TooLarge { .. }) => 4,
        Some(Error::Io(_)) | None => {
            if err.downcast_ref::<serde_json::Error>().is_some() {
                2
            } else {
                1
            }
        }
        Some(_) => 2,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<PomdpModel> {
    let text = read(path)?;
    PomdpModel::from_json_str(&text).map_err(|e| anyhow::Error::new(e).context(format!("{}", path.display())))
}

fn load_policy(path: &Path) -> Result<AlphaPolicy> {
    AlphaPolicy::from_text(&read(path)?).map_err(|e| anyhow::Error::new(e).context(format!("{}", path.display())))
}

fn cmd_validate(model: &Path, as_json: bool) -> Result<()> {
    match load_model(model) {
        Ok(m) => {
            if as_json {
                println!(
                    "{}",
                    json!({
                        "valid": true,
                        "num_states": m.num_states(),
                        "num_actions": m.num_actions(),
                        "num_obs": m.num_obs(),
                        "sha256": m.fingerprint(),
                    })
                );
            } else {
                println!(
                    "valid: {} states, {} actions, {} observations, discount {}, beta {}, lambda {}",
                    m.num_states(),
                    m.num_actions(),
                    m.num_obs(),
                    m.discount(),
                    m.beta(),
                    m.lambda()
                );
            }
            Ok(())
        }
        Err(e) => {
            if as_json {
                println!("{}", json!({ "valid": false, "error": format!("{e:#}") }));
            }
            Err(e)
        }
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let config = SolverConfig {
        belief_set_size: a.belief_set_size,
        expansion_rounds: a.expansion_rounds,
        bellman_residual_tol: a.tol,
        max_iterations: a.max_iterations,
        seed: a.seed,
        include_vertices: !a.no_vertices,
    };
    config.validate()?;
    let mut manifest = RunManifest::new("solve", json!({ "mode": a.mode, "solver": config }), Some(a.seed));
    manifest.add_input(&a.model)?;

    let start = Instant::now();
    let (planes, cost_model, base_count) = match a.mode {
        Mode::Linear => (linear_cost_planes(&model)?, "linear".to_string(), None),
        Mode::Pwlc => {
            let base = match &a.base_points {
                Some(p) => {
                    manifest.add_input(p)?;
                    let pts = parse_base_points(&read(p)?)?;
                    if pts[0].len() != model.num_states() {
                        return Err(Error::DimensionMismatch {
                            what: "base points vs model states".into(),
                            expected: model.num_states(),
                            found: pts[0].len(),
                        }
                        .into());
                    }
                    pts
                }
                None => default_base_points(model.num_states())?,
            };
            let n = base.len();
            (build_pwlc(&model, &base)?.into_planes(), format!("pwlc:{n}"), Some(n))
        }
    };
    let planes_time = start.elapsed().as_secs_f64();
    let mut policy = with_threads(a.threads, || solve(&model, &planes, &config))?;
    let solve_time = start.elapsed().as_secs_f64();
    policy.meta.model_hash = model.fingerprint();
    policy.meta.cost_model = cost_model;

    fs::write(&a.out, policy.to_text()?).with_context(|| format!("writing {}", a.out.display()))?;
    if let serde_json::Value::Object(ref mut m) = manifest.config {
        m.insert("base_point_count".into(), json!(base_count));
        m.insert("iterations".into(), json!(policy.meta.iterations));
        m.insert("residual".into(), json!(policy.meta.residual));
        m.insert("converged".into(), json!(policy.meta.converged));
        m.insert("vector_count".into(), json!(policy.vectors().len()));
        m.insert("belief_count".into(), json!(policy.meta.belief_count));
    }
    manifest.outputs.push(a.out.display().to_string());
    manifest.timings.insert("cost_planes_seconds".into(), planes_time);
    manifest.timings.insert("solve_seconds".into(), solve_time);
    manifest.write_beside(&a.out)?;

    println!(
        "iterations {} residual {:.3e} vectors {} beliefs {} base_points {} solve_time {:.3}s",
        policy.meta.iterations,
        policy.meta.residual,
        policy.vectors().len(),
        policy.meta.belief_count,
        base_count.map_or("-".to_string(), |n| n.to_string()),
        solve_time
    );
    if !policy.meta.converged {
        eprintln!(
            "warning: residual {:.3e} above tolerance {:.3e}; policy written anyway",
            policy.meta.residual, a.tol
        );
        return Err(anyhow!(Exit(3)));
    }
    Ok(())
}

fn parse_policy_arg(s: &str) -> Result<(String, PathBuf)> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--policy expects label=path, got {s:?}"))?;
    if label.is_empty() {
        bail!("empty policy label in {s:?}");
    }
    Ok((label.to_string(), PathBuf::from(path)))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut manifest = RunManifest::new(
        "simulate",
        json!({ "episodes": a.episodes, "horizon": a.horizon.to_string(), "policies": a.policies }),
        Some(a.seed),
    );
    manifest.add_input(&a.model)?;

    let mut report = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    report.write_record(["policy", "criterion", "mean", "std_err", "episodes"])?;
    let mut episodes_csv = match &a.episodes_out {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
            w.write_record([
                "policy",
                "episode",
                "horizon",
                "goal_cost",
                "io_entropy",
                "smoother_entropy",
                "joint_entropy",
                "belief_entropy_sum",
                "map_error",
            ])?;
            Some(w)
        }
        None => None,
    };

    for spec in &a.policies {
        let (label, path) = parse_policy_arg(spec)?;
        let policy = load_policy(&path)?;
        manifest.add_input(&path)?;
        policy.check_model(&model)?;
        let start = Instant::now();
        let rows = with_threads(a.threads, || simulate_episodes(&model, &policy, a.episodes, a.horizon, a.seed))?;
        manifest.timings.insert(format!("simulate_{label}_seconds"), start.elapsed().as_secs_f64());
        let mut crit = CriteriaReport::from_episodes(&rows);
        let policy_manifest = RunManifest::path_for(&path);
        if policy_manifest.exists() {
            crit.solve_time_seconds = RunManifest::read(&policy_manifest)?.timings.get("solve_seconds").copied();
        }
        for (name, stat) in crit.rows() {
            report.write_record([
                label.clone(),
                name.to_string(),
                format!("{:.17e}", stat.mean),
                format!("{:.17e}", stat.std_err),
                crit.episodes.to_string(),
            ])?;
        }
        if let Some(t) = crit.solve_time_seconds {
            report.write_record([label.clone(), "solve_time_seconds".into(), format!("{t:.6}"), String::new(), String::new()])?;
        }
        if let Some(w) = episodes_csv.as_mut() {
            for r in &rows {
                w.write_record([
                    label.clone(),
                    r.episode.to_string(),
                    r.horizon.to_string(),
                    format!("{:.17e}", r.goal_cost),
                    format!("{:.17e}", r.io_entropy),
                    format!("{:.17e}", r.smoother_entropy),
                    format!("{:.17e}", r.joint_entropy),
                    format!("{:.17e}", r.belief_entropy_sum),
                    (r.map_error as u8).to_string(),
                ])?;
            }
        }
        println!(
            "{label}: goal_cost {:.3} io {:.3} smoother {:.3} joint {:.3} belief_sum {:.3} map_error {:.3}",
            crit.goal_cost.mean,
            crit.io_entropy.mean,
            crit.smoother_entropy.mean,
            crit.joint_entropy.mean,
            crit.belief_entropy_sum.mean,
            crit.map_error_prob.mean
        );
    }
    report.flush()?;
    manifest.outputs.push(a.out.display().to_string());
    if let (Some(w), Some(p)) = (episodes_csv.as_mut(), &a.episodes_out) {
        w.flush()?;
        manifest.outputs.push(p.display().to_string());
    }
    manifest.write_beside(&a.out)?;
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let table: Box<dyn InfoPolicy> = match &a.policy_table {
        Some(p) => {
            let t = TablePolicy::from_json_str(&read(p)?)?;
            if t.num_actions() != model.num_actions() {
                return Err(Error::DimensionMismatch {
                    what: "policy table actions".into(),
                    expected: model.num_actions(),
                    found: t.num_actions(),
                }
                .into());
            }
            Box::new(t)
        }
        None => Box::new(TablePolicy::uniform(model.num_actions())),
    };
    let (bf, _, r) = identity_residuals(&model, table.as_ref(), a.horizon)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&json!({ "entropies": bf, "residuals": r }))?);
    } else {
        let mut out = std::io::stdout().lock();
        writeln!(out, "smoother_entropy      {:.12}", bf.smoother)?;
        writeln!(out, "io_entropy            {:.12}", bf.io)?;
        writeln!(out, "joint_entropy         {:.12}", bf.joint)?;
        writeln!(out, "causal_obs_entropy    {:.12}", bf.causal_obs)?;
        writeln!(out, "causal_control_entropy {:.12}", bf.causal_control)?;
        writeln!(out, "initial_joint_entropy {:.12}", bf.initial_joint)?;
        writeln!(out, "residual io_causal_split        {:.3e}", r.io_causal_split)?;
        writeln!(out, "residual joint_linear_form      {:.3e}", r.joint_linear_form)?;
        writeln!(out, "residual smoother_belief_form   {:.3e}", r.smoother_belief_form)?;
        writeln!(out, "residual causal_obs_belief_form {:.3e}", r.causal_obs_belief_form)?;
    }
    Ok(())
}

fn cmd_build_grid(a: &BuildGridArgs) -> Result<()> {
    let spec = GridSpec::from_json_str(&read(&a.spec)?)?;
    let model = build_gridworld(&spec)?.with_weights(a.beta, a.lambda)?;
    fs::write(&a.out, model.to_json_string()? + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    let mut manifest = RunManifest::new("build-grid", json!({ "beta": a.beta, "lambda": a.lambda }), None);
    manifest.add_input(&a.spec)?;
    manifest.outputs.push(a.out.display().to_string());
    manifest.write_beside(&a.out)?;
    println!("wrote {} ({} states)", a.out.display(), model.num_states());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { model, json } => cmd_validate(&model, json),
        Command::Solve(a) => cmd_solve(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::BuildGrid(a) => cmd_build_grid(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
