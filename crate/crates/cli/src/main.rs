//! `agc` — run, verify, and compare distributed dispatch scenarios.
//!
//! Exit codes: 0 success (and all gated checks passed), 1 verification
//! failure, 2 configuration or I/O error.

use agc_core::metrics;
use agc_core::scenario::{Scenario, ScenarioRun};
use agc_core::trace::SimTrace;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Default output directory when `--out` is absent.
const OUT_DIR_ENV: &str = "AGC_OUT_DIR";

#[derive(Parser)]
#[command(name = "agc", version, about = "Ramp-rate-limited distributed AGC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOpts {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace every seed in the config with values derived from this one.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Override the termination tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and summary.
    Run {
        #[command(flatten)]
        config: ConfigOpts,
        /// Output directory (default: $AGC_OUT_DIR or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a switching schedule even if uniform connectivity fails.
        #[arg(long)]
        allow_uncertified_schedule: bool,
    },
    /// Re-check a recorded trace against its scenario contract.
    Verify {
        /// Trace CSV produced by `run`.
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigOpts,
        /// Report file (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the centralized optimum for a scenario.
    Oracle {
        #[command(flatten)]
        config: ConfigOpts,
        /// Output directory (default: $AGC_OUT_DIR or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several scenarios over one instance and tabulate them.
    Compare {
        /// Scenario configs sharing n, p_mis, and generator assignment.
        configs: Vec<PathBuf>,
        /// Residual fraction for the convergence-time column.
        #[arg(long, default_value_t = 0.01)]
        fraction: f64,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit gnuplot-ready data files (states, rates, residual) for a trace.
    Plot {
        /// Trace CSV produced by `run`.
        #[arg(long)]
        trace: PathBuf,
        /// Output directory (default: $AGC_OUT_DIR or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            out,
            allow_uncertified_schedule,
        } => cmd_run(config, out, allow_uncertified_schedule),
        Command::Verify { trace, config, out } => cmd_verify(trace, config, out),
        Command::Oracle { config, out } => cmd_oracle(config, out),
        Command::Compare {
            configs,
            fraction,
            out,
        } => cmd_compare(configs, fraction, out),
        Command::Plot { trace, out } => cmd_plot(trace, out),
    }
}

fn load_scenario(opts: &ConfigOpts) -> Result<Scenario> {
    let mut scenario = Scenario::load(&opts.config)
        .with_context(|| format!("loading {}", opts.config.display()))?;
    if let Some(seed) = opts.seed_override {
        scenario.apply_seed_override(seed);
    }
    if let Some(tol) = opts.tol {
        scenario.termination_tol = tol;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Print to stdout, tolerating a closed pipe (e.g. `agc ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn emitln(text: &str) {
    emit(text);
    emit("\n");
}

/// Write via a temp file in the target directory, then rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} into place", tmp.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct SummarySeeds {
    #[serde(skip_serializing_if = "Option::is_none")]
    generator_seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    topology_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay_seed: Option<u64>,
}

#[derive(Serialize)]
struct Summary {
    name: String,
    config_hash: String,
    protocol: String,
    n: usize,
    p_mis: f64,
    steps_requested: u64,
    iterations_run: u64,
    converged: bool,
    termination_tol: f64,
    final_cost: f64,
    final_residual: f64,
    final_grad_spread: f64,
    feasibility_max: f64,
    oracle_cost: f64,
    oracle_lambda: f64,
    /// Resolved generator class per node, in node order.
    types: Vec<String>,
    seeds: SummarySeeds,
}

fn summarize(scenario: &Scenario, run: &ScenarioRun) -> Summary {
    let trace = &run.trace;
    let last = trace.records.last().expect("trace has records");
    let feasibility_max = trace
        .records
        .iter()
        .map(|r| r.feas_residual)
        .fold(0.0f64, f64::max);
    let iterations_run = trace.records.len() as u64 - 1;
    let converged =
        scenario.termination_tol > 0.0 && last.grad_spread < scenario.termination_tol;
    let topology_seeds = match scenario.topology.segments.as_ref() {
        Some(segments) => segments.iter().filter_map(|s| s.seed).collect(),
        None => scenario.topology.seed.into_iter().collect(),
    };
    Summary {
        name: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        protocol: scenario.protocol.kind.clone(),
        n: scenario.n,
        p_mis: scenario.p_mis,
        steps_requested: scenario.steps,
        iterations_run,
        converged,
        termination_tol: scenario.termination_tol,
        final_cost: last.cost,
        final_residual: last.residual,
        final_grad_spread: last.grad_spread,
        feasibility_max,
        oracle_cost: run.oracle.cost_star,
        oracle_lambda: run.oracle.lambda_star,
        types: run
            .resolved
            .params
            .iter()
            .map(|p| p.tag.as_str().to_string())
            .collect(),
        seeds: SummarySeeds {
            generator_seed: scenario.generators.seed,
            topology_seeds,
            delay_seed: scenario.protocol.delay_seed,
        },
    }
}

fn cmd_run(
    opts: ConfigOpts,
    out: Option<PathBuf>,
    allow_uncertified_schedule: bool,
) -> Result<ExitCode> {
    let scenario = load_scenario(&opts)?;
    if scenario.requires_certification() {
        let resolved = scenario.resolve()?;
        if !resolved.schedule.certify_uniform_connectivity() {
            if allow_uncertified_schedule {
                eprintln!(
                    "warning: schedule is not uniformly connected over B = {}; running anyway",
                    resolved.schedule.b()
                );
            } else {
                bail!(
                    "schedule fails uniform-connectivity certification over B = {} \
                     (pass --allow-uncertified-schedule to run anyway)",
                    resolved.schedule.b()
                );
            }
        }
    }

    let run = scenario.execute()?;
    let dir = out_dir(out);
    let trace_path = dir.join(format!("{}.trace.csv", scenario.name));
    let summary_path = dir.join(format!("{}.summary.toml", scenario.name));

    let mut bytes = Vec::new();
    run.trace.write_csv(&mut bytes)?;
    write_atomic(&trace_path, &bytes)?;

    let summary = summarize(&scenario, &run);
    let summary_text = toml::to_string(&summary)?;
    write_atomic(&summary_path, summary_text.as_bytes())?;

    emitln(&format!("wrote {}", trace_path.display()));
    emitln(&format!("wrote {}", summary_path.display()));
    emitln(&format!(
        "iterations = {}, converged = {}, final_cost = {:.6}, feasibility_max = {:.3e}",
        summary.iterations_run, summary.converged, summary.final_cost, summary.feasibility_max
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(trace: PathBuf, opts: ConfigOpts, out: Option<PathBuf>) -> Result<ExitCode> {
    let scenario = load_scenario(&opts)?;
    let bytes = fs::read(&trace).with_context(|| format!("reading {}", trace.display()))?;
    let trace = SimTrace::from_csv_bytes(&bytes).context("parsing trace")?;
    let report = metrics::verify(&trace, &scenario, None)?;
    let text = report.render();
    emit(&text);
    if let Some(path) = out {
        write_atomic(&path, text.as_bytes())?;
        emitln(&format!("wrote {}", path.display()));
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_oracle(opts: ConfigOpts, out: Option<PathBuf>) -> Result<ExitCode> {
    let scenario = load_scenario(&opts)?;
    let resolved = scenario.resolve()?;
    let solution =
        agc_core::solve_centralized(&resolved.params, &resolved.pen, scenario.p_mis, 1e-10)?;

    #[derive(Serialize)]
    struct OracleDoc {
        name: String,
        config_hash: String,
        lambda_star: f64,
        cost_star: f64,
        iterations: u32,
        x_star: Vec<f64>,
    }
    let doc = OracleDoc {
        name: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        lambda_star: solution.lambda_star,
        cost_star: solution.cost_star,
        iterations: solution.iterations,
        x_star: solution.x_star.clone(),
    };
    let text = toml::to_string(&doc)?;
    let path = out_dir(out).join(format!("{}.oracle.toml", scenario.name));
    write_atomic(&path, text.as_bytes())?;
    emit(&text);
    emitln(&format!("wrote {}", path.display()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(configs: Vec<PathBuf>, fraction: f64, out: Option<PathBuf>) -> Result<ExitCode> {
    if configs.len() < 2 {
        bail!("compare needs at least two configs");
    }
    let mut rows = Vec::new();
    let mut shared: Option<(usize, f64, Vec<String>)> = None;
    for path in &configs {
        let scenario = Scenario::load(path)?;
        let run = scenario.execute()?;
        let tags: Vec<String> = run
            .resolved
            .params
            .iter()
            .map(|p| p.tag.as_str().to_string())
            .collect();
        match &shared {
            None => shared = Some((scenario.n, scenario.p_mis, tags)),
            Some((n, p_mis, types)) => {
                if scenario.n != *n || scenario.p_mis != *p_mis || &tags != types {
                    bail!(
                        "{} is not comparable: instances must share n, p_mis, and \
                         generator assignment",
                        path.display()
                    );
                }
            }
        }
        let report = metrics::verify(&run.trace, &scenario, None)?;
        let to_fraction = metrics::iterations_to_residual(&run.trace, fraction)?;
        let final_residual = run.trace.records.last().expect("records").residual;
        rows.push((
            scenario.name.clone(),
            scenario.protocol.kind.clone(),
            to_fraction,
            report.rrl_violation_count,
            final_residual,
        ));
    }

    let iters_col = format!("iters_to_{fraction}");
    let mut table = String::new();
    table.push_str(&format!(
        "{:<24} {:<12} {:>16} {:>16} {:>16}\n",
        "scenario", "protocol", iters_col, "rrl_violations", "final_residual"
    ));
    for (name, kind, to_frac, violations, residual) in &rows {
        let reached = to_frac.map_or_else(|| "none".to_string(), |k| k.to_string());
        table.push_str(&format!(
            "{name:<24} {kind:<12} {reached:>16} {violations:>16} {residual:>16.6e}\n"
        ));
    }
    emit(&table);
    if let Some(path) = out {
        write_atomic(&path, table.as_bytes())?;
        emitln(&format!("wrote {}", path.display()));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(trace: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let bytes = fs::read(&trace).with_context(|| format!("reading {}", trace.display()))?;
    let trace = SimTrace::from_csv_bytes(&bytes).context("parsing trace")?;
    let dir = out_dir(out);
    let name = &trace.meta.name;
    let n = trace.meta.n;

    let mut states = String::from("# k");
    for i in 1..=n {
        states.push_str(&format!(" x_{i}"));
    }
    states.push('\n');
    let mut rates = String::from("# k");
    for i in 1..=n {
        rates.push_str(&format!(" dx_{i}"));
    }
    rates.push('\n');
    let mut residual = String::from("# k cost residual feas_residual grad_spread\n");

    for r in &trace.records {
        states.push_str(&r.k.to_string());
        for v in &r.x {
            states.push_str(&format!(" {v:.16e}"));
        }
        states.push('\n');
        rates.push_str(&r.k.to_string());
        for v in &r.dx {
            rates.push_str(&format!(" {v:.16e}"));
        }
        rates.push('\n');
        residual.push_str(&format!(
            "{} {:.16e} {:.16e} {:.16e} {:.16e}\n",
            r.k, r.cost, r.residual, r.feas_residual, r.grad_spread
        ));
    }

    for (suffix, text) in [
        ("states", &states),
        ("rates", &rates),
        ("residual", &residual),
    ] {
        let path = dir.join(format!("{name}.{suffix}.dat"));
        write_atomic(&path, text.as_bytes())?;
        emitln(&format!("wrote {}", path.display()));
    }
    Ok(ExitCode::SUCCESS)
}
