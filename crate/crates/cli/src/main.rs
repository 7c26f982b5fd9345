//! `quadtune` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 an episode
//! failed (diverged or hit a numerical error), 3 an acceptance check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadtune::control::{Axis, Mode};
use quadtune::dynamics::QuadParams;
use quadtune::experiments::{compare_table, emit_plots, load_report, run_scenarios, RunSummary};
use quadtune::gradcheck;
use quadtune::scenario::{RunMode, ScenarioConfig};
use quadtune::zn::{zn_tune, ZnConfig};
use quadtune::Error;

#[derive(Parser)]
#[command(
    name = "quadtune",
    version,
    about = "Self-tuning PID experiments on a simulated quadrotor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios, writing one CSV per mode and a summary JSON per scenario.
    Run(RunArgs),
    /// Side-by-side attitude RMSE table from summary files.
    Compare(CompareArgs),
    /// gnuplot scripts and data files from step logs.
    Plot(PlotArgs),
    /// Finite-difference checks of the network and tuner gradients.
    Gradcheck(GradcheckArgs),
    /// Ziegler-Nichols static gains for the configured vehicle.
    ZnTune(ZnArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; repeat for several.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Overrides the seed of every scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the mode of every scenario.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RunMode>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Episodes run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Summary JSON files written by `run`.
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 unless every ratio (first / last) reaches this value.
    #[arg(long)]
    min_ratio: Option<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Step-log CSV files.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed to check; repeat for several. Defaults to 0..5.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ZnArgs {
    /// Scenario whose `[quad]` parameters are used; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long)]
    rate_bandwidth: Option<f64>,
    #[arg(long)]
    alt_rate_bandwidth: Option<f64>,
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Config(String),
    Episode(String),
    Acceptance(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Episode(_) => 2,
            Failure::Acceptance(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Episode(m) | Failure::Acceptance(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteInput(_)
            | Error::Saturation { .. } => Failure::Episode(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn fmt_rmse(s: &RunSummary) -> String {
    Axis::ALL
        .iter()
        .map(|&a| {
            let unit = if a.is_attitude() { "deg" } else { "m" };
            format!("{} {:.4} {unit}", a.name(), s.rmse(a).unwrap_or(f64::NAN))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfgs = Vec::with_capacity(args.configs.len());
    for path in &args.configs {
        let mut c = ScenarioConfig::load(path)?;
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
        if let Some(mode) = args.mode {
            c.mode = mode;
        }
        cfgs.push(c);
    }
    // Scenarios with different modes are grouped so each group shares a mode list.
    let mut failed = Vec::new();
    for mode in [RunMode::Baseline, RunMode::Adaptive, RunMode::Both] {
        let group: Vec<ScenarioConfig> = cfgs.iter().filter(|c| c.mode == mode).cloned().collect();
        if group.is_empty() {
            continue;
        }
        for report in run_scenarios(&group, &mode.modes(), &args.out, args.jobs)? {
            for s in &report.runs {
                match &s.failure {
                    None => println!(
                        "{} {}: {} ({:.2} s)",
                        s.scenario,
                        s.mode.name(),
                        fmt_rmse(s),
                        s.wall_time_s
                    ),
                    Some(f) => {
                        println!(
                            "{} {}: FAILED after {} of {} steps: {f}",
                            s.scenario,
                            s.mode.name(),
                            s.completed_steps,
                            s.steps
                        );
                        failed.push(format!("{} {}", s.scenario, s.mode.name()));
                    }
                }
            }
            if report.runs.len() > 1 && !report.any_failed() {
                print!("{}", compare_table(&report.runs)?.to_text());
            }
        }
    }
    println!("output written to {}", args.out.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Episode(format!(
            "failed episodes: {}",
            failed.join(", ")
        )))
    }
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for p in &args.summaries {
        runs.extend(load_report(p)?.runs);
    }
    // Baseline first so the ratio reads baseline / adaptive.
    runs.sort_by_key(|r| match r.mode {
        Mode::Baseline => 0,
        Mode::Adaptive => 1,
    });
    let table = compare_table(&runs)?;
    print!("{}", table.to_text());
    if let Some(out) = &args.out {
        std::fs::write(out, table.to_csv()).map_err(Error::from)?;
    }
    if let Some(min) = args.min_ratio {
        let short: Vec<String> = table
            .rows
            .iter()
            .filter(|r| r.ratio.is_nan() || r.ratio < min)
            .map(|r| format!("{} {:.3}", r.axis.name(), r.ratio))
            .collect();
        if !short.is_empty() {
            return Err(Failure::Acceptance(format!(
                "ratio below {min}: {}",
                short.join(", ")
            )));
        }
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), Failure> {
    let scripts = emit_plots(&args.logs, &args.out)?;
    for s in &scripts {
        println!("{}", s.display());
    }
    println!("run each script with gnuplot from {}", args.out.display());
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let seeds = if args.seeds.is_empty() {
        vec![0, 1, 2, 3, 4]
    } else {
        args.seeds
    };
    let results = gradcheck::run_all(&seeds)?;
    let mut bad = 0;
    for r in &results {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        println!(
            "{:<22} seed {:<4} {:>5} params  max rel err {:.3e}  {verdict}",
            r.name, r.seed, r.params, r.max_rel_err
        );
        bad += usize::from(!r.passed);
    }
    if bad > 0 {
        return Err(Failure::Acceptance(format!(
            "{bad} of {} checks above relative error {:e}",
            results.len(),
            gradcheck::REL_TOL
        )));
    }
    Ok(())
}

fn zn(args: ZnArgs) -> Result<(), Failure> {
    let params = match &args.config {
        Some(p) => ScenarioConfig::load(p)?.quad,
        None => QuadParams::default(),
    };
    let mut cfg = ZnConfig::default();
    if let Some(v) = args.delay {
        cfg.delay = v;
    }
    if let Some(v) = args.rate_bandwidth {
        cfg.rate_bandwidth = v;
    }
    if let Some(v) = args.alt_rate_bandwidth {
        cfg.alt_rate_bandwidth = v;
    }
    for axis in Axis::ALL {
        let r = zn_tune(axis, &params, &cfg)?;
        println!(
            "# Ku = {:.6}, Tu = {:.6} s, rate damping {:.6}",
            r.ultimate_gain, r.ultimate_period, r.rate_gain
        );
        println!("[controller.{}]", axis.name());
        println!("kp = {:.4}", r.gains.kp);
        println!("ki = {:.4}", r.gains.ki);
        println!("kd = {:.4}", r.gains.kd);
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Plot(a) => plot(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ZnTune(a) => zn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
