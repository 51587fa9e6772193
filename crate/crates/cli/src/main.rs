//! `issf`: runs the pendulum benchmark and the verification suites.
//!
//! Exit codes: 0 pass, 1 configuration or runtime error, 2 safety violation
//! or falsified property.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use issf_core::gain_algebra::{check_small_gain, default_small_gain_grid};
use issf_core::pendulum::{run_scenario, subsystem_gains};
use issf_core::suites::run_suite;
use issf_core::ScenarioConfig;

#[derive(Parser)]
#[command(name = "issf", version, about = "ISSf barrier benchmark and verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (TOML); defaults to the safe-init scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark scenario and write trajectory.csv and report.txt.
    Simulate(Common),
    /// Print the small-gain table for the configured gains.
    CheckSmallgain(Common),
    /// Run a randomized suite: margin-form, comparison, invariance, weak-ineq or qp.
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the comparison-lemma randomized suite.
    CompareLemma(Common),
}

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

fn load(common: &Common) -> Result<ScenarioConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path).map_err(|e| e.to_string())?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    if let Some(t_end) = common.t_end {
        cfg.t_end = t_end;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn simulate(common: &Common) -> Result<u8, String> {
    let cfg = load(common)?;
    let result = run_scenario(&cfg).map_err(|e| e.to_string())?;
    fs::create_dir_all(&common.out).map_err(|e| format!("cannot create {}: {e}", common.out.display()))?;
    write(&common.out, "trajectory.csv", &result.to_csv())?;
    let report = result.report();
    write(&common.out, "report.txt", &report)?;
    print!("{report}");
    Ok(if result.all_safe() { 0 } else { EXIT_VIOLATION })
}

fn check_smallgain(common: &Common) -> Result<u8, String> {
    let cfg = load(common)?;
    let [g1, g2] = subsystem_gains(&cfg).map_err(|e| e.to_string())?;
    let report = check_small_gain(&g1, &g2, &default_small_gain_grid());
    println!("{report}");
    Ok(if report.pass { 0 } else { EXIT_ERROR })
}

fn verify(suite: &str, common: &Common) -> Result<u8, String> {
    let cfg = load(common)?;
    let outcome = run_suite(suite, cfg.seed).map_err(|e| e.to_string())?;
    println!("{outcome}");
    Ok(if outcome.passed() { 0 } else { EXIT_VIOLATION })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::CheckSmallgain(c) => check_smallgain(c),
        Command::Verify { suite, common } => verify(suite, common),
        Command::CompareLemma(c) => verify("comparison", c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
