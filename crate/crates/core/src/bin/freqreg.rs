use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use freqreg::error::{Error, Result};
use freqreg::fan::{fit_fan, load_sweep};
use freqreg::harness::{export_results, run_experiment, schedule_first_day, Scenario};
use freqreg::model::DiscreteBuildingModel;
use freqreg::scheduler::write_schedule_csv;
use freqreg::signal::{energy_content, load_signal, wlim_from_percentile};
use freqreg::sysid::{fit_model, load_dataset, FitConfig, HorizonMode};
use freqreg::verify;

/// Frequency regulation with a building supply fan.
///
/// Exit status: 0 on success, 1 on invalid input or a failed run, 2 on a
/// usage error, 3 when `verify` reports a failing check. Set RUST_LOG for
/// diagnostics (e.g. RUST_LOG=info).
#[derive(Parser)]
#[command(name = "freqreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Horizon {
    Step,
    Day,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a 1- or 2-state building model to a CSV of
    /// `timestamp,T_r,mdot,T_a,G,I_g,T_s` rows and print the model with its RMSE.
    FitBuilding {
        data: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        states: u8,
        #[arg(long, value_enum, default_value_t = Horizon::Day)]
        horizon: Horizon,
        /// Also write the model JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit fan curves to a speed sweep CSV (`speed_pct,flow,power,timestamp`).
    FitFan {
        sweep: PathBuf,
        /// Also write the curves JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy-content statistics of a regulation signal CSV (`timestamp,w`).
    AnalyzeSignal {
        signal: PathBuf,
        /// Window length in seconds.
        #[arg(long, default_value_t = 900.0)]
        window: f64,
        /// Percentile used for w_lim.
        #[arg(long, default_value_t = 97.5)]
        percentile: f64,
    },
    /// Day-ahead reserve schedule for the scenario's first day.
    Schedule {
        scenario: PathBuf,
        /// Exact envelopes (default: the scenario's `market.exact`).
        #[arg(long)]
        exact: bool,
        /// Linearised envelopes.
        #[arg(long, conflicts_with = "exact")]
        approx: bool,
        #[arg(long, short, default_value = "schedule.csv")]
        out: PathBuf,
    },
    /// Run the closed-loop experiment and export the result directory.
    Simulate {
        scenario: PathBuf,
        /// Days to simulate (default: the scenario's `days`).
        #[arg(long)]
        days: Option<usize>,
        /// Experiment seed (default: the scenario's `seed`, which is 0 when
        /// the file omits it).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short, default_value = "results")]
        out: PathBuf,
    },
    /// Run the property suite and print a pass/fail table.
    Verify {
        /// Seed for the randomised checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: &'a DiscreteBuildingModel,
    rmse: f64,
    n_states: usize,
    horizon: HorizonMode,
    converged: bool,
    iterations: usize,
    equivalent_optima: usize,
}

#[derive(Serialize)]
struct SignalSummary {
    window_s: f64,
    windows: usize,
    median: f64,
    p95: f64,
    p97_5: f64,
    p99: f64,
    max: f64,
    percentile: f64,
    w_lim: f64,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::FitBuilding { data, states, horizon, out } => {
            let data = load_dataset(&data)?;
            let mode = match horizon {
                Horizon::Step => HorizonMode::OneStep,
                Horizon::Day => HorizonMode::OneDay,
            };
            let rep = fit_model(&data, &FitConfig::new(states as usize, mode))?;
            if let Some(path) = out {
                write_json(&rep.model, &path)?;
            }
            print_json(&FitSummary {
                model: &rep.model,
                rmse: rep.rmse,
                n_states: rep.n_states,
                horizon: rep.horizon,
                converged: rep.converged,
                iterations: rep.iterations,
                equivalent_optima: rep.equivalent_optima,
            })?;
        }
        Command::FitFan { sweep, out } => {
            let rep = fit_fan(&load_sweep(&sweep)?)?;
            if let Some(path) = out {
                write_json(&rep.curves, &path)?;
            }
            print_json(&rep)?;
        }
        Command::AnalyzeSignal { signal, window, percentile } => {
            let stats = energy_content(&load_signal(&signal)?, window)?;
            let w_lim = wlim_from_percentile(&stats, percentile)?;
            print_json(&SignalSummary {
                window_s: stats.window_s,
                windows: stats.contents.len(),
                median: stats.median,
                p95: stats.p95,
                p97_5: stats.p97_5,
                p99: stats.p99,
                max: stats.max,
                percentile,
                w_lim,
            })?;
        }
        Command::Schedule { scenario, exact, approx, out } => {
            let sc = Scenario::load(&scenario)?;
            let mode = if exact { Some(true) } else if approx { Some(false) } else { None };
            let s = schedule_first_day(&sc, mode)?;
            let rows = write_schedule_csv(&s, &out)?;
            eprintln!("wrote {rows} slots to {} (converged: {})", out.display(), s.solve.converged);
        }
        Command::Simulate { scenario, days, seed, out } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(d) = days {
                sc.days = d;
            }
            if let Some(s) = seed {
                sc.seed = s;
            }
            let result = run_experiment(&sc)?;
            let manifest = export_results(&result, &out)?;
            for f in &manifest.files {
                eprintln!("{:<24} {:>8} rows {:>10} bytes", f.file, f.rows, f.bytes);
            }
            print_json(&result.summary)?;
        }
        Command::Verify { seed } => {
            let outcomes = verify::run_all(seed);
            print!("{}", verify::render_table(&outcomes));
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
