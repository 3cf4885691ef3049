use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fedbal::report::{compare, format_table, load_runs, write_comparison_csv, write_rounds_csv, RunSummary};
use fedbal::server::{completion_estimate, ddl_e_curve, find_peak_ddl_e, ClientEstimate};
use fedbal::sim::Simulation;
use fedbal::stats::mean;
use fedbal::{data::load_traces, load_config};

/// Environment variable capping the worker pool size.
const THREADS_ENV: &str = "FEDBAL_THREADS";

#[derive(Parser)]
#[command(name = "fedbal", version, about = "Federated-learning simulator with adaptive deadlines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, summary.json and final_weights.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare finished runs against a baseline label.
    Compare {
        /// Directory searched recursively for run outputs.
        #[arg(long)]
        runs: PathBuf,
        /// Accuracy target; defaults to the baseline's final accuracy per seed.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value = "fedavg+fixed_1t")]
        baseline: String,
    },
    /// Print the deadline-efficiency curve for a trace file.
    DdlProfile {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        batch: usize,
        /// Over-threshold sample count: one value for every client or one per
        /// client, comma separated. Defaults to one batch.
        #[arg(long, value_delimiter = ',')]
        ot_len: Vec<f64>,
    },
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(THREADS_ENV),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let outcome = Simulation::new(cfg.clone(), threads_from_env()?)?.run()?;

    let mut csv = Vec::new();
    write_rounds_csv(&outcome.records, &mut csv)?;
    write_file(&out.join("rounds.csv"), &csv)?;
    let summary = RunSummary::new(&cfg, &outcome);
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_file(
        &out.join("final_weights.json"),
        serde_json::to_string(&outcome.final_weights)?.as_bytes(),
    )?;
    println!(
        "{}: {} rounds, {:.1} s simulated, final accuracy {:.4}",
        summary.label, summary.rounds, summary.wallclock_s, summary.final_accuracy
    );
    Ok(())
}

fn cmd_compare(runs_dir: &Path, target: Option<f64>, baseline: &str) -> Result<()> {
    let runs = load_runs(runs_dir)?;
    let rows = compare(&runs, baseline, target)?;
    let mut csv = Vec::new();
    write_comparison_csv(&rows, &mut csv)?;
    write_file(&runs_dir.join("comparison.csv"), &csv)?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn cmd_ddl_profile(trace: &Path, epochs: usize, batch: usize, ot_len: &[f64]) -> Result<()> {
    if batch == 0 {
        bail!("--batch must be at least 1");
    }
    let traces = load_traces(trace)?;
    let n = traces.records.len();
    let ot_for = |i: usize| -> Result<f64> {
        match ot_len.len() {
            0 => Ok(batch as f64),
            1 => Ok(ot_len[0]),
            k if k == n => Ok(ot_len[i]),
            k => bail!("--ot-len has {k} values for {n} clients"),
        }
    };
    let mut times = Vec::with_capacity(n);
    for (i, r) in traces.records.iter().enumerate() {
        let c = ClientEstimate {
            mean_download: mean(&r.download_s),
            mean_upload: mean(&r.upload_s),
            mean_batch_latency: mean(&r.batch_latency_s),
            ot_len: ot_for(i)?,
            num_samples: 0,
        };
        times.push(completion_estimate(&c, epochs, batch, false));
    }
    let peak = find_peak_ddl_e(&times)?;
    let t_max = times.iter().copied().fold(1.0, f64::max).ceil() as u64;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "t,ddl_e,is_peak")?;
    for (t, e) in ddl_e_curve(&times, t_max) {
        writeln!(out, "{t},{e},{}", t as f64 == peak)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, *seed),
        Command::Compare { runs, target, baseline } => cmd_compare(runs, *target, baseline),
        Command::DdlProfile {
            trace,
            epochs,
            batch,
            ot_len,
        } => cmd_ddl_profile(trace, *epochs, *batch, ot_len),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
