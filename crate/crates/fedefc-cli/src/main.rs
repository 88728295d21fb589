//! Command-line front end: run experiments, summarize metrics CSVs, and
//! inspect a config's noise channel.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedefc_core::config::{ExperimentConfig, Method};
use fedefc_core::experiment::{
    parse_csv, prepare_data, render_csv, run_experiment, write_csv, MetricsTable,
};
use fedefc_core::noise::realized_stats;
use fedefc_core::report::{compare_report, render_report_csv, render_report_text};

#[derive(Parser)]
#[command(
    name = "fedefc",
    version,
    about = "Deterministic federated-learning simulator for training under label noise"
)]
struct Cli {
    /// Worker threads for the client loop. Any value produces identical
    /// results; this only changes how the work is spread.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and emit its metrics CSV
    Run {
        /// Experiment config file (key=value lines)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize metrics CSVs: mean ± std of final accuracy per method
    Report {
        /// One or more metrics CSVs produced by `run`
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Write the summary CSV here (the aligned table always prints)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a config's true transition matrix and realized noise statistics
    DiagNoise {
        /// Experiment config file (key=value lines)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing the worker pool")?;
    }
    match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out.as_deref()),
        Command::Report { inputs, out } => cmd_report(&inputs, out.as_deref()),
        Command::DiagNoise { config, seed } => cmd_diag_noise(&config, seed),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse_file(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config, seed)?;
    let table = run_experiment(&cfg).context("running the experiment")?;
    match out {
        Some(path) => {
            write_csv(&table, path)
                .with_context(|| format!("writing metrics to {}", path.display()))?;
            println!("wrote {}", path.display());
            print!("{}", summary_line(&table));
        }
        None => print!("{}", render_csv(&table)),
    }
    Ok(())
}

fn summary_line(table: &MetricsTable) -> String {
    let s = &table.summary;
    let prestop = match s.prestop_round {
        Some(t) => t.to_string(),
        None => "-".to_string(),
    };
    format!(
        "method={} seed={} final_test_acc={:.4} best_test_acc={:.4} prestop_round={prestop}\n",
        s.method, s.seed, s.final_test_acc, s.best_test_acc
    )
}

fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    let tables: Vec<MetricsTable> = inputs
        .iter()
        .map(|path| {
            parse_csv(path).with_context(|| format!("reading metrics {}", path.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    let report = compare_report(&tables).context("building the comparison")?;
    print!("{}", render_report_text(&report));
    let csv = render_report_csv(&report);
    match out {
        Some(path) => {
            std::fs::write(path, csv)
                .with_context(|| format!("writing summary to {}", path.display()))?;
            println!("\nwrote {}", path.display());
        }
        None => print!("\n{csv}"),
    }
    Ok(())
}

fn cmd_diag_noise(config: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = load_config(config, seed)?;
    let data = prepare_data(&cfg).context("preparing data")?;
    let t = &data.true_transition;
    let c = t.num_classes();
    println!(
        "noise channel: rho={} zeta={} classes={} seed={}",
        cfg.rho, cfg.zeta, c, cfg.seed
    );
    if cfg.method == Method::FedAvgClean {
        println!("note: method fedavg_clean skips noise injection, so observed labels stay clean");
    }
    println!("true transition matrix (rows = observed, columns = true):");
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| format!("{:.6}", t.entry(i, j))).collect();
        println!("  {}", row.join(" "));
    }
    let stats = realized_stats(
        data.train.clean_labels(),
        data.train.observed_labels(),
        c,
    )
    .context("computing realized statistics")?;
    println!(
        "realized flip rate: {:.6} over {} training samples",
        stats.flip_rate,
        data.train.len()
    );
    println!("column-normalized empirical joint:");
    let empirical = stats.column_normalized();
    let mut max_dev = 0.0f64;
    for (i, row) in empirical.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("  {}", cells.join(" "));
        for (j, &v) in row.iter().enumerate() {
            max_dev = max_dev.max((v - t.entry(i, j)).abs());
        }
    }
    println!("max |empirical - true| entry: {max_dev:.6}");
    Ok(())
}
