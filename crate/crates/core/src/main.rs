use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmpead_core::config::Config;
use dmpead_core::detect::evaluate;
use dmpead_core::mts::{load_csv, save_csv, AnomalySpec};
use dmpead_core::pipeline::{self, DetectOptions, PoolLock, PoolState};
use dmpead_core::synth::{generate_labeled, Regime};
use dmpead_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dmpead", version, about = "Dynamic model pool anomaly detection for multivariate time series")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set k=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.overrides.clone();
        if let Some(s) = self.seed {
            out.push(format!("seed={s}"));
        }
        out
    }

    fn load(&self) -> Result<Config> {
        self.load_over(None)
    }

    /// Without `--config`, overrides apply on top of `base` (if given).
    fn load_over(&self, base: Option<&Path>) -> Result<Config> {
        match (self.config.as_deref(), base) {
            (Some(p), _) | (None, Some(p)) => Config::load(p, &self.overrides()),
            (None, None) => Config::from_toml_with_overrides("", &self.overrides()),
        }
    }

    fn is_empty(&self) -> bool {
        self.config.is_none() && self.overrides.is_empty() && self.seed.is_none()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a pool on every CSV in a directory.
    BuildPool {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory of training CSVs.
        #[arg(long)]
        data: PathBuf,
        /// Pool directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Training CSVs carry a trailing label column (ignored for training).
        #[arg(long)]
        labels: bool,
    },
    /// Score one series against a pool and write a JSON report.
    Detect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Read-only run: no expansion, no merging, no lock.
        #[arg(long)]
        frozen_pool: bool,
        #[arg(long)]
        no_expansion: bool,
        #[arg(long)]
        no_merging: bool,
        /// Ground truth: bare flag means the input's last column, otherwise a CSV file.
        #[arg(long, num_args = 0..=1, value_name = "CSV")]
        labels: Option<Option<PathBuf>>,
        /// Write per-model and final scores as CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Write `t,score,threshold,label` series as CSV.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Generate a labeled synthetic series.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// sine, ar1, trend_season, level_shift or mixed.
        #[arg(long, default_value = "mixed")]
        regime: String,
        /// Comma-separated `kind:start:length:magnitude:dim[+dim]` list.
        #[arg(long, default_value = "")]
        anomalies: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print TS-AUC-PR, Range-AUC-PR and VUS-PR of a score file as JSON.
    Eval {
        /// CSV with a `final` or `score` column (else the last column).
        #[arg(long)]
        scores: PathBuf,
        /// CSV with a `label` column (else the last column).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 16)]
        max_buffer: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildPool {
            config,
            data,
            out,
            labels,
        } => build_pool(&config, &data, &out, labels),
        Command::Detect {
            config,
            pool,
            input,
            report,
            frozen_pool,
            no_expansion,
            no_merging,
            labels,
            scores,
            plot,
        } => {
            let opts = DetectFlags {
                frozen: frozen_pool,
                expansion: !(frozen_pool || no_expansion),
                merging: !(frozen_pool || no_merging),
            };
            detect(&config, &pool, &input, &report, opts, labels, scores, plot)
        }
        Command::Synth {
            out,
            m,
            n,
            regime,
            anomalies,
            seed,
        } => synth(&out, m, n, &regime, &anomalies, seed),
        Command::Eval {
            scores,
            labels,
            max_buffer,
        } => eval(&scores, &labels, max_buffer),
    }
}

fn build_pool(config: &ConfigArgs, data: &Path, out: &Path, labels: bool) -> Result<()> {
    let cfg = config.load()?;
    let datasets = pipeline::load_datasets(data, labels)?;
    fs::create_dir_all(out)?;
    let _lock = PoolLock::acquire(out)?;
    let state = pipeline::build(&cfg, &datasets)?;
    state.save(out)?;
    println!(
        "pool with {} models written to {} (meta-model {})",
        state.pool.len(),
        out.display(),
        if state.meta.is_some() { "trained" } else { "not trained" }
    );
    Ok(())
}

struct DetectFlags {
    frozen: bool,
    expansion: bool,
    merging: bool,
}

#[allow(clippy::too_many_arguments)]
fn detect(
    config: &ConfigArgs,
    pool_dir: &Path,
    input: &Path,
    report_path: &Path,
    flags: DetectFlags,
    labels: Option<Option<PathBuf>>,
    scores_path: Option<PathBuf>,
    plot_path: Option<PathBuf>,
) -> Result<()> {
    if !pool_dir.join(dmpead_core::pool::MANIFEST_FILE).exists() {
        return Err(Error::integrity(pool_dir, "not a pool directory (manifest.json missing)"));
    }
    let _lock = if flags.frozen {
        None
    } else {
        Some(PoolLock::acquire(pool_dir)?)
    };
    let cfg = if config.is_empty() {
        None
    } else {
        Some(config.load_over(Some(&pool_dir.join(pipeline::CONFIG_FILE)))?)
    };
    let mut state = PoolState::load(pool_dir, cfg)?;
    let inline_labels = matches!(labels, Some(None));
    let series = load_csv(input, inline_labels)?;
    let label_vec = match &labels {
        Some(Some(path)) => Some(pipeline::load_labels(path)?),
        _ => None,
    };
    let opts = DetectOptions {
        expansion: flags.expansion,
        merging: flags.merging,
        labels: label_vec,
    };
    let name = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    let run = pipeline::detect(&mut state, name, &series, &opts)?;
    if run.changed {
        state.save(pool_dir)?;
    }
    fs::write(report_path, run.report.to_json())?;
    if let Some(p) = scores_path {
        let mut w = std::io::BufWriter::new(fs::File::create(p)?);
        run.outcome.scores.write_csv(Some(&run.outcome.final_score), &mut w)?;
        w.flush()?;
    }
    if let Some(p) = plot_path {
        let mut w = std::io::BufWriter::new(fs::File::create(p)?);
        pipeline::write_plot_csv(&run, &mut w)?;
        w.flush()?;
    }
    println!(
        "{} anomalous points in {} ranges; report written to {}",
        run.report.anomaly_points,
        run.report.ranges.len(),
        report_path.display()
    );
    Ok(())
}

fn synth(out: &Path, m: usize, n: usize, regime: &str, anomalies: &str, seed: u64) -> Result<()> {
    let regime: Regime = regime.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let specs = anomalies
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<AnomalySpec>)
        .collect::<Result<Vec<_>>>()?;
    let ts = generate_labeled(regime, m, n, &specs, seed)?;
    save_csv(&ts, out)?;
    Ok(())
}

fn eval(scores: &Path, labels: &Path, max_buffer: usize) -> Result<()> {
    let s = pipeline::load_column(scores, &["final", "score"])?;
    let l = pipeline::load_labels(labels)?;
    let metrics = evaluate(&s, &l, max_buffer)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}
