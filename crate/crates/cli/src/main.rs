//! `amc`: corpus generation, training, grid search, evaluation and
//! inspection for the CNN-LSTM modulation classifier.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amc_core::checkpoint::ModelCheckpoint;
use amc_core::corpus::{self, LabeledCorpus};
use amc_core::evaluation::evaluate;
use amc_core::features::{frame_to_input, to_ppm};
use amc_core::modem::{generate_corpus, ModulationClass};
use amc_core::network::describe;
use amc_core::report::write_report;
use amc_core::training::{grid_search, split_corpus, train, CorpusSplit, TrainOutcome};
use amc_core::Error;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

const LONG_VERSION: &str =
    concat!(env!("CARGO_PKG_VERSION"), "\ncorpus format: AMCI v1", "\ncheckpoint format: AMCP v1");

#[derive(Debug, Parser)]
#[command(name = "amc", version, long_version = LONG_VERSION, about)]
struct Cli {
    /// Run configuration (TOML); library defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the corpus and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parallel workers for evaluation and grid trials.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labeled corpus and print per-class/per-SNR counts.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes the checkpoint and a per-epoch CSV.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
        #[arg(long, env = "AMC_OUT_DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Run the hyperparameter grid and retrain the best trial.
    Grid {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = "AMC_OUT_DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on one split and write the metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, env = "AMC_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Show one frame's preprocessing and the model's layer shapes.
    Inspect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Which window of the frame to render.
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Writes the window's three channels as a binary PPM image.
        #[arg(long)]
        dump_ppm: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config {
        /// Ignore --config and print the built-in defaults.
        #[arg(long)]
        defaults: bool,
        /// Start from the desk-scale preset instead of the full geometry.
        #[arg(long)]
        reduced: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration problems, 3 for I/O and file-format problems, 4 for
/// numeric aborts.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io { .. } | Error::Data(_) => 3,
                Error::Numeric(_) | Error::UndefinedMetric(_) => 4,
                Error::Config(_) | Error::Shape { .. } | Error::Usage(_) | Error::Stratification(_) => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn load_config(cli: &Cli, reduced: bool) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if reduced => RunConfig::reduced(),
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(arg: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = arg.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn read_corpus(path: &Path) -> Result<LabeledCorpus> {
    let c = corpus::read(path).with_context(|| format!("reading corpus {}", path.display()))?;
    log::info!("loaded {} frames from {}", c.len(), path.display());
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { out } => cmd_gen(&load_config(&cli, false)?, out),
        Command::Train { corpus, out_checkpoint, out_dir: dir, max_epochs } => {
            let mut cfg = load_config(&cli, false)?;
            if let Some(n) = max_epochs {
                cfg.training.max_epochs = *n;
                cfg.training.patience = cfg.training.patience.min(*n);
            }
            let dir = out_dir(dir, &cfg)?;
            let ckpt = out_checkpoint.clone().unwrap_or_else(|| dir.join("model.amcp"));
            cmd_train(&cfg, corpus, &ckpt, &dir)
        }
        Command::Grid { corpus, out_dir: dir, max_epochs } => {
            let mut cfg = load_config(&cli, false)?;
            if let Some(n) = max_epochs {
                cfg.training.max_epochs = *n;
                cfg.training.patience = cfg.training.patience.min(*n);
            }
            let dir = out_dir(dir, &cfg)?;
            cmd_grid(&cfg, corpus, &dir, cli.workers)
        }
        Command::Eval { checkpoint, corpus, split, out_dir: dir } => {
            let cfg = load_config(&cli, false)?;
            let dir = out_dir(dir, &cfg)?;
            cmd_eval(&cfg, checkpoint, corpus, *split, &dir, cli.workers)
        }
        Command::Inspect { corpus, frame, window, dump_ppm } => {
            cmd_inspect(&load_config(&cli, false)?, corpus, *frame, *window, dump_ppm.as_deref())
        }
        Command::Config { defaults, reduced } => {
            let cfg = if *defaults {
                if *reduced {
                    RunConfig::reduced()
                } else {
                    RunConfig::default()
                }
            } else {
                load_config(&cli, *reduced)?
            };
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.corpus_spec();
    let corpus = generate_corpus(&spec)?;
    corpus::write(out, &corpus)?;
    corpus::write_metadata(out, &spec)?;
    println!("wrote {} frames to {}", corpus.len(), out.display());
    print!("{}", summary_table(&corpus));
    Ok(())
}

/// Frame counts per class (rows) and SNR (columns), with totals.
fn summary_table(corpus: &LabeledCorpus) -> String {
    let snrs = corpus.snr_values();
    let label = |s: f64| if s.is_infinite() { "clean".to_string() } else { format!("{s} dB") };
    let mut out = format!("{:<10}", "class");
    for &s in &snrs {
        out += &format!("{:>9}", label(s));
    }
    out += &format!("{:>9}\n", "total");
    for class in ModulationClass::ALL {
        let frames: Vec<_> = corpus.frames.iter().filter(|f| f.label == class).collect();
        if frames.is_empty() {
            continue;
        }
        out += &format!("{:<10}", class.name());
        for &s in &snrs {
            let n = frames.iter().filter(|f| f.snr_db.to_bits() == s.to_bits()).count();
            out += &format!("{n:>9}");
        }
        out += &format!("{:>9}\n", frames.len());
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    corpus::write_atomic(path, bytes)?;
    Ok(())
}

fn report_outcome(outcome: &TrainOutcome, ckpt: &Path, csv: &Path) -> Result<()> {
    outcome.checkpoint.write(ckpt)?;
    write_bytes(csv, outcome.report.to_csv().as_bytes())?;
    let r = &outcome.report;
    println!(
        "trained {} epochs in {:.1}s; best epoch {} (selection loss {:.5})",
        r.epochs.len(),
        r.wall_time_secs,
        r.best_epoch,
        r.best_loss()
    );
    println!("checkpoint: {}", ckpt.display());
    println!("curves: {}", csv.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, corpus_path: &Path, ckpt: &Path, dir: &Path) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let outcome = train(&cfg.architecture, &cfg.training, &cfg.window_plan(), &corpus)?;
    report_outcome(&outcome, ckpt, &dir.join("train_report.csv"))
}

fn cmd_grid(cfg: &RunConfig, corpus_path: &Path, dir: &Path, workers: usize) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let g = grid_search(&cfg.grid, &cfg.architecture, &cfg.training, &cfg.window_plan(), &corpus, workers)?;
    let csv = dir.join("grid.csv");
    write_bytes(&csv, g.to_csv().as_bytes())?;
    let failed = g.trials.iter().filter(|t| t.outcome.is_err()).count();
    println!("{} trials ({failed} failed); results: {}", g.trials.len(), csv.display());
    match (&g.best, g.ranking.first()) {
        (Some(best), Some(&i)) => {
            let t = &g.trials[i];
            println!("best trial {i}: drop {} head_l1 {} lr {}", t.drop_factor, t.head_l1, t.learning_rate);
            report_outcome(best, &dir.join("model.amcp"), &dir.join("train_report.csv"))
        }
        _ => Err(Error::Numeric("every grid trial failed".into()).into()),
    }
}

fn pick_split(split: &CorpusSplit, name: SplitName, n: usize) -> Vec<usize> {
    match name {
        SplitName::Train => split.train.clone(),
        SplitName::Val => split.val.clone(),
        SplitName::Test => split.test.clone(),
        SplitName::All => (0..n).collect(),
    }
}

fn cmd_eval(
    cfg: &RunConfig,
    ckpt_path: &Path,
    corpus_path: &Path,
    name: SplitName,
    dir: &Path,
    workers: usize,
) -> Result<()> {
    let ckpt =
        ModelCheckpoint::read(ckpt_path).with_context(|| format!("reading checkpoint {}", ckpt_path.display()))?;
    let corpus = read_corpus(corpus_path)?;
    let indices = match name {
        SplitName::All => (0..corpus.len()).collect(),
        _ => pick_split(&split_corpus(&corpus, &cfg.training.split, cfg.training.seed)?, name, corpus.len()),
    };
    if indices.is_empty() {
        return Err(Error::Config(format!("the {name:?} split is empty under the configured fractions")).into());
    }
    let report = evaluate(&ckpt, &cfg.window_plan(), &corpus, &indices, workers)?;
    let files = write_report(&report, dir)?;
    let s = &report.summary;
    println!("frames: {}", indices.len());
    println!("accuracy:        {:.4}", s.accuracy);
    println!("macro precision: {:.4}", s.macro_precision);
    println!("macro recall:    {:.4}", s.macro_recall);
    println!("macro F1:        {:.4}", s.macro_f1);
    for c in &report.curves {
        println!("AUC {:<10} {:.4}", report.class_names[c.class], c.auc);
    }
    println!("wrote {} report files to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_inspect(cfg: &RunConfig, corpus_path: &Path, frame: usize, window: usize, ppm: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let f = corpus
        .frames
        .get(frame)
        .ok_or_else(|| Error::Config(format!("frame {frame} outside corpus of {}", corpus.len())))?;
    let snr = if f.is_clean() { "clean".to_string() } else { format!("{} dB", f.snr_db) };
    println!(
        "frame {frame}: {} at {snr}, {} samples, mean power {:.6}, seed {}",
        f.label,
        f.samples.len(),
        f.mean_power(),
        f.seed
    );
    let plan = cfg.window_plan();
    let tensors = frame_to_input(f, &plan, cfg.architecture.input_side)?;
    let offsets: Vec<usize> = plan.offsets().collect();
    println!("windows: {} of {} samples at offsets {offsets:?}", plan.count, plan.window_len);
    if let Some(path) = ppm {
        let t = tensors
            .get(window)
            .ok_or_else(|| Error::Config(format!("window {window} outside 0..{}", tensors.len())))?;
        write_bytes(path, &to_ppm(t))?;
        println!("wrote {}x{} image of window {window} to {}", t.side, t.side, path.display());
    }
    println!();
    print!("{}", describe(&cfg.architecture, None));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use amc_core::checkpoint;

    #[test]
    fn version_names_current_formats() {
        assert!(LONG_VERSION.contains(&format!("AMCI v{}", corpus::FORMAT_VERSION)));
        assert!(LONG_VERSION.contains(&format!("AMCP v{}", checkpoint::FORMAT_VERSION)));
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(code(Error::Numeric("x".into())), 4);
        let wrapped = anyhow::Error::from(Error::Numeric("x".into())).context("training");
        assert_eq!(exit_code(&wrapped), 4);
    }
}
