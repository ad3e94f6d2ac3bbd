//! Command-line front end for `dpo-lab`.
//!
//! Exit codes: 0 success, 1 a property check failed, 2 usage or
//! configuration error, 3 training diverged.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dpo_lab::corpus::{generate_synthetic, load_dataset, write_dataset, Dataset, GeneratorConfig};
use dpo_lab::eval::{run_property_suite, win_rate, EvalReport, PropertyReport, SuiteOptions};
use dpo_lab::experiment::{run_matrix, MatrixRow};
use dpo_lab::losses::LossVariant;
use dpo_lab::noise::{NoiseConfig, NoiseKind};
use dpo_lab::policy::{Checkpoint, ReferencePolicy};
use dpo_lab::trainer::{prepare, train, TrainResult};

use crate::config::{load_generator_config, load_options, MatrixConfig, RunConfig};

pub const EXIT_PROPERTY_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Lib(#[from] dpo_lab::Error),

    #[error("{failed} of {total} property checks failed")]
    PropertiesFailed { failed: usize, total: usize },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::PropertiesFailed { .. } => EXIT_PROPERTY_FAILURE,
            CliError::Lib(dpo_lab::Error::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }

    fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dpo-lab", version, about = "Preference-optimization experiments on a toy bigram policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic preference dataset.
    GenData(GenDataArgs),
    /// Train a policy and write a checkpoint and metrics.
    Train(TrainArgs),
    /// Compute the win rate of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the property suite.
    Verify(VerifyArgs),
    /// Run the four-row noise comparison.
    Matrix(MatrixArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator config (JSON). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset path.
    #[arg(long, default_value = "dataset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<LossVariant>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub variant: LossVariant,
    #[arg(long, default_value = "none")]
    pub noise: NoiseKind,
    /// Flip rate for `--noise flip`.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Reference checkpoint. Uniform when omitted.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 50)]
    pub gradient_instances: usize,
    /// Break the robust loss normalization inside the suite.
    #[arg(long, hide = true)]
    pub canary: bool,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    /// Matrix config (JSON). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args, quiet).map(|_| ()),
        Command::Train(args) => {
            let mut config = RunConfig::load(&args.config)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(out) = args.out {
                config.output_dir = out;
            }
            if let Some(variant) = args.variant {
                config.variant = variant;
            }
            cmd_train(&config, quiet).map(|_| ())
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args)?;
            let json = serde_json::to_string_pretty(&report).expect("reports serialize");
            match &args.out {
                Some(path) => fs::write(path, json + "\n").map_err(|e| CliError::write(path, e))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Verify(args) => cmd_verify(&args, quiet).map(|_| ()),
        Command::Matrix(args) => {
            let mut config = match &args.config {
                Some(path) => MatrixConfig::load(path)?,
                None => MatrixConfig::default(),
            };
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(out) = args.out {
                config.output_dir = out;
            }
            cmd_matrix(&config, quiet).map(|_| ())
        }
    }
}

pub fn cmd_gen_data(args: &GenDataArgs, quiet: bool) -> Result<Dataset, CliError> {
    let mut config = match &args.config {
        Some(path) => load_generator_config(path)?,
        None => GeneratorConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (dataset, _) = generate_synthetic(&config)?;
    write_dataset(&dataset, &args.out)?;
    if !quiet {
        let (w, l) = dataset.mean_scores()?;
        let segments: usize = dataset
            .pairs()
            .iter()
            .map(|p| p.winner().segments().len() + p.loser().segments().len())
            .sum();
        println!(
            "wrote {} pairs to {} (mean winner score {w:.3}, mean loser score {l:.3}, {:.2} segments per response)",
            dataset.len(),
            args.out.display(),
            segments as f64 / (2 * dataset.len()) as f64
        );
    }
    Ok(dataset)
}

fn load_reference(path: Option<&Path>, vocab_size: usize) -> Result<ReferencePolicy, CliError> {
    let Some(path) = path else {
        return Ok(ReferencePolicy::uniform(vocab_size));
    };
    let params = Checkpoint::load(path)?.params()?;
    if params.vocab_size() != vocab_size {
        return Err(CliError::Config(format!(
            "reference {} has vocabulary {} but the dataset uses {vocab_size}",
            path.display(),
            params.vocab_size()
        )));
    }
    Ok(ReferencePolicy::new(params))
}

fn load_existing(path: &Path, options: &dpo_lab::corpus::LoadOptions) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset not found: {}", path.display())));
    }
    Ok(load_dataset(path, options)?)
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_SPLIT_FILE: &str = "eval_split.jsonl";
pub const MATRIX_FILE: &str = "matrix.csv";

/// Trains and writes `checkpoint.json`, `metrics.jsonl` and the eval split
/// (`eval_split.jsonl`) into the output directory.
pub fn cmd_train(config: &RunConfig, quiet: bool) -> Result<TrainResult, CliError> {
    let options = config.load_options()?;
    let dataset = load_existing(&config.dataset, &options)?;
    let (train_set, eval_set) = match &config.eval_dataset {
        Some(path) => (dataset, load_existing(path, &options)?),
        None => dataset.split(config.eval_fraction)?,
    };
    let reference = load_reference(config.reference.as_deref(), config.vocab_size)?;
    let train_config = config.train_config();
    let result = train(&train_set, &eval_set, &reference, &train_config)?;

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    Checkpoint::new(&result.final_params, config.seed).save(out.join(CHECKPOINT_FILE))?;
    write_dataset(&eval_set, out.join(EVAL_SPLIT_FILE))?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| CliError::write(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    for entry in &result.history {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        writeln!(metrics, "{line}").map_err(|e| CliError::write(&metrics_path, e))?;
    }
    metrics.flush().map_err(|e| CliError::write(&metrics_path, e))?;

    if !quiet {
        for e in &result.history {
            println!(
                "iter {:>6}  loss {:.5}  train win {:.4}  eval win {:.4}",
                e.iter, e.loss, e.train_win_rate, e.eval_win_rate
            );
        }
        println!("wrote {}", out.display());
    }
    Ok(result)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let params = Checkpoint::load(&args.checkpoint)?.params()?;
    let vocab_size = params.vocab_size();
    if !args.variant.is_2d() && args.noise == NoiseKind::SegmentPerturb {
        return Err(CliError::Config(format!(
            "segment noise perturbs segment scores, which variant {} ignores",
            args.variant
        )));
    }
    let dataset = load_existing(&args.dataset, &load_options(vocab_size, None)?).map_err(|e| match e {
        CliError::Lib(dpo_lab::Error::TokenOutOfRange { token, vocab_size }) => CliError::Config(format!(
            "{} uses token {token}, outside the checkpoint vocabulary of {vocab_size}",
            args.dataset.display()
        )),
        other => other,
    })?;
    let reference = load_reference(args.reference.as_deref(), vocab_size)?;
    let noise = NoiseConfig {
        kind: args.noise,
        gamma: args.gamma,
        seed: args.seed,
    };
    let prepared = prepare(&dataset, args.variant, &noise)?;
    Ok(win_rate(&params, &reference, &prepared, args.variant, args.beta)?)
}

pub fn cmd_verify(args: &VerifyArgs, quiet: bool) -> Result<PropertyReport, CliError> {
    let options = SuiteOptions {
        gradient_instances: args.gradient_instances,
        canary: args.canary,
        ..SuiteOptions::new(args.seed)
    };
    let report = run_property_suite(&options);
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("reports serialize");
        fs::write(path, json + "\n").map_err(|e| CliError::write(path, e))?;
    }
    if !quiet {
        print!("{}", report.to_text());
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::PropertiesFailed {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(report)
}

/// Runs the matrix and writes `matrix.csv`, one row at a time.
pub fn cmd_matrix(config: &MatrixConfig, quiet: bool) -> Result<Vec<MatrixRow>, CliError> {
    let dataset = match &config.dataset {
        Some(path) => load_existing(path, &load_options(config.vocab_size, config.aspect_weights)?)?,
        None => generate_synthetic(&config.generator())?.0,
    };
    let (train_set, eval_set) = dataset.split(config.eval_fraction)?;
    let reference = ReferencePolicy::uniform(dataset.vocab_size());

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    let path = out.join(MATRIX_FILE);
    let csv_err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(csv_err)?;
    writer.write_record(["algorithm", "train_win_rate", "eval_win_rate"]).map_err(csv_err)?;
    writer.flush().map_err(|e| CliError::write(&path, e))?;

    let mut write_error = None;
    let result = run_matrix(
        &train_set,
        &eval_set,
        &reference,
        &config.train_config(),
        config.eval_noise_seed(),
        |row| {
            if !quiet {
                println!(
                    "{:<28} train {:.4}  eval {:.4}",
                    row.algorithm, row.train_win_rate, row.eval_win_rate
                );
            }
            let written = writer
                .serialize(row)
                .map_err(csv_err)
                .and_then(|_| writer.flush().map_err(|e| CliError::write(&path, e)));
            if let Err(e) = written {
                write_error.get_or_insert(e);
            }
        },
    );
    if let Some(e) = write_error {
        return Err(e);
    }
    Ok(result?)
}
