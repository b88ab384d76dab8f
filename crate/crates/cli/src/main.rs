use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gwe_core::config::{EnsembleKind, PipelineConfig};
use gwe_core::features::EstimatorKind;
use gwe_core::learners::ModelKind;
use gwe_core::pipeline::{Pipeline, Stage};
use gwe_core::synth::{self, SynthConfig};
use gwe_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "gwe",
    version,
    about = "Greedy-weighted ensemble for loan-default prediction"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read, clean, encode and split the loan file.
    Ingest,
    /// Segment, flag and correct outliers in the training rows.
    Outliers,
    /// Quantile-transform and rebalance the training rows.
    Augment {
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        noise_scale: Option<f64>,
    },
    /// Recursive feature elimination.
    SelectFeatures {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_estimator)]
        estimator: Option<EstimatorKind>,
    },
    /// Particle-swarm tuning of the base learners.
    Tune {
        /// Tune only this model; the others keep their reference values.
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Fit the base learners, ensemble weights and the meta-learner.
    Train {
        /// Ensembles to build (comma separated).
        #[arg(long, value_delimiter = ',', value_parser = parse_ensemble)]
        ensemble: Vec<EnsembleKind>,
    },
    /// Score every model on the held-out rows.
    Evaluate,
    /// Write the comparison table.
    Report,
    /// All stages.
    Run,
    /// Write a synthetic loan file and its schema.
    Synth {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        schema_output: Option<PathBuf>,
    },
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ensemble(s: &str) -> Result<EnsembleKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.paths.out_dir = dir.clone();
    }
    Ok(config)
}

fn apply_overrides(command: &Command, config: &mut PipelineConfig) -> Stage {
    match command {
        Command::Ingest => Stage::Ingest,
        Command::Outliers => Stage::Outliers,
        Command::Augment { ratio, noise_scale } => {
            if let Some(r) = ratio {
                config.augment.ratio = *r;
            }
            if let Some(n) = noise_scale {
                config.augment.noise_scale = *n;
            }
            Stage::Augment
        }
        Command::SelectFeatures { k, estimator } => {
            if let Some(k) = k {
                config.features.k = *k;
            }
            if let Some(e) = estimator {
                config.features.set_estimator(*e);
            }
            Stage::SelectFeatures
        }
        Command::Tune { model, folds } => {
            if let Some(m) = model {
                config.tune.models = vec![*m];
            }
            if let Some(f) = folds {
                config.tune.cv_folds = *f;
            }
            Stage::Tune
        }
        Command::Train { ensemble } => {
            if !ensemble.is_empty() {
                config.train.ensembles = ensemble.clone();
            }
            Stage::Train
        }
        Command::Evaluate => Stage::Evaluate,
        Command::Report | Command::Run => Stage::Report,
        Command::Synth { .. } => unreachable!("synth does not run the pipeline"),
    }
}

fn write_synth(rows: usize, seed: u64, output: &Path, schema_output: Option<&Path>) -> Result<(), Error> {
    let text = synth::generate_csv(&SynthConfig {
        rows,
        seed,
        ..SynthConfig::default()
    })?;
    fs::write(output, text).map_err(|e| Error::io(output, e))?;
    println!("wrote {}", output.display());
    if let Some(p) = schema_output {
        fs::write(p, synth::schema().render()).map_err(|e| Error::io(p, e))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn describe(p: &Pipeline, last: Stage) {
    for r in p.runs() {
        let how = if r.cached { "cached" } else { "done" };
        println!("{:<16} {how:<7} {}", r.stage.name(), p.stage_dir(r.stage).display());
    }
    if last == Stage::Report {
        if let Ok(table) = fs::read_to_string(p.stage_dir(Stage::Report).join("summary.md")) {
            println!();
            print!("{table}");
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Synth {
        rows,
        output,
        schema_output,
    } = &cli.command
    {
        return write_synth(*rows, cli.seed.unwrap_or(42), output, schema_output.as_deref());
    }
    let mut config = load_config(&cli)?;
    let last = apply_overrides(&cli.command, &mut config);
    let mut pipeline = Pipeline::new(config)?;
    pipeline.run_until(last)?;
    describe(&pipeline, last);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
