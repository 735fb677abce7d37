use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use vhcbm::bundle::{load_bundle, write_bundle};
use vhcbm::config::{Mode, RunOptions};
use vhcbm::executor::RayonExecutor;
use vhcbm::models::load_models;
use vhcbm::report::{summary_table, MetricReportJson};
use vhcbm::runner::{evaluate_saved, run_seeds, SaveModels};
use vhcbm::synth::SynthSpec;
use vhcbm_core::active::round_seed;
use vhcbm_core::data::synth_generate;

#[derive(Parser)]
#[command(name = "vhcbm", version, about = "Concept bottleneck models with Gaussian-process concept classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Keep {
    None,
    Final,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding bundle.
    Synth {
        /// Inline JSON or a path to a JSON file; omitted fields take defaults.
        #[arg(long, default_value = "{}")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the annotation protocol with ground-truth answers.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "active")]
        mode: Mode,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long)]
        initial: Option<usize>,
        /// Epoch cap of every concept fit.
        #[arg(long)]
        gp_epochs: Option<usize>,
        /// Initial learning rate of every concept fit.
        #[arg(long)]
        gp_lr: Option<f64>,
        #[arg(long)]
        head_epochs: Option<usize>,
        /// Which rounds' models to write.
        #[arg(long, value_enum, default_value = "final")]
        save_models: Keep,
    },
    /// Evaluate saved models on the test split.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Prediction seed; defaults to the one used when the models were evaluated in their run.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the annotation session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of built UI assets.
        #[arg(long, default_value = "ui/dist")]
        static_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let config = SynthSpec::parse(&spec)?.to_config(seed)?;
            let data = synth_generate(&config)?;
            let manifest = write_bundle(&data.dataset, &out)?;
            println!("{}", manifest.display());
        }
        Command::Run {
            bundle,
            mode,
            seeds,
            out,
            iterations,
            step,
            pool,
            initial,
            gp_epochs,
            gp_lr,
            head_epochs,
            save_models,
        } => {
            let dataset = load_bundle(&bundle)?;
            let d = RunOptions::default();
            let options = RunOptions {
                mode,
                seed: 0,
                initial_samples: initial.unwrap_or(d.initial_samples),
                samples_per_iteration: step.unwrap_or(d.samples_per_iteration),
                iterations: iterations.unwrap_or(d.iterations),
                pool_size: pool.unwrap_or(d.pool_size),
                gp_epochs: gp_epochs.unwrap_or(d.gp_epochs),
                gp_learning_rate: gp_lr.unwrap_or(d.gp_learning_rate),
                head_max_epochs: head_epochs.unwrap_or(d.head_max_epochs),
            };
            let save = match save_models {
                Keep::None => SaveModels::None,
                Keep::Final => SaveModels::Final,
                Keep::All => SaveModels::All,
            };
            let runs = run_seeds(&dataset, &options, &seeds, &RayonExecutor, &out, save)?;
            print!("{}", summary_table(&runs));
        }
        Command::Eval { bundle, models, seed, out } => {
            let dataset = load_bundle(&bundle)?;
            let saved = load_models(&models).with_context(|| format!("loading models from {}", models.display()))?;
            let seed = seed.unwrap_or_else(|| round_seed(saved.manifest.seed, "eval", saved.manifest.iteration));
            let report = evaluate_saved(&dataset, &saved, seed)?;
            let text = serde_json::to_string_pretty(&MetricReportJson::new(&report, dataset.schema()))?;
            if let Some(path) = out {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{text}");
        }
        Command::Serve { host, port, static_dir } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(vhcbm::service::serve(&host, port, Some(static_dir)))?;
        }
    }
    Ok(())
}
