use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reflectgan::config::{self, RunConfig};
use reflectgan::evaluation::InputKind;
use reflectgan::pipeline::{self, PipelineError};
use reflectgan::regressors::ModelKind;

#[derive(Parser)]
#[command(name = "reflectgan", version, about = "Bare-soil reflectance recovery and SOC modelling")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. `--set gan.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_kv)]
    overrides: Vec<(String, String)>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic samples and their true bare spectra.
    Synth,
    /// Pair vegetated samples with nearby bare references.
    Pair,
    /// Train the reconstruction GAN on the paired file.
    TrainGan,
    /// Write corrected spectra for every sample.
    Reconstruct,
    /// Fit one SOC model on the training split.
    TrainSoc {
        #[arg(long, default_value = "reconstructed_only")]
        input: InputKind,
        #[arg(long, default_value = "rforest")]
        model: ModelKind,
        /// Use bands plus derived indices instead of bands alone.
        #[arg(long)]
        features: bool,
    },
    /// Run the scenario matrix and write the reports.
    Evaluate,
    /// Score spectral recovery of each correction method against truth.
    CompareBaselines,
    /// Finite-difference check of every differentiable component.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_linear: bool,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let load = || -> Result<RunConfig, PipelineError> {
        config::load(cli.config.as_deref(), &cli.overrides).map_err(|e| match e {
            config::LoadError::Config(c) => c.into(),
            config::LoadError::Io { path, .. } => PipelineError::MissingInput { what: "config", path },
        })
    };
    match cli.command {
        Command::Synth => {
            let s = pipeline::cmd_synth(&load()?)?;
            println!("samples {}  bare {}  vegetated {}", s.n_samples, s.n_bare, s.n_vegetated);
        }
        Command::Pair => {
            let s = pipeline::cmd_pair(&load()?)?;
            println!(
                "bare {} ({} reference)  vegetated {}  paired {}  dropped {}",
                s.bare, s.bare_references, s.vegetated, s.paired, s.dropped
            );
        }
        Command::TrainGan => {
            let s = pipeline::cmd_train_gan(&load()?)?;
            println!("trained on {} pairs for {} epochs", s.n_pairs, s.epochs);
            if let (Some(d), Some(g)) = (s.final_loss_d, s.final_loss_g) {
                println!("final loss_d {d:.4}  loss_g {g:.4}");
            }
        }
        Command::Reconstruct => {
            let s = pipeline::cmd_reconstruct(&load()?)?;
            println!("rows {}  reconstructed {}", s.rows, s.reconstructed);
        }
        Command::TrainSoc { input, model, features } => {
            let s = pipeline::cmd_train_soc(&load()?, input, features, model)?;
            let r = &s.row;
            println!("r2 {:.4}  rmse {:.4}  rpd {}  n_test {}", r.r2, r.rmse, r.rpd, r.n_test);
            println!("model written to {}", s.model_path.display());
        }
        Command::Evaluate => {
            let cfg = load()?;
            let report = pipeline::cmd_evaluate(&cfg)?;
            print!("{}", reflectgan::evaluation::report_csv(&report));
        }
        Command::CompareBaselines => {
            for r in pipeline::cmd_compare_baselines(&load()?)? {
                println!("{:<5} mean band rmse {:.5}  n {}", r.method, r.mean_band_rmse(), r.n);
            }
        }
        Command::GradCheck { seed, corrupt_linear } => {
            for c in pipeline::cmd_grad_check(seed, corrupt_linear)? {
                println!("{}", pipeline::grad_check_line(&c));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
