use clap::{Parser, Subcommand};
use lusr_core::experiment::{run_stage, ExperimentConfig, RunOptions, Stage};
use lusr_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "lusrbench", version, about = "Cycle-consistent representation and zero-shot transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override both the representation and the policy seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run even if upstream artifacts were made under a different config.
    #[arg(long)]
    allow_mismatch: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect random-policy datasets for the source and seen domains.
    Collect(Common),
    /// Train the encoder on the collected datasets.
    TrainRepr(Common),
    /// Train a policy on the frozen encoder in the source domain.
    TrainRl(Common),
    /// Zero-shot evaluation on every domain.
    EvalTransfer(Common),
    /// Evaluate every saved policy checkpoint on every domain.
    Curve(Common),
    /// Perturbation saliency on source-domain frames.
    Saliency(Common),
    /// Domain probes and embedding export.
    Probe(Common),
    /// Grid of swapped specific/general decodes.
    DemoSwap(Common),
    /// Assemble a Markdown report from existing artifacts.
    Report(Common),
}

impl Command {
    fn split(self) -> (Stage, Common) {
        match self {
            Command::Collect(c) => (Stage::Collect, c),
            Command::TrainRepr(c) => (Stage::TrainRepr, c),
            Command::TrainRl(c) => (Stage::TrainRl, c),
            Command::EvalTransfer(c) => (Stage::EvalTransfer, c),
            Command::Curve(c) => (Stage::Curve, c),
            Command::Saliency(c) => (Stage::Saliency, c),
            Command::Probe(c) => (Stage::Probe, c),
            Command::DemoSwap(c) => (Stage::DemoSwap, c),
            Command::Report(c) => (Stage::Report, c),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (stage, common) = cli.command.split();
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        if let Some(out) = common.out {
            cfg.output_dir = out;
        }
        if let Some(seed) = common.seed {
            cfg = cfg.with_seed(seed);
        }
        run_stage(
            &cfg,
            stage,
            RunOptions {
                allow_mismatch: common.allow_mismatch,
            },
        )
    });
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("lusrbench {stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
