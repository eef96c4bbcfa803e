//! `lible`: label enhancement experiments from the command line.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 invalid data, 4 training
//! aborted on a non-finite loss, 1 anything else.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lible_core::{Batch, BinarizeStrategy};

/// Shown by `--version`; the numbers track `checkpoint::FORMAT_VERSION`
/// and `manifest::MANIFEST_SCHEMA`.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1, manifest schema 1)");

#[derive(Parser, Debug)]
#[command(name = "lible", version = VERSION, about = "Recover label distributions from logical labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Weight of the label-gap term.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Weight of the latent KL term.
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long, default_value_t = 256)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Minibatch size, or FULL.
    #[arg(long, default_value = "FULL")]
    pub batch: Batch,
    /// Monte-Carlo samples of the latent code per instance.
    #[arg(long, default_value_t = 1)]
    pub mc_samples: usize,
    /// Random seed; drawn from system entropy when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// How to derive logical labels when the file has no `l:` columns:
    /// mean-threshold, top-k:<k> or fixed-threshold:<theta>.
    #[arg(long, default_value = "mean-threshold")]
    pub binarize: BinarizeStrategy,
    /// lib or libgap.
    #[arg(long, default_value = "lib")]
    pub objective: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a dataset and write the recovered distributions.
    Enhance {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Score predicted distributions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Where to write the JSON report.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Append a (dataset, method, metrics...) row to this CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Dataset column for --csv; defaults to the truth file stem.
        #[arg(long)]
        dataset_name: Option<String>,
        #[arg(long, default_value = "LIB")]
        method: String,
    },
    /// Train one model per (alpha, beta) pair and pick the best.
    Gridsearch {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
        betas: Vec<f64>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compare the full objective with the gap-only ablation.
    Ablation {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Enhance { dataset, train, out_dir } => commands::enhance(&argv, &dataset, &train, &out_dir),
        Command::Eval {
            pred,
            truth,
            out,
            csv,
            dataset_name,
            method,
        } => commands::eval(&pred, &truth, &out, csv.as_deref(), dataset_name, &method),
        Command::Gridsearch {
            dataset,
            alphas,
            betas,
            train,
            out_dir,
        } => commands::gridsearch(&argv, &dataset, &alphas, &betas, &train, &out_dir),
        Command::Ablation { dataset, train, out_dir } => commands::ablation(&argv, &dataset, &train, &out_dir),
    };
    if let Err(failure) = result {
        eprintln!("error: {failure}");
        std::process::exit(failure.code);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_string_tracks_format_constants() {
        let expect = format!(
            "checkpoint format {}, manifest schema {}",
            lible_core::checkpoint::FORMAT_VERSION,
            manifest::MANIFEST_SCHEMA
        );
        assert!(VERSION.contains(&expect), "{VERSION}");
    }
}
