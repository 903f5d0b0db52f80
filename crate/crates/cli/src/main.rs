mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use mojito::data::{ContextSchema, EventFormat};
use mojito::eval::EvalSplit;

use commands::{DiagnoseArgs, EvaluateArgs, PreprocessArgs, TrainArgs};

/// Time-aware sequential recommendation.
#[derive(Parser)]
#[command(name = "mojito", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// `user<TAB>item<TAB>timestamp`
    Tsv,
    /// `user,item,timestamp`
    Csv,
    /// `user::item::rating::timestamp`
    Movielens,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw events, k-core filter them and write an indexed dataset.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
        #[arg(long)]
        header: bool,
        #[arg(long, default_value_t = 5)]
        k_user: usize,
        #[arg(long, default_value_t = 5)]
        k_item: usize,
        /// Comma-separated context kinds.
        #[arg(long, default_value = "month,day_of_month,day_of_week,hour")]
        schema: ContextSchema,
        /// Fail when more than this fraction of rows is malformed.
        #[arg(long, default_value_t = 0.01)]
        max_malformed: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes the best checkpoint, epoch log and manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `key=value` config file; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ablation: no context embeddings, item-only attention.
        #[arg(long)]
        no_context: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Rank held-out targets against sampled negatives.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// val, test or train
        #[arg(long, default_value = "test")]
        split: EvalSplit,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Defaults to the checkpoint's eval_negatives.
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Head redundancy and mixture parameters of a checkpoint.
    DiagnoseHeads {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic events.
    Synth {
        /// `key=value` spec file; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Preprocess {
            input,
            format,
            header,
            k_user,
            k_item,
            schema,
            max_malformed,
            out,
            force,
        } => {
            let mut format = match format {
                Format::Tsv => EventFormat::tsv(),
                Format::Csv => EventFormat::csv(),
                Format::Movielens => EventFormat::movielens(),
            };
            format.has_header = header;
            format.max_malformed_fraction = max_malformed;
            commands::preprocess(&PreprocessArgs {
                input,
                format,
                k_user,
                k_item,
                schema,
                out,
                force,
            })
        }
        Command::Train {
            data,
            config,
            out,
            no_context,
            seed,
            force,
        } => commands::train_cmd(&TrainArgs {
            data,
            config,
            out,
            no_context,
            seed,
            force,
        }),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            seed,
            negatives,
            out,
        } => commands::evaluate_cmd(&EvaluateArgs {
            checkpoint,
            data,
            split,
            seed,
            negatives,
            out,
        }),
        Command::DiagnoseHeads {
            checkpoint,
            data,
            probes,
            seed,
            out,
        } => commands::diagnose_cmd(&DiagnoseArgs {
            checkpoint,
            data,
            probes,
            seed,
            out,
        }),
        Command::Synth { spec, out } => commands::synth_cmd(spec.as_deref(), &out),
    }
}
