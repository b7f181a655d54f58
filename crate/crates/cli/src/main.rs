//! `w2t`: data conversion, graph statistics, synthetic corpora, training,
//! evaluation, gradient checking and interactive chat.
//!
//! Structured output goes to standard output as one JSON record per line;
//! progress logs go to standard error. Exit codes: 0 success, 1 usage or
//! configuration error, 2 data or schema error, 3 failed check.

mod commands;
mod config;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use w2t::corpus::AgentSelection;
use w2t::model::EncoderMode;

use commands::{ChatArgs, CliError};

#[derive(Parser)]
#[command(
    name = "w2t",
    version,
    about = "Dialogue model that decides when to talk"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Dggnn,
    Gcn,
    Ggat,
    None,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Extract speak/silence samples from a transcript file.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Speaker label the model plays, or `both`.
        #[arg(long, default_value = "both")]
        agent: AgentSelection,
    },
    /// Conversation-graph statistics of a transcript file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also print the graph of this conversation in DOT form.
        #[arg(long)]
        dot: Option<String>,
    },
    /// Generate the synthetic corpus as train/dev/test transcript files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        dialogues: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train from `train.jsonl` and `dev.jsonl` in a data directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "data-dir", alias = "data_dir")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a transcript or sample file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Leave silence samples out of the perplexity.
        #[arg(long = "exclude-silence-ppl", alias = "exclude_silence_ppl")]
        exclude_silence_ppl: bool,
    },
    /// Chat with a checkpoint on standard input and output.
    Chat {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        role: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threshold: Option<f64>,
        /// Most model utterances in a row.
        #[arg(long = "max-turns", alias = "max_turns", default_value_t = 5)]
        max_turns: usize,
        /// Sampling temperature; 0 decodes greedily.
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, value_enum, default_value = "dggnn")]
        mode: CheckMode,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Convert {
            input,
            out: path,
            agent,
        } => commands::convert(&input, &path, &agent, &mut out),
        Command::Stats { input, dot } => commands::stats(&input, dot.as_deref(), &mut out),
        Command::Synth {
            out: dir,
            dialogues,
            seed,
        } => commands::synth(&dir, dialogues, seed, &mut out),
        Command::Train {
            config,
            data_dir,
            out: path,
        } => commands::train_cmd(&config, &data_dir, &path, &mut out),
        Command::Eval {
            ckpt,
            data,
            report,
            exclude_silence_ppl,
        } => commands::eval_cmd(
            &ckpt,
            &data,
            report.as_deref(),
            !exclude_silence_ppl,
            &mut out,
        ),
        Command::Chat {
            ckpt,
            role,
            seed,
            threshold,
            max_turns,
            temperature,
        } => {
            let args = ChatArgs {
                ckpt,
                role,
                seed,
                threshold,
                max_turns,
                temperature,
            };
            commands::chat_cmd(args, io::stdin().lock(), out)
        }
        Command::Gradcheck {
            seed,
            eps,
            tol,
            mode,
        } => {
            let modes = match mode {
                CheckMode::Dggnn => vec![EncoderMode::Dggnn],
                CheckMode::Gcn => vec![EncoderMode::Gcn],
                CheckMode::Ggat => vec![EncoderMode::Ggat],
                CheckMode::None => vec![EncoderMode::None],
                CheckMode::All => vec![
                    EncoderMode::Dggnn,
                    EncoderMode::Gcn,
                    EncoderMode::Ggat,
                    EncoderMode::None,
                ],
            };
            commands::gradcheck(&modes, seed, eps, tol, &mut out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
