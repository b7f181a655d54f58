use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use w2t::chat::{run_repl, ChatConfig, ChatSession};
use w2t::convgraph::{build_graph, graph_stats};
use w2t::corpus::{
    extract_all, gen_synthetic, load_samples, load_transcripts, write_samples, write_transcripts,
    AgentSelection, CorpusError, DialogueSample, EncodedSample, Vocab,
};
use w2t::evaluation::{evaluate, EvalOptions};
use w2t::model::{DecodeMode, EncoderMode, Model};
use w2t::training::{load_checkpoint, model_grad_check, save_checkpoint, train, Checkpoint};

use crate::config::parse_config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Check(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data_err(path: &Path) -> impl FnOnce(CorpusError) -> CliError + '_ {
    move |e| match e {
        CorpusError::Io { .. } => CliError::Data(e.to_string()),
        e => CliError::Data(format!("{}: {e}", path.display())),
    }
}

fn record<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("records serialize");
    writeln!(out, "{line}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn balance(samples: &[DialogueSample]) -> serde_json::Value {
    let speak = samples.iter().filter(|s| s.decision).count();
    json!({"samples": samples.len(), "speak": speak, "silence": samples.len() - speak})
}

pub fn convert(
    input: &Path,
    output: &Path,
    agent: &AgentSelection,
    out: &mut impl Write,
) -> Result<()> {
    let transcripts = load_transcripts(input).map_err(data_err(input))?;
    let samples = extract_all(&transcripts, agent);
    write_samples(output, &samples).map_err(data_err(output))?;
    record(out, &balance(&samples))
}

pub fn stats(input: &Path, dot: Option<&str>, out: &mut impl Write) -> Result<()> {
    let transcripts = load_transcripts(input).map_err(data_err(input))?;
    record(out, &graph_stats(&transcripts))?;
    if let Some(id) = dot {
        let t = transcripts
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| CliError::Data(format!("no conversation with id {id:?}")))?;
        let speakers: Vec<&str> = t.turns.iter().map(|u| u.speaker.as_str()).collect();
        let g = build_graph(&speakers);
        record(out, &json!({"id": id, "dot": g.to_dot()}))?;
    }
    Ok(())
}

pub const SPLITS: [&str; 3] = ["train.jsonl", "dev.jsonl", "test.jsonl"];

/// Generates `n` dialogues and writes the first 80% as train, the next
/// 10% as dev and the rest as test.
pub fn synth(dir: &Path, n: usize, seed: u64, out: &mut impl Write) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let all = gen_synthetic(n, &mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let parts = [
        &all[..n_train],
        &all[n_train..n_train + n_dev],
        &all[n_train + n_dev..],
    ];
    for (name, part) in SPLITS.iter().zip(parts) {
        let path = dir.join(name);
        write_transcripts(&path, part).map_err(data_err(&path))?;
    }
    record(
        out,
        &json!({"train": parts[0].len(), "dev": parts[1].len(), "test": parts[2].len(), "seed": seed}),
    )
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn train_cmd(
    config: &Path,
    data_dir: &Path,
    output: &Path,
    out: &mut impl Write,
) -> Result<()> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let cfg =
        parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let load = |name: &str| -> Result<_> {
        let path = data_dir.join(name);
        load_transcripts(&path).map_err(data_err(&path))
    };
    let train_t = load("train.jsonl")?;
    let dev_t = load("dev.jsonl")?;
    let vocab = Vocab::build(&train_t, cfg.train.min_freq);
    let encode = |ts| EncodedSample::encode_all(&extract_all(ts, &cfg.train.agent), &vocab);
    let (train_s, dev_s) = (encode(&train_t), encode(&dev_t));
    eprintln!(
        "{}",
        json!({"vocab": vocab.len(), "train_samples": train_s.len(), "dev_samples": dev_s.len()})
    );
    let model = Model::new(
        cfg.model.clone(),
        vocab.clone(),
        &mut ChaCha8Rng::seed_from_u64(cfg.train.seed),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let outcome = train(model, &train_s, &dev_s, &cfg.train, |log| {
        eprintln!("{}", serde_json::to_string(log).expect("log serializes"));
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    save_checkpoint(
        &Checkpoint {
            model: outcome.best,
            train: cfg.train,
        },
        output,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    record(
        out,
        &json!({"checkpoint": output.display().to_string(), "best_epoch": outcome.best_epoch, "epochs": outcome.log.len()}),
    )
}

/// Reads either transcripts (records with `turns`) or extracted samples.
fn load_eval_samples(path: &Path, agent: &AgentSelection) -> Result<Vec<DialogueSample>> {
    let text = read_text(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_transcript = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("turns").is_some());
    if is_transcript {
        let ts = load_transcripts(path).map_err(data_err(path))?;
        Ok(extract_all(&ts, agent))
    } else {
        load_samples(path).map_err(data_err(path))
    }
}

pub fn eval_cmd(
    ckpt: &Path,
    data: &Path,
    report: Option<&Path>,
    include_silence: bool,
    out: &mut impl Write,
) -> Result<()> {
    let ck =
        load_checkpoint(ckpt).map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
    let samples = load_eval_samples(data, &ck.train.agent)?;
    let encoded = EncodedSample::encode_all(&samples, &ck.model.vocab);
    let opts = EvalOptions {
        include_silence_in_ppl: include_silence,
        batch_size: ck.train.batch_size,
    };
    let r = evaluate(&ck.model, &encoded, opts).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(path) = report {
        let mut bytes = serde_json::to_vec(&r).expect("report serializes");
        bytes.push(b'\n');
        write_file(path, &bytes)?;
    }
    record(out, &r)?;
    writeln!(out, "{r}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

pub struct ChatArgs {
    pub ckpt: PathBuf,
    pub role: Option<String>,
    pub seed: u64,
    pub threshold: Option<f64>,
    pub max_turns: usize,
    pub temperature: f64,
}

pub fn chat_cmd(args: ChatArgs, input: impl BufRead, out: impl Write) -> Result<()> {
    let ck = load_checkpoint(&args.ckpt)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.ckpt.display())))?;
    let role = args.role.unwrap_or_else(|| match &ck.train.agent {
        AgentSelection::Role(r) => r.clone(),
        AgentSelection::Both => "A".into(),
    });
    let chat = ChatConfig {
        role,
        threshold: args.threshold,
        max_consecutive: args.max_turns,
        seed: args.seed,
        decode: DecodeMode::with_temperature(args.temperature),
    };
    let mut session =
        ChatSession::new(ck.model, chat).map_err(|e| CliError::Config(e.to_string()))?;
    run_repl(&mut session, input, out).map_err(|e| CliError::Data(e.to_string()))
}

pub fn gradcheck(
    modes: &[EncoderMode],
    seed: u64,
    eps: f64,
    tol: f64,
    out: &mut impl Write,
) -> Result<()> {
    let mut worst = 0.0f64;
    for &mode in modes {
        let r = model_grad_check(mode, seed, eps).map_err(|e| CliError::Check(e.to_string()))?;
        for g in &r.groups {
            record(
                out,
                &json!({"mode": mode, "group": g.group, "max_rel_error": g.max_rel_error}),
            )?;
        }
        worst = worst.max(r.max_rel_error);
    }
    let pass = worst < tol;
    record(
        out,
        &json!({"max_rel_error": worst, "tol": tol, "pass": pass}),
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {worst:e} is not below {tol:e}"
        )))
    }
}
