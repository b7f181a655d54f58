use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use w2t_numerics::{Mode, Real, Tape};

use super::{ModelConfig, ModelError, ModelParams, Net};
use crate::corpus::{EncodedSample, EOS_ID, SILENCE_ID, SOS_ID};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    /// Argmax, ties broken towards the lowest index.
    Greedy,
    /// Draw from `softmax(logits / temperature)`.
    Sample { temperature: f64 },
}

impl DecodeMode {
    /// Greedy at temperature zero, sampling otherwise.
    pub fn with_temperature(temperature: f64) -> Self {
        if temperature <= 0.0 {
            Self::Greedy
        } else {
            Self::Sample { temperature }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Speak probability, when the decision head is enabled.
    pub probability: Option<f64>,
    pub speak: bool,
    /// Reply token indices without EOS; `[SILENCE]` when silent.
    pub tokens: Vec<usize>,
}

fn pick<R: Rng + ?Sized>(logits: &[f64], mode: DecodeMode, rng: &mut R) -> usize {
    match mode {
        DecodeMode::Greedy => {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        }
        DecodeMode::Sample { temperature } => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits
                .iter()
                .map(|&l| ((l - max) / temperature).exp())
                .collect();
            WeightedIndex::new(&w).expect("finite logits").sample(rng)
        }
    }
}

/// Decides whether to speak in the context of `ctx` (its reply is ignored)
/// and, if so, decodes a reply from SOS until EOS or `max_decode_len`
/// tokens. The decoder is conditioned on the thresholded decision.
pub fn generate<T: Real, R: Rng + ?Sized>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    ctx: &EncodedSample,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<Generation, ModelError> {
    let tape = Tape::new();
    let net = Net::new(&tape, cfg, params)?;
    let enc = net.encode_sample(ctx, false)?;
    let (probability, speak) = if cfg.decision_enabled {
        let p = tape
            .item(net.decide(enc.hk_last, ctx.agent, Mode::Eval, rng)?)
            .as_f64();
        (Some(p), p >= cfg.threshold)
    } else {
        (None, true)
    };
    if !speak {
        return Ok(Generation {
            probability,
            speak,
            tokens: vec![SILENCE_ID],
        });
    }
    let mut h = net.decode_init(tape.scalar(T::one()), enc.h0_last, enc.hk_last)?;
    let mut prev = SOS_ID;
    let mut tokens = Vec::new();
    while tokens.len() < cfg.max_decode_len {
        let (logits, next) = net.decode_step(prev, h)?;
        h = next;
        let l: Vec<f64> = tape
            .value(logits)
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let tok = pick(&l, mode, rng);
        if tok == EOS_ID {
            break;
        }
        tokens.push(tok);
        prev = tok;
    }
    Ok(Generation {
        probability,
        speak,
        tokens,
    })
}
