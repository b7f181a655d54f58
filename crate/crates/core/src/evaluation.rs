//! Automatic metrics: perplexity, sentence BLEU-1..4, distinct-1/2 and the
//! speak/silence decision scores, gathered into an [`EvalReport`].
//!
//! BLEU is computed per sentence and averaged. Generation-quality metrics
//! (BLEU, distinct) use speak-labeled samples only; perplexity covers every
//! sample unless silence samples are excluded explicitly.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use w2t_numerics::Real;

use crate::corpus::{EncodedSample, EOS_ID};
use crate::model::{generate, DecodeMode, Model, ModelConfig, ModelError, ModelParams};
use crate::training::score_samples;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no {0} to evaluate")]
    Empty(&'static str),
    #[error("{predictions} predictions for {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Smoothing of the modified k-gram precisions for k >= 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Smoothing {
    /// `(matches + 1) / (total + 1)`.
    #[default]
    AddOne,
    /// Raw precision; a zero precision zeroes the score.
    None,
}

fn ngram_counts<S: Eq + Hash>(tokens: &[S], k: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= k {
        for w in tokens.windows(k) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped k-gram matches and the candidate's k-gram total.
fn modified_precision<S: Eq + Hash>(candidate: &[S], reference: &[S], k: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, k);
    let matches = ngram_counts(candidate, k)
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(k - 1))
}

/// Sentence BLEU with add-one smoothing on k >= 2.
pub fn bleu_n<S: Eq + Hash>(candidate: &[S], reference: &[S], n: usize) -> f64 {
    bleu_n_with(candidate, reference, n, Smoothing::AddOne)
}

/// Geometric mean of the modified 1..=n-gram precisions times the brevity
/// penalty `min(1, exp(1 - |ref| / |cand|))`. An empty candidate scores 0;
/// an order with no candidate k-grams has precision 1.
pub fn bleu_n_with<S: Eq + Hash>(
    candidate: &[S],
    reference: &[S],
    n: usize,
    smoothing: Smoothing,
) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = modified_precision(candidate, reference, k);
        let p = if k >= 2 && smoothing == Smoothing::AddOne {
            (m + 1) as f64 / (total + 1) as f64
        } else if total == 0 {
            // No k-grams in the candidate: nothing to contradict.
            1.0
        } else {
            m as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64)
        .exp()
        .min(1.0);
    bp * (log_sum / n as f64).exp()
}

/// Distinct n-grams across all responses over the total n-gram count; 0
/// when there are none.
pub fn distinct_n<S: Eq + Hash>(responses: &[Vec<S>], n: usize) -> f64 {
    assert!(n >= 1, "distinct order must be positive");
    let mut seen = std::collections::HashSet::new();
    let mut total = 0;
    for r in responses {
        if r.len() >= n {
            for w in r.windows(n) {
                seen.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecisionMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn class_f1(predictions: &[bool], labels: &[bool], class: bool) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Accuracy and the unweighted mean of the speak and silence F1 scores. A
/// class absent from both sides scores F1 = 1.
pub fn decision_metrics(
    predictions: &[bool],
    labels: &[bool],
) -> Result<DecisionMetrics, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Length {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty("decisions"));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(DecisionMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: (class_f1(predictions, labels, true) + class_f1(predictions, labels, false))
            / 2.0,
    })
}

/// `exp` of the mean teacher-forced cross-entropy over reply tokens (EOS
/// included). Silence samples contribute `[SILENCE, EOS]` unless
/// `include_silence` is false.
pub fn perplexity<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    samples: &[EncodedSample],
    include_silence: bool,
    batch_size: usize,
) -> Result<f64, EvalError> {
    let kept: Vec<EncodedSample> = samples
        .iter()
        .filter(|s| include_silence || s.decision)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(EvalError::Empty("samples"));
    }
    let scores = score_samples(cfg, params, &kept, batch_size)?;
    let n: usize = scores.token_losses.iter().map(Vec::len).sum();
    let sum: f64 = scores.token_losses.iter().flatten().sum();
    Ok((sum / n as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub include_silence_in_ppl: bool,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            include_silence_in_ppl: true,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    /// Absent when the model has no decision head.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub total: usize,
    pub speak: usize,
    pub silence: usize,
}

impl EvalReport {
    /// Checks the range of every metric.
    pub fn check_bounds(&self) -> Result<(), String> {
        if self.ppl.is_nan() || self.ppl < 1.0 {
            return Err(format!("ppl {} below 1", self.ppl));
        }
        let unit = [
            ("bleu1", Some(self.bleu1)),
            ("bleu2", Some(self.bleu2)),
            ("bleu3", Some(self.bleu3)),
            ("bleu4", Some(self.bleu4)),
            ("distinct1", Some(self.distinct1)),
            ("distinct2", Some(self.distinct2)),
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("{name} {v} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        writeln!(
            f,
            "{:>9} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>8} {:>8}",
            "PPL", "BLEU1", "BLEU2", "BLEU3", "BLEU4", "distinct1", "distinct2", "Acc", "Macro-F1"
        )?;
        writeln!(
            f,
            "{:>9.3} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>9.4} {:>8} {:>8}",
            self.ppl,
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.distinct1,
            self.distinct2,
            opt(self.accuracy),
            opt(self.macro_f1)
        )?;
        write!(
            f,
            "samples: {} ({} speak, {} silence)",
            self.total, self.speak, self.silence
        )
    }
}

/// Greedy generation for every sample followed by the full metric suite.
pub fn evaluate(
    model: &Model,
    samples: &[EncodedSample],
    opts: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty("samples"));
    }
    let cfg = &model.config;
    let ppl = perplexity(
        cfg,
        &model.params,
        samples,
        opts.include_silence_in_ppl,
        opts.batch_size,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut predictions = Vec::with_capacity(samples.len());
    let mut bleu = [0.0; 4];
    let mut responses = Vec::new();
    for s in samples {
        let g = generate(cfg, &model.params, s, DecodeMode::Greedy, &mut rng)?;
        predictions.push(g.speak);
        if s.decision {
            let reference: Vec<usize> = s.reply.iter().copied().filter(|&t| t != EOS_ID).collect();
            for (n, b) in bleu.iter_mut().enumerate() {
                *b += bleu_n(&g.tokens, &reference, n + 1);
            }
            responses.push(g.tokens);
        }
    }
    let speak = responses.len();
    if speak > 0 {
        for b in &mut bleu {
            *b /= speak as f64;
        }
    }
    let labels: Vec<bool> = samples.iter().map(|s| s.decision).collect();
    let decision = if cfg.decision_enabled {
        Some(decision_metrics(&predictions, &labels)?)
    } else {
        None
    };
    Ok(EvalReport {
        ppl,
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        distinct1: distinct_n(&responses, 1),
        distinct2: distinct_n(&responses, 2),
        accuracy: decision.map(|d| d.accuracy),
        macro_f1: decision.map(|d| d.macro_f1),
        total: samples.len(),
        speak,
        silence: samples.len() - speak,
    })
}
