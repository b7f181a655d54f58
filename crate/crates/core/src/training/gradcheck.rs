//! Finite-difference check of the full model's joint-loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use w2t_numerics::{grad_check, Mode};

use super::{joint_loss, TrainError};
use crate::corpus::{EncodedSample, EOS_ID, SILENCE_ID};
use crate::model::{param_group, EncoderMode, ModelConfig, ModelParams, Net};

/// Vocabulary size of the check fixture.
pub const CHECK_VOCAB: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub group: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelGradCheck {
    pub mode: EncoderMode,
    /// Groups in parameter-layout order.
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
}

/// Small configuration used by the check: every width at most 8.
pub fn check_config(mode: EncoderMode) -> ModelConfig {
    ModelConfig {
        encoder_mode: mode,
        ..ModelConfig::tiny()
    }
}

/// Random contexts of 1 to 4 turns, the first sample speaking and the
/// second silent.
pub fn check_samples(seed: u64) -> Vec<EncodedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> {
        (0..n)
            .map(|_| rng.gen_range(SILENCE_ID + 1..CHECK_VOCAB))
            .collect()
    };
    (0..3)
        .map(|i| {
            let m = rng.gen_range(1..=4);
            let decision = match i {
                0 => true,
                1 => false,
                _ => rng.gen(),
            };
            let utterances = (0..m).map(|_| {
                let len = rng.gen_range(1..=3);
                words(&mut rng, len)
            });
            let utterances: Vec<Vec<usize>> = utterances.collect();
            let reply = if decision {
                let len = rng.gen_range(1..=3);
                let mut r = words(&mut rng, len);
                r.push(EOS_ID);
                r
            } else {
                vec![SILENCE_ID, EOS_ID]
            };
            EncodedSample {
                id: format!("check-{i}"),
                utterances,
                speakers: (0..m).map(|_| rng.gen_range(0..2)).collect(),
                positions: (1..=m).collect(),
                agent: rng.gen_range(0..2),
                decision,
                reply,
            }
        })
        .collect()
}

/// Compares the analytic gradient of the joint loss (lambda = 1) with
/// central differences in f64, reporting the worst relative error of every
/// parameter group.
pub fn model_grad_check(
    mode: EncoderMode,
    seed: u64,
    eps: f64,
) -> Result<ModelGradCheck, TrainError> {
    let cfg = check_config(mode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<f64>::init(&cfg, CHECK_VOCAB, &mut rng);
    // Non-zero biases so their paths are exercised too.
    for t in params.tensors_mut() {
        if t.rank() == 1 {
            for x in t.data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let samples = check_samples(seed);
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let names = params.names().to_vec();
    let report = grad_check::<TrainError, _>(
        params.tensors(),
        |tape, vars| {
            let net = Net::bind(tape, &cfg, &names, vars)?;
            let out = net.forward_batch(&refs, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
            Ok(joint_loss(tape, &out, &refs, 1.0)?.total)
        },
        eps,
    )?;
    let mut groups: Vec<GroupError> = Vec::new();
    for (name, &e) in names.iter().zip(&report.per_param) {
        let g = param_group(name);
        match groups.iter_mut().find(|x| x.group == g) {
            Some(x) => x.max_rel_error = x.max_rel_error.max(e),
            None => groups.push(GroupError {
                group: g.to_string(),
                max_rel_error: e,
            }),
        }
    }
    Ok(ModelGradCheck {
        mode,
        groups,
        max_rel_error: report.max_error,
    })
}
