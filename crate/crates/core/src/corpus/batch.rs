use rand::seq::SliceRandom;
use rand::Rng;

use super::{DialogueSample, Vocab, EOS_ID, PAD_ID};

/// A sample mapped to vocabulary indices, without padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSample {
    pub id: String,
    pub utterances: Vec<Vec<usize>>,
    /// Relative speaker index per context turn (agent = 0).
    pub speakers: Vec<usize>,
    /// 1-based turn index per context turn.
    pub positions: Vec<usize>,
    pub agent: usize,
    pub decision: bool,
    /// Reply indices terminated by EOS.
    pub reply: Vec<usize>,
}

impl EncodedSample {
    pub fn encode(sample: &DialogueSample, vocab: &Vocab) -> Self {
        let mut reply = vocab.encode(&sample.reply);
        reply.push(EOS_ID);
        Self {
            id: sample.id.clone(),
            utterances: sample
                .context
                .iter()
                .map(|u| vocab.encode(&u.tokens))
                .collect(),
            speakers: sample.speaker_roles(),
            positions: (1..=sample.context.len()).collect(),
            agent: super::AGENT_ROLE,
            decision: sample.decision,
            reply,
        }
    }

    pub fn encode_all(samples: &[DialogueSample], vocab: &Vocab) -> Vec<Self> {
        samples.iter().map(|s| Self::encode(s, vocab)).collect()
    }
}

/// Padded, index-mapped group of samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[sample][turn][token]`, every turn padded with PAD to the batch-wide
    /// longest utterance.
    pub context_tokens: Vec<Vec<Vec<usize>>>,
    pub context_lengths: Vec<Vec<usize>>,
    pub speakers: Vec<Vec<usize>>,
    pub positions: Vec<Vec<usize>>,
    pub agents: Vec<usize>,
    pub decisions: Vec<bool>,
    /// Replies with EOS appended, padded with PAD.
    pub replies: Vec<Vec<usize>>,
    pub reply_lengths: Vec<usize>,
}

impl Batch {
    pub fn from_encoded(items: &[&EncodedSample]) -> Self {
        let max_utt = items
            .iter()
            .flat_map(|s| s.utterances.iter().map(Vec::len))
            .max()
            .unwrap_or(0);
        let max_reply = items.iter().map(|s| s.reply.len()).max().unwrap_or(0);
        let pad = |v: &[usize], n: usize| {
            let mut p = v.to_vec();
            p.resize(n, PAD_ID);
            p
        };
        Self {
            ids: items.iter().map(|s| s.id.clone()).collect(),
            context_tokens: items
                .iter()
                .map(|s| s.utterances.iter().map(|u| pad(u, max_utt)).collect())
                .collect(),
            context_lengths: items
                .iter()
                .map(|s| s.utterances.iter().map(Vec::len).collect())
                .collect(),
            speakers: items.iter().map(|s| s.speakers.clone()).collect(),
            positions: items.iter().map(|s| s.positions.clone()).collect(),
            agents: items.iter().map(|s| s.agent).collect(),
            decisions: items.iter().map(|s| s.decision).collect(),
            replies: items.iter().map(|s| pad(&s.reply, max_reply)).collect(),
            reply_lengths: items.iter().map(|s| s.reply.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Unpadded view of sample `b`.
    pub fn sample(&self, b: usize) -> EncodedSample {
        EncodedSample {
            id: self.ids[b].clone(),
            utterances: self.context_tokens[b]
                .iter()
                .zip(&self.context_lengths[b])
                .map(|(u, &n)| u[..n].to_vec())
                .collect(),
            speakers: self.speakers[b].clone(),
            positions: self.positions[b].clone(),
            agent: self.agents[b],
            decision: self.decisions[b],
            reply: self.replies[b][..self.reply_lengths[b]].to_vec(),
        }
    }

    pub fn samples(&self) -> Vec<EncodedSample> {
        (0..self.len()).map(|b| self.sample(b)).collect()
    }
}

/// Shuffles with `rng`, encodes (out-of-vocabulary tokens become UNK, every
/// reply gets EOS) and chunks into batches of `batch_size`.
pub fn make_batches<R: Rng + ?Sized>(
    samples: &[DialogueSample],
    vocab: &Vocab,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    let encoded = EncodedSample::encode_all(samples, vocab);
    batches_from_encoded(&encoded, batch_size, rng)
}

pub(crate) fn batches_from_encoded<R: Rng + ?Sized>(
    encoded: &[EncodedSample],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| Batch::from_encoded(&c.iter().map(|&i| &encoded[i]).collect::<Vec<_>>()))
        .collect()
}
