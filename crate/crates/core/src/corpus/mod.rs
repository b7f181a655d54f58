//! Transcripts, vocabulary, timing-labeled samples and batching.
//!
//! A transcript of `m` turns yields `m - 1` samples per agent role: the
//! context is every prefix ending at turn `i`, and the label says whether
//! the agent is the one who utters turn `i + 1`. When it is not, the reply
//! is the single silence token.

mod batch;
mod io;
mod samples;
mod synth;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{make_batches, Batch, EncodedSample};
pub use io::{load_samples, load_transcripts, read_transcripts, write_samples, write_transcripts};
pub use samples::{extract_all, extract_samples, AgentSelection};
pub use synth::{gen_synthetic, synthetic_utterance, CUE};
pub use tokenize::tokenize;
pub use vocab::Vocab;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const SILENCE: &str = "<silence>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SILENCE_ID: usize = 4;

pub const SPECIALS: [&str; 5] = [PAD, UNK, SOS, EOS, SILENCE];

/// Speaker index of the role the model plays. Speakers are indexed relative
/// to the agent, so the agent's own turns are always row 0 of the user
/// embedding table and everyone else's are row 1.
pub const AGENT_ROLE: usize = 0;
pub const USER_ROLE: usize = 1;

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: record {id:?}: {message}")]
    Schema {
        line: usize,
        id: String,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            speaker: speaker.into(),
            tokens,
        }
    }

    pub fn from_text(speaker: impl Into<String>, text: &str) -> Self {
        Self::new(speaker, tokenize(text))
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err(format!("empty utterance by {:?}", self.speaker));
        }
        if let Some(t) = self.tokens.iter().find(|t| is_special(t)) {
            return Err(format!("reserved token {t:?} inside an utterance"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub id: String,
    pub turns: Vec<Utterance>,
}

impl Transcript {
    /// Distinct speaker labels in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if !out.contains(&t.speaker.as_str()) {
                out.push(&t.speaker);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.turns.len() < 2 {
            return Err(format!(
                "needs at least 2 turns, found {}",
                self.turns.len()
            ));
        }
        let speakers = self.speakers();
        if speakers.len() != 2 {
            return Err(format!(
                "expected exactly 2 speakers, found {}: {:?}",
                speakers.len(),
                speakers
            ));
        }
        self.turns.iter().try_for_each(Utterance::validate)
    }
}

/// One timing-labeled training instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub id: String,
    pub agent: String,
    pub context: Vec<Utterance>,
    #[serde(with = "decision_int")]
    pub decision: bool,
    pub reply: Vec<String>,
}

impl DialogueSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.context.is_empty() {
            return Err("empty context".into());
        }
        self.context.iter().try_for_each(Utterance::validate)?;
        let silent = self.reply.len() == 1 && self.reply[0] == SILENCE;
        if self.decision == silent {
            return Err("decision must be 1 exactly when the reply is not [<silence>]".into());
        }
        if self.decision {
            if let Some(t) = self.reply.iter().find(|t| is_special(t)) {
                return Err(format!("reserved token {t:?} inside the reply"));
            }
        }
        Ok(())
    }

    /// Relative speaker index of every context turn.
    pub fn speaker_roles(&self) -> Vec<usize> {
        self.context
            .iter()
            .map(|u| {
                if u.speaker == self.agent {
                    AGENT_ROLE
                } else {
                    USER_ROLE
                }
            })
            .collect()
    }
}

mod decision_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(D::Error::custom(format!(
                "decision must be 0 or 1, got {v}"
            ))),
        }
    }
}
