use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Transcript, SPECIALS, UNK_ID};

/// Token/index bijection. The five special tokens occupy indices 0..5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials first, then every token seen at least `min_freq` times,
    /// by descending frequency and then lexicographically.
    pub fn build(transcripts: &[Transcript], min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tr in transcripts {
            for u in &tr.turns {
                for tok in &u.tokens {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !super::is_special(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("specials are in place")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(format!("vocabulary must start with {SPECIALS:?}"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary token {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(super::UNK).to_string())
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, String> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Utterance, PAD_ID, SILENCE, SILENCE_ID};

    fn corpus(words: &[&str]) -> Vec<Transcript> {
        vec![Transcript {
            id: "t".into(),
            turns: vec![
                Utterance::new("A", words.iter().map(|s| s.to_string()).collect()),
                Utterance::new("B", vec!["a".into()]),
            ],
        }]
    }

    #[test]
    fn threshold_rule_maps_rare_tokens_to_unk() {
        let v = Vocab::build(&corpus(&["a", "a", "b"]), 2);
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.encode(&["b"]), vec![UNK_ID]);
    }

    #[test]
    fn min_freq_one_keeps_everything_in_frequency_order() {
        let v = Vocab::build(&corpus(&["c", "b", "b", "a"]), 1);
        assert_eq!(&v.tokens()[5..], ["a", "b", "c"]);
        assert_eq!(v.id(SILENCE), SILENCE_ID);
        assert_eq!(v.id("<pad>"), PAD_ID);
    }

    #[test]
    fn build_is_deterministic() {
        let c = corpus(&["x", "y", "z", "y"]);
        assert_eq!(Vocab::build(&c, 1), Vocab::build(&c, 1));
        assert_eq!(Vocab::build(&c, 1).hash(), Vocab::build(&c, 1).hash());
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let v = Vocab::build(&corpus(&["x", "y"]), 1);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocab>(r#"["x","y"]"#).is_err());
    }
}
