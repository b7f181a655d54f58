use std::str::FromStr;

use super::{DialogueSample, Transcript, SILENCE};

/// Which role(s) the model plays when samples are extracted.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum AgentSelection {
    Role(String),
    #[default]
    Both,
}

impl FromStr for AgentSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "" => Err("empty agent role".into()),
            "both" => Ok(Self::Both),
            r => Ok(Self::Role(r.to_string())),
        }
    }
}

impl std::fmt::Display for AgentSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Role(r) => f.write_str(r),
            Self::Both => f.write_str("both"),
        }
    }
}

impl serde::Serialize for AgentSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for AgentSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// For every prefix ending at turn `i` (1 <= i <= m-1) and every selected
/// agent: the label is 1 iff that agent utters turn `i + 1`, and the reply
/// is that turn or `[<silence>]`.
///
/// Roles are matched by speaker label; a role that never speaks in `t`
/// produces no samples. With [`AgentSelection::Both`] both speakers are
/// used, in order of first appearance.
pub fn extract_samples(t: &Transcript, agent: &AgentSelection) -> Vec<DialogueSample> {
    let speakers = t.speakers();
    let agents: Vec<&str> = match agent {
        AgentSelection::Both => speakers,
        AgentSelection::Role(r) if speakers.contains(&r.as_str()) => vec![r.as_str()],
        AgentSelection::Role(_) => Vec::new(),
    };
    let m = t.turns.len();
    let mut out = Vec::with_capacity(agents.len() * m.saturating_sub(1));
    for i in 1..m {
        let next = &t.turns[i];
        for &a in &agents {
            let decision = next.speaker == a;
            out.push(DialogueSample {
                id: format!("{}:{}:{}", t.id, i, a),
                agent: a.to_string(),
                context: t.turns[..i].to_vec(),
                decision,
                reply: if decision {
                    next.tokens.clone()
                } else {
                    vec![SILENCE.to_string()]
                },
            });
        }
    }
    out
}

pub fn extract_all(transcripts: &[Transcript], agent: &AgentSelection) -> Vec<DialogueSample> {
    transcripts
        .iter()
        .flat_map(|t| extract_samples(t, agent))
        .collect()
}
