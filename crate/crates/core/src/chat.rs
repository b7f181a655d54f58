//! Interactive sessions in which the model decides when to talk.
//!
//! After every human turn, and again after each of its own utterances, the
//! model runs its decision head. It keeps talking while the speak
//! probability reaches the threshold, up to a cap on consecutive model
//! utterances, and otherwise yields the floor.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use w2t_numerics::{Mode, Tape};

use crate::corpus::{EncodedSample, Utterance, AGENT_ROLE, EOS_ID, USER_ROLE};
use crate::model::{generate, DecodeMode, Model, ModelConfig, ModelError, Net};

#[derive(Debug, Error)]
pub enum ChatError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid chat setting: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatConfig {
    /// Speaker label the model plays; the human gets the other label.
    pub role: String,
    /// Overrides the checkpoint's decision threshold.
    pub threshold: Option<f64>,
    /// Most model utterances in a row before the floor is handed back.
    pub max_consecutive: usize,
    pub seed: u64,
    pub decode: DecodeMode,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            role: "A".into(),
            threshold: None,
            max_consecutive: 5,
            seed: 0,
            decode: DecodeMode::Greedy,
        }
    }
}

/// What the model did at one decision point.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelEvent {
    /// Speak probability (absent without a decision head) and the text.
    Spoke {
        p: Option<f64>,
        text: String,
    },
    Silent {
        p: f64,
    },
    /// Decided to speak but decoded nothing; the floor is handed back.
    Empty {
        p: Option<f64>,
    },
    /// The consecutive-utterance cap was reached.
    Capped,
}

impl std::fmt::Display for ModelEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let prob = |p: &Option<f64>| p.map_or_else(|| "-".to_string(), |p| format!("{p:.3}"));
        match self {
            Self::Spoke { p, text } => write!(f, "[speak p={}] {text}", prob(p)),
            Self::Silent { p } => write!(f, "[silence p={p:.3}]"),
            Self::Empty { p } => write!(f, "[empty reply p={}]", prob(p)),
            Self::Capped => write!(f, "[turn cap reached]"),
        }
    }
}

pub struct ChatSession {
    model: Model,
    config: ModelConfig,
    role: String,
    user: String,
    max_consecutive: usize,
    decode: DecodeMode,
    context: Vec<Utterance>,
    rng: ChaCha8Rng,
    model_turns: usize,
}

impl ChatSession {
    pub fn new(model: Model, chat: ChatConfig) -> Result<Self, ChatError> {
        if chat.role.is_empty() {
            return Err(ChatError::Config("empty role".into()));
        }
        if chat.max_consecutive == 0 {
            return Err(ChatError::Config("max_consecutive must be positive".into()));
        }
        let mut config = model.config.clone();
        if let Some(t) = chat.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ChatError::Config(format!("threshold {t} outside [0, 1]")));
            }
            config.threshold = t;
        }
        let user = if chat.role == "A" { "B" } else { "A" }.to_string();
        Ok(Self {
            model,
            config,
            role: chat.role,
            user,
            max_consecutive: chat.max_consecutive,
            decode: chat.decode,
            context: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(chat.seed),
            model_turns: 0,
        })
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn user_role(&self) -> &str {
        &self.user
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    pub fn context(&self) -> &[Utterance] {
        &self.context
    }

    /// Model utterances emitted so far.
    pub fn model_turns(&self) -> usize {
        self.model_turns
    }

    /// Appends an utterance without running the model; blank text is
    /// ignored.
    pub fn push(&mut self, speaker: &str, text: &str) {
        let u = Utterance::from_text(speaker, text);
        if !u.tokens.is_empty() {
            self.context.push(u);
        }
    }

    fn encoded(&self) -> EncodedSample {
        let vocab = &self.model.vocab;
        EncodedSample {
            id: "chat".into(),
            utterances: self
                .context
                .iter()
                .map(|u| vocab.encode(&u.tokens))
                .collect(),
            speakers: self
                .context
                .iter()
                .map(|u| {
                    if u.speaker == self.role {
                        AGENT_ROLE
                    } else {
                        USER_ROLE
                    }
                })
                .collect(),
            positions: (1..=self.context.len()).collect(),
            agent: AGENT_ROLE,
            decision: true,
            reply: vec![EOS_ID],
        }
    }

    /// Speak probability for the current context, without generating.
    pub fn speak_probability(&mut self) -> Result<Option<f64>, ChatError> {
        if !self.config.decision_enabled {
            return Ok(None);
        }
        let tape = Tape::<f32>::new();
        let net = Net::new(&tape, &self.config, &self.model.params)?;
        let enc = net.encode_sample(&self.encoded(), false)?;
        let p = net.decide(enc.hk_last, AGENT_ROLE, Mode::Eval, &mut self.rng)?;
        Ok(Some(tape.item(p) as f64))
    }

    /// Lets the model take the floor: it speaks while its decision clears
    /// the threshold, up to the consecutive-utterance cap.
    pub fn respond(&mut self) -> Result<Vec<ModelEvent>, ChatError> {
        let mut events = Vec::new();
        for _ in 0..self.max_consecutive {
            let g = generate(
                &self.config,
                &self.model.params,
                &self.encoded(),
                self.decode,
                &mut self.rng,
            )?;
            if !g.speak {
                events.push(ModelEvent::Silent {
                    p: g.probability.expect("silence needs a decision head"),
                });
                return Ok(events);
            }
            let tokens = self.model.vocab.decode(&g.tokens);
            if tokens.is_empty() {
                events.push(ModelEvent::Empty { p: g.probability });
                return Ok(events);
            }
            let u = Utterance::new(self.role.clone(), tokens);
            events.push(ModelEvent::Spoke {
                p: g.probability,
                text: u.text(),
            });
            self.context.push(u);
            self.model_turns += 1;
        }
        events.push(ModelEvent::Capped);
        Ok(events)
    }

    /// Records a human turn and lets the model respond.
    pub fn user_says(&mut self, text: &str) -> Result<Vec<ModelEvent>, ChatError> {
        let before = self.context.len();
        let user = self.user.clone();
        self.push(&user, text);
        if self.context.len() == before {
            return Ok(Vec::new());
        }
        self.respond()
    }
}

/// Line-oriented loop: each input line is a human turn, `/ctx` prints the
/// context and `/quit` (or end of input) ends the session.
pub fn run_repl<R: BufRead, W: Write>(
    session: &mut ChatSession,
    input: R,
    mut out: W,
) -> Result<(), ChatError> {
    writeln!(
        out,
        "model plays {}, you play {}; threshold {:.3}; /ctx shows the context, /quit exits",
        session.role(),
        session.user_role(),
        session.threshold()
    )?;
    let mut lines = input.lines();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let Some(line) = lines.next() else {
            writeln!(out)?;
            return Ok(());
        };
        let line = line?;
        match line.trim() {
            "/quit" => return Ok(()),
            "/ctx" => {
                for u in session.context() {
                    writeln!(out, "{}: {}", u.speaker, u.text())?;
                }
            }
            "" => {}
            text => {
                for e in session.user_says(text)? {
                    writeln!(out, "{e}")?;
                }
            }
        }
    }
}
