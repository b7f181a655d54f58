use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which graph encoder sits between the sequential context encoder and the
/// generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// No graph encoder; the generator reads the augmented sequential
    /// features directly.
    None,
    /// Double-gated: a message GRU per edge, mean aggregation, an update GRU.
    #[default]
    Dggnn,
    /// Linear message, mean aggregation, linear update with relu.
    Gcn,
    /// Attention-weighted linear messages with the gated update.
    Ggat,
}

impl std::str::FromStr for EncoderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "dggnn" => Ok(Self::Dggnn),
            "gcn" => Ok(Self::Gcn),
            "ggat" => Ok(Self::Ggat),
            _ => Err(format!(
                "unknown encoder mode {s:?} (none, dggnn, gcn, ggat)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_word: usize,
    /// Hidden size of every GRU: utterance, context and decoder.
    pub gru_hidden: usize,
    pub d_user: usize,
    pub d_pos: usize,
    pub gnn_layers: usize,
    pub encoder_mode: EncoderMode,
    pub decision_enabled: bool,
    /// Hidden widths of the decision MLP; a final width-1 sigmoid layer is
    /// always appended.
    pub decision_hidden: Vec<usize>,
    pub dropout_ratio: f64,
    pub max_pos: usize,
    pub max_decode_len: usize,
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            d_word: 64,
            gru_hidden: 64,
            d_user: 16,
            d_pos: 16,
            gnn_layers: 2,
            encoder_mode: EncoderMode::Dggnn,
            decision_enabled: true,
            decision_hidden: vec![64, 32, 16],
            dropout_ratio: 0.3,
            max_pos: 64,
            max_decode_len: 30,
            threshold: 0.5,
        }
    }

    pub fn large() -> Self {
        Self {
            d_word: 300,
            gru_hidden: 500,
            d_user: 32,
            d_pos: 32,
            gnn_layers: 3,
            decision_hidden: vec![500, 256, 128],
            ..Self::desk()
        }
    }

    /// Tiny dimensions for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            d_word: 4,
            gru_hidden: 3,
            d_user: 2,
            d_pos: 2,
            gnn_layers: 2,
            decision_hidden: vec![4, 3],
            dropout_ratio: 0.0,
            max_pos: 8,
            max_decode_len: 6,
            ..Self::desk()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "large" => Some(Self::large()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Width of a node feature `[h0; U; P]`.
    pub fn d_node(&self) -> usize {
        2 * self.gru_hidden + self.d_user + self.d_pos
    }

    pub fn d_decision_in(&self) -> usize {
        self.d_node() + self.d_user
    }

    /// Width of the decoder-init input `[t; h0_m; hK_m]`.
    pub fn d_init_in(&self) -> usize {
        1 + 2 * self.gru_hidden + self.d_node()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_word == 0 || self.gru_hidden == 0 || self.d_user == 0 || self.d_pos == 0 {
            return bad("dimensions must be positive");
        }
        if self.max_pos < 2 {
            return bad("max_pos must be at least 2");
        }
        if self.max_decode_len == 0 {
            return bad("max_decode_len must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return bad("dropout_ratio must lie in [0, 1)");
        }
        if self.decision_hidden.contains(&0) {
            return bad("decision_hidden widths must be positive");
        }
        Ok(())
    }
}
