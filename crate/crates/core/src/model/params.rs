use rand::Rng;
use w2t_numerics::{Real, Tensor};

use super::{EncoderMode, ModelConfig, ModelError};

const GRU_CELLS: [&str; 4] = ["utt_fwd", "utt_bwd", "ctx_fwd", "ctx_bwd"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    Zero,
}

fn gru_layout(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, hidden: usize, input: usize) {
    let cols = hidden + input;
    for g in ["w_z", "w_r", "w_c"] {
        out.push((
            format!("{name}.{g}"),
            vec![hidden, cols],
            Init::Uniform(cols),
        ));
    }
    for g in ["b_z", "b_r", "b_c"] {
        out.push((format!("{name}.{g}"), vec![hidden], Init::Zero));
    }
}

fn layout(cfg: &ModelConfig, vocab_size: usize) -> Vec<(String, Vec<usize>, Init)> {
    let h = cfg.gru_hidden;
    let d = cfg.d_node();
    let mut out = Vec::new();
    // A lookup reads a single row: fan-in 1.
    out.push((
        "word_emb".into(),
        vec![vocab_size, cfg.d_word],
        Init::Uniform(1),
    ));
    for (i, name) in GRU_CELLS.iter().enumerate() {
        let input = if i < 2 { cfg.d_word } else { 2 * h };
        gru_layout(&mut out, name, h, input);
    }
    out.push(("user_emb".into(), vec![2, cfg.d_user], Init::Uniform(1)));
    out.push((
        "pos_emb".into(),
        vec![cfg.max_pos, cfg.d_pos],
        Init::Uniform(1),
    ));
    match cfg.encoder_mode {
        EncoderMode::None => {}
        EncoderMode::Dggnn => {
            gru_layout(&mut out, "msg", d, d);
            gru_layout(&mut out, "upd", d, d);
        }
        EncoderMode::Gcn => {
            out.push(("gcn.w_msg".into(), vec![d, d], Init::Uniform(d)));
            out.push(("gcn.w_upd".into(), vec![d, d], Init::Uniform(d)));
            out.push(("gcn.bias".into(), vec![d], Init::Zero));
        }
        EncoderMode::Ggat => {
            out.push(("gat.w_msg".into(), vec![d, d], Init::Uniform(d)));
            out.push(("gat.attn".into(), vec![2 * d], Init::Uniform(2 * d)));
            gru_layout(&mut out, "upd", d, d);
        }
    }
    if cfg.decision_enabled {
        let mut prev = cfg.d_decision_in();
        for (i, &w) in cfg.decision_hidden.iter().chain(&[1]).enumerate() {
            out.push((format!("dec_mlp.{i}.w"), vec![w, prev], Init::Uniform(prev)));
            out.push((format!("dec_mlp.{i}.b"), vec![w], Init::Zero));
            prev = w;
        }
    }
    let init_in = cfg.d_init_in();
    out.push(("init.w".into(), vec![h, init_in], Init::Uniform(init_in)));
    out.push(("init.b".into(), vec![h], Init::Zero));
    gru_layout(&mut out, "dec", h, cfg.d_word);
    out.push(("out.w".into(), vec![vocab_size, h], Init::Uniform(h)));
    out.push(("out.b".into(), vec![vocab_size], Init::Zero));
    out
}

/// Reporting group of a parameter: everything before the first dot, so
/// e.g. all decision MLP layers report as `dec_mlp`.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Every trainable tensor, by name, in a layout fixed by the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Self {
        let (names, tensors) = layout(cfg, vocab_size)
            .into_iter()
            .map(|(n, shape, init)| {
                let t = match init {
                    Init::Uniform(fan_in) => {
                        Tensor::uniform(&shape, 1.0 / (fan_in as f64).sqrt(), rng)
                    }
                    Init::Zero => Tensor::zeros(&shape),
                };
                (n, t)
            })
            .unzip();
        Self { names, tensors }
    }

    pub fn zeros(cfg: &ModelConfig, vocab_size: usize) -> Self {
        let (names, tensors) = layout(cfg, vocab_size)
            .into_iter()
            .map(|(n, shape, _)| (n, Tensor::zeros(&shape)))
            .unzip();
        Self { names, tensors }
    }

    /// Reassembles parameters, checking names and shapes against the
    /// layout implied by `cfg`.
    pub fn from_named(
        cfg: &ModelConfig,
        vocab_size: usize,
        named: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, ModelError> {
        let expected = layout(cfg, vocab_size);
        if named.len() != expected.len() {
            return Err(ModelError::Param {
                name: String::new(),
                message: format!("expected {} tensors, found {}", expected.len(), named.len()),
            });
        }
        for ((name, t), (en, es, _)) in named.iter().zip(&expected) {
            if name != en {
                return Err(ModelError::Param {
                    name: name.clone(),
                    message: format!("expected tensor {en:?} at this position"),
                });
            }
            if t.shape() != es.as_slice() {
                return Err(ModelError::Param {
                    name: name.clone(),
                    message: format!("shape {:?}, expected {:?}", t.shape(), es),
                });
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}
