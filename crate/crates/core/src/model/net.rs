use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use w2t_numerics::{Mode, NumericsError, Real, Tape, Tensor, Var};

use super::{EncoderMode, ModelConfig, ModelError, ModelParams};
use crate::convgraph::{build_graph, ConvGraph};
use crate::corpus::{EncodedSample, SOS_ID};

type Result<T, E = ModelError> = std::result::Result<T, E>;

const LEAKY_SLOPE: f64 = 0.2;

/// Names the GRU cells of the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellId {
    UttFwd,
    UttBwd,
    CtxFwd,
    CtxBwd,
    Msg,
    Upd,
    Dec,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    w_z: Var,
    w_r: Var,
    w_c: Var,
    b_z: Var,
    b_r: Var,
    b_c: Var,
    hidden: usize,
    input: usize,
}

/// Input-side gate pre-activations `W_x · x + b`, reusable across hidden
/// states.
struct Proj {
    z: Var,
    r: Var,
    c: Var,
}

#[derive(Clone, Copy, Debug)]
enum Graph {
    None,
    Dggnn { msg: Cell, upd: Cell },
    Gcn { w_msg: Var, w_upd: Var, bias: Var },
    Ggat { w_msg: Var, attn: Var, upd: Cell },
}

/// Parameters bound to a tape, with every forward computation of the model.
pub struct Net<'a, T: Real> {
    tape: &'a Tape<T>,
    cfg: &'a ModelConfig,
    vars: Vec<Var>,
    vocab_size: usize,
    word_emb: Var,
    utt: [Cell; 2],
    ctx: [Cell; 2],
    user_emb: Var,
    pos_emb: Var,
    graph: Graph,
    mlp: Vec<(Var, Var)>,
    init_w: Var,
    init_b: Var,
    dec: Cell,
    out_w: Var,
    out_b: Var,
}

/// Intermediate values of one sample's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// Sentence embeddings `u_i`.
    pub utterances: Vec<Tensor<T>>,
    /// Sequential states `h_i^0`.
    pub context: Vec<Tensor<T>>,
    /// `layers[k][i]` is node `i + 1` after `k` graph layers; `layers[0]`
    /// holds the augmented features `[h_i^0; U; P]`.
    pub layers: Vec<Vec<Tensor<T>>>,
    pub decision: Option<f64>,
    /// Teacher-forced decoder logits per reply token.
    pub logits: Vec<Tensor<T>>,
}

/// Loss terms of a batch, still on the tape.
pub struct BatchForward {
    /// Speak probability per sample, when the decision head is enabled.
    pub decision: Option<Vec<Var>>,
    /// Cross-entropy per reply token (EOS included), per sample.
    pub token_losses: Vec<Vec<Var>>,
}

/// Encoder outputs for one context.
pub(crate) struct Encoded {
    pub utterances: Vec<Var>,
    pub context: Vec<Var>,
    pub layers: Vec<Vec<Option<Var>>>,
    pub h0_last: Var,
    pub hk_last: Var,
}

fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> ModelError {
    ModelError::Numerics(NumericsError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

impl<'a, T: Real> Net<'a, T> {
    /// Records every parameter as a leaf of `tape`.
    pub fn new(tape: &'a Tape<T>, cfg: &'a ModelConfig, params: &ModelParams<T>) -> Result<Self> {
        let vars: Vec<Var> = params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        Self::bind(tape, cfg, params.names(), &vars)
    }

    /// Binds existing tape values, given in the order of `names`.
    pub fn bind(
        tape: &'a Tape<T>,
        cfg: &'a ModelConfig,
        names: &[String],
        vars: &[Var],
    ) -> Result<Self> {
        let get = |n: &str| -> Result<Var> {
            names
                .iter()
                .position(|x| x == n)
                .map(|i| vars[i])
                .ok_or_else(|| ModelError::Param {
                    name: n.to_string(),
                    message: "missing".into(),
                })
        };
        let cell = |prefix: &str| -> Result<Cell> {
            let w_z = get(&format!("{prefix}.w_z"))?;
            let shape = tape.shape(w_z);
            Ok(Cell {
                w_z,
                w_r: get(&format!("{prefix}.w_r"))?,
                w_c: get(&format!("{prefix}.w_c"))?,
                b_z: get(&format!("{prefix}.b_z"))?,
                b_r: get(&format!("{prefix}.b_r"))?,
                b_c: get(&format!("{prefix}.b_c"))?,
                hidden: shape[0],
                input: shape[1] - shape[0],
            })
        };
        let graph = match cfg.encoder_mode {
            EncoderMode::None => Graph::None,
            EncoderMode::Dggnn => Graph::Dggnn {
                msg: cell("msg")?,
                upd: cell("upd")?,
            },
            EncoderMode::Gcn => Graph::Gcn {
                w_msg: get("gcn.w_msg")?,
                w_upd: get("gcn.w_upd")?,
                bias: get("gcn.bias")?,
            },
            EncoderMode::Ggat => Graph::Ggat {
                w_msg: get("gat.w_msg")?,
                attn: get("gat.attn")?,
                upd: cell("upd")?,
            },
        };
        let mlp = if cfg.decision_enabled {
            (0..=cfg.decision_hidden.len())
                .map(|i| {
                    Ok((
                        get(&format!("dec_mlp.{i}.w"))?,
                        get(&format!("dec_mlp.{i}.b"))?,
                    ))
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let word_emb = get("word_emb")?;
        Ok(Self {
            tape,
            cfg,
            vars: vars.to_vec(),
            vocab_size: tape.shape(word_emb)[0],
            word_emb,
            utt: [cell("utt_fwd")?, cell("utt_bwd")?],
            ctx: [cell("ctx_fwd")?, cell("ctx_bwd")?],
            user_emb: get("user_emb")?,
            pos_emb: get("pos_emb")?,
            graph,
            mlp,
            init_w: get("init.w")?,
            init_b: get("init.b")?,
            dec: cell("dec")?,
            out_w: get("out.w")?,
            out_b: get("out.b")?,
        })
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    /// Parameter values in layout order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn zeros(&self, rows: Option<usize>, d: usize) -> Var {
        match rows {
            Some(r) => self.tape.leaf(Tensor::zeros(&[r, d])),
            None => self.tape.leaf(Tensor::zeros(&[d])),
        }
    }

    fn cell(&self, id: CellId) -> Result<Cell> {
        Ok(match (id, self.graph) {
            (CellId::UttFwd, _) => self.utt[0],
            (CellId::UttBwd, _) => self.utt[1],
            (CellId::CtxFwd, _) => self.ctx[0],
            (CellId::CtxBwd, _) => self.ctx[1],
            (CellId::Dec, _) => self.dec,
            (CellId::Msg, Graph::Dggnn { msg, .. }) => msg,
            (CellId::Upd, Graph::Dggnn { upd, .. } | Graph::Ggat { upd, .. }) => upd,
            _ => {
                return Err(ModelError::Config(format!(
                    "no {id:?} cell with encoder mode {:?}",
                    self.cfg.encoder_mode
                )))
            }
        })
    }

    fn project(&self, c: &Cell, x: Var) -> Result<Proj> {
        let xs = self.tape.shape(x);
        if xs.last() != Some(&c.input) {
            return Err(dim_err("gru input", &[c.hidden, c.hidden + c.input], &xs));
        }
        let t = self.tape;
        Ok(Proj {
            z: t.linear(c.w_z, x, Some(c.b_z), c.hidden)?,
            r: t.linear(c.w_r, x, Some(c.b_r), c.hidden)?,
            c: t.linear(c.w_c, x, Some(c.b_c), c.hidden)?,
        })
    }

    fn step(&self, c: &Cell, p: &Proj, h: Var) -> Result<Var> {
        let hs = self.tape.shape(h);
        if hs.last() != Some(&c.hidden) {
            return Err(dim_err("gru hidden", &[c.hidden, c.hidden + c.input], &hs));
        }
        let t = self.tape;
        let z = t.sigmoid(t.add(t.linear(c.w_z, h, None, 0)?, p.z)?);
        let r = t.sigmoid(t.add(t.linear(c.w_r, h, None, 0)?, p.r)?);
        let cand = t.tanh(t.add(t.linear(c.w_c, t.mul(r, h)?, None, 0)?, p.c)?);
        Ok(t.add(t.mul(t.one_minus(z), h)?, t.mul(z, cand)?)?)
    }

    /// One GRU step with argument order (input, hidden). Rows of a matrix
    /// input are independent sequences.
    pub fn gru_cell(&self, id: CellId, x: Var, h: Var) -> Result<Var> {
        let c = self.cell(id)?;
        let p = self.project(&c, x)?;
        self.step(&c, &p, h)
    }

    fn embed_rows(&self, tokens: &[usize]) -> Result<Var> {
        let rows = tokens
            .iter()
            .map(|&tok| self.embed(tok))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.tape.stack(&rows)?)
    }

    fn embed(&self, tok: usize) -> Result<Var> {
        if tok >= self.vocab_size {
            return Err(ModelError::Token {
                index: tok,
                size: self.vocab_size,
            });
        }
        Ok(self.tape.gather_rows(self.word_emb, tok)?)
    }

    /// Bidirectional recurrence over equal-length sequences stacked as rows.
    /// `xs[t]` is `[rows, d]`; returns `[rows, 2H]` per time step.
    fn bigru_rows(
        &self,
        cells: &[Cell; 2],
        xs: &[Var],
        rows: usize,
        all_steps: bool,
    ) -> Result<Vec<Var>> {
        let (f, b) = (&cells[0], &cells[1]);
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = self.zeros(Some(rows), f.hidden);
        for &x in xs {
            h = self.step(f, &self.project(f, x)?, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; xs.len()];
        let mut h = self.zeros(Some(rows), b.hidden);
        for (t, &x) in xs.iter().enumerate().rev() {
            h = self.step(b, &self.project(b, x)?, h)?;
            bwd[t] = h;
        }
        if all_steps {
            fwd.iter()
                .zip(&bwd)
                .map(|(&a, &b)| Ok(self.tape.concat(&[a, b])?))
                .collect()
        } else {
            // Last forward state and last backward state (the one at t = 0).
            let last = *fwd.last().expect("non-empty sequence");
            Ok(vec![self.tape.concat(&[last, bwd[0]])?])
        }
    }

    /// Sentence embeddings `[forward last; backward last]`, one per
    /// utterance. Utterances of equal length are encoded together.
    pub fn encode_utterances(&self, utts: &[&[usize]]) -> Result<Vec<Var>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, u) in utts.iter().enumerate() {
            if u.is_empty() {
                return Err(ModelError::EmptyUtterance);
            }
            groups.entry(u.len()).or_default().push(i);
        }
        let mut out: Vec<Option<Var>> = vec![None; utts.len()];
        for (len, idxs) in groups {
            let xs = (0..len)
                .map(|t| self.embed_rows(&idxs.iter().map(|&i| utts[i][t]).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            let u = self.bigru_rows(&self.utt, &xs, idxs.len(), false)?[0];
            for (k, &i) in idxs.iter().enumerate() {
                out[i] = Some(self.tape.gather_rows(u, k)?);
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every utterance encoded"))
            .collect())
    }

    pub fn encode_utterance(&self, tokens: &[usize]) -> Result<Var> {
        Ok(self.encode_utterances(&[tokens])?[0])
    }

    /// Sequential states `h_i^0 = [forward_i; backward_i]` per context.
    /// Contexts of equal length are encoded together.
    pub fn encode_contexts(&self, ctxs: &[Vec<Var>]) -> Result<Vec<Vec<Var>>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in ctxs.iter().enumerate() {
            if c.is_empty() {
                return Err(ModelError::EmptyContext);
            }
            groups.entry(c.len()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); ctxs.len()];
        for (m, idxs) in groups {
            let xs = (0..m)
                .map(|t| {
                    Ok(self
                        .tape
                        .stack(&idxs.iter().map(|&i| ctxs[i][t]).collect::<Vec<_>>())?)
                })
                .collect::<Result<Vec<_>>>()?;
            let states = self.bigru_rows(&self.ctx, &xs, idxs.len(), true)?;
            for (k, &i) in idxs.iter().enumerate() {
                out[i] = states
                    .iter()
                    .map(|&s| Ok(self.tape.gather_rows(s, k)?))
                    .collect::<Result<_>>()?;
            }
        }
        Ok(out)
    }

    pub fn encode_context(&self, utterances: &[Var]) -> Result<Vec<Var>> {
        Ok(self.encode_contexts(&[utterances.to_vec()])?.remove(0))
    }

    /// Node feature `[h0; U_speaker; P_position]`; positions past the table
    /// reuse its last row.
    pub fn augment(&self, h0: Var, speaker: usize, position: usize) -> Result<Var> {
        if speaker > 1 {
            return Err(ModelError::Speaker(speaker));
        }
        let t = self.tape;
        let u = t.gather_rows(self.user_emb, speaker)?;
        let p = t.gather_rows(self.pos_emb, position.min(self.cfg.max_pos - 1))?;
        Ok(t.concat(&[h0, u, p])?)
    }

    /// First gate: the message GRU reads `h_i` as input and the neighbor
    /// `h_j` as its hidden state, so its reset gate filters the neighbor.
    pub fn message(&self, h_i: Var, h_j: Var) -> Result<Var> {
        self.gru_cell(CellId::Msg, h_i, h_j)
    }

    /// Attention weights of node feature `h_i` over its neighbors, from
    /// their projected features.
    pub fn attention(&self, p_i: Var, p_neighbors: &[Var]) -> Result<Var> {
        let Graph::Ggat { attn, .. } = self.graph else {
            return Err(ModelError::Config(
                "attention needs the ggat encoder".into(),
            ));
        };
        let t = self.tape;
        let scores = p_neighbors
            .iter()
            .map(|&p_j| Ok(t.leaky_relu(t.dot(attn, t.concat(&[p_i, p_j])?)?, T::of(LEAKY_SLOPE))))
            .collect::<Result<Vec<_>>>()?;
        Ok(t.softmax(t.concat(&scores)?)?)
    }

    fn node_update(
        &self,
        g: &ConvGraph,
        prev: &[Option<Var>],
        proj: &mut [Option<Var>],
        i: usize,
    ) -> Result<Var> {
        let t = self.tape;
        let feat = |j: usize| prev[j - 1].expect("needed feature computed");
        let h_i = feat(i);
        let nbrs = g.in_neighbors(i).expect("node in range");
        let d = self.cfg.d_node();
        match self.graph {
            Graph::None => Ok(h_i),
            Graph::Dggnn { msg, upd } => {
                let p = self.project(&msg, h_i)?;
                let msgs = nbrs
                    .iter()
                    .map(|&j| self.step(&msg, &p, feat(j)))
                    .collect::<Result<Vec<_>>>()?;
                let agg = t.mean_rows(&msgs, d)?;
                self.step(&upd, &self.project(&upd, h_i)?, agg)
            }
            Graph::Gcn { w_msg, w_upd, bias } => {
                let nb: Vec<Var> = nbrs.iter().map(|&j| feat(j)).collect();
                let agg = t.linear(w_msg, t.mean_rows(&nb, d)?, None, 0)?;
                Ok(t.relu(t.add(t.linear(w_upd, h_i, Some(bias), 0)?, agg)?))
            }
            Graph::Ggat { w_msg, upd, .. } => {
                let mut projected = |j: usize| -> Result<Var> {
                    if let Some(p) = proj[j - 1] {
                        return Ok(p);
                    }
                    let p = t.linear(w_msg, feat(j), None, 0)?;
                    proj[j - 1] = Some(p);
                    Ok(p)
                };
                let p_i = projected(i)?;
                let agg = if nbrs.is_empty() {
                    self.zeros(None, d)
                } else {
                    let ps = nbrs
                        .iter()
                        .map(|&j| projected(j))
                        .collect::<Result<Vec<_>>>()?;
                    let alpha = self.attention(p_i, &ps)?;
                    t.matmul(alpha, t.stack(&ps)?)?
                };
                self.step(&upd, &self.project(&upd, h_i)?, agg)
            }
        }
    }

    /// Runs the graph layers over node features. Only what the `targets`
    /// (1-based) need at the last layer is computed; `layers[k][i]` is
    /// `None` elsewhere. Layer 0 is the input.
    pub fn graph_encode(
        &self,
        g: &ConvGraph,
        feats: &[Var],
        targets: &[usize],
    ) -> Result<Vec<Vec<Option<Var>>>> {
        let n = feats.len();
        if g.n != n {
            return Err(dim_err("graph nodes", &[g.n], &[n]));
        }
        let k_layers = match self.graph {
            Graph::None => 0,
            _ => self.cfg.gnn_layers,
        };
        let mut need = vec![vec![false; n]; k_layers + 1];
        for &i in targets {
            g.in_neighbors(i)
                .map_err(|e| ModelError::Config(e.to_string()))?;
            need[k_layers][i - 1] = true;
        }
        for k in (1..=k_layers).rev() {
            for i in 1..=n {
                if need[k][i - 1] {
                    need[k - 1][i - 1] = true;
                    for &j in &g.in_adj[i - 1] {
                        need[k - 1][j - 1] = true;
                    }
                }
            }
        }
        let mut layers = vec![feats.iter().map(|&f| Some(f)).collect::<Vec<_>>()];
        for need_k in need.iter().skip(1) {
            let prev = layers.last().expect("layer 0 present");
            let mut proj = vec![None; n];
            let next = (1..=n)
                .map(|i| {
                    if need_k[i - 1] {
                        self.node_update(g, prev, &mut proj, i).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(next);
        }
        Ok(layers)
    }

    fn decide_rows<R: Rng + ?Sized>(&self, x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        if !self.cfg.decision_enabled {
            return Err(ModelError::DecisionDisabled);
        }
        let t = self.tape;
        let mut a = x;
        let last = self.mlp.len() - 1;
        for (l, &(w, b)) in self.mlp.iter().enumerate() {
            a = t.linear(w, a, Some(b), 0)?;
            if l < last {
                a = t.dropout(t.relu(a), self.cfg.dropout_ratio, mode, rng)?;
            }
        }
        Ok(t.sigmoid(a))
    }

    fn decision_input(&self, h_mk: Var, agent: usize) -> Result<Var> {
        if agent > 1 {
            return Err(ModelError::Speaker(agent));
        }
        let t = self.tape;
        Ok(t.concat(&[h_mk, t.gather_rows(self.user_emb, agent)?])?)
    }

    /// Speak probability from `[h_m^K; U_agent]`.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        h_mk: Var,
        agent: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !self.cfg.decision_enabled {
            return Err(ModelError::DecisionDisabled);
        }
        let x = self.decision_input(h_mk, agent)?;
        self.decide_rows(x, mode, rng)
    }

    /// `tanh(W · [t; h_m^0; h_m^K] + b)`.
    pub fn decode_init(&self, t_dec: Var, h0_m: Var, hk_m: Var) -> Result<Var> {
        let t = self.tape;
        let x = t.concat(&[t_dec, h0_m, hk_m])?;
        Ok(t.tanh(t.linear(self.init_w, x, Some(self.init_b), 0)?))
    }

    /// Embeds `prev`, advances the decoder and projects to logits.
    pub fn decode_step(&self, prev: usize, hidden: Var) -> Result<(Var, Var)> {
        let x = self.embed(prev)?;
        let h = self.gru_cell(CellId::Dec, x, hidden)?;
        let logits = self.tape.linear(self.out_w, h, Some(self.out_b), 0)?;
        Ok((logits, h))
    }

    fn graph_part(
        &self,
        h0: &[Var],
        sample: &EncodedSample,
        targets: &[usize],
    ) -> Result<Vec<Vec<Option<Var>>>> {
        let feats = h0
            .iter()
            .zip(&sample.speakers)
            .zip(&sample.positions)
            .map(|((&h, &s), &p)| self.augment(h, s, p))
            .collect::<Result<Vec<_>>>()?;
        let g = build_graph(&sample.speakers);
        self.graph_encode(&g, &feats, targets)
    }

    /// Encodes one context; with `full` every node of every layer is kept.
    pub(crate) fn encode_sample(&self, sample: &EncodedSample, full: bool) -> Result<Encoded> {
        let m = sample.utterances.len();
        if m == 0 {
            return Err(ModelError::EmptyContext);
        }
        let refs: Vec<&[usize]> = sample.utterances.iter().map(Vec::as_slice).collect();
        let utterances = self.encode_utterances(&refs)?;
        let context = self.encode_context(&utterances)?;
        let targets: Vec<usize> = if full { (1..=m).collect() } else { vec![m] };
        let layers = self.graph_part(&context, sample, &targets)?;
        let hk_last = layers.last().expect("layer 0 present")[m - 1].expect("target computed");
        Ok(Encoded {
            h0_last: context[m - 1],
            hk_last,
            utterances,
            context,
            layers,
        })
    }

    /// Teacher-forced forward pass over a batch. The decoder is conditioned
    /// on the gold decision label (always 1 when the decision head is
    /// disabled).
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        samples: &[&EncodedSample],
        mode: Mode,
        rng: &mut R,
    ) -> Result<BatchForward> {
        let t = self.tape;

        // Shared utterances (e.g. prefixes of one dialogue) are encoded once.
        let mut uniq: HashMap<&[usize], usize> = HashMap::new();
        let mut list: Vec<&[usize]> = Vec::new();
        let idx: Vec<Vec<usize>> = samples
            .iter()
            .map(|s| {
                s.utterances
                    .iter()
                    .map(|u| {
                        *uniq.entry(u.as_slice()).or_insert_with(|| {
                            list.push(u);
                            list.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        let enc = self.encode_utterances(&list)?;
        let ctxs: Vec<Vec<Var>> = idx
            .iter()
            .map(|ix| ix.iter().map(|&i| enc[i]).collect())
            .collect();
        let h0 = self.encode_contexts(&ctxs)?;

        let mut h0_last = Vec::with_capacity(samples.len());
        let mut hk_last = Vec::with_capacity(samples.len());
        for (s, h) in samples.iter().zip(&h0) {
            let m = h.len();
            let layers = self.graph_part(h, s, &[m])?;
            h0_last.push(h[m - 1]);
            hk_last.push(layers.last().expect("layer 0 present")[m - 1].expect("target computed"));
        }

        let decision = if self.cfg.decision_enabled {
            let rows = hk_last
                .iter()
                .zip(samples)
                .map(|(&h, s)| self.decision_input(h, s.agent))
                .collect::<Result<Vec<_>>>()?;
            let p = self.decide_rows(t.stack(&rows)?, mode, rng)?;
            Some(
                (0..samples.len())
                    .map(|b| Ok(t.gather_rows(p, b)?))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (b, s) in samples.iter().enumerate() {
            by_len.entry(s.reply.len()).or_default().push(b);
        }
        let mut token_losses = vec![Vec::new(); samples.len()];
        for (len, group) in by_len {
            let inits = group
                .iter()
                .map(|&b| {
                    let gold = !self.cfg.decision_enabled || samples[b].decision;
                    let td = t.scalar(if gold { T::one() } else { T::zero() });
                    self.decode_init(td, h0_last[b], hk_last[b])
                })
                .collect::<Result<Vec<_>>>()?;
            let mut h = t.stack(&inits)?;
            for step in 0..len {
                let prev: Vec<usize> = group
                    .iter()
                    .map(|&b| {
                        if step == 0 {
                            SOS_ID
                        } else {
                            samples[b].reply[step - 1]
                        }
                    })
                    .collect();
                h = self.gru_cell(CellId::Dec, self.embed_rows(&prev)?, h)?;
                let logits = t.linear(self.out_w, h, Some(self.out_b), 0)?;
                for (k, &b) in group.iter().enumerate() {
                    let target = samples[b].reply[step];
                    if target >= self.vocab_size {
                        return Err(ModelError::Token {
                            index: target,
                            size: self.vocab_size,
                        });
                    }
                    token_losses[b].push(t.softmax_xent(t.gather_rows(logits, k)?, target)?);
                }
            }
        }
        Ok(BatchForward {
            decision,
            token_losses,
        })
    }

    /// Every intermediate value of one sample, with all graph nodes kept.
    pub fn trace<R: Rng + ?Sized>(
        &self,
        sample: &EncodedSample,
        rng: &mut R,
    ) -> Result<ForwardTrace<T>> {
        let t = self.tape;
        let enc = self.encode_sample(sample, true)?;
        let val = |v: Var| t.value(v).clone();
        let decision = if self.cfg.decision_enabled {
            let p = self.decide(enc.hk_last, sample.agent, Mode::Eval, rng)?;
            Some(t.item(p).as_f64())
        } else {
            None
        };
        let gold = !self.cfg.decision_enabled || sample.decision;
        let td = t.scalar(if gold { T::one() } else { T::zero() });
        let mut h = self.decode_init(td, enc.h0_last, enc.hk_last)?;
        let mut logits = Vec::with_capacity(sample.reply.len());
        let mut prev = SOS_ID;
        for &tok in &sample.reply {
            let (l, next) = self.decode_step(prev, h)?;
            logits.push(val(l));
            h = next;
            prev = tok;
        }
        Ok(ForwardTrace {
            utterances: enc.utterances.iter().map(|&v| val(v)).collect(),
            context: enc.context.iter().map(|&v| val(v)).collect(),
            layers: enc
                .layers
                .iter()
                .map(|l| l.iter().map(|v| val(v.expect("full trace"))).collect())
                .collect(),
            decision,
            logits,
        })
    }
}
