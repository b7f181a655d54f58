use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use w2t::convgraph::build_graph;
use w2t::corpus::{EncodedSample, EOS_ID, PAD_ID, SILENCE_ID};
use w2t::model::{
    generate, param_group, CellId, DecodeMode, EncoderMode, ModelConfig, ModelError, ModelParams,
    Net,
};
use w2t::numerics::{grad_check, Mode, Tape, Tensor, Var};

type P = ModelParams<f64>;

fn cfg(mode: EncoderMode) -> ModelConfig {
    ModelConfig {
        encoder_mode: mode,
        ..ModelConfig::tiny()
    }
}

fn random_params(c: &ModelConfig, v: usize, seed: u64) -> P {
    ModelParams::init(c, v, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random non-zero biases as well, so they are exercised by the oracles.
fn perturb_biases(p: &mut P, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = p.names().to_vec();
    for n in names {
        let t = p.get_mut(&n).unwrap();
        if t.rank() == 1 {
            for x in t.data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
    }
}

fn vec_of(t: &Tape<f64>, v: Var) -> Vec<f64> {
    t.value(v).data().to_vec()
}

fn leaf(t: &Tape<f64>, x: &[f64]) -> Var {
    t.leaf(Tensor::vector(x.to_vec()))
}

// ---- independent reference implementations ------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &Tensor<f64>, cols: std::ops::Range<usize>, x: &[f64]) -> Vec<f64> {
    let c = w.shape()[1];
    (0..w.shape()[0])
        .map(|i| {
            cols.clone()
                .zip(x)
                .map(|(j, &xj)| w.data()[i * c + j] * xj)
                .sum()
        })
        .collect()
}

/// GRU with weights acting on `[h, x]`, argument order (input, hidden).
fn ref_gru(p: &P, cell: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let g = |n: &str| p.get(&format!("{cell}.{n}")).unwrap();
    let hd = h.len();
    let cols = hd..hd + x.len();
    let pre = |w: &str, b: &str, hh: &[f64]| -> Vec<f64> {
        let a = matvec(g(w), 0..hd, hh);
        let bx = matvec(g(w), cols.clone(), x);
        a.iter()
            .zip(&bx)
            .zip(g(b).data())
            .map(|((a, b), c)| a + b + c)
            .collect()
    };
    let z: Vec<f64> = pre("w_z", "b_z", h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = pre("w_r", "b_r", h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = pre("w_c", "b_c", &rh).into_iter().map(f64::tanh).collect();
    (0..hd).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect()
}

fn mean(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b / rows.len() as f64;
        }
    }
    m
}

fn ref_dggnn_layer(p: &P, speakers: &[usize], feats: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = feats[0].len();
    (1..=feats.len())
        .map(|i| {
            let msgs: Vec<Vec<f64>> = (1..i)
                .filter(|&j| j == i - 1 || speakers[j - 1] == speakers[i - 1])
                .map(|j| ref_gru(p, "msg", &feats[i - 1], &feats[j - 1]))
                .collect();
            ref_gru(p, "upd", &feats[i - 1], &mean(&msgs, d))
        })
        .collect()
}

fn random_feats(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---- GRU cell ------------------------------------------------------------

fn one_dim() -> ModelConfig {
    ModelConfig {
        d_word: 1,
        gru_hidden: 1,
        ..ModelConfig::tiny()
    }
}

#[test]
fn zero_gru_halves_the_hidden_state() {
    let c = one_dim();
    let p = P::zeros(&c, 6);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let h = net
        .gru_cell(CellId::UttFwd, leaf(&t, &[0.7]), leaf(&t, &[1.0]))
        .unwrap();
    assert_eq!(vec_of(&t, h), [0.5]);
    let h = net
        .gru_cell(CellId::UttFwd, leaf(&t, &[0.7]), leaf(&t, &[0.0]))
        .unwrap();
    assert_eq!(vec_of(&t, h), [0.0]);
}

#[test]
fn one_dim_gru_matches_scalar_hand_calculation() {
    let c = one_dim();
    let mut p = P::zeros(&c, 6);
    // Columns are [hidden, input].
    let set = |p: &mut P, n: &str, v: &[f64]| p.get_mut(n).unwrap().data_mut().copy_from_slice(v);
    set(&mut p, "utt_fwd.w_z", &[0.3, -0.2]);
    set(&mut p, "utt_fwd.w_r", &[0.5, 0.4]);
    set(&mut p, "utt_fwd.w_c", &[-0.6, 0.9]);
    set(&mut p, "utt_fwd.b_z", &[0.1]);
    set(&mut p, "utt_fwd.b_r", &[-0.1]);
    set(&mut p, "utt_fwd.b_c", &[0.05]);
    let (x, h) = (0.8, -0.4);
    let z = sigmoid(0.3 * h - 0.2 * x + 0.1);
    let r = sigmoid(0.5 * h + 0.4 * x - 0.1);
    let cand = (-0.6 * r * h + 0.9 * x + 0.05).tanh();
    let want = (1.0 - z) * h + z * cand;

    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let got = net
        .gru_cell(CellId::UttFwd, leaf(&t, &[x]), leaf(&t, &[h]))
        .unwrap();
    assert!(
        (t.item(got) - want).abs() < 1e-12,
        "{} vs {want}",
        t.item(got)
    );
}

#[test]
fn gru_rejects_wrong_input_width() {
    let c = ModelConfig::tiny();
    let p = P::zeros(&c, 6);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let err = net
        .gru_cell(CellId::UttFwd, leaf(&t, &[1.0; 3]), leaf(&t, &[0.0; 3]))
        .unwrap_err();
    assert!(matches!(err, ModelError::Numerics(_)), "{err}");
}

#[test]
fn random_gru_matches_reference() {
    let c = ModelConfig::tiny();
    let mut p = random_params(&c, 9, 3);
    perturb_biases(&mut p, 4);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let x = [0.3, -0.9, 0.2, 0.5];
    let h = [0.1, -0.4, 0.8];
    let got = net
        .gru_cell(CellId::Dec, leaf(&t, &x), leaf(&t, &h))
        .unwrap();
    assert!(max_diff(&vec_of(&t, got), &ref_gru(&p, "dec", &x, &h)) < 1e-12);
}

// ---- utterance and context encoders ---------------------------------------

#[test]
fn zero_params_encode_to_zero() {
    let c = ModelConfig::tiny();
    let p = P::zeros(&c, 9);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let u = net.encode_utterance(&[5, 6, 7]).unwrap();
    assert_eq!(vec_of(&t, u), vec![0.0; 2 * c.gru_hidden]);
    let h = net.encode_context(&[u, u]).unwrap();
    assert!(h.iter().all(|&v| vec_of(&t, v).iter().all(|&x| x == 0.0)));
}

#[test]
fn single_token_and_single_turn_shapes() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 1);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let u = net.encode_utterance(&[5]).unwrap();
    assert_eq!(t.shape(u), [2 * c.gru_hidden]);
    let h = net.encode_context(&[u]).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(t.shape(h[0]), [2 * c.gru_hidden]);
    assert_eq!(
        net.encode_utterance(&[]).unwrap_err(),
        ModelError::EmptyUtterance
    );
    assert_eq!(
        net.encode_context(&[]).unwrap_err(),
        ModelError::EmptyContext
    );
    assert!(matches!(
        net.encode_utterance(&[99]),
        Err(ModelError::Token { index: 99, .. })
    ));
}

#[test]
fn tied_cells_swap_halves_under_reversal() {
    let c = ModelConfig::tiny();
    let mut p = random_params(&c, 9, 2);
    perturb_biases(&mut p, 5);
    for g in ["w_z", "w_r", "w_c", "b_z", "b_r", "b_c"] {
        let fwd = p.get(&format!("utt_fwd.{g}")).unwrap().clone();
        *p.get_mut(&format!("utt_bwd.{g}")).unwrap() = fwd;
    }
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let a = vec_of(&t, net.encode_utterance(&[5, 6, 8, 7]).unwrap());
    let b = vec_of(&t, net.encode_utterance(&[7, 8, 6, 5]).unwrap());
    let h = c.gru_hidden;
    assert_eq!(a[..h], b[h..]);
    assert_eq!(a[h..], b[..h]);
}

#[test]
fn batched_utterance_encoding_matches_one_at_a_time() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 8);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let utts: [&[usize]; 4] = [&[5, 6], &[7], &[8, 5], &[6, 6, 6]];
    let batch = net.encode_utterances(&utts).unwrap();
    for (u, b) in utts.iter().zip(batch) {
        let one = net.encode_utterance(u).unwrap();
        assert_eq!(vec_of(&t, one), vec_of(&t, b));
    }
}

#[test]
fn first_state_sees_the_last_utterance() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 3);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let u: Vec<Var> = [[5usize, 6], [7, 8], [6, 5]]
        .iter()
        .map(|x| net.encode_utterance(x).unwrap())
        .collect();
    let a = vec_of(&t, net.encode_context(&u).unwrap()[0]);
    let mut u2 = u.clone();
    u2[2] = net.encode_utterance(&[8, 8, 8]).unwrap();
    let b = vec_of(&t, net.encode_context(&u2).unwrap()[0]);
    assert!(max_diff(&a, &b) > 1e-9);
    let h = c.gru_hidden;
    assert_eq!(a[..h], b[..h], "forward half is causal");
}

// ---- augmentation and message --------------------------------------------

#[test]
fn augment_layout_and_clamp() {
    let c = ModelConfig {
        gru_hidden: 2,
        d_user: 2,
        d_pos: 2,
        max_pos: 8,
        ..ModelConfig::tiny()
    };
    let p = random_params(&c, 9, 4);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let h0 = leaf(&t, &[0.1, 0.2, 0.3, 0.4]);
    let a = vec_of(&t, net.augment(h0, 1, 2).unwrap());
    let b = vec_of(&t, net.augment(h0, 1, 5).unwrap());
    assert_eq!(a.len(), 8);
    assert_eq!(a[..4], [0.1, 0.2, 0.3, 0.4]);
    assert_eq!(a[4..6], b[4..6]);
    assert_ne!(a[6..], b[6..]);
    let far = vec_of(&t, net.augment(h0, 0, 10).unwrap());
    assert_eq!(far[6..], *p.get("pos_emb").unwrap().row(7));
    assert_eq!(net.augment(h0, 2, 1).unwrap_err(), ModelError::Speaker(2));
}

#[test]
fn zero_message_is_half_the_neighbor() {
    let c = ModelConfig::tiny();
    let p = P::zeros(&c, 9);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let d = c.d_node();
    let hi = leaf(&t, &vec![0.3; d]);
    let hj: Vec<f64> = (0..d).map(|i| i as f64 - 2.0).collect();
    let m = net.message(hi, leaf(&t, &hj)).unwrap();
    let half: Vec<f64> = hj.iter().map(|x| 0.5 * x).collect();
    assert_eq!(vec_of(&t, m), half);
    let m0 = net.message(hi, leaf(&t, &vec![0.0; d])).unwrap();
    assert!(vec_of(&t, m0).iter().all(|&x| x == 0.0));
}

#[test]
fn message_is_the_message_gru() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 5);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let f = random_feats(2, c.d_node(), 1);
    let (hi, hj) = (leaf(&t, &f[0]), leaf(&t, &f[1]));
    let a = net.message(hi, hj).unwrap();
    let b = net.gru_cell(CellId::Msg, hi, hj).unwrap();
    assert_eq!(vec_of(&t, a), vec_of(&t, b));
}

// ---- graph layers -----------------------------------------------------------

fn run_graph(c: &ModelConfig, p: &P, speakers: &[usize], feats: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let t = Tape::new();
    let net = Net::new(&t, c, p).unwrap();
    let g = build_graph(speakers);
    let vars: Vec<Var> = feats.iter().map(|f| leaf(&t, f)).collect();
    let all: Vec<usize> = (1..=feats.len()).collect();
    net.graph_encode(&g, &vars, &all)
        .unwrap()
        .into_iter()
        .map(|l| l.into_iter().map(|v| vec_of(&t, v.unwrap())).collect())
        .collect()
}

#[test]
fn dggnn_layer_matches_reference() {
    let c = ModelConfig {
        gnn_layers: 2,
        ..cfg(EncoderMode::Dggnn)
    };
    let mut p = random_params(&c, 9, 6);
    perturb_biases(&mut p, 7);
    let speakers = [0, 1, 0, 0, 1, 0];
    let feats = random_feats(6, c.d_node(), 2);
    let layers = run_graph(&c, &p, &speakers, &feats);
    let l1 = ref_dggnn_layer(&p, &speakers, &feats);
    let l2 = ref_dggnn_layer(&p, &speakers, &l1);
    for i in 0..6 {
        assert!(max_diff(&layers[1][i], &l1[i]) < 1e-12);
        assert!(max_diff(&layers[2][i], &l2[i]) < 1e-12);
    }
}

#[test]
fn single_zero_param_node() {
    let c = cfg(EncoderMode::Dggnn);
    let p = P::zeros(&c, 9);
    let f = random_feats(1, c.d_node(), 3);
    let layers = run_graph(&c, &p, &[0], &f);
    // No neighbors: hidden 0, z = 0.5, candidate tanh(0) = 0.
    assert!(layers[2][0].iter().all(|&x| x == 0.0));
}

#[test]
fn zero_layers_is_identity() {
    for mode in [EncoderMode::Dggnn, EncoderMode::Gcn, EncoderMode::Ggat] {
        let c = ModelConfig {
            gnn_layers: 0,
            ..cfg(mode)
        };
        let p = random_params(&c, 9, 1);
        let f = random_feats(3, c.d_node(), 4);
        let layers = run_graph(&c, &p, &[0, 1, 0], &f);
        assert_eq!(layers.len(), 1);
        assert_eq!(layers[0], f);
    }
}

#[test]
fn locality_of_every_encoder() {
    // Alternating speakers; node 6 reaches 5, 4, 2 in one hop.
    let speakers = [0, 1, 0, 1, 0, 1];
    for mode in [EncoderMode::Dggnn, EncoderMode::Gcn, EncoderMode::Ggat] {
        let c = ModelConfig {
            gnn_layers: 1,
            ..cfg(mode)
        };
        let p = random_params(&c, 9, 9);
        let f = random_feats(6, c.d_node(), 5);
        let base = run_graph(&c, &p, &speakers, &f);
        let mut g = f.clone();
        g[2][0] += 0.5; // node 3 is two hops from node 6
        let moved = run_graph(&c, &p, &speakers, &g);
        assert_eq!(base[1][5], moved[1][5], "{mode:?}");
        assert_ne!(
            base[1][3], moved[1][3],
            "{mode:?}: node 4 is a neighbor of 3"
        );

        let c2 = ModelConfig {
            gnn_layers: 2,
            ..cfg(mode)
        };
        let p2 = random_params(&c2, 9, 9);
        let a = run_graph(&c2, &p2, &speakers, &f);
        let b = run_graph(&c2, &p2, &speakers, &g);
        assert_ne!(a[2][5], b[2][5], "{mode:?}: two layers reach node 3");
    }
}

#[test]
fn gcn_zero_and_identity() {
    let c = cfg(EncoderMode::Gcn);
    let f = random_feats(3, c.d_node(), 6);
    let zero = run_graph(&c, &P::zeros(&c, 9), &[0, 1, 1], &f);
    assert!(zero[1].iter().flatten().all(|&x| x == 0.0));

    let mut p = P::zeros(&c, 9);
    *p.get_mut("gcn.w_upd").unwrap() = Tensor::identity(c.d_node());
    let c1 = ModelConfig { gnn_layers: 1, ..c };
    let out = run_graph(&c1, &p, &[0, 1, 1], &f);
    for (a, b) in out[1].iter().zip(&f) {
        let relu: Vec<f64> = b.iter().map(|x| x.max(0.0)).collect();
        assert_eq!(*a, relu);
    }
}

fn attention_of(c: &ModelConfig, p: &P, n_neighbors: usize, seed: u64) -> Vec<f64> {
    let t = Tape::new();
    let net = Net::new(&t, c, p).unwrap();
    let f = random_feats(n_neighbors + 1, c.d_node(), seed);
    let vars: Vec<Var> = f.iter().map(|x| leaf(&t, x)).collect();
    let a = net.attention(vars[0], &vars[1..]).unwrap();
    vec_of(&t, a)
}

#[test]
fn attention_weights() {
    let c = cfg(EncoderMode::Ggat);
    let p = random_params(&c, 9, 10);
    assert_eq!(attention_of(&c, &p, 1, 1), [1.0]);
    for seed in 0..20 {
        let a = attention_of(&c, &p, 1 + (seed as usize % 5), seed);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&x| x > 0.0));
    }
    let mut flat = p.clone();
    *flat.get_mut("gat.attn").unwrap() = Tensor::zeros(&[2 * c.d_node()]);
    assert_eq!(attention_of(&c, &flat, 4, 3), [0.25; 4]);
}

#[test]
fn zero_attention_vector_is_mean_aggregation() {
    let c = ModelConfig {
        gnn_layers: 1,
        ..cfg(EncoderMode::Ggat)
    };
    let mut p = random_params(&c, 9, 11);
    *p.get_mut("gat.attn").unwrap() = Tensor::zeros(&[2 * c.d_node()]);
    let speakers = [0, 1, 0, 1];
    let f = random_feats(4, c.d_node(), 7);
    let got = run_graph(&c, &p, &speakers, &f);
    let w = p.get("gat.w_msg").unwrap();
    let d = c.d_node();
    for i in 1..=4 {
        let nb: Vec<Vec<f64>> = (1..i)
            .filter(|&j| j == i - 1 || speakers[j - 1] == speakers[i - 1])
            .map(|j| matvec(w, 0..d, &f[j - 1]))
            .collect();
        let want = ref_gru(&p, "upd", &f[i - 1], &mean(&nb, d));
        assert!(max_diff(&got[1][i - 1], &want) < 1e-12);
    }
}

// ---- decision and decoder -----------------------------------------------------

#[test]
fn zero_decision_is_one_half() {
    let c = ModelConfig::tiny();
    let p = P::zeros(&c, 9);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let h = leaf(&t, &vec![0.3; c.d_node()]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = net.decide(h, 0, Mode::Eval, &mut rng).unwrap();
    assert_eq!(t.item(d), 0.5);
    assert!(t.item(d) >= c.threshold);
}

#[test]
fn raising_final_bias_raises_probability() {
    let c = ModelConfig::tiny();
    let mut p = random_params(&c, 9, 12);
    let last = format!("dec_mlp.{}.b", c.decision_hidden.len());
    let mut prev = 0.0;
    for b in [-2.0, -0.5, 0.0, 0.7, 3.0] {
        p.get_mut(&last).unwrap().data_mut()[0] = b;
        let t = Tape::new();
        let net = Net::new(&t, &c, &p).unwrap();
        let h = leaf(&t, &random_feats(1, c.d_node(), 2)[0]);
        let v = t.item(
            net.decide(h, 1, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap(),
        );
        assert!(v > prev && v < 1.0);
        prev = v;
    }
}

#[test]
fn pinned_decision_matches_hand_calculation() {
    let c = ModelConfig {
        gru_hidden: 1,
        d_user: 1,
        d_pos: 1,
        decision_hidden: vec![1],
        ..ModelConfig::tiny()
    };
    // Input [h (4 wide); U_agent (1 wide)].
    let mut p = P::zeros(&c, 9);
    p.get_mut("user_emb")
        .unwrap()
        .data_mut()
        .copy_from_slice(&[0.4, -0.3]);
    p.get_mut("dec_mlp.0.w")
        .unwrap()
        .data_mut()
        .copy_from_slice(&[0.5, -0.25, 0.1, 0.2, 2.0]);
    p.get_mut("dec_mlp.0.b").unwrap().data_mut()[0] = 0.05;
    p.get_mut("dec_mlp.1.w").unwrap().data_mut()[0] = -1.5;
    p.get_mut("dec_mlp.1.b").unwrap().data_mut()[0] = 0.3;
    let h = [0.2, 0.4, -1.0, 0.6];
    let pre = 0.5 * 0.2 - 0.25 * 0.4 - 0.1 + 0.2 * 0.6 + 2.0 * 0.4 + 0.05;
    let want = sigmoid(-1.5 * f64::max(pre, 0.0) + 0.3);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let got = net
        .decide(
            leaf(&t, &h),
            0,
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
    assert!((t.item(got) - want).abs() < 1e-12);
}

#[test]
fn decide_errors_when_disabled() {
    let c = ModelConfig {
        decision_enabled: false,
        ..ModelConfig::tiny()
    };
    let p = P::zeros(&c, 9);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let h = leaf(&t, &vec![0.0; c.d_node()]);
    let r = net.decide(h, 0, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(r.unwrap_err(), ModelError::DecisionDisabled);
}

#[test]
fn decoder_init_and_step() {
    let c = ModelConfig::tiny();
    let v = 9;
    let t = Tape::new();
    let zp = P::zeros(&c, v);
    let net = Net::new(&t, &c, &zp).unwrap();
    let h0 = leaf(&t, &vec![0.5; 2 * c.gru_hidden]);
    let hk = leaf(&t, &vec![0.5; c.d_node()]);
    let init = net.decode_init(t.scalar(1.0), h0, hk).unwrap();
    assert_eq!(vec_of(&t, init), vec![0.0; c.gru_hidden]);
    let (logits, _) = net.decode_step(2, init).unwrap();
    assert_eq!(vec_of(&t, logits), vec![0.0; v]);
    let probs = t.softmax(logits).unwrap();
    assert!(vec_of(&t, probs)
        .iter()
        .all(|&q| (q - 1.0 / v as f64).abs() < 1e-15));
    assert!(matches!(
        net.decode_step(v, init),
        Err(ModelError::Token { .. })
    ));

    let rp = random_params(&c, v, 13);
    let net = Net::new(&t, &c, &rp).unwrap();
    let a = net.decode_init(t.scalar(0.0), h0, hk).unwrap();
    let b = net.decode_init(t.scalar(1.0), h0, hk).unwrap();
    assert_eq!(t.shape(a), [c.gru_hidden]);
    assert!(max_diff(&vec_of(&t, a), &vec_of(&t, b)) > 1e-6);
    let (l1, _) = net.decode_step(5, a).unwrap();
    let (l2, _) = net.decode_step(5, a).unwrap();
    assert_eq!(t.shape(l1), [v]);
    assert_eq!(vec_of(&t, l1), vec_of(&t, l2));
}

// ---- whole model ---------------------------------------------------------------

fn sample(decision: bool) -> EncodedSample {
    EncodedSample {
        id: "s".into(),
        utterances: vec![vec![5, 6, 7], vec![8], vec![6, 5]],
        speakers: vec![1, 0, 1],
        positions: vec![1, 2, 3],
        agent: 0,
        decision,
        reply: if decision {
            vec![7, 8, EOS_ID]
        } else {
            vec![SILENCE_ID, EOS_ID]
        },
    }
}

#[test]
fn zero_model_speaks_a_capped_run_of_pad() {
    let c = ModelConfig::tiny();
    let p = P::zeros(&c, 9);
    let g = generate(
        &c,
        &p,
        &sample(true),
        DecodeMode::Greedy,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(g.probability, Some(0.5));
    assert!(g.speak);
    assert_eq!(g.tokens, vec![PAD_ID; c.max_decode_len]);
}

#[test]
fn hred_always_speaks() {
    let c = ModelConfig {
        encoder_mode: EncoderMode::None,
        decision_enabled: false,
        ..ModelConfig::tiny()
    };
    for seed in 0..5 {
        let p = random_params(&c, 9, seed);
        let g = generate(
            &c,
            &p,
            &sample(false),
            DecodeMode::Greedy,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(g.speak && g.probability.is_none());
    }
}

#[test]
fn strongly_negative_bias_stays_silent() {
    let c = ModelConfig::tiny();
    let mut p = random_params(&c, 9, 1);
    let last = format!("dec_mlp.{}.b", c.decision_hidden.len());
    p.get_mut(&last).unwrap().data_mut()[0] = -20.0;
    let g = generate(
        &c,
        &p,
        &sample(true),
        DecodeMode::Greedy,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(!g.speak);
    assert_eq!(g.tokens, [SILENCE_ID]);
}

#[test]
fn trace_has_every_layer_and_a_probability() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 2);
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let tr = net
        .trace(&sample(true), &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(tr.utterances.len(), 3);
    assert_eq!(tr.layers.len(), c.gnn_layers + 1);
    assert!(tr.layers.iter().all(|l| l.len() == 3));
    let d = tr.decision.unwrap();
    assert!(d > 0.0 && d < 1.0);
    assert_eq!(tr.logits.len(), 3);
}

#[test]
fn batch_forward_matches_per_sample_trace() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 9, 14);
    let mut other = sample(false);
    other.utterances[1] = vec![7, 7];
    other.agent = 1;
    let samples = [sample(true), other, sample(false)];
    let t = Tape::new();
    let net = Net::new(&t, &c, &p).unwrap();
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let out = net
        .forward_batch(&refs, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    for (b, s) in samples.iter().enumerate() {
        let tr = net.trace(s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let pb = t.item(out.decision.as_ref().unwrap()[b]);
        assert!((pb - tr.decision.unwrap()).abs() < 1e-12);
        for (k, &tok) in s.reply.iter().enumerate() {
            let l = tr.logits[k].data();
            let lse = l.iter().map(|x| x.exp()).sum::<f64>().ln();
            let want = lse - l[tok];
            assert!((t.item(out.token_losses[b][k]) - want).abs() < 1e-10);
        }
    }
}

fn joint(net: &Net<'_, f64>, samples: &[EncodedSample]) -> Var {
    let t = net.tape();
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let out = net
        .forward_batch(&refs, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let mut parts: Vec<Var> = out.token_losses.into_iter().flatten().collect();
    let n = parts.len() as f64;
    let gen = t.scale(t.sum(&parts).unwrap(), 1.0 / n);
    parts.clear();
    if let Some(d) = out.decision {
        let bces: Vec<Var> = d
            .iter()
            .zip(samples)
            .map(|(&p, s)| t.bce(p, s.decision).unwrap())
            .collect();
        let dec = t.scale(t.sum(&bces).unwrap(), 1.0 / bces.len() as f64);
        t.add(gen, dec).unwrap()
    } else {
        gen
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let toy = vec![
        EncodedSample {
            id: "a".into(),
            utterances: vec![vec![5, 6], vec![7]],
            speakers: vec![0, 1],
            positions: vec![1, 2],
            agent: 0,
            decision: true,
            reply: vec![8, EOS_ID],
        },
        EncodedSample {
            id: "b".into(),
            utterances: vec![vec![5, 6], vec![7], vec![6, 8], vec![5]],
            speakers: vec![0, 1, 1, 0],
            positions: vec![1, 2, 3, 4],
            agent: 1,
            decision: false,
            reply: vec![SILENCE_ID, EOS_ID],
        },
    ];
    for mode in [
        EncoderMode::Dggnn,
        EncoderMode::Gcn,
        EncoderMode::Ggat,
        EncoderMode::None,
    ] {
        let c = cfg(mode);
        let mut p = random_params(&c, 10, 21);
        perturb_biases(&mut p, 22);
        let names = p.names().to_vec();
        let report = grad_check::<ModelError, _>(
            p.tensors(),
            |tape, vars| {
                let net = Net::bind(tape, &c, &names, vars)?;
                Ok(joint(&net, &toy))
            },
            1e-5,
        )
        .unwrap();
        for (n, e) in names.iter().zip(&report.per_param) {
            assert!(*e < 1e-4, "{mode:?} {n}: {e}");
        }
        let groups: std::collections::BTreeSet<&str> =
            names.iter().map(|n| param_group(n)).collect();
        assert!(groups.contains("word_emb") && groups.contains("dec"));
    }
}
