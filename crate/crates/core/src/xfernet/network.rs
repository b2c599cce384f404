//! Graph construction for the encoder, decoder and prediction heads.
//!
//! Batches are laid out time-major for the recurrent input projections
//! (row `t·b + s`) and batch-major for everything after the recurrence
//! (row `s·L + t`).

use crate::archspace::{legal_tokens, TokenVocab};
use crate::tensor::{tanh, Graph, ParamSpec, ParamStore, Tensor, Var};

pub const EMBED_DIM: usize = 32;
pub const HIDDEN: usize = 96;
pub const UNIVERSAL_HIDDEN: usize = 64;
pub const RESIDUAL_HIDDEN: usize = 32;

pub(crate) const EMBEDDING: &str = "embedding";

pub(crate) fn residual_prefix(task_index: usize) -> String {
    format!("residual.{task_index}")
}

pub(crate) const UNIVERSAL: &str = "universal";

/// Parameter layout for `blocks` blocks per cell and `tasks` residual heads.
/// The embedding has one extra row for the decoder's start token.
pub fn param_specs(blocks: usize, tasks: usize) -> Vec<ParamSpec> {
    let vocab = TokenVocab::new(blocks).size();
    let mut specs = vec![ParamSpec::weight(EMBEDDING, [vocab + 1, EMBED_DIM])];
    for rnn in ["encoder", "decoder"] {
        specs.push(ParamSpec::weight(
            format!("{rnn}.w_ih"),
            [EMBED_DIM, 4 * HIDDEN],
        ));
        specs.push(ParamSpec::weight(
            format!("{rnn}.w_hh"),
            [HIDDEN, 4 * HIDDEN],
        ));
        specs.push(ParamSpec::bias(format!("{rnn}.bias"), [4 * HIDDEN]));
    }
    specs.extend([
        ParamSpec::weight("decoder.attn.w", [2 * HIDDEN, HIDDEN]),
        ParamSpec::bias("decoder.attn.b", [HIDDEN]),
        ParamSpec::weight("decoder.out.w", [HIDDEN, vocab]),
        ParamSpec::bias("decoder.out.b", [vocab]),
    ]);
    specs.extend(head_specs(UNIVERSAL, UNIVERSAL_HIDDEN, false));
    for k in 0..tasks {
        specs.extend(residual_specs(k));
    }
    specs
}

pub(crate) fn residual_specs(task_index: usize) -> Vec<ParamSpec> {
    head_specs(&residual_prefix(task_index), RESIDUAL_HIDDEN, true)
}

fn head_specs(prefix: &str, width: usize, zero_output: bool) -> Vec<ParamSpec> {
    let out = if zero_output {
        ParamSpec::zero_weight(format!("{prefix}.w2"), [width, 1])
    } else {
        ParamSpec::weight(format!("{prefix}.w2"), [width, 1])
    };
    vec![
        ParamSpec::weight(format!("{prefix}.w1"), [HIDDEN, width]),
        ParamSpec::bias(format!("{prefix}.b1"), [width]),
        out,
        ParamSpec::bias(format!("{prefix}.b2"), [1]),
    ]
}

/// One gated-memory step: returns `(h, c)`.
fn lstm_cell(g: &mut Graph, gates: Var, c_prev: Var) -> (Var, Var) {
    let i = g.slice_last(gates, 0, HIDDEN);
    let f = g.slice_last(gates, HIDDEN, HIDDEN);
    let cand = g.slice_last(gates, 2 * HIDDEN, HIDDEN);
    let o = g.slice_last(gates, 3 * HIDDEN, HIDDEN);
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev);
    let write = g.mul(i, cand);
    let c = g.add(keep, write);
    let tc = g.tanh(c);
    let h = g.mul(o, tc);
    (h, c)
}

/// Runs a recurrent layer over time-major input ids. Returns the hidden
/// states, one `[b, H]` node per step.
fn run_lstm(
    g: &mut Graph,
    p: &ParamStore,
    rnn: &str,
    ids: &[usize],
    batch: usize,
    h0: Var,
    c0: Var,
) -> Vec<Var> {
    let steps = ids.len() / batch;
    let emb = g.param(p, EMBEDDING);
    let w_ih = g.param(p, &format!("{rnn}.w_ih"));
    let w_hh = g.param(p, &format!("{rnn}.w_hh"));
    let bias = g.param(p, &format!("{rnn}.bias"));
    let x = g.embedding(emb, ids);
    let xp = g.matmul(x, w_ih);
    let xp = g.add_row(xp, bias);
    let (mut h, mut c) = (h0, c0);
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.slice_rows(xp, t * batch, batch);
        let rec = g.matmul(h, w_hh);
        let gates = g.add(xt, rec);
        (h, c) = lstm_cell(g, gates, c);
        hs.push(h);
    }
    hs
}

pub(crate) struct Encoded {
    /// `[b, L, H]`
    pub states: Var,
    /// `[b, H]`, the mean over time of `states`.
    pub code: Var,
}

pub(crate) fn encode(g: &mut Graph, p: &ParamStore, seqs: &[&[usize]]) -> Encoded {
    let b = seqs.len();
    let len = seqs[0].len();
    let mut ids = Vec::with_capacity(b * len);
    for t in 0..len {
        ids.extend(seqs.iter().map(|s| s[t]));
    }
    let zeros = g.input(Tensor::zeros([b, HIDDEN]));
    let hs = run_lstm(g, p, "encoder", &ids, b, zeros, zeros);
    let states = g.stack(&hs);
    let code = g.mean_axis(states, 1);
    Encoded { states, code }
}

/// Scaled dot-product attention of decoder states `[b, L, H]` over encoder
/// states `[b, L', H]`, followed by the output projection. Returns logits
/// `[b·L, V]` (unmasked).
fn attend_and_project(g: &mut Graph, p: &ParamStore, dec: Var, enc: Var) -> Var {
    let shape = g.value(dec).shape().to_vec();
    let (b, l) = (shape[0], shape[1]);
    let scores = g.batch_matmul(dec, enc, true);
    let scores = g.scale(scores, 1.0 / (HIDDEN as f64).sqrt());
    let weights = g.softmax(scores);
    let context = g.batch_matmul(weights, enc, false);
    let joined = g.concat(&[dec, context]);
    let joined = g.reshape(joined, &[b * l, 2 * HIDDEN]);
    let w = g.param(p, "decoder.attn.w");
    let bias = g.param(p, "decoder.attn.b");
    let hidden = g.matmul(joined, w);
    let hidden = g.add_row(hidden, bias);
    let hidden = g.tanh(hidden);
    let w = g.param(p, "decoder.out.w");
    let bias = g.param(p, "decoder.out.b");
    let logits = g.matmul(hidden, w);
    g.add_row(logits, bias)
}

/// Additive mask with `-inf` on tokens that are illegal at each position,
/// for `rows` rows of batch-major positions `row % len`.
pub(crate) fn legality_mask(blocks: usize, len: usize, rows: usize) -> Tensor {
    let vocab = TokenVocab::new(blocks).size();
    let mut data = vec![f64::NEG_INFINITY; rows * vocab];
    for r in 0..rows {
        for tok in legal_tokens(blocks, r % len) {
            data[r * vocab + tok] = 0.0;
        }
    }
    Tensor::new([rows, vocab], data)
}

/// Teacher-forced decoding; returns masked logits `[b·L, V]`.
pub(crate) fn decode_teacher(
    g: &mut Graph,
    p: &ParamStore,
    enc: &Encoded,
    seqs: &[&[usize]],
    blocks: usize,
) -> Var {
    let b = seqs.len();
    let len = seqs[0].len();
    let go = TokenVocab::new(blocks).size();
    let mut ids = Vec::with_capacity(b * len);
    for t in 0..len {
        ids.extend(seqs.iter().map(|s| if t == 0 { go } else { s[t - 1] }));
    }
    let hs = run_lstm(g, p, "decoder", &ids, b, enc.code, enc.code);
    let dec = g.stack(&hs);
    let logits = attend_and_project(g, p, dec, enc.states);
    let mask = g.input(legality_mask(blocks, len, b * len));
    g.add(logits, mask)
}

/// Greedy decoding from encoder states `[L, H]` and code `[H]`. Returns the
/// masked logits `[L, V]` and the argmax tokens.
pub(crate) fn decode_greedy(
    p: &ParamStore,
    states: &Tensor,
    code: &Tensor,
    blocks: usize,
) -> (Tensor, Vec<usize>) {
    let len = states.shape()[0];
    let vocab = TokenVocab::new(blocks).size();
    let mut g = Graph::new();
    let enc = g.input(states.clone().reshape([1, len, HIDDEN]));
    let mut h = g.input(code.clone().reshape([1, HIDDEN]));
    let mut c = h;
    let emb = g.param(p, EMBEDDING);
    let w_ih = g.param(p, "decoder.w_ih");
    let w_hh = g.param(p, "decoder.w_hh");
    let bias = g.param(p, "decoder.bias");
    let mut prev = vocab;
    let mut tokens = Vec::with_capacity(len);
    let mut all_logits = Vec::with_capacity(len * vocab);
    for t in 0..len {
        let x = g.embedding(emb, &[prev]);
        let xp = g.matmul(x, w_ih);
        let rec = g.matmul(h, w_hh);
        let gates = g.add(xp, rec);
        let gates = g.add_row(gates, bias);
        (h, c) = lstm_cell(&mut g, gates, c);
        let dec = g.reshape(h, &[1, 1, HIDDEN]);
        let logits = attend_and_project(&mut g, p, dec, enc);
        let row = g.value(logits).data();
        let legal = legal_tokens(blocks, t);
        let mut best = legal.start;
        for tok in legal.clone() {
            if row[tok] > row[best] {
                best = tok;
            }
        }
        for (tok, &x) in row.iter().enumerate() {
            all_logits.push(if legal.contains(&tok) {
                x
            } else {
                f64::NEG_INFINITY
            });
        }
        tokens.push(best);
        prev = best;
    }
    (Tensor::new([len, vocab], all_logits), tokens)
}

/// Feed-forward head `tanh(z·W1 + b1)·W2 + b2`, output `[rows, 1]`.
pub(crate) fn head(g: &mut Graph, p: &ParamStore, prefix: &str, z: Var) -> Var {
    let w1 = g.param(p, &format!("{prefix}.w1"));
    let b1 = g.param(p, &format!("{prefix}.b1"));
    let w2 = g.param(p, &format!("{prefix}.w2"));
    let b2 = g.param(p, &format!("{prefix}.b2"));
    let h = g.matmul(z, w1);
    let h = g.add_row(h, b1);
    let h = g.tanh(h);
    let y = g.matmul(h, w2);
    g.add_row(y, b2)
}

/// Same head evaluated directly on one code vector.
pub(crate) fn head_value(p: &ParamStore, prefix: &str, z: &[f64]) -> f64 {
    let get = |name: &str| {
        p.get(&format!("{prefix}.{name}"))
            .unwrap_or_else(|| panic!("missing head parameter {prefix}.{name}"))
    };
    let (w1, b1, w2, b2) = (get("w1"), get("b1"), get("w2"), get("b2"));
    let width = b1.len();
    let mut out = b2.data()[0];
    for j in 0..width {
        let mut a = b1.data()[j];
        for (i, &zi) in z.iter().enumerate() {
            a += zi * w1.data()[i * width + j];
        }
        out += tanh(a) * w2.data()[j];
    }
    out
}
