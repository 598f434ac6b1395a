//! Word-side features from two stacked bidirectional LSTMs, and emoji-side
//! features from emoji embeddings plus sinusoidal position codes.
//!
//! Sequences are `[L, features]`: one row per token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Params, Tape, Tensor, Var};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    /// Hidden units per direction.
    pub hidden: usize,
    /// Posts are cut to this many tokens (words and emojis together).
    pub max_len: usize,
    pub pe_base: f64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            max_len: 64,
            pe_base: 1000.0,
        }
    }
}

/// `PE[2i] = sin(pos / base^(2i/d))`, `PE[2i+1] = cos(pos / base^(2i/d))`.
pub fn positional_encoding(pos: usize, d_model: usize, base: f64) -> Result<Vec<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::invalid(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut out = vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let angle = pos as f64 / base.powf(2.0 * i as f64 / d_model as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Gate weights for one direction of one layer, gates ordered
/// input, forget, cell, output.
pub fn init_lstm_direction(params: &mut Params, prefix: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) {
    params.glorot(&format!("{prefix}.Wx"), input_dim, 4 * hidden, rng);
    params.glorot(&format!("{prefix}.Wh"), hidden, 4 * hidden, rng);
    params.zeros(&format!("{prefix}.b"), &[1, 4 * hidden]);
}

/// Both directions of one Bi-LSTM layer under `{prefix}.fwd` / `{prefix}.bwd`.
pub fn init_bilstm_layer(params: &mut Params, prefix: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) {
    init_lstm_direction(params, &format!("{prefix}.fwd"), input_dim, hidden, rng);
    init_lstm_direction(params, &format!("{prefix}.bwd"), input_dim, hidden, rng);
}

/// Parameters for the two stacked layers `lstm1` and `lstm2`.
pub fn init_text_encoder(params: &mut Params, word_dim: usize, hidden: usize, rng: &mut impl Rng) {
    init_bilstm_layer(params, "lstm1", word_dim, hidden, rng);
    init_bilstm_layer(params, "lstm2", 2 * hidden, hidden, rng);
}

fn lstm_direction<'t>(x: Var<'t>, bound: &Bound<'t>, prefix: &str, reverse: bool) -> Result<Vec<Var<'t>>> {
    let tape = x.tape();
    let wx = bound.var(&format!("{prefix}.Wx"))?;
    let wh = bound.var(&format!("{prefix}.Wh"))?;
    let b = bound.var(&format!("{prefix}.b"))?;
    let hidden = wh.rows();
    let steps = x.rows();
    let projected = tape.add(x.matmul(wx)?, b)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut out = vec![h; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let gates = tape.add(tape.slice(projected, 0, t, t + 1)?, h.matmul(wh)?)?;
        let gate = |k: usize| tape.slice(gates, 1, k * hidden, (k + 1) * hidden);
        let i = gate(0)?.sigmoid()?;
        let f = gate(1)?.sigmoid()?;
        let g = gate(2)?.tanh()?;
        let o = gate(3)?.sigmoid()?;
        c = f.mul(c)?.add(i.mul(g)?)?;
        h = o.mul(c.tanh()?)?;
        out[t] = h;
    }
    Ok(out)
}

/// `[L, f_in] → [L, 2h]`; row `t` is `[h_fwd(t), h_bwd(t)]`.
pub fn bilstm_layer<'t>(x: Var<'t>, bound: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    if x.rows() == 0 {
        return Err(Error::invalid("bilstm_layer needs at least one step"));
    }
    let tape = x.tape();
    let fwd = lstm_direction(x, bound, &format!("{prefix}.fwd"), false)?;
    let bwd = lstm_direction(x, bound, &format!("{prefix}.bwd"), true)?;
    let rows: Vec<Var<'t>> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b], 1))
        .collect::<Result<_>>()?;
    tape.concat(&rows, 0)
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedText<'t> {
    pub x: Var<'t>,
    pub h1: Var<'t>,
    pub h2: Var<'t>,
    /// `[X, H1, H2]` along the feature axis.
    pub r_u: Var<'t>,
}

/// Word vectors for `words` as `[L, dim]`; unknown words are zero rows. An
/// empty word list yields a single zero row.
pub fn lookup_words(words: &[&str], table: &WordEmbeddingTable) -> Tensor {
    if words.is_empty() {
        return Tensor::zeros(&[1, table.dim()]);
    }
    let data = words.iter().flat_map(|w| table.lookup(w)).collect();
    Tensor::matrix(words.len(), table.dim(), data)
}

/// Runs both Bi-LSTM layers over word vectors `x` (`[L, word_dim]`).
pub fn encode_word_vectors<'t>(x: Var<'t>, bound: &Bound<'t>) -> Result<EncodedText<'t>> {
    let h1 = bilstm_layer(x, bound, "lstm1")?;
    let h2 = bilstm_layer(h1, bound, "lstm2")?;
    let r_u = x.tape().concat(&[x, h1, h2], 1)?;
    Ok(EncodedText { x, h1, h2, r_u })
}

pub fn encode_text<'t>(
    tape: &'t Tape,
    words: &[&str],
    table: &WordEmbeddingTable,
    bound: &Bound<'t>,
) -> Result<EncodedText<'t>> {
    encode_word_vectors(tape.constant(lookup_words(words, table)), bound)
}

/// One emoji occurrence: its row in the embedding matrix (if known) and its
/// position in the original mixed token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmojiSlot {
    pub row: Option<usize>,
    pub position: usize,
}

/// `[N_e, dim]` rows `Z[emoji_k]` without position codes; unknown emojis use
/// a zero row. With no emojis the result is `no_emoji`.
pub fn emoji_rows<'t>(slots: &[EmojiSlot], z: Var<'t>, no_emoji: Var<'t>) -> Result<Var<'t>> {
    if slots.is_empty() {
        return Ok(no_emoji);
    }
    let tape = z.tape();
    let zero = tape.constant(Tensor::zeros(&[1, z.cols()]));
    let rows: Vec<Var<'t>> = slots
        .iter()
        .map(|s| match s.row {
            Some(r) => tape.slice(z, 0, r, r + 1),
            None => Ok(zero),
        })
        .collect::<Result<_>>()?;
    tape.concat(&rows, 0)
}

/// `[N_e, dim]` rows `Z[emoji_k] + PE(position_k)`; unknown emojis use a
/// zero embedding. With no emojis the result is the single learned
/// `no_emoji` row `[1, dim]`.
pub fn emoji_input_features<'t>(
    slots: &[EmojiSlot],
    z: Var<'t>,
    no_emoji: Var<'t>,
    pe_base: f64,
) -> Result<Var<'t>> {
    let e = emoji_rows(slots, z, no_emoji)?;
    if slots.is_empty() {
        return Ok(e);
    }
    let dim = z.cols();
    let mut pe = Vec::with_capacity(slots.len() * dim);
    for s in slots {
        pe.extend(positional_encoding(s.position, dim, pe_base)?);
    }
    e.add(z.tape().constant(Tensor::matrix(slots.len(), dim, pe)))
}
