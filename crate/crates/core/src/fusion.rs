//! Hybrid-attention fusion: a self-attention unit over text and two
//! co-attention units across the text and emoji modalities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Params, Var};
use crate::error::Result;

/// Context fed to the text-guided emoji unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmojiContext {
    /// Output of the text self-attention unit.
    #[default]
    SelfAttended,
    /// Projected text features before self-attention.
    Projected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub d: usize,
    pub d_ff: usize,
    pub emoji_context: EmojiContext,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d: 300,
            d_ff: 600,
            emoji_context: EmojiContext::SelfAttended,
        }
    }
}

/// Query/key/value projections, feed-forward block and two layer norms under
/// `prefix`.
pub fn init_attention_unit(params: &mut Params, prefix: &str, d: usize, d_ff: usize, rng: &mut impl Rng) {
    for w in ["Wq", "Wk", "Wv"] {
        params.glorot(&format!("{prefix}.{w}"), d, d, rng);
    }
    params.glorot(&format!("{prefix}.W1"), d, d_ff, rng);
    params.zeros(&format!("{prefix}.b1"), &[1, d_ff]);
    params.glorot(&format!("{prefix}.W2"), d_ff, d, rng);
    params.zeros(&format!("{prefix}.b2"), &[1, d]);
    for ln in ["ln1", "ln2"] {
        params.ones(&format!("{prefix}.{ln}.g"), &[1, d]);
        params.zeros(&format!("{prefix}.{ln}.b"), &[1, d]);
    }
}

/// Learned affine map `x·W + b` under `prefix`.
pub fn init_projection(params: &mut Params, prefix: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) {
    params.glorot(&format!("{prefix}.W"), d_in, d_out, rng);
    params.zeros(&format!("{prefix}.b"), &[1, d_out]);
}

pub fn project<'t>(x: Var<'t>, bound: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
    let w = bound.var(&format!("{prefix}.W"))?;
    let b = bound.var(&format!("{prefix}.b"))?;
    x.matmul(w)?.add(b)
}

/// `softmax(Q·Kᵀ/√d)·V` over the keys not flagged in `key_mask`. Returns the
/// output `[n_q, d_v]` and the weights `[n_q, n_k]`.
pub fn scaled_dot_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    key_mask: Option<&[bool]>,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = q.tape();
    let scores = q.matmul(k.t()?)?.scale(1.0 / (q.cols() as f64).sqrt())?;
    let weights = tape.row_softmax(scores, key_mask)?;
    Ok((weights.matmul(v)?, weights))
}

/// Queries from `query`, keys and values from `context`, then residual and
/// layer norm, feed-forward, residual and layer norm. Output has one row per
/// query row.
pub fn co_attention_unit<'t>(
    query: Var<'t>,
    context: Var<'t>,
    bound: &Bound<'t>,
    prefix: &str,
    key_mask: Option<&[bool]>,
) -> Result<Var<'t>> {
    let tape = query.tape();
    let p = |name: &str| bound.var(&format!("{prefix}.{name}"));
    let (att, _) = scaled_dot_attention(
        query.matmul(p("Wq")?)?,
        context.matmul(p("Wk")?)?,
        context.matmul(p("Wv")?)?,
        key_mask,
    )?;
    let a1 = tape.layer_norm(query.add(att)?, p("ln1.g")?, p("ln1.b")?)?;
    let hidden = a1.matmul(p("W1")?)?.add(p("b1")?)?.relu()?;
    let ffn = hidden.matmul(p("W2")?)?.add(p("b2")?)?;
    tape.layer_norm(a1.add(ffn)?, p("ln2.g")?, p("ln2.b")?)
}

pub fn self_attention_unit<'t>(
    x: Var<'t>,
    bound: &Bound<'t>,
    prefix: &str,
    key_mask: Option<&[bool]>,
) -> Result<Var<'t>> {
    co_attention_unit(x, x, bound, prefix, key_mask)
}

#[derive(Clone, Copy, Debug)]
pub struct FusedFeatures<'t> {
    /// Self-attended text, `[L, d]`.
    pub w_u: Var<'t>,
    /// Text-guided emoji representation, `[N_e, d]`.
    pub w_e: Var<'t>,
    /// Emoji-guided text representation, `[L, d]`.
    pub w_h: Var<'t>,
}

pub const PROJ_TEXT: &str = "proj_u";
pub const PROJ_EMOJI: &str = "proj_e";
pub const UNIT_SELF: &str = "att_self";
pub const UNIT_TEXT_GUIDED: &str = "att_text_guided";
pub const UNIT_EMOJI_GUIDED: &str = "att_emoji_guided";

/// Projections and the three attention units for text features of width
/// `text_dim` and emoji features of width `emoji_dim`.
pub fn init_fusion(params: &mut Params, text_dim: usize, emoji_dim: usize, config: &FusionConfig, rng: &mut impl Rng) {
    init_projection(params, PROJ_TEXT, text_dim, config.d, rng);
    init_projection(params, PROJ_EMOJI, emoji_dim, config.d, rng);
    for unit in [UNIT_SELF, UNIT_TEXT_GUIDED, UNIT_EMOJI_GUIDED] {
        init_attention_unit(params, unit, config.d, config.d_ff, rng);
    }
}

/// `W_u = self(P_u)`, `W_e = co(P_e, W_u)`, `W_h = co(P_u, P_e)` with
/// `P_u`, `P_e` the projected text and emoji features.
pub fn fuse<'t>(r_u: Var<'t>, r_e: Var<'t>, bound: &Bound<'t>, config: &FusionConfig) -> Result<FusedFeatures<'t>> {
    let p_u = project(r_u, bound, PROJ_TEXT)?;
    let p_e = project(r_e, bound, PROJ_EMOJI)?;
    let w_u = self_attention_unit(p_u, bound, UNIT_SELF, None)?;
    let context = match config.emoji_context {
        EmojiContext::SelfAttended => w_u,
        EmojiContext::Projected => p_u,
    };
    let w_e = co_attention_unit(p_e, context, bound, UNIT_TEXT_GUIDED, None)?;
    let w_h = co_attention_unit(p_u, p_e, bound, UNIT_EMOJI_GUIDED, None)?;
    Ok(FusedFeatures { w_u, w_e, w_h })
}
