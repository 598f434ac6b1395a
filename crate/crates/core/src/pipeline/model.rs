//! The sentiment classifier: word encoder, emoji features, fusion block
//! (or one of its ablations) and the convolutional head, all in one
//! parameter set.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, Bound, Params, Tape, Tensor, Var};
use crate::classifier::{classify_logits, init_classifier, ClassifierConfig};
use crate::corpus::{tokenize, EmojiId, TokenKind};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::fusion::{
    co_attention_unit, fuse, init_fusion, init_projection, project, self_attention_unit, FusionConfig, EmojiContext,
    PROJ_EMOJI, PROJ_TEXT, UNIT_EMOJI_GUIDED, UNIT_SELF, UNIT_TEXT_GUIDED,
};
use crate::text_encoder::{
    emoji_input_features, emoji_rows, encode_word_vectors, init_text_encoder, lookup_words, EmojiSlot,
    TextEncoderConfig,
};
use crate::vgae::EmojiEmbeddings;

use super::config::{Ablation, RunConfig};

pub const EMOJI_Z: &str = "emoji.Z";
pub const EMOJI_NONE: &str = "emoji.none";
pub const BYPASS_EMOJI: &str = "bypass_e";
pub const BYPASS_H2: &str = "bypass_h2";

/// Everything needed to rebuild the network around a parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub ablation: Ablation,
    pub num_classes: usize,
    pub word_dim: usize,
    /// Row order of `emoji.Z`.
    pub emoji_ids: Vec<String>,
    pub text: TextEncoderConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
}

impl ModelSpec {
    pub fn from_config(cfg: &RunConfig, word_dim: usize, emoji_ids: &[EmojiId]) -> Self {
        Self {
            ablation: cfg.ablation,
            num_classes: cfg.num_classes,
            word_dim,
            emoji_ids: emoji_ids.iter().map(|e| e.as_str().to_string()).collect(),
            text: cfg.text.clone(),
            fusion: cfg.fusion.clone(),
            classifier: cfg.classifier.clone(),
        }
    }

    /// Classifier channel names for this variant.
    pub fn channels(&self) -> &'static [&'static str] {
        match self.ablation {
            Ablation::N => &["u", "h"],
            _ => &["u", "e", "h"],
        }
    }
}

/// One post ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPost {
    /// `[L, word_dim]` word vectors; a single zero row when the post has no
    /// words.
    pub words: Tensor,
    pub emojis: Vec<EmojiSlot>,
    pub label: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Params,
    emoji_index: BTreeMap<String, usize>,
}

impl Model {
    /// Fresh parameters around the given emoji embeddings.
    pub fn init(spec: ModelSpec, embeddings: &EmojiEmbeddings, rng: &mut impl Rng) -> Result<Self> {
        let ids: Vec<String> = embeddings.ids.iter().map(|e| e.as_str().to_string()).collect();
        if ids != spec.emoji_ids {
            return Err(Error::invalid("model spec and embeddings disagree on emoji order"));
        }
        let ez = embeddings.dim();
        if ez == 0 || !ez.is_multiple_of(2) {
            return Err(Error::Config(format!("emoji embedding width must be even and positive, got {ez}")));
        }
        let h = spec.text.hidden;
        let text_dim = spec.word_dim + 4 * h;
        let d = spec.fusion.d;
        let mut params = Params::new();
        params.insert(EMOJI_Z, embeddings.z.clone());
        params.zeros(EMOJI_NONE, &[1, ez]);
        init_text_encoder(&mut params, spec.word_dim, h, rng);
        init_fusion(&mut params, text_dim, ez, &spec.fusion, rng);
        match spec.ablation {
            Ablation::Ra2 => init_projection(&mut params, BYPASS_EMOJI, ez, d, rng),
            Ablation::Ra3 => init_projection(&mut params, BYPASS_H2, 2 * h, d, rng),
            _ => {}
        }
        init_classifier(&mut params, spec.channels(), d, spec.num_classes, &spec.classifier, rng);
        Ok(Self::from_parts(spec, params))
    }

    pub fn from_parts(spec: ModelSpec, params: Params) -> Self {
        let emoji_index = spec.emoji_ids.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Self {
            spec,
            params,
            emoji_index,
        }
    }

    pub fn emoji_embeddings(&self) -> Result<EmojiEmbeddings> {
        Ok(EmojiEmbeddings {
            ids: self.spec.emoji_ids.iter().map(|e| EmojiId::new(e)).collect(),
            z: self.params.get(EMOJI_Z)?.clone(),
        })
    }

    /// Tokenises `text`, keeps the first `max_len` tokens and looks up word
    /// vectors and emoji rows.
    pub fn prepare(&self, text: &str, label: Option<usize>, words: &WordEmbeddingTable) -> Result<PreparedPost> {
        if words.dim() != self.spec.word_dim {
            return Err(Error::Config(format!(
                "word vectors have width {}, model expects {}",
                words.dim(),
                self.spec.word_dim
            )));
        }
        let seq = tokenize(text);
        let kept = &seq.tokens[..seq.tokens.len().min(self.spec.text.max_len)];
        let word_list: Vec<&str> = kept
            .iter()
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.surface.as_str())
            .collect();
        let emojis = kept
            .iter()
            .filter(|t| t.kind == TokenKind::Emoji)
            .map(|t| EmojiSlot {
                row: self.emoji_index.get(&t.surface).copied(),
                position: t.position,
            })
            .collect();
        Ok(PreparedPost {
            words: lookup_words(&word_list, words),
            emojis,
            label,
        })
    }

    /// Records the parameters on `tape`. The emoji table is a constant
    /// unless `finetune_emoji` is set.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool, finetune_emoji: bool) -> Bound<'t> {
        let vars: Vec<Var<'t>> = self
            .params
            .iter()
            .map(|(name, v)| {
                if trainable && (finetune_emoji || name != EMOJI_Z) {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        self.params.bind_vars(&vars)
    }

    /// Class logits `[1, C]` for one post.
    pub fn logits<'t>(&self, post: &PreparedPost, bound: &Bound<'t>) -> Result<Var<'t>> {
        let z = bound.var(EMOJI_Z)?;
        let tape = z.tape();
        let enc = encode_word_vectors(tape.constant(post.words.clone()), bound)?;
        let none = bound.var(EMOJI_NONE)?;
        let r_e = || emoji_input_features(&post.emojis, z, none, self.spec.text.pe_base);
        let spec = &self.spec;
        let fused = match spec.ablation {
            Ablation::Full => {
                let f = fuse(enc.r_u, r_e()?, bound, &spec.fusion)?;
                [f.w_u, f.w_e, f.w_h]
            }
            Ablation::N => {
                let p_u = project(enc.r_u, bound, PROJ_TEXT)?;
                let w_u = self_attention_unit(p_u, bound, UNIT_SELF, None)?;
                let w_h = self_attention_unit(p_u, bound, UNIT_EMOJI_GUIDED, None)?;
                let channels = [("u", w_u), ("h", w_h)];
                return classify_logits(&channels, bound, &spec.classifier);
            }
            _ => {
                let p_u = project(enc.r_u, bound, PROJ_TEXT)?;
                let p_e = project(r_e()?, bound, PROJ_EMOJI)?;
                let w_u = match spec.ablation {
                    Ablation::Ra1 => p_u,
                    _ => self_attention_unit(p_u, bound, UNIT_SELF, None)?,
                };
                let context = match spec.fusion.emoji_context {
                    EmojiContext::SelfAttended => w_u,
                    EmojiContext::Projected => p_u,
                };
                let w_e = match spec.ablation {
                    Ablation::T => p_e,
                    Ablation::Ra2 => project(emoji_rows(&post.emojis, z, none)?, bound, BYPASS_EMOJI)?,
                    _ => co_attention_unit(p_e, context, bound, UNIT_TEXT_GUIDED, None)?,
                };
                let w_h = match spec.ablation {
                    Ablation::E => p_u,
                    Ablation::Ra3 => project(enc.h2, bound, BYPASS_H2)?,
                    _ => co_attention_unit(p_u, p_e, bound, UNIT_EMOJI_GUIDED, None)?,
                };
                [w_u, w_e, w_h]
            }
        };
        let channels = [("u", fused[0]), ("e", fused[1]), ("h", fused[2])];
        classify_logits(&channels, bound, &spec.classifier)
    }

    /// Class probabilities for one post, without recording gradients.
    pub fn predict_proba(&self, post: &PreparedPost) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false, false);
        let logits = self.logits(post, &bound)?;
        Ok(tape.row_softmax(logits, None)?.value().data().to_vec())
    }

    pub fn predict(&self, post: &PreparedPost) -> Result<usize> {
        Ok(argmax(&self.predict_proba(post)?))
    }

    pub const PARAMS_FILE: &'static str = "classifier.ckpt";
    pub const SPEC_FILE: &'static str = "classifier.json";

    /// Writes the parameter checkpoint and the spec next to it in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&dir.join(Self::PARAMS_FILE), &self.params)?;
        let spec_path = dir.join(Self::SPEC_FILE);
        let json = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(&spec_path, json + "\n").map_err(|e| Error::io(&spec_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join(Self::SPEC_FILE);
        let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: ModelSpec = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", spec_path.display())))?;
        let params = checkpoint::load(&dir.join(Self::PARAMS_FILE))?;
        let z = params.get(EMOJI_Z)?;
        if z.rows() != spec.emoji_ids.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} emoji rows but the spec lists {}",
                z.rows(),
                spec.emoji_ids.len()
            )));
        }
        Ok(Self::from_parts(spec, params))
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
