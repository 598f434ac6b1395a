//! Variational graph autoencoder producing emoji embeddings.
//!
//! Two-layer GCN encoder with a shared first layer and separate mean and
//! log-variance heads, inner-product decoder, trained full-batch with Adam.

use std::path::Path;

use log::info;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, AdamState, Bound, Params, Tape, Tensor, Var};
use crate::corpus::EmojiId;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::CoocGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Scale each attribute row to unit L2 norm before encoding.
    pub normalize_features: bool,
    pub kl_normalization: KlNormalization,
}

/// Divisor of the summed KL term: `2N` or `2N²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlNormalization {
    #[default]
    Nodes,
    NodesSquared,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            latent: 300,
            epochs: 50,
            lr: 0.01,
            normalize_features: true,
            kl_normalization: KlNormalization::Nodes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

pub const W0: &str = "W0";
pub const W_MU: &str = "W_mu";
pub const W_LOGVAR: &str = "W_logvar";

pub fn init_params(input_dim: usize, config: &VgaeConfig, rng: &mut impl Rng) -> Params {
    let mut p = Params::new();
    p.glorot(W0, input_dim, config.hidden, rng);
    p.glorot(W_MU, config.hidden, config.latent, rng);
    p.glorot(W_LOGVAR, config.hidden, config.latent, rng);
    p
}

/// `activation(Ã · H · W)`.
pub fn gcn_layer<'t>(a_norm: Var<'t>, h: Var<'t>, w: Var<'t>, activation: Activation) -> Result<Var<'t>> {
    let out = a_norm.matmul(h.matmul(w)?)?;
    match activation {
        Activation::Relu => out.relu(),
        Activation::Identity => Ok(out),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LatentPosterior<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

pub fn encode<'t>(a_norm: Var<'t>, x: Var<'t>, params: &Bound<'t>) -> Result<LatentPosterior<'t>> {
    let hidden = gcn_layer(a_norm, x, params.var(W0)?, Activation::Relu)?;
    Ok(LatentPosterior {
        mu: gcn_layer(a_norm, hidden, params.var(W_MU)?, Activation::Identity)?,
        logvar: gcn_layer(a_norm, hidden, params.var(W_LOGVAR)?, Activation::Identity)?,
    })
}

/// Edge logits `Z · Zᵀ`; the reconstruction is their sigmoid.
pub fn decode_logits<'t>(z: Var<'t>) -> Result<Var<'t>> {
    z.matmul(z.t()?)
}

/// `sigmoid(Z · Zᵀ)`.
pub fn decode(z: &Tensor) -> Tensor {
    z.matmul(&z.transpose()).expect("Z·Zᵀ shapes agree").map(sigmoid)
}

/// Reweighting constants for a binary target matrix: `(pos_weight, norm)`.
pub fn edge_weights(a_bin: &Tensor) -> Result<(f64, f64)> {
    let total = a_bin.numel() as f64;
    let positives = a_bin.data().iter().filter(|&&v| v > 0.0).count() as f64;
    if positives == 0.0 {
        return Err(Error::NoPositiveEdges);
    }
    let negatives = total - positives;
    // A fully connected target has no negatives; keep both terms finite.
    if negatives == 0.0 {
        return Ok((1.0, 0.5));
    }
    Ok((negatives / positives, total / (2.0 * negatives)))
}

/// `−(1/(2N)) · Σ(1 + logvar − mu² − exp(logvar))`, or with `2N²` as the
/// divisor.
pub fn kl_term<'t>(posterior: &LatentPosterior<'t>, normalization: KlNormalization) -> Result<Var<'t>> {
    let tape = posterior.mu.tape();
    let rows = posterior.mu.rows() as f64;
    let n = match normalization {
        KlNormalization::Nodes => rows,
        KlNormalization::NodesSquared => rows * rows,
    };
    let mu_sq = posterior.mu.mul(posterior.mu)?;
    let inner = tape
        .add_scalar(posterior.logvar, 1.0)?
        .sub(mu_sq)?
        .sub(posterior.logvar.exp()?)?;
    inner.sum()?.scale(-1.0 / (2.0 * n))
}

/// `norm · BCE_weighted(sigmoid(logits), A_bin) + KL`.
pub fn vgae_loss<'t>(
    logits: Var<'t>,
    a_bin: &Tensor,
    posterior: &LatentPosterior<'t>,
    kl: KlNormalization,
) -> Result<Var<'t>> {
    let (pos_weight, norm) = edge_weights(a_bin)?;
    let tape = logits.tape();
    let bce = tape.weighted_bce_with_logits(logits, a_bin, pos_weight)?;
    bce.scale(norm)?.add(kl_term(posterior, kl)?)
}

pub fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// One forward pass to the scalar loss with the given sampling noise.
pub fn forward_loss<'t>(
    tape: &'t Tape,
    a_norm: &Tensor,
    x: &Tensor,
    a_bin: &Tensor,
    params: &Bound<'t>,
    noise: Tensor,
    kl: KlNormalization,
) -> Result<Var<'t>> {
    let a = tape.constant(a_norm.clone());
    let x = tape.constant(x.clone());
    let posterior = encode(a, x, params)?;
    let z = tape.gaussian_sample(posterior.mu, posterior.logvar, noise)?;
    vgae_loss(decode_logits(z)?, a_bin, &posterior, kl)
}

/// Embedding matrix aligned with a node id list.
#[derive(Clone, Debug, PartialEq)]
pub struct EmojiEmbeddings {
    pub ids: Vec<EmojiId>,
    pub z: Tensor,
}

impl EmojiEmbeddings {
    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    pub fn to_table(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::from_matrix(self.ids.iter().map(|e| e.as_str().to_string()).collect(), &self.z)
    }

    pub fn from_table(table: &EmbeddingTable) -> Self {
        Self {
            ids: table.keys().iter().map(|k| EmojiId::new(k)).collect(),
            z: table.to_matrix(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_table(&EmbeddingTable::load(path)?))
    }
}

#[derive(Clone, Debug)]
pub struct VgaeRun {
    pub embeddings: EmojiEmbeddings,
    pub params: Params,
    /// Loss at each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

/// The encoder input for `graph` under `config`. Zero rows stay zero.
pub fn encoder_features(graph: &CoocGraph, config: &VgaeConfig) -> Tensor {
    let mut x = graph.attributes.clone();
    if config.normalize_features {
        let cols = x.cols();
        for row in x.data_mut().chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    x
}

/// Full-batch training. Returns `Z = mu` of the final posterior. A graph
/// without a single weighted edge is refused.
pub fn train_vgae(graph: &CoocGraph, config: &VgaeConfig, rng: &mut impl Rng) -> Result<VgaeRun> {
    let a_norm = graph.normalized();
    let a_bin = graph.edge_targets();
    if !graph.adjacency.data().iter().any(|&w| w > 0.0) {
        return Err(Error::NoPositiveEdges);
    }
    let x = &encoder_features(graph, config);
    let mut params = init_params(x.cols(), config, rng);
    let mut adam = AdamState::new(config.lr);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let noise = standard_normal(&[graph.len(), config.latent], rng);
        let loss = forward_loss(&tape, &a_norm, x, &a_bin, &bound, noise, config.kl_normalization)?;
        tape.backward(loss)?;
        losses.push(loss.item());
        info!("vgae epoch {} loss {:.6}", epoch + 1, loss.item());
        adam.step(&mut params, &bound.grads())?;
    }
    let z = posterior_mean(&a_norm, x, &params)?;
    Ok(VgaeRun {
        embeddings: EmojiEmbeddings {
            ids: graph.nodes.clone(),
            z,
        },
        params,
        losses,
    })
}

/// Loss of `params` on `graph` averaged over the given noise draws.
pub fn mean_loss(graph: &CoocGraph, config: &VgaeConfig, params: &Params, noises: &[Tensor]) -> Result<f64> {
    let a_norm = graph.normalized();
    let a_bin = graph.edge_targets();
    let x = encoder_features(graph, config);
    let mut total = 0.0;
    for noise in noises {
        let tape = Tape::new();
        let bound = params.bind_frozen(&tape);
        total += forward_loss(&tape, &a_norm, &x, &a_bin, &bound, noise.clone(), config.kl_normalization)?.item();
    }
    Ok(total / noises.len() as f64)
}

/// Deterministic embedding: the posterior mean under `params`.
pub fn posterior_mean(a_norm: &Tensor, x: &Tensor, params: &Params) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let posterior = encode(tape.constant(a_norm.clone()), tape.constant(x.clone()), &bound)?;
    Ok(posterior.mu.value().as_ref().clone())
}

/// Area under the ROC curve of `scores` separating positives from negatives;
/// ties count one half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

/// Reconstruction AUC over the off-diagonal positive pairs `i < j` of
/// `a_bin` against an equal number of sampled non-edges. Pairs are ranked by
/// the logit `z_i · z_j`, which orders like the sigmoid but does not
/// saturate into ties.
pub fn edge_reconstruction_auc(z: &Tensor, a_bin: &Tensor, rng: &mut impl Rng) -> f64 {
    let scores = z.matmul(&z.transpose()).expect("Z·Zᵀ shapes agree");
    let n = a_bin.rows();
    let mut pos = Vec::new();
    let mut non_edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if a_bin.get(i, j) > 0.0 {
                pos.push(scores.get(i, j));
            } else {
                non_edges.push((i, j));
            }
        }
    }
    let take = pos.len().min(non_edges.len());
    let neg: Vec<f64> = rand::seq::index::sample(rng, non_edges.len(), take)
        .into_iter()
        .map(|k| scores.get(non_edges[k].0, non_edges[k].1))
        .collect();
    roc_auc(&pos, &neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gcn_identity_propagation_is_dense_layer() {
        let tape = Tape::new();
        let h = Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        let w = Tensor::matrix(2, 1, vec![1.0, 1.0]);
        let out = gcn_layer(
            tape.constant(Tensor::eye(2)),
            tape.constant(h),
            tape.constant(w),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(out.value().data(), &[0.0, 3.5]);
    }

    #[test]
    fn gcn_two_node_average() {
        let tape = Tape::new();
        let a = Tensor::full(&[2, 2], 0.5);
        let h = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::matrix(2, 1, vec![1.0, -1.0]);
        // H·W = [-1, -1]; averaging keeps it.
        let out = gcn_layer(tape.constant(a), tape.constant(h), tape.constant(w), Activation::Identity).unwrap();
        assert_eq!(out.value().data(), &[-1.0, -1.0]);
    }

    #[test]
    fn zero_features_give_standard_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = VgaeConfig {
            hidden: 4,
            latent: 3,
            ..Default::default()
        };
        let params = init_params(5, &cfg, &mut rng);
        let tape = Tape::new();
        let b = params.bind(&tape);
        let post = encode(tape.constant(Tensor::eye(2)), tape.constant(Tensor::zeros(&[2, 5])), &b).unwrap();
        assert!(post.mu.value().data().iter().all(|&v| v == 0.0));
        assert_eq!(post.logvar.shape(), vec![2, 3]);
        assert_eq!(kl_term(&post, KlNormalization::Nodes).unwrap().item(), 0.0);
    }

    #[test]
    fn decode_examples() {
        assert!(decode(&Tensor::zeros(&[3, 2])).data().iter().all(|&v| v == 0.5));
        let s = (3f64.ln() / 2.0).sqrt();
        let z = Tensor::matrix(2, 2, vec![s, s, s, s]);
        assert!((decode(&z).get(0, 1) - 0.75).abs() < 1e-12);
        let orth = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(decode(&orth).get(1, 0), 0.5);
    }

    #[test]
    fn edge_weight_constants() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let (pw, norm) = edge_weights(&a).unwrap();
        assert_eq!(pw, 1.0);
        assert_eq!(norm, 1.0);
        assert!(matches!(edge_weights(&Tensor::zeros(&[2, 2])), Err(Error::NoPositiveEdges)));
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(roc_auc(&[0.5], &[0.5]), 0.5);
        assert_eq!(roc_auc(&[0.1], &[0.9]), 0.0);
    }
}
