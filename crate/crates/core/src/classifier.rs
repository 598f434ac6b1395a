//! Multi-width convolution over each fused channel, max-over-time pooling,
//! and a dense softmax layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Params, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kernel_sizes: Vec<usize>,
    /// Filters per kernel size.
    pub filters: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 4, 5],
            filters: 100,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) || self.filters == 0 {
            return Err(Error::Config(format!(
                "kernel sizes must be positive and filters ≥ 1, got {:?} and {}",
                self.kernel_sizes, self.filters
            )));
        }
        Ok(())
    }

    fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }
}

/// Convolution banks for each named channel plus the output layer.
pub fn init_classifier(
    params: &mut Params,
    channels: &[&str],
    d: usize,
    num_classes: usize,
    config: &ClassifierConfig,
    rng: &mut impl Rng,
) {
    for c in channels {
        for &k in &config.kernel_sizes {
            // Stored [n, k·d]; fan-in k·d, fan-out n.
            let w = crate::autodiff::glorot_uniform(k * d, config.filters, rng).transpose();
            params.insert(format!("{c}.conv{k}.W"), w);
            params.zeros(&format!("{c}.conv{k}.b"), &[1, config.filters]);
        }
    }
    let features = channels.len() * config.kernel_sizes.len() * config.filters;
    params.glorot("dense.W", features, num_classes, rng);
    params.zeros("dense.b", &[1, num_classes]);
}

/// `relu(conv(x) + b)` for one kernel width. `x` is `[Lc, d]`; the result is
/// `[max(Lc, k) − k + 1, n]` where rows beyond the true length come from
/// zero padding.
pub fn conv_channel<'t>(x: Var<'t>, kernel: Var<'t>, bias: Var<'t>, width: usize) -> Result<Var<'t>> {
    let tape = x.tape();
    let x = pad_rows(x, width)?;
    tape.conv1d_valid(x, kernel, width)?.add(bias)?.relu()
}

fn pad_rows<'t>(x: Var<'t>, len: usize) -> Result<Var<'t>> {
    if x.rows() >= len {
        return Ok(x);
    }
    let pad = x.tape().constant(Tensor::zeros(&[len - x.rows(), x.cols()]));
    x.tape().concat(&[x, pad], 0)
}

/// Pooled features `[1, |kernels|·n]` of one channel whose first `len` rows
/// are real and the rest zero padding. The channel is padded to the widest
/// kernel; windows that start inside the padding are excluded from the max.
pub fn pool_channel<'t>(
    x: Var<'t>,
    len: usize,
    bound: &Bound<'t>,
    name: &str,
    config: &ClassifierConfig,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let true_len = len.min(x.rows());
    let x = pad_rows(x, config.max_kernel())?;
    let mut pooled = Vec::with_capacity(config.kernel_sizes.len());
    for &k in &config.kernel_sizes {
        let maps = conv_channel(
            x,
            bound.var(&format!("{name}.conv{k}.W"))?,
            bound.var(&format!("{name}.conv{k}.b"))?,
            k,
        )?;
        let valid = (true_len.max(1)).saturating_sub(k) + 1;
        pooled.push(tape.max_over_time(maps, valid.min(maps.rows()))?);
    }
    tape.concat(&pooled, 1)
}

/// Class logits `[1, C]` from the named channels, in order.
pub fn classify_logits<'t>(
    channels: &[(&str, Var<'t>)],
    bound: &Bound<'t>,
    config: &ClassifierConfig,
) -> Result<Var<'t>> {
    let tape = bound.var("dense.W")?.tape();
    let pooled: Vec<Var<'t>> = channels
        .iter()
        .map(|(name, x)| pool_channel(*x, x.rows(), bound, name, config))
        .collect::<Result<_>>()?;
    let v = tape.concat(&pooled, 1)?;
    v.matmul(bound.var("dense.W")?)?.add(bound.var("dense.b")?)
}

/// Class probabilities `[1, C]`.
pub fn classify<'t>(channels: &[(&str, Var<'t>)], bound: &Bound<'t>, config: &ClassifierConfig) -> Result<Var<'t>> {
    let logits = classify_logits(channels, bound, config)?;
    logits.tape().row_softmax(logits, None)
}

/// `−ln softmax(logits)[label]`.
pub fn cross_entropy<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>> {
    logits.tape().cross_entropy_logits(logits, label)
}
