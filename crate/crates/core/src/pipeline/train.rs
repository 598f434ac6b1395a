//! Minibatch training and evaluation of the sentiment classifier.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Tape};
use crate::classifier::cross_entropy;
use crate::error::{Error, Result};

use super::config::{RunConfig, TrainingConfig};
use super::model::{argmax, Model, PreparedPost};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's posts, each measured before the
    /// update of its batch.
    pub loss: f64,
    /// Fraction of posts whose prediction was right before the update of
    /// their batch.
    pub accuracy: f64,
}

fn check_labels(posts: &[PreparedPost], num_classes: usize) -> Result<()> {
    for p in posts {
        match p.label {
            Some(l) if l < num_classes => {}
            Some(l) => return Err(Error::InvalidLabel { label: l, num_classes }),
            None => return Err(Error::invalid("every training and evaluation post needs a label")),
        }
    }
    Ok(())
}

/// Adam on the mean batch cross-entropy. Batches are reshuffled each
/// epoch with `rng`.
pub fn train_classifier(
    model: &mut Model,
    posts: &[PreparedPost],
    cfg: &TrainingConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EpochStats>> {
    if posts.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_labels(posts, model.spec.num_classes)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..posts.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut total_loss, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let tape = Tape::new();
            let bound = model.bind(&tape, true, cfg.finetune_emoji);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let post = &posts[i];
                let label = post.label.expect("labels checked");
                let logits = model.logits(post, &bound)?;
                if argmax(logits.value().data()) == label {
                    correct += 1;
                }
                losses.push(cross_entropy(logits, label)?);
            }
            let loss = tape.concat(&losses, 1)?.mean()?;
            total_loss += loss.item() * batch.len() as f64;
            tape.backward(loss)?;
            adam.step(&mut model.params, &bound.grads())?;
        }
        let stats = EpochStats {
            epoch,
            loss: total_loss / posts.len() as f64,
            accuracy: correct as f64 / posts.len() as f64,
        };
        info!("epoch {epoch} loss {:.6} accuracy {:.4}", stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok(history)
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy\n");
    for h in history {
        writeln!(out, "{},{},{}", h.epoch, h.loss, h.accuracy).expect("string write");
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// 0 when the class is never predicted.
    pub precision: f64,
    /// 0 when the class never occurs.
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub total: usize,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub seed: u64,
    pub config: RunConfig,
}

impl EvalReport {
    /// Builds the report from `(true, predicted)` pairs.
    pub fn from_predictions(pairs: &[(usize, usize)], num_classes: usize, seed: u64, config: RunConfig) -> Self {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for &(t, p) in pairs {
            confusion[t][p] += 1;
        }
        let total = pairs.len();
        let hits: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class = (0..num_classes)
            .map(|c| {
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let support: usize = confusion[c].iter().sum();
                let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
                ClassMetrics {
                    class: c,
                    precision: ratio(confusion[c][c], predicted),
                    recall: ratio(confusion[c][c], support),
                    support,
                }
            })
            .collect();
        Self {
            accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            total,
            per_class,
            confusion,
            seed,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Argmax prediction for every post.
pub fn evaluate(model: &Model, posts: &[PreparedPost], seed: u64, config: RunConfig) -> Result<EvalReport> {
    let n = model.spec.num_classes;
    check_labels(posts, n)?;
    let pairs = posts
        .iter()
        .map(|p| Ok((p.label.expect("labels checked"), model.predict(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_predictions(&pairs, n, seed, config))
}
