//! Small generated corpora and graphs for smoke runs and tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::corpus::{EmojiId, RawPost};
use crate::graph::{build_adjacency, CoocGraph};
use crate::emojinet::SenseVector;

/// Emojis whose presence makes a post class 0.
pub const CLASS0_EMOJIS: [&str; 5] = ["😀", "😂", "😍", "👍", "🎉"];
/// Emojis whose presence makes a post class 1.
pub const CLASS1_EMOJIS: [&str; 5] = ["😢", "😭", "😡", "💔", "👎"];

/// Sentiment-neutral words present in the bundled toy word table.
pub const FILLER_WORDS: [&str; 24] = [
    "the", "a", "is", "was", "to", "of", "and", "in", "on", "at", "it", "this", "today", "day", "night", "time",
    "week", "work", "home", "game", "movie", "phone", "city", "people",
];

fn filler(rng: &mut impl Rng, min: usize, max: usize) -> Vec<String> {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| FILLER_WORDS.choose(rng).expect("non-empty").to_string())
        .collect()
}

/// Posts of neutral filler words plus one emoji at a random position. The
/// label is the class of that emoji, so text alone carries no signal.
pub fn emoji_labeled_posts(n: usize, rng: &mut impl Rng) -> Vec<RawPost> {
    (0..n)
        .map(|i| {
            let label = i % 2;
            let pool = if label == 0 { &CLASS0_EMOJIS } else { &CLASS1_EMOJIS };
            let mut words = filler(rng, 3, 7);
            let at = rng.gen_range(0..=words.len());
            words.insert(at, pool.choose(rng).expect("non-empty").to_string());
            RawPost {
                text: words.join(" "),
                label: Some(label),
            }
        })
        .collect()
}

/// Unlabeled posts carrying two or three emojis, drawn from one class pool
/// with probability `1 − mix` and from both pools otherwise.
pub fn emoji_cooccurrence_posts(n: usize, mix: f64, rng: &mut impl Rng) -> Vec<RawPost> {
    (0..n)
        .map(|_| {
            let mut words = filler(rng, 2, 5);
            let k = rng.gen_range(2..=3);
            let home = if rng.gen_bool(0.5) { &CLASS0_EMOJIS } else { &CLASS1_EMOJIS };
            for _ in 0..k {
                let pool = if rng.gen_bool(mix) {
                    if rng.gen_bool(0.5) { &CLASS0_EMOJIS } else { &CLASS1_EMOJIS }
                } else {
                    home
                };
                let at = rng.gen_range(0..=words.len());
                words.insert(at, pool.choose(rng).expect("non-empty").to_string());
            }
            RawPost {
                text: words.join(" "),
                label: None,
            }
        })
        .collect()
}

/// Two clusters of `per_cluster` nodes. Within-cluster pairs connect with
/// probability `p_in`, cross pairs with `p_out`. Attributes are the cluster
/// centroid plus uniform noise in `±noise`.
pub fn two_cluster_graph(
    per_cluster: usize,
    attr_dim: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> CoocGraph {
    let n = 2 * per_cluster;
    let cluster = |i: usize| i / per_cluster;
    let mut pair_counts = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if cluster(i) == cluster(j) { p_in } else { p_out };
            if rng.gen_bool(p) {
                pair_counts.insert((i, j), rng.gen_range(1..=3));
            }
        }
    }
    // Identical sense vectors make the edge weight equal to the pair count.
    let sense: Vec<SenseVector> = vec![SenseVector::from([("x".to_string(), 1.0)]); n];
    let adjacency = build_adjacency(&pair_counts, &sense);
    let centroids: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..attr_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut attr = Vec::with_capacity(n * attr_dim);
    for i in 0..n {
        for c in &centroids[cluster(i)] {
            attr.push(c + rng.gen_range(-noise..=noise));
        }
    }
    CoocGraph {
        nodes: (0..n).map(|i| EmojiId::new(&format!("node{i}"))).collect(),
        occurrences: vec![1; n],
        pair_counts,
        adjacency,
        attributes: Tensor::matrix(n, attr_dim, attr),
    }
}
