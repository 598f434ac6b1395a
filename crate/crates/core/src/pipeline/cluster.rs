//! Cosine similarity over the most frequent emojis and an average-linkage
//! dendrogram to order them for a heatmap.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One agglomeration step. Leaves are `0..n`; the cluster formed at step
/// `s` gets id `n + s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Average `1 − cosine` between the two clusters.
    pub distance: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    /// Selected emoji labels, in frequency order.
    pub labels: Vec<String>,
    /// Cosine similarities in frequency order.
    pub similarity: Vec<Vec<f64>>,
    pub merges: Vec<Merge>,
    /// Dendrogram leaf order as indices into `labels`.
    pub leaf_order: Vec<usize>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity matrix of the rows of `z`; the diagonal is exactly 1.
pub fn similarity_matrix(z: &Tensor) -> Vec<Vec<f64>> {
    let n = z.rows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 1.0 } else { cosine(z.row_slice(i), z.row_slice(j)) })
                .collect()
        })
        .collect()
}

/// Average-linkage agglomeration of `n` items under `distance`. Ties go to
/// the pair that appears first in the current cluster list.
pub fn average_linkage(distance: &[Vec<f64>]) -> (Vec<Merge>, Vec<usize>) {
    let n = distance.len();
    // (cluster id, member leaves in display order)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let avg = |a: &[usize], b: &[usize]| {
        let sum: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| distance[i][j])).sum();
        sum / (a.len() * b.len()) as f64
    };
    while active.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let d = avg(&active[i].1, &active[j].1);
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        let (i, j, d) = best;
        let (right_id, right) = active.remove(j);
        let (left_id, left) = &mut active[i];
        merges.push(Merge {
            left: *left_id,
            right: right_id,
            distance: d,
            size: left.len() + right.len(),
        });
        left.extend(right);
        *left_id = n + merges.len() - 1;
    }
    let order = active.pop().map(|(_, leaves)| leaves).unwrap_or_default();
    (merges, order)
}

/// Clusters the `top_k` most frequent emojis. `counts[i]` is the corpus
/// frequency of row `i` of `z`; ties keep the row order. A `top_k` above
/// the number of rows is clamped.
pub fn cluster_similarity(z: &Tensor, labels: &[String], counts: &[usize], top_k: usize) -> Result<ClusterResult> {
    if top_k < 2 {
        return Err(Error::invalid(format!("clustering needs top_k ≥ 2, got {top_k}")));
    }
    if labels.len() != z.rows() || counts.len() != z.rows() {
        return Err(Error::invalid("labels, counts and embedding rows must have the same length"));
    }
    let mut rank: Vec<usize> = (0..z.rows()).collect();
    rank.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    rank.truncate(top_k);
    if rank.len() < 2 {
        return Err(Error::invalid(format!("clustering needs at least 2 embeddings, got {}", rank.len())));
    }
    let data = rank.iter().flat_map(|&r| z.row_slice(r).iter().copied()).collect();
    let sub = Tensor::matrix(rank.len(), z.cols(), data);
    let similarity = similarity_matrix(&sub);
    let distance: Vec<Vec<f64>> = similarity.iter().map(|r| r.iter().map(|s| 1.0 - s).collect()).collect();
    let (merges, leaf_order) = average_linkage(&distance);
    Ok(ClusterResult {
        labels: rank.iter().map(|&r| labels[r].clone()).collect(),
        similarity,
        merges,
        leaf_order,
    })
}

impl ClusterResult {
    /// Leaf-ordered similarity matrix with a header row and a label column.
    pub fn matrix_tsv(&self) -> String {
        let mut out = String::from("emoji");
        for &i in &self.leaf_order {
            write!(out, "\t{}", self.labels[i]).expect("string write");
        }
        out.push('\n');
        for &i in &self.leaf_order {
            out.push_str(&self.labels[i]);
            for &j in &self.leaf_order {
                write!(out, "\t{}", self.similarity[i][j]).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// `left right distance size` per merge.
    pub fn merges_tsv(&self) -> String {
        let mut out = String::from("left\tright\tdistance\tsize\n");
        for m in &self.merges {
            writeln!(out, "{}\t{}\t{}\t{}", m.left, m.right, m.distance, m.size).expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i}")).collect()
    }

    #[test]
    fn two_tight_pairs_merge_first() {
        let z = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.99, 0.05, 0.05, 0.98]);
        let r = cluster_similarity(&z, &labels(4), &[4, 3, 2, 1], 4).unwrap();
        let firsts: Vec<(usize, usize)> = r.merges[..2].iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(firsts, vec![(0, 2), (1, 3)]);
        assert_eq!(r.leaf_order, vec![0, 2, 1, 3]);
        assert_eq!(r.merges[2].size, 4);
    }

    #[test]
    fn duplicates_and_orthogonal_rows() {
        let z = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let r = cluster_similarity(&z, &labels(3), &[1, 1, 1], 3).unwrap();
        assert_eq!(r.similarity[0][2], 1.0);
        assert_eq!(r.similarity[0][1], 0.0);
        let pos = |x: usize| r.leaf_order.iter().position(|&v| v == x).unwrap();
        assert_eq!(pos(0).abs_diff(pos(2)), 1);
    }

    #[test]
    fn top_k_selects_frequent_rows() {
        let z = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let r = cluster_similarity(&z, &labels(3), &[1, 9, 5], 2).unwrap();
        assert_eq!(r.labels, vec!["e1", "e2"]);
        assert!(cluster_similarity(&z, &labels(3), &[1, 9, 5], 1).is_err());
        assert_eq!(cluster_similarity(&z, &labels(3), &[1, 9, 5], 10).unwrap().labels.len(), 3);
    }
}
