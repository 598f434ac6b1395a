//! Weighted, attributed emoji co-occurrence graph.
//!
//! Each post contributes its set of *unique* emojis as a clique: every
//! unordered pair gains one co-occurrence. An edge's weight is the cosine of
//! the two emojis' sense vectors times that pair count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::corpus::{EmojiId, TokenSequence};
use crate::embeddings::{EmbeddingTable, WordEmbeddingTable};
use crate::emojinet::{cosine_similarity, node_attribute, tfidf_sense_vectors, SenseInventory, SenseVector};
use crate::error::{Error, Result};

/// Shard-local co-occurrence statistics. `merge` is associative and
/// commutative, so shards may be counted independently.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    /// Unordered pairs stored with the smaller id first.
    pub pairs: BTreeMap<(EmojiId, EmojiId), usize>,
    /// Token occurrences per emoji (duplicates within a post count).
    pub occurrences: BTreeMap<EmojiId, usize>,
}

impl CooccurrenceCounts {
    pub fn add_post(&mut self, seq: &TokenSequence) {
        let mut unique: Vec<EmojiId> = Vec::new();
        for t in seq.emojis() {
            let id = t.emoji_id().expect("emoji token");
            *self.occurrences.entry(id.clone()).or_default() += 1;
            unique.push(id);
        }
        unique.sort();
        unique.dedup();
        for i in 0..unique.len() {
            for j in i + 1..unique.len() {
                *self
                    .pairs
                    .entry((unique[i].clone(), unique[j].clone()))
                    .or_default() += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CooccurrenceCounts) {
        for (k, v) in &other.pairs {
            *self.pairs.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.occurrences {
            *self.occurrences.entry(k.clone()).or_default() += v;
        }
    }

    pub fn pair(&self, a: &EmojiId, b: &EmojiId) -> usize {
        let key = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    /// Node ids by descending occurrence, ties by id.
    pub fn ranked_nodes(&self) -> Vec<EmojiId> {
        let mut nodes: Vec<(&EmojiId, usize)> = self.occurrences.iter().map(|(k, &v)| (k, v)).collect();
        nodes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        nodes.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

pub fn count_cooccurrences<'a>(posts: impl IntoIterator<Item = &'a TokenSequence>) -> CooccurrenceCounts {
    let mut c = CooccurrenceCounts::default();
    for p in posts {
        c.add_post(p);
    }
    c
}

/// `A[i][j] = cosine(v_i, v_j) · count(i, j)`; symmetric with zero diagonal.
/// `pair_counts` is keyed by node indices with `i < j`.
pub fn build_adjacency(pair_counts: &BTreeMap<(usize, usize), usize>, sense_vectors: &[SenseVector]) -> Tensor {
    let n = sense_vectors.len();
    let mut a = Tensor::zeros(&[n, n]);
    for (&(i, j), &count) in pair_counts {
        let w = cosine_similarity(&sense_vectors[i], &sense_vectors[j]) * count as f64;
        a.set(i, j, w);
        a.set(j, i, w);
    }
    a
}

/// `D^(−1/2) (A + I) D^(−1/2)` with `D` the row sums of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Tensor {
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.row_slice(i).iter().sum::<f64>() + 1.0).sqrt())
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    out
}

/// 1 where `A > 0` and on the diagonal, 0 elsewhere.
pub fn binarize_edges(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j || a.get(i, j) > 0.0 {
                out.set(i, j, 1.0);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoocGraph {
    pub nodes: Vec<EmojiId>,
    pub occurrences: Vec<usize>,
    /// Keyed by node index, `i < j`.
    pub pair_counts: BTreeMap<(usize, usize), usize>,
    pub adjacency: Tensor,
    /// `[N, attribute_dim]`; row `i` is node `i`'s attribute vector.
    pub attributes: Tensor,
}

impl CoocGraph {
    /// Assembles the graph from corpus counts. Pairs seen fewer than
    /// `min_pair_count` times are dropped; emojis absent from the inventory
    /// stay as nodes with zero sense and attribute vectors.
    pub fn build(
        counts: &CooccurrenceCounts,
        inventory: &SenseInventory,
        words: &WordEmbeddingTable,
        min_pair_count: usize,
    ) -> Self {
        let nodes = counts.ranked_nodes();
        let index: BTreeMap<&EmojiId, usize> = nodes.iter().enumerate().map(|(i, e)| (e, i)).collect();
        let sense = tfidf_sense_vectors(inventory);
        let vectors: Vec<SenseVector> = nodes.iter().map(|e| sense.get(e).cloned().unwrap_or_default()).collect();
        let mut pair_counts = BTreeMap::new();
        for ((a, b), &c) in &counts.pairs {
            if c >= min_pair_count.max(1) {
                let (i, j) = (index[a], index[b]);
                pair_counts.insert((i.min(j), i.max(j)), c);
            }
        }
        let adjacency = build_adjacency(&pair_counts, &vectors);
        let dim = words.dim();
        let mut attr = Vec::with_capacity(nodes.len() * dim);
        for e in &nodes {
            match inventory.get(e) {
                Some(entry) => attr.extend(node_attribute(entry, words)),
                None => attr.extend(std::iter::repeat_n(0.0, dim)),
            }
        }
        let occurrences = nodes.iter().map(|e| counts.occurrences[e]).collect();
        Self {
            attributes: Tensor::matrix(nodes.len(), dim, attr),
            nodes,
            occurrences,
            pair_counts,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn normalized(&self) -> Tensor {
        normalize_adjacency(&self.adjacency)
    }

    pub fn edge_targets(&self) -> Tensor {
        binarize_edges(&self.adjacency)
    }

    pub const NODES_FILE: &'static str = "nodes.txt";
    pub const EDGES_FILE: &'static str = "edges.tsv";
    pub const ATTRIBUTES_FILE: &'static str = "attributes.txt";
    pub const COUNTS_FILE: &'static str = "counts.tsv";

    /// Writes the node list, edge list (`i j pair_count weight`, tab
    /// separated, `i < j`), attribute table and occurrence counts into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        let mut nodes = String::new();
        let mut counts = String::new();
        for (e, c) in self.nodes.iter().zip(&self.occurrences) {
            writeln!(nodes, "{e}").expect("string write");
            writeln!(counts, "{e}\t{c}").expect("string write");
        }
        let mut edges = String::new();
        for (&(i, j), &c) in &self.pair_counts {
            writeln!(edges, "{i}\t{j}\t{c}\t{}", self.adjacency.get(i, j)).expect("string write");
        }
        let keys = self.nodes.iter().map(|e| e.as_str().to_string()).collect();
        let attrs = EmbeddingTable::from_matrix(keys, &self.attributes)?;
        write(Self::NODES_FILE, nodes)?;
        write(Self::EDGES_FILE, edges)?;
        write(Self::COUNTS_FILE, counts)?;
        write(Self::ATTRIBUTES_FILE, attrs.to_text())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e)).map(|s| (p, s))
        };
        let (_, nodes_txt) = read(Self::NODES_FILE)?;
        let nodes: Vec<EmojiId> = nodes_txt.lines().filter(|l| !l.is_empty()).map(EmojiId::new).collect();
        let n = nodes.len();

        let (counts_path, counts_txt) = read(Self::COUNTS_FILE)?;
        let mut occurrences = vec![0; n];
        for (line_no, line) in counts_txt.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let parse_err = |m: String| Error::Parse {
                path: counts_path.clone(),
                line: line_no + 1,
                message: m,
            };
            let (id, c) = line.split_once('\t').ok_or_else(|| parse_err("expected id<TAB>count".into()))?;
            if line_no >= n || nodes[line_no].as_str() != id {
                return Err(parse_err(format!("count row {id} does not match node order")));
            }
            occurrences[line_no] = c.parse().map_err(|e| parse_err(format!("{e}")))?;
        }

        let (edges_path, edges_txt) = read(Self::EDGES_FILE)?;
        let mut pair_counts = BTreeMap::new();
        let mut adjacency = Tensor::zeros(&[n, n]);
        for (line_no, line) in edges_txt.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let parse_err = |m: String| Error::Parse {
                path: edges_path.clone(),
                line: line_no + 1,
                message: m,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", f.len())));
            }
            let i: usize = f[0].parse().map_err(|e| parse_err(format!("{e}")))?;
            let j: usize = f[1].parse().map_err(|e| parse_err(format!("{e}")))?;
            let c: usize = f[2].parse().map_err(|e| parse_err(format!("{e}")))?;
            let w: f64 = f[3].parse().map_err(|e| parse_err(format!("{e}")))?;
            if i >= j || j >= n {
                return Err(parse_err(format!("edge ({i}, {j}) must satisfy i < j < {n}")));
            }
            pair_counts.insert((i, j), c);
            adjacency.set(i, j, w);
            adjacency.set(j, i, w);
        }

        let (attr_path, attr_txt) = read(Self::ATTRIBUTES_FILE)?;
        let attrs = EmbeddingTable::parse(&attr_txt, &attr_path)?;
        if attrs.len() != n || attrs.keys().iter().zip(&nodes).any(|(k, e)| k != e.as_str()) {
            return Err(Error::invalid("attribute rows do not match the node list"));
        }
        Ok(Self {
            nodes,
            occurrences,
            pair_counts,
            adjacency,
            attributes: attrs.to_matrix(),
        })
    }
}
