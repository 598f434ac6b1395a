//! Plain-text embedding tables.
//!
//! First line `"<count> <dim>"`, then one line per entry: the key followed by
//! `dim` decimals, all whitespace separated. Word vectors and emoji embeddings
//! share the format, so externally published tables can be swapped in.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

/// Pretrained word vectors.
pub type WordEmbeddingTable = EmbeddingTable;

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Builds a table from aligned keys and `[keys.len(), dim]` rows.
    pub fn from_matrix(keys: Vec<String>, matrix: &Tensor) -> Result<Self> {
        if matrix.rows() != keys.len() {
            return Err(Error::Shape {
                op: "embedding table",
                lhs: vec![keys.len()],
                rhs: matrix.shape().to_vec(),
            });
        }
        let mut t = Self::new(matrix.cols());
        for (i, k) in keys.into_iter().enumerate() {
            t.insert(k, matrix.row_slice(i))?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, key: String, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                op: "embedding insert",
                lhs: vec![self.dim],
                rhs: vec![vector.len()],
            });
        }
        if let Some(&i) = self.index.get(&key) {
            self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
        } else {
            self.index.insert(key.clone(), self.keys.len());
            self.keys.push(key);
            self.data.extend_from_slice(vector);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index
            .get(key)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// The stored vector, or zeros for an unknown key.
    pub fn lookup(&self, key: &str) -> Vec<f64> {
        self.get(key).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    pub fn to_matrix(&self) -> Tensor {
        Tensor::matrix(self.keys.len(), self.dim, self.data.clone())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.keys.len(), self.dim);
        for (i, k) in self.keys.iter().enumerate() {
            s.push_str(k);
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(s, " {v}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let mut head = header.split_whitespace();
        let (count, dim) = match (head.next(), head.next(), head.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|e| err(1, format!("bad count: {e}")))?,
                d.parse::<usize>().map_err(|e| err(1, format!("bad dimension: {e}")))?,
            ),
            _ => return Err(err(1, format!("header must be \"<count> <dim>\", got {header:?}"))),
        };
        let mut table = Self::new(dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line").to_string();
            let vector = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(i + 1, format!("bad value: {e}")))?;
            if vector.len() != dim {
                return Err(err(i + 1, format!("expected {dim} values, found {}", vector.len())));
            }
            if table.index.contains_key(&key) {
                return Err(err(i + 1, format!("duplicate key {key}")));
            }
            table.insert(key, &vector)?;
        }
        if table.len() != count {
            return Err(err(1, format!("header declares {count} entries, found {}", table.len())));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
