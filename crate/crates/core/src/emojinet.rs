//! Emoji sense inventory: loading, TF-IDF sense vectors, and keyword-averaged
//! node attributes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::Value;

use crate::corpus::{tokenize, EmojiId};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};

/// One inventory record. Image refs, related emoji and category are carried
/// but unused.
#[derive(Clone, Debug, PartialEq)]
pub struct EmojiSenseEntry {
    pub unicode: EmojiId,
    pub name: String,
    pub shortcode: String,
    pub description: String,
    pub keywords: Vec<String>,
    pub images: Vec<String>,
    pub related: Vec<String>,
    pub category: Option<String>,
    pub senses: Vec<String>,
}

impl EmojiSenseEntry {
    /// Entries without keywords or senses still load but contribute nothing
    /// to the corresponding features.
    pub fn is_degraded(&self) -> bool {
        self.keywords.is_empty() || self.senses.is_empty()
    }
}

/// Sparse term → weight map.
pub type SenseVector = BTreeMap<String, f64>;

#[derive(Clone, Debug, Default)]
pub struct SenseInventory {
    entries: BTreeMap<EmojiId, EmojiSenseEntry>,
}

fn string_field(obj: &serde_json::Map<String, Value>, index: usize, key: &'static str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::invalid(format!("inventory entry {index}: \"{key}\" must be a string"))),
        None => Err(Error::MissingKey { index, key }),
    }
}

fn list_field(obj: &serde_json::Map<String, Value>, index: usize, key: &'static str, required: bool) -> Result<Vec<String>> {
    match obj.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(Error::invalid(format!(
                    "inventory entry {index}: \"{key}\" must hold strings"
                ))),
            })
            .collect(),
        Some(Value::Null) | None if !required => Ok(Vec::new()),
        Some(_) => Err(Error::invalid(format!("inventory entry {index}: \"{key}\" must be a list"))),
        None => Err(Error::MissingKey { index, key }),
    }
}

impl SenseInventory {
    pub fn from_entries(entries: impl IntoIterator<Item = EmojiSenseEntry>) -> Result<Self> {
        let mut inv = Self::default();
        for e in entries {
            if inv.entries.contains_key(&e.unicode) {
                return Err(Error::DuplicateEmoji(e.unicode.codepoints()));
            }
            inv.entries.insert(e.unicode.clone(), e);
        }
        Ok(inv)
    }

    pub fn parse_json(text: &str, path: &Path) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let Value::Array(items) = root else {
            return Err(Error::invalid("sense inventory must be a JSON array"));
        };
        let mut entries = Vec::with_capacity(items.len());
        for (index, item) in items.iter().enumerate() {
            let Value::Object(obj) = item else {
                return Err(Error::invalid(format!("inventory entry {index} is not an object")));
            };
            let raw = string_field(obj, index, "unicode")?;
            let unicode = EmojiId::parse(&raw)
                .ok_or_else(|| Error::invalid(format!("inventory entry {index}: bad unicode {raw:?}")))?;
            let category = match obj.get("category") {
                Some(Value::String(s)) => Some(s.clone()),
                _ => None,
            };
            entries.push(EmojiSenseEntry {
                unicode,
                name: string_field(obj, index, "name")?,
                shortcode: string_field(obj, index, "shortcode")?,
                description: string_field(obj, index, "description")?,
                keywords: list_field(obj, index, "keywords", true)?,
                images: list_field(obj, index, "images", false)?,
                related: list_field(obj, index, "related", false)?,
                category,
                senses: list_field(obj, index, "senses", true)?,
            });
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_json(&text, path)
    }

    pub fn get(&self, id: &EmojiId) -> Option<&EmojiSenseEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmojiSenseEntry> {
        self.entries.values()
    }

    pub fn degraded(&self) -> impl Iterator<Item = &EmojiSenseEntry> {
        self.entries.values().filter(|e| e.is_degraded())
    }
}

fn sense_terms(entry: &EmojiSenseEntry) -> Vec<String> {
    entry
        .senses
        .iter()
        .flat_map(|s| tokenize(s).words().map(|t| t.surface.clone()).collect::<Vec<_>>())
        .collect()
}

/// TF-IDF over each emoji's concatenated sense strings: raw term count times
/// `ln(N / df)`, with `N` the number of non-empty sense documents. Emojis
/// with no sense terms map to the empty (zero) vector.
pub fn tfidf_sense_vectors(inventory: &SenseInventory) -> BTreeMap<EmojiId, SenseVector> {
    let docs: Vec<(EmojiId, HashMap<String, usize>)> = inventory
        .iter()
        .map(|e| {
            let mut tf = HashMap::new();
            for t in sense_terms(e) {
                *tf.entry(t).or_insert(0usize) += 1;
            }
            (e.unicode.clone(), tf)
        })
        .collect();
    let n_docs = docs.iter().filter(|(_, tf)| !tf.is_empty()).count();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for (_, tf) in &docs {
        for t in tf.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    docs.iter()
        .map(|(id, tf)| {
            let v = tf
                .iter()
                .map(|(t, &count)| {
                    let idf = (n_docs as f64 / df[t.as_str()] as f64).ln();
                    (t.clone(), count as f64 * idf)
                })
                .collect();
            (id.clone(), v)
        })
        .collect()
}

/// Cosine of two non-negative sparse vectors, clamped to `[0, 1]`; 0 when
/// either has zero norm.
pub fn cosine_similarity(a: &SenseVector, b: &SenseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(t, x)| large.get(t).map(|y| x * y))
        .sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Mean word vector of the entry's keywords (multi-word keywords contribute
/// each word). Zero vector when no keyword word is in the table.
pub fn node_attribute(entry: &EmojiSenseEntry, table: &WordEmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    let mut found = 0usize;
    for kw in &entry.keywords {
        for w in tokenize(kw).words() {
            if let Some(v) = table.get(&w.surface) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                found += 1;
            }
        }
    }
    if found > 0 {
        for a in &mut acc {
            *a /= found as f64;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(u: &str, keywords: &[&str], senses: &[&str]) -> EmojiSenseEntry {
        EmojiSenseEntry {
            unicode: EmojiId::parse(u).unwrap(),
            name: String::new(),
            shortcode: String::new(),
            description: String::new(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            images: vec![],
            related: vec![],
            category: None,
            senses: senses.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn sv(pairs: &[(&str, f64)]) -> SenseVector {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn loads_entries_and_flags_degraded() {
        let json = r#"[
          {"unicode":"U+1F355","name":"pizza","shortcode":":pizza:","description":"slice",
           "keywords":["pizza","food"],"senses":["pizza (noun)"]},
          {"unicode":"U+1F600","name":"grin","shortcode":":grin:","description":"face",
           "keywords":["happy"],"senses":[], "category":"faces"}
        ]"#;
        let inv = SenseInventory::parse_json(json, Path::new("x")).unwrap();
        let pizza = inv.get(&EmojiId::new("🍕")).unwrap();
        assert_eq!(pizza.keywords, vec!["pizza", "food"]);
        assert!(!pizza.is_degraded());
        assert_eq!(inv.degraded().count(), 1);
    }

    #[test]
    fn rejects_duplicates_and_missing_keys() {
        let dup = r#"[
          {"unicode":"U+1F355","name":"a","shortcode":"","description":"","keywords":[],"senses":[]},
          {"unicode":"🍕","name":"b","shortcode":"","description":"","keywords":[],"senses":[]}
        ]"#;
        assert!(matches!(
            SenseInventory::parse_json(dup, Path::new("x")),
            Err(Error::DuplicateEmoji(_))
        ));
        let missing = r#"[{"unicode":"U+1F355","name":"a","shortcode":"","description":"","keywords":[]}]"#;
        assert!(matches!(
            SenseInventory::parse_json(missing, Path::new("x")),
            Err(Error::MissingKey { index: 0, key: "senses" })
        ));
    }

    #[test]
    fn tfidf_hand_values() {
        let inv = SenseInventory::from_entries(vec![
            entry("😀", &[], &["happy joy"]),
            entry("😂", &[], &["happy"]),
            entry("😢", &[], &["sad"]),
        ])
        .unwrap();
        let v = tfidf_sense_vectors(&inv);
        let e1 = &v[&EmojiId::new("😀")];
        assert!((e1["joy"] - 3f64.ln()).abs() < 1e-12);
        assert!((e1["joy"] - 1.0986).abs() < 1e-4);
        assert!((e1["happy"] - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tfidf_identical_docs_and_ubiquitous_terms() {
        let inv = SenseInventory::from_entries(vec![
            entry("😀", &[], &["smile face"]),
            entry("😃", &[], &["smile face"]),
            entry("😢", &[], &["face tear"]),
            entry("🍕", &[], &[]),
        ])
        .unwrap();
        let v = tfidf_sense_vectors(&inv);
        assert_eq!(v[&EmojiId::new("😀")], v[&EmojiId::new("😃")]);
        assert_eq!(v[&EmojiId::new("😢")]["face"], 0.0);
        assert!(v[&EmojiId::new("🍕")].is_empty());
    }

    #[test]
    fn tfidf_is_order_independent() {
        let a = vec![
            entry("😀", &[], &["happy joy"]),
            entry("😂", &[], &["happy laugh"]),
            entry("😢", &[], &["sad tear"]),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(
            tfidf_sense_vectors(&SenseInventory::from_entries(a).unwrap()),
            tfidf_sense_vectors(&SenseInventory::from_entries(b).unwrap())
        );
    }

    #[test]
    fn cosine_examples() {
        let a = sv(&[("x", 1.0), ("y", 1.0)]);
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &sv(&[("z", 2.0)])), 0.0);
        let b = sv(&[("x", 1.0)]);
        assert!((cosine_similarity(&a, &b) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &SenseVector::new()), 0.0);
    }

    #[test]
    fn node_attribute_means_keywords() {
        let mut table = WordEmbeddingTable::new(2);
        table.insert("a".into(), &[1.0, 0.0]).unwrap();
        table.insert("b".into(), &[0.0, 1.0]).unwrap();
        table.insert("pizza".into(), &[0.25, -3.0]).unwrap();
        assert_eq!(node_attribute(&entry("🍕", &["pizza"], &[]), &table), vec![0.25, -3.0]);
        assert_eq!(node_attribute(&entry("🍕", &["a", "b"], &[]), &table), vec![0.5, 0.5]);
        assert_eq!(node_attribute(&entry("🍕", &["zz", "qq"], &[]), &table), vec![0.0, 0.0]);
    }
}
