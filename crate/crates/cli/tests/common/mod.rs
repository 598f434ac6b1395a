//! Synthetic on-disk workspaces shared by the command-line tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emofuse::corpus::{write_labeled_dataset, write_unlabeled_corpus};
use emofuse::pipeline::RunConfig;
use emofuse::synthetic::{emoji_cooccurrence_posts, emoji_labeled_posts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

/// A synthetic workspace: co-occurrence corpus, labeled train and test
/// posts whose label is fixed by the emoji they carry, and a config.
pub struct Workspace {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(train: usize, test: usize, extra_config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        write_unlabeled_corpus(&root.join("corpus.txt"), &emoji_cooccurrence_posts(400, 0.1, &mut rng)).unwrap();
        write_labeled_dataset(&root.join("train.jsonl"), &emoji_labeled_posts(train, &mut rng)).unwrap();
        write_labeled_dataset(&root.join("test.jsonl"), &emoji_labeled_posts(test, &mut rng)).unwrap();
        let config = format!(
            "seed = 11\n{extra_config}\n[paths]\ncorpus = \"corpus.txt\"\ninventory = {:?}\nword_vectors = {:?}\n\
             train = \"train.jsonl\"\ntest = \"test.jsonl\"\noutput_dir = \"out\"\n",
            data("sample_inventory.json"),
            data("toy_word_vectors.txt"),
        );
        std::fs::write(root.join("run.toml"), config).unwrap();
        Self { _dir: dir, root }
    }

    pub fn config(&self, overrides: &[&str]) -> RunConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(&self.config_path(), &o).unwrap()
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("run.toml")
    }
}

/// Tiny model sizes for fast command-line runs.
pub const SMALL: &str = "[vgae]\nhidden = 16\nlatent = 16\nepochs = 10\n[text]\nhidden = 4\n\
                     [fusion]\nd = 8\nd_ff = 16\n[classifier]\nfilters = 4\n[training]\nepochs = 2\n\
                     [cluster]\ntop_k = 6\n";

pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

