//! One function per command-line stage. Each reads its inputs from the
//! configured paths and writes its artifacts under `paths.output_dir`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint;
use crate::corpus::{load_labeled_dataset, load_unlabeled_corpus, tokenize};
use crate::embeddings::WordEmbeddingTable;
use crate::emojinet::SenseInventory;
use crate::error::{Error, Result};
use crate::graph::{count_cooccurrences, CoocGraph};
use crate::vgae::{train_vgae, EmojiEmbeddings};

use super::cluster::{cluster_similarity, ClusterResult};
use super::config::{require_path, RunConfig};
use super::model::{Model, ModelSpec, PreparedPost};
use super::train::{evaluate, train_classifier, write_history, EpochStats, EvalReport};

pub const GRAPH_DIR: &str = "graph";
pub const EMBEDDINGS_FILE: &str = "emoji_embeddings.txt";
pub const VGAE_CHECKPOINT: &str = "vgae.ckpt";
pub const VGAE_LOSS_FILE: &str = "vgae_loss.csv";
pub const CLASSIFIER_DIR: &str = "classifier";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "eval_report.json";
pub const EXPORT_FILE: &str = "emoji_embeddings.export.txt";
pub const CLUSTER_MATRIX_FILE: &str = "cluster_matrix.tsv";
pub const CLUSTER_MERGES_FILE: &str = "cluster_merges.tsv";

/// Independent random streams per stage so that rerunning one stage does
/// not depend on how many draws another made.
#[derive(Clone, Copy)]
enum Stream {
    Vgae = 1,
    ClassifierInit = 2,
    ClassifierBatches = 3,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = require_path(&cfg.paths.output_dir, "paths.output_dir")?.to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn word_table(cfg: &RunConfig) -> Result<WordEmbeddingTable> {
    WordEmbeddingTable::load(require_path(&cfg.paths.word_vectors, "paths.word_vectors")?)
}

/// Counts emoji co-occurrences in the unlabeled corpus and writes the graph.
pub fn build_graph(cfg: &RunConfig) -> Result<CoocGraph> {
    let out = output_dir(cfg)?;
    let posts = load_unlabeled_corpus(require_path(&cfg.paths.corpus, "paths.corpus")?)?;
    let inventory = SenseInventory::load(require_path(&cfg.paths.inventory, "paths.inventory")?)?;
    for e in inventory.degraded() {
        warn!("inventory entry {} has no senses", e.unicode);
    }
    let words = word_table(cfg)?;
    let seqs: Vec<_> = posts.iter().map(|p| tokenize(&p.text)).collect();
    let counts = count_cooccurrences(&seqs);
    let graph = CoocGraph::build(&counts, &inventory, &words, cfg.graph.min_pair_count);
    info!("graph: {} nodes, {} weighted pairs", graph.len(), graph.pair_counts.len());
    graph.save(&out.join(GRAPH_DIR))?;
    Ok(graph)
}

/// Trains the graph autoencoder and writes the emoji embeddings.
pub fn train_embeddings(cfg: &RunConfig) -> Result<EmojiEmbeddings> {
    let out = output_dir(cfg)?;
    let graph = CoocGraph::load(&out.join(GRAPH_DIR))?;
    let run = train_vgae(&graph, &cfg.vgae, &mut rng_for(cfg.seed, Stream::Vgae))?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in run.losses.iter().enumerate() {
        writeln!(losses, "{},{l}", i + 1).expect("string write");
    }
    write(&out.join(VGAE_LOSS_FILE), &losses)?;
    checkpoint::save(&out.join(VGAE_CHECKPOINT), &run.params)?;
    run.embeddings.save(&out.join(EMBEDDINGS_FILE))?;
    Ok(run.embeddings)
}

fn labeled_posts(path: &Path, model: &Model, words: &WordEmbeddingTable) -> Result<Vec<PreparedPost>> {
    let data = load_labeled_dataset(path)?;
    for e in &data.errors {
        warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    if data.posts.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    data.posts.iter().map(|p| model.prepare(&p.text, p.label, words)).collect()
}

pub struct ClassifierRun {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Trains the classifier on `paths.train` and writes the checkpoint and
/// per-epoch history.
pub fn train_classifier_stage(cfg: &RunConfig) -> Result<ClassifierRun> {
    let out = output_dir(cfg)?;
    let embeddings = EmojiEmbeddings::load(&out.join(EMBEDDINGS_FILE))?;
    let words = word_table(cfg)?;
    let spec = ModelSpec::from_config(cfg, words.dim(), &embeddings.ids);
    let mut model = Model::init(spec, &embeddings, &mut rng_for(cfg.seed, Stream::ClassifierInit))?;
    let posts = labeled_posts(require_path(&cfg.paths.train, "paths.train")?, &model, &words)?;
    let history = train_classifier(
        &mut model,
        &posts,
        &cfg.training,
        &mut rng_for(cfg.seed, Stream::ClassifierBatches),
    )?;
    model.save(&out.join(CLASSIFIER_DIR))?;
    write_history(&out.join(HISTORY_FILE), &history)?;
    Ok(ClassifierRun { model, history })
}

/// Scores the saved classifier on `paths.test` and writes the report.
pub fn evaluate_stage(cfg: &RunConfig) -> Result<EvalReport> {
    let out = output_dir(cfg)?;
    let model = Model::load(&out.join(CLASSIFIER_DIR))?;
    if model.spec.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, config says {}",
            model.spec.num_classes, cfg.num_classes
        )));
    }
    let words = word_table(cfg)?;
    let posts = labeled_posts(require_path(&cfg.paths.test, "paths.test")?, &model, &words)?;
    let report = evaluate(&model, &posts, cfg.seed, cfg.clone())?;
    write(&out.join(REPORT_FILE), &report.to_json()?)?;
    Ok(report)
}

/// Writes the classifier's emoji table (fine-tuned if training updated it)
/// to `dest`, or next to the other artifacts.
pub fn export_embeddings(cfg: &RunConfig, dest: Option<&Path>) -> Result<PathBuf> {
    let out = output_dir(cfg)?;
    let model = Model::load(&out.join(CLASSIFIER_DIR))?;
    let path = dest.map(Path::to_path_buf).unwrap_or_else(|| out.join(EXPORT_FILE));
    model.emoji_embeddings()?.save(&path)?;
    Ok(path)
}

/// Similarity heatmap data for the `cluster.top_k` most frequent emojis.
pub fn cluster_viz(cfg: &RunConfig) -> Result<ClusterResult> {
    let out = output_dir(cfg)?;
    let embeddings = EmojiEmbeddings::load(&out.join(EMBEDDINGS_FILE))?;
    let graph = CoocGraph::load(&out.join(GRAPH_DIR))?;
    let freq: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .zip(&graph.occurrences)
        .map(|(e, &c)| (e.as_str(), c))
        .collect();
    let labels: Vec<String> = embeddings.ids.iter().map(|e| e.as_str().to_string()).collect();
    let counts: Vec<usize> = labels.iter().map(|l| freq.get(l.as_str()).copied().unwrap_or(0)).collect();
    if cfg.cluster.top_k > labels.len() {
        warn!("cluster.top_k {} exceeds the {} embedded emojis", cfg.cluster.top_k, labels.len());
    }
    let result = cluster_similarity(&embeddings.z, &labels, &counts, cfg.cluster.top_k)?;
    write(&out.join(CLUSTER_MATRIX_FILE), &result.matrix_tsv())?;
    write(&out.join(CLUSTER_MERGES_FILE), &result.merges_tsv())?;
    Ok(result)
}
