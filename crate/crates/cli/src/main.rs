use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emofuse::pipeline::{stages, RunConfig};

#[derive(Parser)]
#[command(name = "emofuse", version, about = "Emoji graph embeddings and text/emoji sentiment classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override a config value, e.g. `--set training.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed; replaces `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> emofuse::Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count emoji co-occurrences and write the weighted graph.
    BuildGraph(Common),
    /// Train the graph autoencoder and write emoji embeddings.
    TrainVgae(Common),
    /// Train the sentiment classifier.
    TrainClassifier(Common),
    /// Score the trained classifier on the test set.
    Evaluate(Common),
    /// Write the classifier's emoji embeddings.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Destination file; defaults to the output directory.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Emit the similarity matrix and dendrogram of the most frequent emojis.
    ClusterViz(Common),
}

fn run(cli: Cli) -> emofuse::Result<()> {
    match cli.command {
        Command::BuildGraph(c) => {
            let g = stages::build_graph(&c.load()?)?;
            println!("graph: {} nodes, {} pairs", g.len(), g.pair_counts.len());
        }
        Command::TrainVgae(c) => {
            let e = stages::train_embeddings(&c.load()?)?;
            println!("embeddings: {} emojis, dim {}", e.ids.len(), e.dim());
        }
        Command::TrainClassifier(c) => {
            let run = stages::train_classifier_stage(&c.load()?)?;
            if let Some(last) = run.history.last() {
                println!("epoch {} loss {:.6} accuracy {:.4}", last.epoch, last.loss, last.accuracy);
            }
        }
        Command::Evaluate(c) => {
            let report = stages::evaluate_stage(&c.load()?)?;
            print!("{}", report.to_json()?);
        }
        Command::ExportEmbeddings { common, out } => {
            let path = stages::export_embeddings(&common.load()?, out.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::ClusterViz(c) => {
            let r = stages::cluster_viz(&c.load()?)?;
            println!("clustered {} emojis: {}", r.labels.len(), r.leaf_order.iter().map(|&i| r.labels[i].as_str()).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
