//! Acceptance suite: one test per criterion, each printing a PASS or FAIL
//! line before asserting.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use emofuse::autodiff::{grad_check_params, GradCheckOptions, GradCheckReport, Params, Tape, Tensor};
use emofuse::classifier::{classify_logits, cross_entropy, init_classifier, ClassifierConfig};
use emofuse::corpus::{tokenize, EmojiId, TokenSequence};
use emofuse::embeddings::EmbeddingTable;
use emofuse::emojinet::{EmojiSenseEntry, SenseInventory};
use emofuse::fusion::{
    co_attention_unit, fuse, init_attention_unit, init_fusion, scaled_dot_attention, self_attention_unit,
    FusionConfig,
};
use emofuse::graph::{binarize_edges, count_cooccurrences, normalize_adjacency, CoocGraph};
use emofuse::pipeline::{cluster_similarity, stages, Ablation};

use common::{snapshot, Workspace, SMALL};
use emofuse::synthetic::two_cluster_graph;
use emofuse::text_encoder::{bilstm_layer, init_text_encoder, positional_encoding};
use emofuse::vgae::{
    edge_reconstruction_auc, forward_loss, init_params, mean_loss, standard_normal, train_vgae, KlNormalization,
    VgaeConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tests share one core; timed sections must not overlap.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {criterion} ({name}): {} :: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Replaces zero-initialised biases and layer-norm parameters with random
/// values so the check does not run at a special point.
fn jitter(p: &mut Params, rng: &mut impl Rng) {
    let names: Vec<String> = p.iter().map(|(k, _)| k.clone()).collect();
    for k in names {
        let v = p.get(&k).unwrap();
        if v.rows() == 1 {
            let noisy = v.data().iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect();
            p.insert(k.clone(), Tensor::matrix(1, v.cols(), noisy));
        }
    }
}

fn ok_report(r: &GradCheckReport) -> bool {
    r.max_rel_error < 1e-4 && r.excluded * 10 < r.checked
}

#[test]
fn criterion_1_gradient_integrity() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = GradCheckOptions::default();

    // (a) VGAE loss on a 5-node graph.
    let vcfg = VgaeConfig { hidden: 4, latent: 3, ..Default::default() };
    let vparams = init_params(6, &vcfg, &mut rng);
    let mut a = Tensor::zeros(&[5, 5]);
    for &(i, j, w) in &[(0, 1, 1.0), (0, 2, 0.5), (1, 3, 2.0), (2, 4, 1.2), (3, 4, 0.3)] {
        a.set(i, j, w);
        a.set(j, i, w);
    }
    let (a_norm, a_bin) = (normalize_adjacency(&a), binarize_edges(&a));
    let x = standard_normal(&[5, 6], &mut rng);
    let noise = standard_normal(&[5, 3], &mut rng);
    let ra = grad_check_params(
        |tape, b| forward_loss(tape, &a_norm, &x, &a_bin, b, noise.clone(), KlNormalization::Nodes),
        &vparams,
        opts,
    )
    .unwrap();

    // (b) Fusion at L=3, N_e=2, d=8, inputs included.
    let fcfg = FusionConfig { d: 8, d_ff: 16, ..Default::default() };
    let mut fparams = Params::new();
    init_fusion(&mut fparams, 10, 6, &fcfg, &mut rng);
    jitter(&mut fparams, &mut rng);
    fparams.insert("r_u", random(3, 10, &mut rng));
    fparams.insert("r_e", random(2, 6, &mut rng));
    let probe = random(8, 8, &mut rng);
    let rb = grad_check_params(
        |tape, b| {
            let f = fuse(b.var("r_u")?, b.var("r_e")?, b, &fcfg)?;
            tape.concat(&[f.w_u, f.w_e, f.w_h], 0)?.mul(tape.constant(probe.clone()))?.sum()
        },
        &fparams,
        opts,
    )
    .unwrap();

    // (c) Classifier at d=8, n=2.
    let ccfg = ClassifierConfig { kernel_sizes: vec![2, 3, 4], filters: 2 };
    let mut cparams = Params::new();
    init_classifier(&mut cparams, &["u", "e", "h"], 8, 2, &ccfg, &mut rng);
    jitter(&mut cparams, &mut rng);
    cparams.insert("in_u", random(5, 8, &mut rng));
    cparams.insert("in_e", random(2, 8, &mut rng));
    cparams.insert("in_h", random(5, 8, &mut rng));
    let rc = grad_check_params(
        |_, b| {
            let ch = [("u", b.var("in_u")?), ("e", b.var("in_e")?), ("h", b.var("in_h")?)];
            cross_entropy(classify_logits(&ch, b, &ccfg)?, 1)
        },
        &cparams,
        opts,
    )
    .unwrap();

    // (d) Two stacked Bi-LSTM layers at L=3, h=2.
    let mut lparams = Params::new();
    init_text_encoder(&mut lparams, 3, 2, &mut rng);
    jitter(&mut lparams, &mut rng);
    lparams.insert("input", random(3, 3, &mut rng));
    let lprobe = random(3, 4, &mut rng);
    let rd = grad_check_params(
        |tape, b| {
            let h1 = bilstm_layer(b.var("input")?, b, "lstm1")?;
            bilstm_layer(h1, b, "lstm2")?.mul(tape.constant(lprobe.clone()))?.sum()
        },
        &lparams,
        opts,
    )
    .unwrap();

    let elapsed = start.elapsed();
    let reports = [("vgae", &ra), ("fuse", &rb), ("classify", &rc), ("bilstm", &rd)];
    let ok = reports.iter().all(|(_, r)| ok_report(r)) && elapsed < Duration::from_secs(60);
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} max_rel {:.2e} ({} coords, {} kinks)", r.max_rel_error, r.checked, r.excluded))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(1, "gradient integrity", ok, format!("{detail}; {elapsed:.2?}"));
}

fn entry(e: &str, senses: &[&str]) -> EmojiSenseEntry {
    EmojiSenseEntry {
        unicode: EmojiId::new(e),
        name: e.into(),
        shortcode: String::new(),
        description: String::new(),
        keywords: vec![],
        images: vec![],
        related: vec![],
        category: None,
        senses: senses.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn criterion_2_adjacency_oracle() {
    let _g = serial();
    let start = Instant::now();
    let posts = [
        "good morning 😀 😂",
        "so funny 😂 😀 😂",
        "love this 😍 😀",
        "bad day 😢 😭",
        "crying again 😭 😢 😭",
        "mixed feelings 😀 😢",
        "😍 😂 party",
        "alone 😭",
        "😍 😢 hmm",
        "no emoji at all",
    ];
    let inv = vec![
        entry("😀", &["happy", "smile", "joy", "face"]),
        entry("😂", &["laugh", "joy", "tears", "face", "laugh"]),
        entry("😍", &["love", "heart", "eyes", "face", "happy"]),
        entry("😢", &["sad", "tears", "cry", "face"]),
        entry("😭", &["sad", "cry", "tears", "sob", "loud"]),
    ];
    let seqs: Vec<TokenSequence> = posts.iter().map(|p| tokenize(p)).collect();
    let g = CoocGraph::build(
        &count_cooccurrences(&seqs),
        &SenseInventory::from_entries(inv.clone()).unwrap(),
        &EmbeddingTable::new(4),
        1,
    );

    // Scalar recomputation: count posts containing both emojis, TF-IDF by
    // scanning every sense list, cosine by hand.
    let n_docs = inv.len() as f64;
    let tfidf = |id: &EmojiId| -> BTreeMap<&str, f64> {
        let e = inv.iter().find(|e| &e.unicode == id).unwrap();
        e.senses
            .iter()
            .map(|t| {
                let tf = e.senses.iter().filter(|s| *s == t).count() as f64;
                let df = inv.iter().filter(|d| d.senses.contains(t)).count() as f64;
                (t.as_str(), tf * (n_docs / df).ln())
            })
            .collect()
    };
    let mut max_err = 0.0f64;
    for i in 0..g.len() {
        for j in 0..g.len() {
            let expect = if i == j {
                0.0
            } else {
                let (a, b) = (tfidf(&g.nodes[i]), tfidf(&g.nodes[j]));
                let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).copied().unwrap_or(0.0)).sum();
                let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
                let count = posts
                    .iter()
                    .filter(|p| p.contains(g.nodes[i].as_str()) && p.contains(g.nodes[j].as_str()))
                    .count() as f64;
                dot / (na * nb) * count
            };
            max_err = max_err.max((g.adjacency.get(i, j) - expect).abs());
        }
    }
    let positive = g.adjacency.data().iter().filter(|&&v| v > 0.0).count();
    let ok = g.len() == 5 && max_err <= 1e-12 && positive > 0;
    verdict(
        2,
        "adjacency oracle",
        ok,
        format!("{} nodes, {positive} positive entries, max |diff| {max_err:.1e}, {:.2?}", g.len(), start.elapsed()),
    );
}

#[test]
fn criterion_3_vgae_learning() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let g = two_cluster_graph(10, 300, 0.9, 0.05, 0.2, &mut rng);
    let cfg = VgaeConfig::default();
    let initial = init_params(300, &cfg, &mut rng.clone());
    let run = train_vgae(&g, &cfg, &mut rng).unwrap();
    let noises: Vec<Tensor> = (0..8).map(|_| standard_normal(&[20, cfg.latent], &mut rng)).collect();
    let before = mean_loss(&g, &cfg, &initial, &noises).unwrap();
    let after = mean_loss(&g, &cfg, &run.params, &noises).unwrap();
    let auc = edge_reconstruction_auc(&run.embeddings.z, &g.edge_targets(), &mut rng);
    let elapsed = start.elapsed();
    let ok = run.losses.len() == 50 && after < before && auc > 0.9 && elapsed < Duration::from_secs(60);
    verdict(
        3,
        "VGAE learning",
        ok,
        format!("loss {before:.4} -> {after:.4}, AUC {auc:.4}, {} epochs, {elapsed:.2?}", run.losses.len()),
    );
}

struct EndToEnd {
    workspace: Workspace,
    train_accuracy: f64,
    test_accuracy: f64,
    final_epoch: usize,
    elapsed: Duration,
}

/// Full model at default sizes: graph, embeddings, 20 classifier epochs.
fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let workspace = Workspace::new(200, 100, "");
        let cfg = workspace.config(&[]);
        let start = Instant::now();
        stages::build_graph(&cfg).unwrap();
        stages::train_embeddings(&cfg).unwrap();
        let run = stages::train_classifier_stage(&cfg).unwrap();
        let elapsed = start.elapsed();
        let mut on_train = cfg.clone();
        on_train.paths.test = cfg.paths.train.clone();
        let train_accuracy = stages::evaluate_stage(&on_train).unwrap().accuracy;
        let test_accuracy = stages::evaluate_stage(&cfg).unwrap().accuracy;
        EndToEnd {
            workspace,
            train_accuracy,
            test_accuracy,
            final_epoch: run.history.len(),
            elapsed,
        }
    })
}

#[test]
fn criterion_4_end_to_end_overfit() {
    let _g = serial();
    let r = end_to_end();
    let ok = r.final_epoch == 20 && r.train_accuracy >= 0.95 && r.elapsed < Duration::from_secs(300);
    verdict(
        4,
        "end-to-end overfit",
        ok,
        format!("train accuracy {:.3} after {} epochs, {:.2?}", r.train_accuracy, r.final_epoch, r.elapsed),
    );
}

#[test]
fn criterion_5_ablation_trend() {
    let _g = serial();
    let full = end_to_end();
    let mut acc = BTreeMap::new();
    for ablation in [Ablation::N, Ablation::Ra2] {
        let mut cfg = full.workspace.config(&[&format!("ablation=\"{ablation}\"")]);
        cfg.paths.output_dir = full.workspace.root.join(format!("out_{ablation}"));
        std::fs::create_dir_all(&cfg.paths.output_dir).unwrap();
        // Same emoji embeddings as the full model.
        let file = stages::EMBEDDINGS_FILE;
        std::fs::copy(full.workspace.root.join("out").join(file), cfg.paths.output_dir.join(file)).unwrap();
        stages::train_classifier_stage(&cfg).unwrap();
        acc.insert(ablation.name(), stages::evaluate_stage(&cfg).unwrap().accuracy);
    }
    let (n, ra2) = (acc["N"], acc["RA2"]);
    let ok = full.test_accuracy >= n && ra2 <= full.test_accuracy;
    verdict(
        5,
        "ablation trend",
        ok,
        format!("test accuracy full {:.3}, N {n:.3}, RA2 {ra2:.3}", full.test_accuracy),
    );
}

#[test]
fn criterion_6_attention_invariants() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut worst_sum, mut masked_leak, mut mismatches) = (0.0f64, 0usize, 0usize);
    let cases = 1000;
    for _ in 0..cases {
        let (nq, nk, d) = (rng.gen_range(1..7), rng.gen_range(1..8), rng.gen_range(1..7));
        let mut mask: Vec<bool> = (0..nk).map(|_| rng.gen_bool(0.3)).collect();
        if mask.iter().all(|&m| m) {
            let keep = rng.gen_range(0..nk);
            mask[keep] = false;
        }
        let scale = rng.gen_range(0.1..20.0);
        let tape = Tape::new();
        let q = tape.constant(random(nq, d, &mut rng).map(|v| v * scale));
        let k = tape.constant(random(nk, d, &mut rng).map(|v| v * scale));
        let v = tape.constant(random(nk, d, &mut rng));
        let (_, w) = scaled_dot_attention(q, k, v, Some(&mask)).unwrap();
        let w = w.value();
        for r in 0..nq {
            worst_sum = worst_sum.max((w.row_slice(r).iter().sum::<f64>() - 1.0).abs());
            masked_leak += mask.iter().enumerate().filter(|&(j, &m)| m && w.get(r, j) != 0.0).count();
        }

        let dm = rng.gen_range(1..5) * 2;
        let mut p = Params::new();
        init_attention_unit(&mut p, "u", dm, 2 * dm, &mut rng);
        jitter(&mut p, &mut rng);
        let x = random(rng.gen_range(1..6), dm, &mut rng);
        let b = p.bind_frozen(&tape);
        let s = self_attention_unit(tape.constant(x.clone()), &b, "u", None).unwrap().value();
        let c = co_attention_unit(tape.constant(x.clone()), tape.constant(x), &b, "u", None).unwrap().value();
        if s.data() != c.data() {
            mismatches += 1;
        }
    }
    let ok = worst_sum <= 1e-12 && masked_leak == 0 && mismatches == 0;
    verdict(
        6,
        "attention invariants",
        ok,
        format!("{cases} cases: max |row sum - 1| {worst_sum:.1e}, masked leaks {masked_leak}, self/co mismatches {mismatches}"),
    );
}

#[test]
fn criterion_7_positional_encoding() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut value_err, mut shift_err) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let d = 2 * rng.gen_range(1..160);
        let pos = rng.gen_range(0..2000);
        let pe = positional_encoding(pos, d, 1000.0).unwrap();
        for (j, &v) in pe.iter().enumerate() {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 1000f64.powf(2.0 * i / d as f64);
            let expect = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            value_err = value_err.max((v - expect).abs());
        }
        let t = rng.gen_range(0..200);
        let shifted = positional_encoding(pos + t, d, 1000.0).unwrap();
        for i in 0..d / 2 {
            let w = t as f64 / 1000f64.powf(2.0 * i as f64 / d as f64);
            let (s, c) = (pe[2 * i], pe[2 * i + 1]);
            shift_err = shift_err.max((shifted[2 * i] - (s * w.cos() + c * w.sin())).abs());
            shift_err = shift_err.max((shifted[2 * i + 1] - (c * w.cos() - s * w.sin())).abs());
        }
    }
    let ok = value_err <= 1e-12 && shift_err <= 1e-10;
    verdict(
        7,
        "positional encoding",
        ok,
        format!("max value error {value_err:.1e}, max shift error {shift_err:.1e}"),
    );
}

#[test]
fn criterion_8_cli_determinism() {
    let _g = serial();
    let ws = Workspace::new(24, 12, SMALL);
    let config = ws.root.join("run.toml");
    let out = ws.root.join("out");
    let commands = [
        "build-graph",
        "train-vgae",
        "train-classifier",
        "evaluate",
        "export-embeddings",
        "cluster-viz",
    ];
    let mut differing = Vec::new();
    let mut failures = Vec::new();
    for cmd in commands {
        let mut snaps = Vec::new();
        for _ in 0..2 {
            let status = Command::new(env!("CARGO_BIN_EXE_emofuse"))
                .args([cmd, "--config"])
                .arg(&config)
                .args(["--seed", "5"])
                .env("RUST_LOG", "warn")
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{cmd}: {}", String::from_utf8_lossy(&status.stderr)));
            }
            snaps.push(snapshot(&out));
        }
        if snaps[0] != snaps[1] {
            differing.push(cmd);
        }
    }
    let files = snapshot(&out).len();
    let ok = failures.is_empty() && differing.is_empty() && files >= 10;
    verdict(
        8,
        "CLI determinism",
        ok,
        format!("{} subcommands run twice, {files} artifacts, differing {differing:?}, failures {failures:?}", commands.len()),
    );
}

#[test]
fn criterion_9_clustering() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let centres = [[1.0, 0.2, 0.0, 0.5, -0.3, 0.0], [-0.2, 0.1, 1.0, -0.4, 0.0, 0.8]];
    let mut rows = Vec::new();
    for i in 0..8 {
        // Alternate groups so the grouping is not given away by row order.
        let c = &centres[i % 2];
        rows.push(c.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect::<Vec<f64>>());
    }
    let z = Tensor::from_rows(&rows).unwrap();
    let labels: Vec<String> = (0..8).map(|i| format!("g{}_{i}", i % 2)).collect();
    let counts: Vec<usize> = (0..8).map(|i| 100 - i).collect();
    let r = cluster_similarity(&z, &labels, &counts, 8).unwrap();

    // Leaves 0..8; the first six merges must stay inside one group.
    let mut group: Vec<Option<usize>> = (0..8).map(|i| Some(i % 2)).collect();
    let mut within = true;
    for (s, m) in r.merges.iter().enumerate() {
        let g = match (group[m.left], group[m.right]) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        if s < 6 && g.is_none() {
            within = false;
        }
        group.push(g);
    }
    let order_groups: Vec<usize> = r.leaf_order.iter().map(|&i| i % 2).collect();
    let contiguous = order_groups.windows(2).filter(|w| w[0] != w[1]).count() == 1;

    let tsv = r.matrix_tsv();
    let lines: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let header = &lines[0][1..];
    let mut symmetric = lines.len() == 9;
    for i in 1..lines.len() {
        symmetric &= lines[i][0] == header[i - 1] && lines[i].len() == 9;
        for j in 1..lines[i].len() {
            symmetric &= lines[i][j] == lines[j][i];
        }
    }
    let ok = within && contiguous && symmetric && r.merges.len() == 7;
    verdict(
        9,
        "clustering",
        ok,
        format!("leaf order {:?}, first six merges within groups: {within}, symmetric TSV: {symmetric}", order_groups),
    );
}
