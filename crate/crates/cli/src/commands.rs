//! Subcommand implementations. Every output lands under the workdir as
//! `<command>-<seed>.<ext>` and is byte-deterministic given inputs + seed.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use citerank_core::checkpoint::Checkpoint;
use citerank_core::corpus::{
    self, build_vocabulary, compute_tfidf, default_stopwords, extract_citations,
    generate_synthetic_corpus, load_stopwords, read_corpus_jsonl, read_edges_csv, validate_id,
    znormalize, Document, Vocabulary,
};
use citerank_core::eval::{
    self, cross_reference_matrix, evaluate, evaluate_embeddings, export_embeddings_tsv,
    probabilities_from_logits, threshold_analysis, write_metrics_json, write_threshold_json,
    MetricsReport,
};
use citerank_core::graph::{mask_validation_edges, split_nodes, write_split_json};
use citerank_core::model::{count_parameters, eval_forward, ModelConfig, Scorer};
use citerank_core::training::{citation_probability, train, write_training_log};
use citerank_core::{CitationGraph, Matrix, NodeSplit};

use crate::config::RunConfig;
use crate::CliError;

/// Everything derived from the corpus inputs.
pub struct Pipeline {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub features: Matrix,
    pub graph: CitationGraph,
    pub split: NodeSplit,
    pub model: ModelConfig,
}

fn stopwords_for(cfg: &RunConfig) -> Result<HashSet<String>, CliError> {
    match &cfg.stopwords {
        Some(path) => {
            require_file(path)?;
            Ok(load_stopwords(path)?)
        }
        None => Ok(default_stopwords()),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("missing input file {}", path.display())));
    }
    Ok(())
}

pub fn build_pipeline(cfg: &RunConfig) -> Result<Pipeline, CliError> {
    let corpus_path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Data("config has no paths.corpus".into()))?;
    require_file(corpus_path)?;
    if let Some(edges) = &cfg.edges {
        require_file(edges)?;
    }
    let stopwords = stopwords_for(cfg)?;
    let docs = read_corpus_jsonl(corpus_path)?;
    for d in &docs {
        validate_id(&d.id)?;
    }
    let vocab = build_vocabulary(&docs, cfg.max_terms, &stopwords)?;
    let features = znormalize(&compute_tfidf(&docs, &vocab));
    let edges = match &cfg.edges {
        Some(path) => read_edges_csv(path)?,
        None => extract_citations(&docs)?,
    };
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let domains: Vec<String> = docs.iter().map(|d| d.domain.clone()).collect();
    let graph = CitationGraph::from_edges(ids, domains, &edges)?;
    let split = split_nodes(&graph, cfg.seed, cfg.train_frac, cfg.val_frac)?;
    let model = ModelConfig {
        input_dim: vocab.len(),
        ..cfg.model.clone()
    };
    Ok(Pipeline {
        docs,
        vocab,
        features,
        graph,
        split,
        model,
    })
}

fn ensure_workdir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.workdir)
        .map_err(|e| CliError::Data(format!("cannot create workdir: {e}")))?;
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, explicit: &Option<PathBuf>) -> Result<Checkpoint, CliError> {
    let path = explicit.clone().unwrap_or_else(|| cfg.default_checkpoint());
    require_file(&path)?;
    Ok(Checkpoint::load(&path)?)
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    ensure_workdir(cfg)?;

    let vocab_path = cfg.artifact("ingest", "vocab.tsv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&vocab_path)?);
    for (term, df) in p.vocab.terms.iter().zip(&p.vocab.doc_frequency) {
        writeln!(w, "{term}\t{df}")?;
    }
    w.flush()?;

    let feat_path = cfg.artifact("ingest", "features.tsv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&feat_path)?);
    for (i, doc) in p.docs.iter().enumerate() {
        let values: Vec<String> = p.features.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}\t{}", doc.id, values.join("\t"))?;
    }
    w.flush()?;

    let edges_path = cfg.artifact("ingest", "edges.csv");
    let edges: Vec<(String, String)> = p
        .graph
        .adj
        .edges()
        .into_iter()
        .map(|(i, j)| (p.graph.node_ids[i].clone(), p.graph.node_ids[j].clone()))
        .collect();
    corpus::write_edges_csv(&edges_path, &edges)?;

    println!(
        "ingested {} documents, {} terms, {} citations",
        p.docs.len(),
        p.vocab.len(),
        edges.len()
    );
    println!("wrote {}", vocab_path.display());
    println!("wrote {}", feat_path.display());
    println!("wrote {}", edges_path.display());
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_workdir(cfg)?;
    let (docs, edges) = generate_synthetic_corpus(&cfg.synth)?;
    let corpus_path = cfg.artifact("synth", "corpus.jsonl");
    let edges_path = cfg.artifact("synth", "edges.csv");
    corpus::write_corpus_jsonl(&corpus_path, &docs)?;
    corpus::write_edges_csv(&edges_path, &edges)?;
    println!(
        "generated {} documents, {} citations ({} domains)",
        docs.len(),
        edges.len(),
        cfg.synth.n_domains
    );
    println!("wrote {}", corpus_path.display());
    println!("wrote {}", edges_path.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    ensure_workdir(cfg)?;
    let result = train(&p.features, &p.graph, &p.split, &p.model, &cfg.train)?;

    let ckpt_path = cfg.default_checkpoint();
    result.checkpoint.save(&ckpt_path)?;
    let log_path = cfg.artifact("train", "log.csv");
    let gate_layers = if p.model.use_learned_residual {
        p.model.n_layers
    } else {
        0
    };
    write_training_log(&log_path, &result.log, gate_layers)?;
    let split_path = cfg.artifact("train", "split.json");
    write_split_json(&split_path, &p.split, &p.graph)?;

    println!(
        "trained {} updates ({} parameters); best validation MAR@{} = {:.4} at update {}",
        cfg.train.total_updates,
        count_parameters(&p.model),
        cfg.train.k,
        result.checkpoint.best_val_mar,
        result.checkpoint.saved_at_update
    );
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", log_path.display());
    println!("wrote {}", split_path.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    ensure_workdir(cfg)?;
    let report = evaluate(&ckpt, &p.features, &p.graph, &p.split, cfg.k)?;
    let path = cfg.artifact("evaluate", "metrics.json");
    write_metrics_json(&path, &report)?;
    print_metrics("model", &report);
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_recommend(
    cfg: &RunConfig,
    checkpoint: &Option<PathBuf>,
    doc: &str,
    k: usize,
) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let node = p
        .graph
        .index_of(doc)
        .ok_or_else(|| CliError::Data(format!("unknown document id {doc:?}")))?;
    // deployment surface: embeddings use the full citation context
    let out = eval_forward(&p.features, &p.graph.adj, &ckpt.model, &ckpt.params, false)?;
    let scorer = Scorer::from_params(&ckpt.model, &ckpt.params);
    let scores = scorer.candidate_logits(&out.embeddings, node);
    let ranking = eval::rank_by_scores(&scores, node);
    for (rank, &j) in ranking.iter().take(k).enumerate() {
        println!(
            "{},{},{}",
            rank + 1,
            p.graph.node_ids[j],
            citation_probability(scores[j])
        );
    }
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    ensure_workdir(cfg)?;
    let out = eval_forward(&p.features, &p.graph.adj, &ckpt.model, &ckpt.params, true)?;
    let probs = probabilities_from_logits(&out.logits.expect("logits requested"));
    let report = threshold_analysis(&probs, &p.graph, &cfg.thresholds, cfg.domain_pair_mode)?;
    let report_path = cfg.artifact("analyze", "thresholds.json");
    write_threshold_json(&report_path, &report)?;

    let true_matrix = cross_reference_matrix(&p.graph.adj.edges(), &p.graph.domains)?;
    let true_path = cfg.artifact("analyze", "true-crossref.csv");
    true_matrix.write_csv(&true_path)?;

    // predicted cross-references at the 50% threshold
    let mut predicted_edges = Vec::new();
    for i in 0..p.graph.n() {
        for j in 0..p.graph.n() {
            if i != j && probs.get(i, j) >= 0.5 {
                predicted_edges.push((i, j));
            }
        }
    }
    let pred_matrix = cross_reference_matrix(&predicted_edges, &p.graph.domains)?;
    let pred_path = cfg.artifact("analyze", "pred-crossref.csv");
    pred_matrix.write_csv(&pred_path)?;

    println!("threshold,total,percent,within%,out%,kl,emd");
    for row in &report.rows {
        println!(
            "{},{},{:.4},{:.1},{:.1},{},{}",
            row.threshold,
            row.total_predicted,
            row.percent_recommended,
            row.within_domain_pct,
            row.out_of_domain_pct,
            row.kl_divergence.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            row.total_emd.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    println!("wrote {}", report_path.display());
    println!("wrote {}", true_path.display());
    println!("wrote {}", pred_path.display());
    Ok(())
}

pub fn cmd_export(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    ensure_workdir(cfg)?;
    let masked = mask_validation_edges(&p.graph.adj, &p.split);
    let out = eval_forward(&p.features, &masked, &ckpt.model, &ckpt.params, false)?;
    let path = cfg.artifact("export", "embeddings.tsv");
    export_embeddings_tsv(&path, &p.graph.node_ids, &out.embeddings)?;
    println!(
        "exported {} embeddings of dimension {}",
        out.embeddings.rows(),
        out.embeddings.cols()
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Ablation variants; each maps to a model configuration, except the
/// training-free feature baseline.
const ABLATION_VARIANTS: &[&str] = &[
    "tfidf",
    "gt",
    "gt-lr",
    "bilinear",
    "gt-bilinear",
    "gt-lr-bilinear",
    "0-hop",
    "1-hop",
    "2-hop",
    "3-hop",
    "4-hop",
    "5-hop",
];

pub fn variant_config(name: &str, base: &ModelConfig) -> Option<Option<ModelConfig>> {
    let cfg = |layers: usize, lr: bool, bilinear: bool| {
        Some(Some(ModelConfig {
            n_layers: layers,
            use_learned_residual: lr,
            use_bilinear: bilinear,
            ..base.clone()
        }))
    };
    match name {
        "tfidf" => Some(None),
        "gt" => cfg(2, false, false),
        "gt-lr" => cfg(2, true, false),
        "bilinear" => cfg(0, true, true),
        "gt-bilinear" => cfg(2, false, true),
        "gt-lr-bilinear" => cfg(2, true, true),
        _ => {
            let hops: usize = name.strip_suffix("-hop")?.parse().ok()?;
            if hops <= 5 {
                cfg(hops, true, true)
            } else {
                None
            }
        }
    }
}

pub fn cmd_ablate(cfg: &RunConfig, variants: &Option<String>) -> Result<(), CliError> {
    let requested: Vec<String> = match variants {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => ["tfidf", "gt", "gt-lr", "bilinear", "gt-bilinear", "gt-lr-bilinear"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    for v in &requested {
        if variant_config(v, &cfg.model).is_none() {
            return Err(CliError::Usage(format!(
                "unknown ablation variant {v:?}; known: {}",
                ABLATION_VARIANTS.join(", ")
            )));
        }
    }
    let p = build_pipeline(cfg)?;
    ensure_workdir(cfg)?;

    let relevant_of = |node: usize| -> HashSet<usize> {
        (0..p.graph.n()).filter(|&j| p.graph.adj.get(node, j)).collect()
    };

    let mut rows: Vec<(String, MetricsReport, Option<usize>)> = Vec::new();
    for name in &requested {
        let variant = variant_config(name, &p.model).expect("validated above");
        let (report, n_params) = match variant {
            None => {
                // feature baseline: raw TF-IDF vectors scored by dot product
                let report = evaluate_embeddings(
                    &p.features,
                    &Scorer::Dot,
                    &p.split.validation,
                    &relevant_of,
                    cfg.k,
                )?;
                (report, None)
            }
            Some(model_cfg) => {
                let result = train(&p.features, &p.graph, &p.split, &model_cfg, &cfg.train)?;
                let report = evaluate(&result.checkpoint, &p.features, &p.graph, &p.split, cfg.k)?;
                (report, Some(count_parameters(&model_cfg)))
            }
        };
        rows.push((name.clone(), report, n_params));
    }

    let path = cfg.artifact("ablate", "report.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(w, "variant,map_at_k,mar_at_k,mse,cosine,n_params")?;
    for (name, report, n_params) in &rows {
        writeln!(
            w,
            "{name},{},{},{},{},{}",
            report.map_at_k,
            report.mar_at_k,
            report.mse,
            report.cosine,
            n_params.map(|n| n.to_string()).unwrap_or_else(|| "-".into())
        )?;
    }
    w.flush()?;

    println!(
        "{:<16} {:>8} {:>8} {:>10} {:>8} {:>10}",
        "variant", "MAP@k", "MAR@k", "MSE", "cosine", "params"
    );
    for (name, report, n_params) in &rows {
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>10.4} {:>8.4} {:>10}",
            name,
            report.map_at_k,
            report.mar_at_k,
            report.mse,
            report.cosine,
            n_params.map(|n| n.to_string()).unwrap_or_else(|| "-".into())
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_gate_report(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let p = build_pipeline(cfg)?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    if !ckpt.model.use_learned_residual || ckpt.model.n_layers == 0 {
        return Err(CliError::Data(
            "checkpoint model has no learned-residual gate".into(),
        ));
    }
    ensure_workdir(cfg)?;
    let masked = mask_validation_edges(&p.graph.adj, &p.split);
    let out = eval_forward(&p.features, &masked, &ckpt.model, &ckpt.params, false)?;

    #[derive(serde::Serialize)]
    struct LayerGateStats {
        layer: usize,
        residual_weight_mean: f64,
        residual_weight_max: f64,
        gate_mean: f64,
        gate_max: f64,
    }
    let stats: Vec<LayerGateStats> = out
        .gate_values
        .iter()
        .enumerate()
        .map(|(l, zs)| {
            let n = zs.len() as f64;
            let gate_mean = zs.iter().sum::<f64>() / n;
            let gate_max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // residual weight for the graph structure is 1 - z
            let rw: Vec<f64> = zs.iter().map(|&z| 1.0 - z).collect();
            LayerGateStats {
                layer: l + 1,
                residual_weight_mean: rw.iter().sum::<f64>() / n,
                residual_weight_max: rw.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                gate_mean,
                gate_max,
            }
        })
        .collect();
    let json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Data(format!("serialize gate stats: {e}")))?;
    let path = cfg.artifact("gate-report", "json");
    std::fs::write(&path, json.clone() + "\n")?;
    println!("{json}");
    println!("wrote {}", path.display());
    Ok(())
}

fn print_metrics(label: &str, report: &MetricsReport) {
    println!(
        "{label}: MAP@{} {:.4}, MAR@{} {:.4}, MSE {:.4}, cosine {:.4} ({} nodes)",
        report.k, report.map_at_k, report.k, report.mar_at_k, report.mse, report.cosine,
        report.nodes_evaluated
    );
}
