//! Ranking-recovery metrics, embedding similarity, threshold sweeps with
//! domain-mix statistics, and cross-domain reference matrices.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::graph::{mask_validation_edges, CitationGraph, NodeSplit};
use crate::linalg::{cosine, Matrix};
use crate::model::{forward_on_tape, Mode, Scorer};

/// Ranking and similarity summary over evaluated nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map_at_k: f64,
    pub mar_at_k: f64,
    pub mse: f64,
    pub cosine: f64,
    pub k: usize,
    pub nodes_evaluated: usize,
}

/// (Σ_{r≤k, hit at r} precision@r) / min(|relevant|, k).
pub fn average_precision_at_k(
    ranking: &[usize],
    relevant: &HashSet<usize>,
    k: usize,
) -> Result<f64> {
    if relevant.is_empty() {
        return Err(CoreError::EmptyRelevant);
    }
    debug_assert!(
        {
            let mut seen = HashSet::new();
            ranking.iter().all(|&r| seen.insert(r))
        },
        "ranking has duplicates"
    );
    let depth = k.min(ranking.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, item) in ranking[..depth].iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(k) as f64)
}

/// |top-k ∩ relevant| / |relevant|.
pub fn recall_at_k(ranking: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(CoreError::EmptyRelevant);
    }
    let depth = k.min(ranking.len());
    let hits = ranking[..depth]
        .iter()
        .filter(|item| relevant.contains(item))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// All candidates except `node`, sorted by descending score with ties broken
/// by ascending index.
pub fn rank_by_scores(scores: &[f64], node: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&j| j != node).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Rank every other document for `node` by the model's pair score.
pub fn rank_candidates(embeddings: &Matrix, scorer: &Scorer, node: usize) -> Vec<usize> {
    let scores = scorer.candidate_logits(embeddings, node);
    rank_by_scores(&scores, node)
}

/// Mean squared componentwise difference and mean cosine over true edges.
/// Zero-norm vectors contribute cosine 0 for their pair.
pub fn embedding_similarity(embeddings: &Matrix, edges: &[(usize, usize)]) -> Result<(f64, f64)> {
    if edges.is_empty() {
        return Err(CoreError::EmptyInput("embedding_similarity needs edges"));
    }
    let dim = embeddings.cols() as f64;
    let mut mse = 0.0;
    let mut cos = 0.0;
    for &(i, j) in edges {
        let (a, b) = (embeddings.row(i), embeddings.row(j));
        let sq: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        mse += sq / dim;
        cos += cosine(a, b);
    }
    let n = edges.len() as f64;
    Ok((mse / n, cos / n))
}

/// Score embeddings through the ranking pipeline: MAP@k / MAR@k averaged over
/// the given nodes (skipping any with no true citations), similarity over the
/// nodes' true edges. `relevant_of` must come from the unmasked graph.
pub fn evaluate_embeddings(
    embeddings: &Matrix,
    scorer: &Scorer,
    nodes: &[usize],
    relevant_of: &dyn Fn(usize) -> HashSet<usize>,
    k: usize,
) -> Result<MetricsReport> {
    let mut map_sum = 0.0;
    let mut mar_sum = 0.0;
    let mut count = 0usize;
    let mut edges = Vec::new();
    for &node in nodes {
        let relevant = relevant_of(node);
        if relevant.is_empty() {
            continue;
        }
        for &j in &relevant {
            edges.push((node, j));
        }
        let ranking = rank_candidates(embeddings, scorer, node);
        map_sum += average_precision_at_k(&ranking, &relevant, k)?;
        mar_sum += recall_at_k(&ranking, &relevant, k)?;
        count += 1;
    }
    if count == 0 {
        return Err(CoreError::NoEligibleNodes);
    }
    edges.sort_unstable();
    let (mse, cos) = embedding_similarity(embeddings, &edges)?;
    Ok(MetricsReport {
        map_at_k: map_sum / count as f64,
        mar_at_k: mar_sum / count as f64,
        mse,
        cosine: cos,
        k,
        nodes_evaluated: count,
    })
}

/// Evaluate a checkpoint: eval-mode forward on the masked adjacency, relevant
/// sets from the unmasked graph, metrics over validation nodes.
pub fn evaluate(
    checkpoint: &Checkpoint,
    features: &Matrix,
    graph: &CitationGraph,
    split: &NodeSplit,
    k: usize,
) -> Result<MetricsReport> {
    split.validate(graph.n())?;
    let masked = mask_validation_edges(&graph.adj, split);
    let neighbors = Rc::new(masked.neighbor_lists());
    let mut scratch = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let pass = forward_on_tape(
        features,
        neighbors,
        &checkpoint.model,
        &checkpoint.params,
        Mode::Eval,
        &mut scratch,
    )?;
    let embeddings = pass.tape.value(pass.embeddings).clone();
    let scorer = Scorer::from_params(&checkpoint.model, &checkpoint.params);
    let relevant_of = |node: usize| -> HashSet<usize> {
        (0..graph.n()).filter(|&j| graph.adj.get(node, j)).collect()
    };
    evaluate_embeddings(&embeddings, &scorer, &split.validation, &relevant_of, k)
}

/// Σ p ln(p/q) with both distributions floored at `eps` and renormalized.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} entries", p.len()),
            got: format!("{}", q.len()),
        });
    }
    for (name, dist) in [("p", p), ("q", q)] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidParameter(format!(
                "{name} must sum to 1, got {sum}"
            )));
        }
    }
    let floor = |dist: &[f64]| -> Vec<f64> {
        let floored: Vec<f64> = dist.iter().map(|&x| x.max(eps)).collect();
        let total: f64 = floored.iter().sum();
        floored.into_iter().map(|x| x / total).collect()
    };
    let fp = floor(p);
    let fq = floor(q);
    Ok(fp
        .iter()
        .zip(&fq)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum())
}

/// Earth mover's distance with unit ground distance between categories, which
/// is half the L1 distance.
pub fn total_emd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} entries", p.len()),
            got: format!("{}", q.len()),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum::<f64>())
}

/// D×D citation counts between subject domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossReferenceMatrix {
    pub domains: Vec<String>,
    /// Row-major counts; entry (a, b) counts citations from domain a to b.
    pub counts: Vec<u64>,
}

impl CrossReferenceMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn within_domain(&self) -> u64 {
        let d = self.domains.len();
        (0..d).map(|i| self.counts[i * d + i]).sum()
    }

    /// Joint distribution over domain pairs; None if there are no citations.
    pub fn distribution(&self) -> Option<Vec<f64>> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        Some(
            self.counts
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let d = self.domains.len();
        writeln!(w, "domain,{}", self.domains.join(","))?;
        for a in 0..d {
            let row: Vec<String> = (0..d)
                .map(|b| self.counts[a * d + b].to_string())
                .collect();
            writeln!(w, "{},{}", self.domains[a], row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tally citations between domains. Every endpoint needs a non-empty label.
pub fn cross_reference_matrix(
    edges: &[(usize, usize)],
    node_domains: &[String],
) -> Result<CrossReferenceMatrix> {
    if let Some(i) = node_domains.iter().position(|d| d.is_empty()) {
        return Err(CoreError::Format(format!("node {i} has no domain label")));
    }
    let names: BTreeSet<&String> = node_domains.iter().collect();
    let domains: Vec<String> = names.into_iter().cloned().collect();
    let index = |label: &String| domains.binary_search(label).expect("domain present");
    let d = domains.len();
    let mut counts = vec![0u64; d * d];
    for &(i, j) in edges {
        let a = index(&node_domains[i]);
        let b = index(&node_domains[j]);
        counts[a * d + b] += 1;
    }
    Ok(CrossReferenceMatrix { domains, counts })
}

/// How KL/EMD compare predicted and true domain mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainPairMode {
    /// One joint distribution over all (source domain, target domain) cells.
    Joint,
    /// Per-source-domain conditional target distributions, weighted by the
    /// true source marginal.
    PerSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub total_predicted: u64,
    /// Percentage of all N² ordered pairs.
    pub percent_recommended: f64,
    pub within_domain_pct: f64,
    pub out_of_domain_pct: f64,
    pub kl_divergence: Option<f64>,
    pub total_emd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub n_nodes: usize,
    /// N² ordered pairs, the denominator for `percent_recommended`.
    pub possible_pairs: u64,
    pub mode: DomainPairMode,
    pub rows: Vec<ThresholdRow>,
}

/// Sweep probability thresholds: per cutoff, count predicted pairs (i≠j with
/// p_ij ≥ t), their domain mix, and KL(true ‖ predicted) / EMD between the
/// domain-pair distributions.
pub fn threshold_analysis(
    probabilities: &Matrix,
    graph: &CitationGraph,
    thresholds: &[f64],
    mode: DomainPairMode,
) -> Result<ThresholdReport> {
    let n = graph.n();
    if probabilities.shape() != (n, n) {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{n}x{n} probabilities"),
            got: format!("{}x{}", probabilities.rows(), probabilities.cols()),
        });
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::InvalidParameter(
            "thresholds must be strictly ascending".into(),
        ));
    }
    let true_matrix = cross_reference_matrix(&graph.adj.edges(), &graph.domains)?;
    let d = true_matrix.domains.len();
    let domain_index: Vec<usize> = graph
        .domains
        .iter()
        .map(|label| {
            true_matrix
                .domains
                .binary_search(label)
                .expect("domain present")
        })
        .collect();

    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut counts = vec![0u64; d * d];
        let mut total = 0u64;
        for i in 0..n {
            let prow = probabilities.row(i);
            let di = domain_index[i];
            for (j, &p) in prow.iter().enumerate() {
                if i != j && p >= t {
                    total += 1;
                    counts[di * d + domain_index[j]] += 1;
                }
            }
        }
        let predicted = CrossReferenceMatrix {
            domains: true_matrix.domains.clone(),
            counts,
        };
        let within_pct = if total == 0 {
            0.0
        } else {
            100.0 * predicted.within_domain() as f64 / total as f64
        };
        let (kl, emd) = match (true_matrix.distribution(), predicted.distribution()) {
            (Some(p_true), Some(p_pred)) => match mode {
                DomainPairMode::Joint => (
                    Some(kl_divergence(&p_true, &p_pred, 1e-12)?),
                    Some(total_emd(&p_true, &p_pred)?),
                ),
                DomainPairMode::PerSource => {
                    per_source_divergences(&true_matrix, &predicted, d)?
                }
            },
            _ => (None, None),
        };
        rows.push(ThresholdRow {
            threshold: t,
            total_predicted: total,
            percent_recommended: 100.0 * total as f64 / (n as f64 * n as f64),
            within_domain_pct: within_pct,
            out_of_domain_pct: 100.0 - within_pct,
            kl_divergence: kl,
            total_emd: emd,
        });
    }
    Ok(ThresholdReport {
        n_nodes: n,
        possible_pairs: (n as u64) * (n as u64),
        mode,
        rows,
    })
}

/// Source-marginal-weighted mean of per-domain conditional KL and EMD.
fn per_source_divergences(
    true_matrix: &CrossReferenceMatrix,
    predicted: &CrossReferenceMatrix,
    d: usize,
) -> Result<(Option<f64>, Option<f64>)> {
    let true_total = true_matrix.total();
    if true_total == 0 {
        return Ok((None, None));
    }
    let mut kl_sum = 0.0;
    let mut emd_sum = 0.0;
    for a in 0..d {
        let row_true: Vec<u64> = (a * d..(a + 1) * d).map(|i| true_matrix.counts[i]).collect();
        let row_total: u64 = row_true.iter().sum();
        if row_total == 0 {
            continue;
        }
        let weight = row_total as f64 / true_total as f64;
        let p: Vec<f64> = row_true.iter().map(|&c| c as f64 / row_total as f64).collect();
        let pred_row: Vec<u64> = (a * d..(a + 1) * d).map(|i| predicted.counts[i]).collect();
        let pred_total: u64 = pred_row.iter().sum();
        let q: Vec<f64> = if pred_total == 0 {
            vec![1.0 / d as f64; d]
        } else {
            pred_row.iter().map(|&c| c as f64 / pred_total as f64).collect()
        };
        kl_sum += weight * kl_divergence(&p, &q, 1e-12)?;
        emd_sum += weight * total_emd(&p, &q)?;
    }
    Ok((Some(kl_sum), Some(emd_sum)))
}

/// Sigmoid of every logit.
pub fn probabilities_from_logits(logits: &Matrix) -> Matrix {
    logits.map(sigmoid)
}

/// Embeddings as TSV: id then one column per dimension.
pub fn export_embeddings_tsv(path: &Path, ids: &[String], embeddings: &Matrix) -> Result<()> {
    assert_eq!(ids.len(), embeddings.rows(), "one id per row");
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for (i, id) in ids.iter().enumerate() {
        let values: Vec<String> = embeddings.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id}\t{}", values.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn write_threshold_json(path: &Path, report: &ThresholdReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
