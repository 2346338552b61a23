//! Loss, Adam, and the full training loop: per update, fresh adjacency
//! dropout and fresh negatives, a full-graph forward over all training-row
//! positives plus sampled negatives, exact reverse-mode gradients, one Adam
//! step. Every `eval_every` updates the validation MAR@k is measured on the
//! masked adjacency and the best parameters are retained.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::eval;
use crate::graph::{
    adjacency_dropout, mask_validation_edges, sample_negatives, CitationGraph, NodeSplit,
};
use crate::linalg::Matrix;
use crate::model::{
    bilinear_index, forward_on_tape, ModelConfig, Mode, ParameterSet, Scorer,
};

/// Where negative pairs may originate. The default keeps them inside the
/// training rows so validation structure never enters the loss; `Global`
/// draws source rows from the whole node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeScope {
    TrainRows,
    Global,
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub total_updates: u64,
    pub neg_ratio: usize,
    pub eval_every: u64,
    pub seed: u64,
    /// Cutoff for the checkpoint metric (recall at k).
    pub k: usize,
    pub negative_scope: NegativeScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            total_updates: 1920,
            neg_ratio: 5,
            eval_every: 32,
            seed: 0,
            k: 20,
            negative_scope: NegativeScope::TrainRows,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(CoreError::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.total_updates == 0 || self.neg_ratio == 0 || self.eval_every == 0 || self.k == 0 {
            return Err(CoreError::InvalidParameter("counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of logits against {0,1} labels, in the
/// numerically stable form max(x,0) - x·y + ln(1 + e^{-|x|}).
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(CoreError::EmptyInput("bce_loss needs equal-length non-empty inputs"));
    }
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(labels) {
        total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
    }
    Ok(total / logits.len() as f64)
}

/// Adam first/second moment state, one slot per parameter matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Matrix> = params
            .entries
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &[Matrix],
    state: &mut AdamState,
    learning_rate: f64,
) {
    assert_eq!(params.entries.len(), grads.len(), "one grad per parameter");
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (idx, grad) in grads.iter().enumerate() {
        let p = params.entries[idx].as_mut_slice();
        let m = state.m[idx].as_mut_slice();
        let v = state.v[idx].as_mut_slice();
        for (((pi, mi), vi), &g) in p.iter_mut().zip(m).zip(v).zip(grad.as_slice()) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

/// One training-log row; validation columns are filled on evaluation updates.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub update: u64,
    pub loss: f64,
    pub val_map: Option<f64>,
    pub val_mar: Option<f64>,
    pub gate_means: Vec<f64>,
}

/// One validation measurement.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub update: u64,
    pub map: f64,
    pub mar: f64,
    pub improved: bool,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub evals: Vec<EvalPoint>,
}

/// Run the full loop. Fully deterministic given the seed: parameter init,
/// adjacency dropout, negative sampling and feed-forward dropout all consume
/// one seeded stream in a fixed order.
pub fn train(
    features: &Matrix,
    graph: &CitationGraph,
    split: &NodeSplit,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainResult> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    split.validate(graph.n())?;
    if split.train.is_empty() {
        return Err(CoreError::EmptyTrainSet);
    }

    let masked = mask_validation_edges(&graph.adj, split);

    // positive pairs: all out-edges of training rows, fixed row-major order
    let mut positives = Vec::new();
    for &i in &split.train {
        for j in 0..graph.n() {
            if masked.get(i, j) {
                positives.push((i, j));
            }
        }
    }
    if positives.is_empty() {
        return Err(CoreError::EmptyTrainSet);
    }

    // relevance for the checkpoint metric comes from the unmasked graph
    let relevant: Vec<HashSet<usize>> = split
        .validation
        .iter()
        .map(|&v| {
            (0..graph.n())
                .filter(|&j| graph.adj.get(v, j))
                .collect::<HashSet<usize>>()
        })
        .collect();

    let all_rows: Vec<usize> = (0..graph.n()).collect();
    let source_rows: &[usize] = match train_cfg.negative_scope {
        NegativeScope::TrainRows => &split.train,
        NegativeScope::Global => &all_rows,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params = ParameterSet::init(model_cfg, &mut rng)?;
    let mut adam = AdamState::new(&params);

    let mut best: Option<Checkpoint> = None;
    let mut best_mar = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(train_cfg.total_updates as usize);
    let mut evals = Vec::new();

    for update in 1..=train_cfg.total_updates {
        let dropped = adjacency_dropout(&masked, model_cfg.adj_dropout_p, &mut rng)?;
        let negatives = sample_negatives(&masked, source_rows, train_cfg.neg_ratio, &mut rng)?;

        let neighbors = Rc::new(dropped.neighbor_lists());
        let pass = forward_on_tape(features, neighbors, model_cfg, &params, Mode::Train, &mut rng)?;
        let mut tape = pass.tape;

        let mut pairs = Vec::with_capacity(positives.len() + negatives.len());
        let mut labels = Vec::with_capacity(positives.len() + negatives.len());
        for &p in &positives {
            pairs.push(p);
            labels.push(1.0);
        }
        for &p in &negatives {
            pairs.push(p);
            labels.push(0.0);
        }
        let pairs = Rc::new(pairs);
        let logits = match bilinear_index(model_cfg) {
            Some(w_idx) => {
                let projected = tape.matmul(pass.embeddings, pass.param_ids[w_idx]);
                tape.pair_dot(projected, pass.embeddings, Rc::clone(&pairs))
            }
            None => tape.pair_dot(pass.embeddings, pass.embeddings, Rc::clone(&pairs)),
        };
        let loss_node = tape.bce_with_logits(logits, Rc::new(labels));
        let loss = tape.value(loss_node).get(0, 0);

        let gate_means: Vec<f64> = pass
            .gates
            .iter()
            .map(|&gid| {
                let z = tape.value(gid);
                z.as_slice().iter().sum::<f64>() / z.len() as f64
            })
            .collect();

        let mut grads_by_node = tape.backward(loss_node);
        let grads: Vec<Matrix> = pass
            .param_ids
            .iter()
            .zip(&params.entries)
            .map(|(&id, p)| grads_by_node.take(id, p.shape()))
            .collect();
        adam_step(&mut params, &grads, &mut adam, train_cfg.learning_rate);

        let mut row = LogRow {
            update,
            loss,
            val_map: None,
            val_mar: None,
            gate_means,
        };

        if update % train_cfg.eval_every == 0 || update == train_cfg.total_updates {
            let (map, mar) = validation_metrics(
                features,
                &masked,
                model_cfg,
                &params,
                split,
                &relevant,
                train_cfg.k,
            )?;
            let improved = mar > best_mar;
            if improved {
                best_mar = mar;
                best = Some(Checkpoint {
                    model: model_cfg.clone(),
                    train: train_cfg.clone(),
                    params: params.clone(),
                    best_val_mar: mar,
                    saved_at_update: update,
                });
            }
            evals.push(EvalPoint {
                update,
                map,
                mar,
                improved,
            });
            row.val_map = Some(map);
            row.val_mar = Some(mar);
        }
        log.push(row);
    }

    let checkpoint = best.expect("at least one evaluation ran");
    Ok(TrainResult {
        checkpoint,
        log,
        evals,
    })
}

/// Eval-mode MAP@k / MAR@k over validation nodes with at least one true
/// citation; the forward sees only the masked adjacency.
fn validation_metrics(
    features: &Matrix,
    masked: &crate::graph::AdjMatrix,
    model_cfg: &ModelConfig,
    params: &ParameterSet,
    split: &NodeSplit,
    relevant: &[HashSet<usize>],
    k: usize,
) -> Result<(f64, f64)> {
    let neighbors = Rc::new(masked.neighbor_lists());
    // eval mode consumes no randomness; the rng is never touched
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_on_tape(features, neighbors, model_cfg, params, Mode::Eval, &mut scratch)?;
    let embeddings = pass.tape.value(pass.embeddings).clone();
    let scorer = Scorer::from_params(model_cfg, params);

    let mut map_sum = 0.0;
    let mut mar_sum = 0.0;
    let mut count = 0usize;
    for (vi, &node) in split.validation.iter().enumerate() {
        if relevant[vi].is_empty() {
            continue;
        }
        let ranking = eval::rank_candidates(&embeddings, &scorer, node);
        map_sum += eval::average_precision_at_k(&ranking, &relevant[vi], k)?;
        mar_sum += eval::recall_at_k(&ranking, &relevant[vi], k)?;
        count += 1;
    }
    if count == 0 {
        return Err(CoreError::NoEligibleNodes);
    }
    Ok((map_sum / count as f64, mar_sum / count as f64))
}

/// Append-only CSV: update, loss, validation metrics when measured, and the
/// per-layer mean gate value.
pub fn write_training_log(path: &Path, log: &[LogRow], n_gate_layers: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("update,loss,val_map,val_mar");
    for l in 1..=n_gate_layers {
        header.push_str(&format!(",gate_mean_layer{l}"));
    }
    writeln!(w, "{header}")?;
    for row in log {
        let val_map = row.val_map.map(|v| v.to_string()).unwrap_or_default();
        let val_mar = row.val_mar.map(|v| v.to_string()).unwrap_or_default();
        let mut line = format!("{},{},{},{}", row.update, row.loss, val_map, val_mar);
        for g in &row.gate_means {
            line.push_str(&format!(",{g}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Probability that i cites j under a logit.
pub fn citation_probability(logit: f64) -> f64 {
    sigmoid(logit)
}
