//! The graph transformer: linear embedding, stacked neighbor-masked attention
//! layers with a learned residual gate, and a pairwise bilinear scorer.
//!
//! A node attends over the documents it cites; its own state enters through
//! the gate, so no self-loop is added. With an empty (or fully masked)
//! neighborhood the attention context is the zero vector and the gate
//! interpolates toward the node's own embedding.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NeighborLists, NodeId, Tape};
use crate::error::{CoreError, Result};
use crate::graph::{adjacency_dropout, AdjMatrix};
use crate::linalg::{dot, Matrix};

/// Forward-pass mode; dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub adj_dropout_p: f64,
    pub ffn_dropout_p: f64,
    pub use_learned_residual: bool,
    pub use_bilinear: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 300,
            embed_dim: 64,
            n_layers: 2,
            n_heads: 8,
            ffn_hidden: 64,
            adj_dropout_p: 0.15,
            ffn_dropout_p: 0.1,
            use_learned_residual: true,
            use_bilinear: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.n_heads == 0 || self.ffn_hidden == 0
        {
            return Err(CoreError::InvalidParameter("dims must be >= 1".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(CoreError::InvalidParameter(
                "embed_dim must be divisible by n_heads".into(),
            ));
        }
        for (name, p) in [
            ("adj_dropout_p", self.adj_dropout_p),
            ("ffn_dropout_p", self.ffn_dropout_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::InvalidParameter(format!("{name} must be in [0,1]")));
            }
        }
        Ok(())
    }
}

/// Exact number of learnable scalars for a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim;
    let f = cfg.ffn_hidden;
    let mut total = cfg.input_dim * d + d; // embedding
    let mut per_layer = 4 * (d * d + d); // Q, K, V, O projections with bias
    per_layer += 2 * (2 * d); // two layer norms, scale + shift
    per_layer += d * f + f + f * d + d; // feed-forward
    if cfg.use_learned_residual {
        per_layer += d * d + d * d + d + d + 1; // W_a, U_a, b_a, v_a, c_a
    }
    total += cfg.n_layers * per_layer;
    if cfg.use_bilinear {
        total += d * d;
    }
    total
}

/// Named index of every parameter matrix, in checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
}

impl ParamLayout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_hidden;
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |n: String, s: (usize, usize)| {
            names.push(n);
            shapes.push(s);
        };
        push("w_e".into(), (cfg.input_dim, d));
        push("b_e".into(), (1, d));
        for l in 0..cfg.n_layers {
            for (nm, sh) in [
                ("w_q", (d, d)),
                ("b_q", (1, d)),
                ("w_k", (d, d)),
                ("b_k", (1, d)),
                ("w_v", (d, d)),
                ("b_v", (1, d)),
                ("w_o", (d, d)),
                ("b_o", (1, d)),
                ("ln1_gamma", (1, d)),
                ("ln1_beta", (1, d)),
                ("w_ffn1", (d, f)),
                ("b_ffn1", (1, f)),
                ("w_ffn2", (f, d)),
                ("b_ffn2", (1, d)),
                ("ln2_gamma", (1, d)),
                ("ln2_beta", (1, d)),
            ] {
                push(format!("layer{l}.{nm}"), sh);
            }
            if cfg.use_learned_residual {
                for (nm, sh) in [
                    ("gate_w", (d, d)),
                    ("gate_u", (d, d)),
                    ("gate_b", (1, d)),
                    ("gate_v", (d, 1)),
                    ("gate_c", (1, 1)),
                ] {
                    push(format!("layer{l}.{nm}"), sh);
                }
            }
        }
        if cfg.use_bilinear {
            push("w_b".into(), (d, d));
        }
        ParamLayout { names, shapes }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// All learnable arrays, ordered per [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub entries: Vec<Matrix>,
}

impl ParameterSet {
    /// Glorot-uniform weights, zero biases and gate vector; layer-norm scale
    /// starts at one. The zero gate vector starts every gate at 0.5.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::for_config(cfg);
        let mut entries = Vec::with_capacity(layout.names.len());
        for (name, &(r, c)) in layout.names.iter().zip(&layout.shapes) {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            let m = match leaf {
                "ln1_gamma" | "ln2_gamma" => Matrix::from_vec(r, c, vec![1.0; r * c]),
                _ if leaf.starts_with('b') || leaf == "gate_b" || leaf == "gate_v" || leaf == "gate_c" => {
                    Matrix::zeros(r, c)
                }
                _ if leaf.starts_with("ln") => Matrix::zeros(r, c),
                _ => glorot(r, c, rng),
            };
            entries.push(m);
        }
        Ok(ParameterSet { entries })
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(Matrix::len).sum()
    }

    /// Register every entry on a tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|m| tape.param(m.clone()))
            .collect()
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect(),
    )
}

/// Parameter node ids for one layer, resolved from the flat registration.
struct LayerIds {
    w_q: NodeId,
    b_q: NodeId,
    w_k: NodeId,
    b_k: NodeId,
    w_v: NodeId,
    b_v: NodeId,
    w_o: NodeId,
    b_o: NodeId,
    ln1_gamma: NodeId,
    ln1_beta: NodeId,
    w_ffn1: NodeId,
    b_ffn1: NodeId,
    w_ffn2: NodeId,
    b_ffn2: NodeId,
    ln2_gamma: NodeId,
    ln2_beta: NodeId,
    gate: Option<GateIds>,
}

struct GateIds {
    w: NodeId,
    u: NodeId,
    b: NodeId,
    v: NodeId,
    c: NodeId,
}

fn layer_ids(cfg: &ModelConfig, ids: &[NodeId], layer: usize) -> LayerIds {
    let per_layer = if cfg.use_learned_residual { 21 } else { 16 };
    let base = 2 + layer * per_layer;
    LayerIds {
        w_q: ids[base],
        b_q: ids[base + 1],
        w_k: ids[base + 2],
        b_k: ids[base + 3],
        w_v: ids[base + 4],
        b_v: ids[base + 5],
        w_o: ids[base + 6],
        b_o: ids[base + 7],
        ln1_gamma: ids[base + 8],
        ln1_beta: ids[base + 9],
        w_ffn1: ids[base + 10],
        b_ffn1: ids[base + 11],
        w_ffn2: ids[base + 12],
        b_ffn2: ids[base + 13],
        ln2_gamma: ids[base + 14],
        ln2_beta: ids[base + 15],
        gate: cfg.use_learned_residual.then(|| GateIds {
            w: ids[base + 16],
            u: ids[base + 17],
            b: ids[base + 18],
            v: ids[base + 19],
            c: ids[base + 20],
        }),
    }
}

/// Index of the bilinear form in the flat parameter order.
pub fn bilinear_index(cfg: &ModelConfig) -> Option<usize> {
    if !cfg.use_bilinear {
        return None;
    }
    let per_layer = if cfg.use_learned_residual { 21 } else { 16 };
    Some(2 + cfg.n_layers * per_layer)
}

/// Everything the training loop needs from one recorded forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_ids: Vec<NodeId>,
    pub embeddings: NodeId,
    /// Per layer: the N×1 gate node (only for learned-residual layers).
    pub gates: Vec<NodeId>,
}

/// Record the embedding + layer stack on a tape. `neighbors` must already
/// reflect masking and (in training) adjacency dropout; `rng` drives only the
/// feed-forward dropout.
pub fn forward_on_tape(
    features: &Matrix,
    neighbors: Rc<NeighborLists>,
    cfg: &ModelConfig,
    params: &ParameterSet,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    cfg.validate()?;
    if features.cols() != cfg.input_dim {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} feature columns", cfg.input_dim),
            got: format!("{}", features.cols()),
        });
    }
    if neighbors.len() != features.rows() {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} neighbor lists", features.rows()),
            got: format!("{}", neighbors.len()),
        });
    }
    let mut tape = Tape::new();
    let param_ids = params.register(&mut tape);
    let x = tape.input(features.clone());
    let xw = tape.matmul(x, param_ids[0]);
    let mut h = tape.add_row(xw, param_ids[1]);

    let mut gates = Vec::new();
    for l in 0..cfg.n_layers {
        let ids = layer_ids(cfg, &param_ids, l);
        // attention over cited neighbors
        let q0 = tape.matmul(h, ids.w_q);
        let q = tape.add_row(q0, ids.b_q);
        let k0 = tape.matmul(h, ids.w_k);
        let k = tape.add_row(k0, ids.b_k);
        let v0 = tape.matmul(h, ids.w_v);
        let v = tape.add_row(v0, ids.b_v);
        let ctx = tape.masked_attention(q, k, v, Rc::clone(&neighbors), cfg.n_heads);
        let ctx0 = tape.matmul(ctx, ids.w_o);
        let n_t = tape.add_row(ctx0, ids.b_o);

        // learned residual: z = σ(v·tanh(W o + U n + b) + c)
        let mixed = if let Some(g) = &ids.gate {
            let ow = tape.matmul(h, g.w);
            let nu = tape.matmul(n_t, g.u);
            let sum = tape.add(ow, nu);
            let pre0 = tape.add_row(sum, g.b);
            let th = tape.tanh(pre0);
            let zv = tape.matmul(th, g.v);
            let zpre = tape.add_scalar(zv, g.c);
            let z = tape.sigmoid(zpre);
            gates.push(z);
            tape.gate_mix(h, n_t, z)
        } else {
            tape.add(h, n_t)
        };
        let u = tape.layer_norm(mixed, ids.ln1_gamma, ids.ln1_beta);

        // feed-forward with ELU and dropout
        let f0 = tape.matmul(u, ids.w_ffn1);
        let f1 = tape.add_row(f0, ids.b_ffn1);
        let act = tape.elu(f1);
        let dropped = match mode {
            Mode::Train => tape.dropout(act, cfg.ffn_dropout_p, rng),
            Mode::Eval => act,
        };
        let f2 = tape.matmul(dropped, ids.w_ffn2);
        let f = tape.add_row(f2, ids.b_ffn2);
        let res = tape.add(u, f);
        h = tape.layer_norm(res, ids.ln2_gamma, ids.ln2_beta);
    }
    Ok(ForwardPass {
        tape,
        param_ids,
        embeddings: h,
        gates,
    })
}

/// Result of a complete forward pass.
pub struct ForwardOutput {
    pub embeddings: Matrix,
    /// Full N×N logit matrix: bilinear when configured, Gram otherwise.
    pub logits: Option<Matrix>,
    /// Per learned-residual layer: gate value per node.
    pub gate_values: Vec<Vec<f64>>,
}

/// Full forward pass over an adjacency. In training mode adjacency dropout is
/// applied once before the layer stack and feed-forward dropout inside it;
/// evaluation consumes no randomness. Set `with_logits` to also score every
/// ordered pair.
pub fn model_forward(
    features: &Matrix,
    adj: &AdjMatrix,
    cfg: &ModelConfig,
    params: &ParameterSet,
    rng: &mut ChaCha8Rng,
    mode: Mode,
    with_logits: bool,
) -> Result<ForwardOutput> {
    let effective = match mode {
        Mode::Train => adjacency_dropout(adj, cfg.adj_dropout_p, rng)?,
        Mode::Eval => adj.clone(),
    };
    let neighbors = Rc::new(effective.neighbor_lists());
    let pass = forward_on_tape(features, neighbors, cfg, params, mode, rng)?;
    let embeddings = pass.tape.value(pass.embeddings).clone();
    let gate_values = pass
        .gates
        .iter()
        .map(|&g| pass.tape.value(g).as_slice().to_vec())
        .collect();
    let logits = with_logits.then(|| {
        let scorer = Scorer::from_params(cfg, params);
        scorer.all_logits(&embeddings)
    });
    Ok(ForwardOutput {
        embeddings,
        logits,
        gate_values,
    })
}

/// Evaluation-mode forward pass; consumes no randomness.
pub fn eval_forward(
    features: &Matrix,
    adj: &AdjMatrix,
    cfg: &ModelConfig,
    params: &ParameterSet,
    with_logits: bool,
) -> Result<ForwardOutput> {
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    model_forward(features, adj, cfg, params, &mut scratch, Mode::Eval, with_logits)
}

/// Pair scoring head: a bilinear form when configured, plain dot otherwise.
pub enum Scorer {
    Bilinear(Matrix),
    Dot,
}

impl Scorer {
    pub fn from_params(cfg: &ModelConfig, params: &ParameterSet) -> Scorer {
        match bilinear_index(cfg) {
            Some(i) => Scorer::Bilinear(params.entries[i].clone()),
            None => Scorer::Dot,
        }
    }

    /// Logits of (i, j) for every ordered pair, diagonal included.
    pub fn all_logits(&self, e: &Matrix) -> Matrix {
        match self {
            Scorer::Bilinear(w) => e.matmul(w).matmul_nt(e),
            Scorer::Dot => e.matmul_nt(e),
        }
    }

    /// Logits of (node, j) for all j.
    pub fn candidate_logits(&self, e: &Matrix, node: usize) -> Vec<f64> {
        let query: Vec<f64> = match self {
            Scorer::Bilinear(w) => {
                let mut q = vec![0.0; w.cols()];
                let row = e.row(node);
                for (k, &x) in row.iter().enumerate() {
                    for (qc, &wv) in q.iter_mut().zip(w.row(k)) {
                        *qc += x * wv;
                    }
                }
                q
            }
            Scorer::Dot => e.row(node).to_vec(),
        };
        (0..e.rows()).map(|j| dot(&query, e.row(j))).collect()
    }
}

/// Single-pair bilinear logit e_iᵀ W e_j; sigmoid of it is the citation
/// probability.
pub fn bilinear_score(e_i: &[f64], e_j: &[f64], w_b: &Matrix) -> f64 {
    assert_eq!(w_b.shape(), (e_i.len(), e_j.len()));
    let mut total = 0.0;
    for (k, &x) in e_i.iter().enumerate() {
        total += x * dot(w_b.row(k), e_j);
    }
    total
}

/// Linear embedding of the whole feature matrix: row i maps to
/// features_i · W_e + b_e.
pub fn embed(features: &Matrix, params: &ParameterSet, cfg: &ModelConfig) -> Result<Matrix> {
    if features.cols() != cfg.input_dim {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} feature columns", cfg.input_dim),
            got: format!("{}", features.cols()),
        });
    }
    let mut tape = Tape::new();
    let w = tape.param(params.entries[0].clone());
    let b = tape.param(params.entries[1].clone());
    let x = tape.input(features.clone());
    let xw = tape.matmul(x, w);
    let out = tape.add_row(xw, b);
    Ok(tape.value(out).clone())
}

/// Attention context for a single node given its (dropout-applied) citation
/// row: multi-head attention over the flagged neighbors, concatenated and
/// projected. An empty neighborhood yields the zero vector.
pub fn graph_attention(
    node_index: usize,
    h: &Matrix,
    adj_row: &[bool],
    cfg: &ModelConfig,
    params: &ParameterSet,
    layer: usize,
) -> Result<Vec<f64>> {
    if adj_row.len() != h.rows() {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} row entries", h.rows()),
            got: format!("{}", adj_row.len()),
        });
    }
    let nbrs: Vec<usize> = adj_row
        .iter()
        .enumerate()
        .filter_map(|(j, &b)| if b { Some(j) } else { None })
        .collect();
    if nbrs.is_empty() {
        return Ok(vec![0.0; cfg.embed_dim]);
    }
    let mut tape = Tape::new();
    let param_ids = params.register(&mut tape);
    let ids = layer_ids(cfg, &param_ids, layer);
    let hid = tape.input(h.clone());
    let q0 = tape.matmul(hid, ids.w_q);
    let q = tape.add_row(q0, ids.b_q);
    let k0 = tape.matmul(hid, ids.w_k);
    let k = tape.add_row(k0, ids.b_k);
    let v0 = tape.matmul(hid, ids.w_v);
    let v = tape.add_row(v0, ids.b_v);
    let mut lists: NeighborLists = vec![Vec::new(); h.rows()];
    lists[node_index] = nbrs;
    let ctx = tape.masked_attention(q, k, v, Rc::new(lists), cfg.n_heads);
    let ctx0 = tape.matmul(ctx, ids.w_o);
    let out = tape.add_row(ctx0, ids.b_o);
    Ok(tape.value(out).row(node_index).to_vec())
}

/// One node's gated mix: z = σ(v_aᵀ tanh(W_a o + U_a n + b_a) + c_a),
/// r = z⊙o + (1-z)⊙n. Returns (r, z).
pub fn learned_residual(
    own: &[f64],
    ctx: &[f64],
    gate_w: &Matrix,
    gate_u: &Matrix,
    gate_b: &Matrix,
    gate_v: &Matrix,
    gate_c: f64,
) -> (Vec<f64>, f64) {
    let d = own.len();
    assert_eq!(ctx.len(), d);
    let mut pre = vec![0.0; d];
    for (k, &o) in own.iter().enumerate() {
        for (p, &w) in pre.iter_mut().zip(gate_w.row(k)) {
            *p += o * w;
        }
    }
    for (k, &nv) in ctx.iter().enumerate() {
        for (p, &u) in pre.iter_mut().zip(gate_u.row(k)) {
            *p += nv * u;
        }
    }
    for (p, &b) in pre.iter_mut().zip(gate_b.row(0)) {
        *p += b;
    }
    let mut zpre = gate_c;
    for (k, p) in pre.iter().enumerate() {
        zpre += gate_v.get(k, 0) * p.tanh();
    }
    let z = crate::autodiff::sigmoid(zpre);
    let r = own
        .iter()
        .zip(ctx)
        .map(|(&o, &n)| z * o + (1.0 - z) * n)
        .collect();
    (r, z)
}

/// Intermediate values of one layer's forward pass for a single node.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    /// State entering the layer.
    pub own: Vec<f64>,
    /// Attention context over cited neighbors.
    pub context: Vec<f64>,
    /// Gate value; always strictly inside (0,1).
    pub gate: f64,
    /// Gated mix: gate ⊙ own + (1-gate) ⊙ context.
    pub mixed: Vec<f64>,
}

/// Trace one node through every layer in eval mode. Returns the per-layer
/// activations and the final embedding. Requires the learned-residual gate.
pub fn node_activations(
    features: &Matrix,
    adj: &AdjMatrix,
    cfg: &ModelConfig,
    params: &ParameterSet,
    node: usize,
) -> Result<(Vec<LayerActivations>, Vec<f64>)> {
    if !cfg.use_learned_residual {
        return Err(CoreError::NoGate);
    }
    let layout = ParamLayout::for_config(cfg);
    let entry = |name: &str| &params.entries[layout.index_of(name).expect("known name")];
    let mut h = embed(features, params, cfg)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    for l in 0..cfg.n_layers {
        let own = h.row(node).to_vec();
        let context = graph_attention(node, &h, adj.row(node), cfg, params, l)?;
        let (mixed, gate) = learned_residual(
            &own,
            &context,
            entry(&format!("layer{l}.gate_w")),
            entry(&format!("layer{l}.gate_u")),
            entry(&format!("layer{l}.gate_b")),
            entry(&format!("layer{l}.gate_v")),
            entry(&format!("layer{l}.gate_c")).get(0, 0),
        );
        layers.push(LayerActivations {
            own,
            context,
            gate,
            mixed,
        });
        h = layer_forward(&h, adj, cfg, params, l, Mode::Eval, &mut scratch)?;
    }
    Ok((layers, h.row(node).to_vec()))
}

/// One full layer applied to every node, outside any recording tape.
pub fn layer_forward(
    h: &Matrix,
    adj: &AdjMatrix,
    cfg: &ModelConfig,
    params: &ParameterSet,
    layer: usize,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let neighbors = Rc::new(adj.neighbor_lists());
    let mut tape = Tape::new();
    let param_ids = params.register(&mut tape);
    let ids = layer_ids(cfg, &param_ids, layer);
    let hid = tape.input(h.clone());
    let q0 = tape.matmul(hid, ids.w_q);
    let q = tape.add_row(q0, ids.b_q);
    let k0 = tape.matmul(hid, ids.w_k);
    let k = tape.add_row(k0, ids.b_k);
    let v0 = tape.matmul(hid, ids.w_v);
    let v = tape.add_row(v0, ids.b_v);
    let ctx = tape.masked_attention(q, k, v, neighbors, cfg.n_heads);
    let ctx0 = tape.matmul(ctx, ids.w_o);
    let n_t = tape.add_row(ctx0, ids.b_o);
    let mixed = if let Some(g) = &ids.gate {
        let ow = tape.matmul(hid, g.w);
        let nu = tape.matmul(n_t, g.u);
        let sum = tape.add(ow, nu);
        let pre0 = tape.add_row(sum, g.b);
        let th = tape.tanh(pre0);
        let zv = tape.matmul(th, g.v);
        let zpre = tape.add_scalar(zv, g.c);
        let z = tape.sigmoid(zpre);
        tape.gate_mix(hid, n_t, z)
    } else {
        tape.add(hid, n_t)
    };
    let u = tape.layer_norm(mixed, ids.ln1_gamma, ids.ln1_beta);
    let f0 = tape.matmul(u, ids.w_ffn1);
    let f1 = tape.add_row(f0, ids.b_ffn1);
    let act = tape.elu(f1);
    let dropped = match mode {
        Mode::Train => tape.dropout(act, cfg.ffn_dropout_p, rng),
        Mode::Eval => act,
    };
    let f2 = tape.matmul(dropped, ids.w_ffn2);
    let f = tape.add_row(f2, ids.b_ffn2);
    let res = tape.add(u, f);
    let out = tape.layer_norm(res, ids.ln2_gamma, ids.ln2_beta);
    Ok(tape.value(out).clone())
}
