//! Directed citation adjacency, transductive splits, masking, adjacency
//! dropout and negative sampling.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Dense boolean adjacency; `get(i, j)` is true iff document i cites j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjMatrix {
    pub fn new(n: usize) -> Self {
        AdjMatrix {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Outgoing neighbor list per node, in ascending index order.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &b)| if b { Some(j) } else { None })
                    .collect()
            })
            .collect()
    }
}

/// The citation graph: adjacency plus node identity and domain labels.
#[derive(Debug, Clone)]
pub struct CitationGraph {
    pub adj: AdjMatrix,
    pub node_ids: Vec<String>,
    pub domains: Vec<String>,
    id_index: HashMap<String, usize>,
}

impl CitationGraph {
    /// Build from an id-based edge list. Every endpoint must be a known id;
    /// self-citations are rejected.
    pub fn from_edges(
        node_ids: Vec<String>,
        domains: Vec<String>,
        edges: &[(String, String)],
    ) -> Result<Self> {
        assert_eq!(node_ids.len(), domains.len(), "one domain per node");
        let mut id_index = HashMap::new();
        for (i, id) in node_ids.iter().enumerate() {
            if id_index.insert(id.clone(), i).is_some() {
                return Err(CoreError::DuplicateId(id.clone()));
            }
        }
        let mut adj = AdjMatrix::new(node_ids.len());
        for (a, b) in edges {
            let i = *id_index
                .get(a)
                .ok_or_else(|| CoreError::UnknownId(a.clone()))?;
            let j = *id_index
                .get(b)
                .ok_or_else(|| CoreError::UnknownId(b.clone()))?;
            if i == j {
                return Err(CoreError::SelfCitation(a.clone()));
            }
            adj.set(i, j, true);
        }
        Ok(CitationGraph {
            adj,
            node_ids,
            domains,
            id_index,
        })
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }
}

/// Transductive node partition. `featureless` holds every node without
/// outgoing citations; such nodes are never queried, only cited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub featureless: Vec<usize>,
}

impl NodeSplit {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.featureless)
        {
            if i >= n {
                return Err(CoreError::Format(format!("split index {i} out of range")));
            }
            if seen[i] {
                return Err(CoreError::Format(format!("split index {i} repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(CoreError::Format("split does not cover all nodes".into()));
        }
        Ok(())
    }
}

/// Deterministic split: nodes with no outgoing citations go to `featureless`;
/// ⌊val_frac·N⌋ of the remaining (seed-shuffled) nodes form the validation
/// set and everything else trains.
pub fn split_nodes(
    graph: &CitationGraph,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
) -> Result<NodeSplit> {
    if train_frac < 0.0 || val_frac < 0.0 {
        return Err(CoreError::InvalidFraction("fractions must be >= 0".into()));
    }
    if train_frac + val_frac > 1.0 {
        return Err(CoreError::InvalidFraction(
            "train_frac + val_frac must be <= 1".into(),
        ));
    }
    let n = graph.n();
    let mut featureless = Vec::new();
    let mut cited: Vec<usize> = Vec::new();
    for i in 0..n {
        if graph.adj.out_degree(i) == 0 {
            featureless.push(i);
        } else {
            cited.push(i);
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    cited.shuffle(&mut rng);
    let n_val = ((val_frac * n as f64).floor() as usize).min(cited.len());
    let mut validation: Vec<usize> = cited[..n_val].to_vec();
    let mut train: Vec<usize> = cited[n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(NodeSplit {
        train,
        validation,
        featureless,
    })
}

/// Zero out the rows of validation nodes; columns (in-links) are untouched.
/// Idempotent.
pub fn mask_validation_edges(adj: &AdjMatrix, split: &NodeSplit) -> AdjMatrix {
    let mut out = adj.clone();
    for &i in &split.validation {
        for j in 0..adj.n() {
            out.set(i, j, false);
        }
    }
    out
}

/// Drop each existing edge independently with probability p. Boolean mask,
/// no rescaling: the result feeds softmax-normalized attention.
pub fn adjacency_dropout(adj: &AdjMatrix, p: f64, rng: &mut impl Rng) -> Result<AdjMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::InvalidFraction("dropout p must be in [0,1]".into()));
    }
    let mut out = adj.clone();
    for i in 0..adj.n() {
        for j in 0..adj.n() {
            if out.get(i, j) {
                let u: f64 = rng.gen();
                if u < p {
                    out.set(i, j, false);
                }
            }
        }
    }
    Ok(out)
}

/// Draw `ratio ×` (positives in `source_rows`) non-edges (i, j) with
/// i ∈ source_rows, adj[i][j] = 0, i ≠ j, uniformly with replacement over all
/// such pairs.
pub fn sample_negatives(
    adj: &AdjMatrix,
    source_rows: &[usize],
    ratio: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    if ratio == 0 {
        return Err(CoreError::InvalidParameter("ratio must be >= 1".into()));
    }
    let n = adj.n();
    let mut positives = 0usize;
    let mut capacity = Vec::with_capacity(source_rows.len());
    let mut cumulative = Vec::with_capacity(source_rows.len());
    let mut total_capacity = 0u64;
    for &i in source_rows {
        let deg = adj.out_degree(i);
        positives += deg;
        let cap = n - 1 - deg;
        if cap == 0 {
            return Err(CoreError::NoNegatives(i));
        }
        capacity.push(cap);
        total_capacity += cap as u64;
        cumulative.push(total_capacity);
    }
    let want = ratio * positives;
    let mut out = Vec::with_capacity(want);
    for _ in 0..want {
        // weighted row choice keeps the global distribution uniform
        let t = rng.gen_range(0..total_capacity);
        let row_idx = cumulative.partition_point(|&c| c <= t);
        let i = source_rows[row_idx];
        // rejection sampling within the row; capacity > 0 guarantees progress
        let j = loop {
            let cand = rng.gen_range(0..n);
            if cand != i && !adj.get(i, cand) {
                break cand;
            }
        };
        out.push((i, j));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<String>,
    validation: Vec<String>,
    featureless: Vec<String>,
}

/// Persist a split as JSON over document ids.
pub fn write_split_json(path: &Path, split: &NodeSplit, graph: &CitationGraph) -> Result<()> {
    let to_ids = |idx: &[usize]| idx.iter().map(|&i| graph.node_ids[i].clone()).collect();
    let file = SplitFile {
        train: to_ids(&split.train),
        validation: to_ids(&split.validation),
        featureless: to_ids(&split.featureless),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_split_json(path: &Path, graph: &CitationGraph) -> Result<NodeSplit> {
    let text = std::fs::read_to_string(path)?;
    let file: SplitFile = serde_json::from_str(&text)?;
    let to_idx = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                graph
                    .index_of(id)
                    .ok_or_else(|| CoreError::UnknownId(id.clone()))
            })
            .collect()
    };
    let split = NodeSplit {
        train: to_idx(&file.train)?,
        validation: to_idx(&file.validation)?,
        featureless: to_idx(&file.featureless)?,
    };
    split.validate(graph.n())?;
    Ok(split)
}
