//! Shared fixtures for the pipeline benchmarks.

use citerank_core::corpus::{
    build_vocabulary, compute_tfidf, default_stopwords, generate_synthetic_corpus, znormalize,
    SyntheticConfig,
};
use citerank_core::graph::split_nodes;
use citerank_core::model::ModelConfig;
use citerank_core::{CitationGraph, Matrix, NodeSplit};

pub struct BenchData {
    pub features: Matrix,
    pub graph: CitationGraph,
    pub split: NodeSplit,
    pub model: ModelConfig,
}

/// A 200-document corpus with the default architecture.
pub fn bench_data() -> BenchData {
    let synth = SyntheticConfig {
        seed: 42,
        n_docs: 200,
        n_domains: 4,
        ..SyntheticConfig::default()
    };
    let (docs, edges) = generate_synthetic_corpus(&synth).expect("synthetic corpus");
    let vocab = build_vocabulary(&docs, 300, &default_stopwords()).expect("vocabulary");
    let features = znormalize(&compute_tfidf(&docs, &vocab));
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    let domains: Vec<String> = docs.iter().map(|d| d.domain.clone()).collect();
    let graph = CitationGraph::from_edges(ids, domains, &edges).expect("graph");
    let split = split_nodes(&graph, 7, 0.655, 0.116).expect("split");
    let model = ModelConfig {
        input_dim: vocab.len(),
        ..ModelConfig::default()
    };
    BenchData {
        features,
        graph,
        split,
        model,
    }
}
