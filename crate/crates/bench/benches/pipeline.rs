use std::collections::HashSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use citerank_bench::bench_data;
use citerank_core::corpus::{
    build_vocabulary, compute_tfidf, default_stopwords, generate_synthetic_corpus, znormalize,
    SyntheticConfig,
};
use citerank_core::eval::{average_precision_at_k, rank_candidates, recall_at_k};
use citerank_core::graph::mask_validation_edges;
use citerank_core::model::eval_forward;
use citerank_core::training::{train, TrainConfig};
use citerank_core::Scorer;

fn corpus_features(c: &mut Criterion) {
    let synth = SyntheticConfig {
        seed: 1,
        n_docs: 200,
        n_domains: 4,
        ..SyntheticConfig::default()
    };
    c.bench_function("corpus_tfidf_200_docs", |b| {
        b.iter(|| {
            let (docs, _) = generate_synthetic_corpus(&synth).unwrap();
            let vocab = build_vocabulary(&docs, 300, &default_stopwords()).unwrap();
            black_box(znormalize(&compute_tfidf(&docs, &vocab)))
        })
    });
}

fn forward_pass(c: &mut Criterion) {
    let data = bench_data();
    let masked = mask_validation_edges(&data.graph.adj, &data.split);
    let mut rng = rand_seed();
    let params =
        citerank_core::model::ParameterSet::init(&data.model, &mut rng).unwrap();
    c.bench_function("eval_forward_200_nodes", |b| {
        b.iter(|| {
            black_box(eval_forward(&data.features, &masked, &data.model, &params, false).unwrap())
        })
    });
}

fn training_updates(c: &mut Criterion) {
    let data = bench_data();
    let cfg = TrainConfig {
        total_updates: 4,
        eval_every: 100, // single evaluation at the end
        seed: 3,
        ..TrainConfig::default()
    };
    c.bench_function("train_4_updates_200_nodes", |b| {
        b.iter(|| {
            black_box(train(&data.features, &data.graph, &data.split, &data.model, &cfg).unwrap())
        })
    });
}

fn ranking_metrics(c: &mut Criterion) {
    let data = bench_data();
    let masked = mask_validation_edges(&data.graph.adj, &data.split);
    let mut rng = rand_seed();
    let params =
        citerank_core::model::ParameterSet::init(&data.model, &mut rng).unwrap();
    let out = eval_forward(&data.features, &masked, &data.model, &params, false).unwrap();
    let scorer = Scorer::from_params(&data.model, &params);
    let relevant: Vec<(usize, HashSet<usize>)> = data
        .split
        .validation
        .iter()
        .map(|&v| {
            (
                v,
                (0..data.graph.n())
                    .filter(|&j| data.graph.adj.get(v, j))
                    .collect(),
            )
        })
        .collect();
    c.bench_function("rank_and_score_validation", |b| {
        b.iter(|| {
            let mut total = 0.0;
            for (node, rel) in &relevant {
                let ranking = rank_candidates(&out.embeddings, &scorer, *node);
                total += average_precision_at_k(&ranking, rel, 20).unwrap();
                total += recall_at_k(&ranking, rel, 20).unwrap();
            }
            black_box(total)
        })
    });
}

fn rand_seed() -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(11)
}

criterion_group!(
    benches,
    corpus_features,
    forward_pass,
    training_updates,
    ranking_metrics
);
criterion_main!(benches);
