//! Documents, features and citation extraction.
//!
//! Turns a document collection into numeric node features (top-V vocabulary,
//! TF-IDF, per-column z-normalization) and a directed citation edge list, and
//! generates seeded synthetic corpora for desk-scale experiments.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// One document: a node in the citation graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub domain: String,
    pub text: String,
    /// Pre-resolved citation targets (document ids), if the source had
    /// explicit hyperlinks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<String>>,
}

/// Corpus-wide term list, capped and frequency-ordered.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// Sorted by descending total corpus frequency, ties lexicographic ascending.
    pub terms: Vec<String>,
    /// Number of documents containing each term (aligned with `terms`).
    pub doc_frequency: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Lowercase a text into alphabetic terms, dropping everything else and any
/// term in `stopwords`. Order is preserved.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            if !stopwords.contains(&current) {
                terms.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    if !current.is_empty() && !stopwords.contains(&current) {
        terms.push(current);
    }
    terms
}

/// Top `max_terms` terms by total corpus frequency.
pub fn build_vocabulary(
    docs: &[Document],
    max_terms: usize,
    stopwords: &HashSet<String>,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    if max_terms == 0 {
        return Err(CoreError::InvalidParameter("max_terms must be >= 1".into()));
    }
    let mut total: HashMap<String, usize> = HashMap::new();
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        let terms = tokenize(&doc.text, stopwords);
        let mut seen = HashSet::new();
        for t in terms {
            *total.entry(t.clone()).or_insert(0) += 1;
            if seen.insert(t.clone()) {
                *doc_freq.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = total.into_iter().collect();
    // descending frequency, ties lexicographic ascending
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_terms);

    let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    let doc_frequency: Vec<usize> = terms.iter().map(|t| doc_freq[t]).collect();
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        terms,
        doc_frequency,
        index,
    })
}

/// Raw-count TF times ln(N/df). Columns follow vocabulary order, rows follow
/// document order. A term present in every document gets an all-zero column.
pub fn compute_tfidf(docs: &[Document], vocab: &Vocabulary) -> Matrix {
    let n = docs.len();
    let v = vocab.len();
    let empty = HashSet::new();
    let mut m = Matrix::zeros(n, v);
    let idf: Vec<f64> = vocab
        .doc_frequency
        .iter()
        .map(|&df| {
            if df == 0 {
                0.0
            } else {
                (n as f64 / df as f64).ln()
            }
        })
        .collect();
    for (d, doc) in docs.iter().enumerate() {
        // stopwords cannot be vocabulary members, so counting unfiltered
        // tokens gives the same term frequencies
        for t in tokenize(&doc.text, &empty) {
            if let Some(j) = vocab.index_of(&t) {
                let cur = m.get(d, j);
                m.set(d, j, cur + 1.0);
            }
        }
    }
    for d in 0..n {
        let row = m.row_mut(d);
        for (x, &w) in row.iter_mut().zip(&idf) {
            *x *= w;
        }
    }
    m
}

/// Per-column z-score with population standard deviation; constant columns
/// map to all-zero.
pub fn znormalize(m: &Matrix) -> Matrix {
    let (n, c) = m.shape();
    let mut out = m.clone();
    if n == 0 {
        return out;
    }
    for j in 0..c {
        let mut mean = 0.0;
        for i in 0..n {
            mean += m.get(i, j);
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = m.get(i, j) - mean;
            var += d * d;
        }
        var /= n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let v = if std == 0.0 {
                0.0
            } else {
                (m.get(i, j) - mean) / std
            };
            out.set(i, j, v);
        }
    }
    out
}

/// Directed citation edges: (A, B) when B's title occurs case-insensitively in
/// A's text, or B's id is listed in A's links. Self-edges are dropped,
/// duplicates collapsed. Output is sorted by (source, target) id.
pub fn extract_citations(docs: &[Document]) -> Result<Vec<(String, String)>> {
    let mut ids = HashSet::new();
    let mut titles = HashSet::new();
    for doc in docs {
        if !ids.insert(doc.id.as_str()) {
            return Err(CoreError::DuplicateId(doc.id.clone()));
        }
        if doc.title.is_empty() {
            return Err(CoreError::Format(format!("document {:?} has empty title", doc.id)));
        }
        if !titles.insert(doc.title.to_lowercase()) {
            return Err(CoreError::AmbiguousTitle(doc.title.clone()));
        }
    }
    let lowered_texts: Vec<String> = docs.iter().map(|d| d.text.to_lowercase()).collect();
    let lowered_titles: Vec<String> = docs.iter().map(|d| d.title.to_lowercase()).collect();

    let mut edges = HashSet::new();
    for (a, doc) in docs.iter().enumerate() {
        for (b, other) in docs.iter().enumerate() {
            if a != b && lowered_texts[a].contains(lowered_titles[b].as_str()) {
                edges.insert((doc.id.clone(), other.id.clone()));
            }
        }
        if let Some(links) = &doc.links {
            for target in links {
                if !ids.contains(target.as_str()) {
                    return Err(CoreError::UnknownId(target.clone()));
                }
                if target != &doc.id {
                    edges.insert((doc.id.clone(), target.clone()));
                }
            }
        }
    }
    let mut out: Vec<(String, String)> = edges.into_iter().collect();
    out.sort();
    Ok(out)
}

/// Settings for the seeded synthetic corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_domains: usize,
    /// Probability that a citation stays within the source's domain.
    pub within_domain_rate: f64,
    /// Mean outgoing citations per document, counted over all documents.
    pub mean_out_degree: f64,
    pub vocab_size: usize,
    /// Fraction of documents with no outgoing citations.
    pub featureless_frac: f64,
    /// Terms per document drawn for the text body.
    pub doc_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_docs: 500,
            n_domains: 5,
            within_domain_rate: 0.6,
            mean_out_degree: 6.2,
            vocab_size: 300,
            featureless_frac: 0.229,
            doc_len: 120,
        }
    }
}

const DOMAIN_NAMES: &[&str] = &[
    "Legal",
    "Financial Institutions",
    "Corporates",
    "Insurance",
    "Sovereigns",
    "Structured Finance",
    "Utilities",
    "General",
];

/// Deterministic pseudoword: alternating consonant/vowel syllables.
fn pseudoword(rng: &mut ChaCha8Rng) -> String {
    const CONSONANTS: &[u8] = b"bcdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = rng.gen_range(2..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    w
}

/// Generate a seeded corpus whose term usage is domain-biased and whose
/// citation structure favors in-domain, popularity-skewed targets. Identical
/// seeds produce identical output.
pub fn generate_synthetic_corpus(
    cfg: &SyntheticConfig,
) -> Result<(Vec<Document>, Vec<(String, String)>)> {
    if cfg.n_domains == 0 || cfg.n_docs < cfg.n_domains {
        return Err(CoreError::InvalidParameter(
            "need n_docs >= n_domains >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.within_domain_rate) {
        return Err(CoreError::InvalidFraction(
            "within_domain_rate must be in [0,1]".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.featureless_frac) {
        return Err(CoreError::InvalidFraction(
            "featureless_frac must be in [0,1]".into(),
        ));
    }
    if cfg.mean_out_degree < 0.0 {
        return Err(CoreError::InvalidParameter(
            "mean_out_degree must be >= 0".into(),
        ));
    }
    if cfg.vocab_size == 0 || cfg.doc_len == 0 {
        return Err(CoreError::InvalidParameter(
            "vocab_size and doc_len must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // distinct pseudoword vocabulary
    let mut vocab = Vec::with_capacity(cfg.vocab_size);
    let mut seen = HashSet::new();
    while vocab.len() < cfg.vocab_size {
        let w = pseudoword(&mut rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }

    // 40% of terms shared across domains, the rest split per domain
    let shared_end = (cfg.vocab_size * 2) / 5;
    let per_domain = (cfg.vocab_size - shared_end) / cfg.n_domains;

    let domain_of = |i: usize| i % cfg.n_domains;
    let domain_name = |d: usize| {
        if d < DOMAIN_NAMES.len() {
            DOMAIN_NAMES[d].to_string()
        } else {
            format!("Domain {d}")
        }
    };

    let mut docs = Vec::with_capacity(cfg.n_docs);
    for i in 0..cfg.n_docs {
        let d = domain_of(i);
        let pool_start = shared_end + d * per_domain;
        let pool_end = if d + 1 == cfg.n_domains {
            cfg.vocab_size
        } else {
            pool_start + per_domain
        };
        let mut words = Vec::with_capacity(cfg.doc_len);
        for _ in 0..cfg.doc_len {
            let idx = if pool_end > pool_start && rng.gen_bool(0.7) {
                // Zipf-ish tilt toward the front of the domain pool
                let u: f64 = rng.gen();
                let span = (pool_end - pool_start) as f64;
                pool_start + ((u * u) * span) as usize
            } else {
                rng.gen_range(0..shared_end.max(1))
            };
            words.push(vocab[idx.min(cfg.vocab_size - 1)].as_str());
        }
        let title_a = pseudoword(&mut rng);
        let title_b = pseudoword(&mut rng);
        docs.push(Document {
            id: format!("doc-{i:04}"),
            title: format!("{title_a} {title_b} criteria {i}"),
            domain: domain_name(d),
            text: words.join(" "),
            links: Some(Vec::new()),
        });
    }

    // citing nodes: a seeded choice of (1 - featureless_frac) of all documents
    let n_featureless = (cfg.featureless_frac * cfg.n_docs as f64).floor() as usize;
    let mut order: Vec<usize> = (0..cfg.n_docs).collect();
    order.shuffle(&mut rng);
    let citers: HashSet<usize> = order[n_featureless..].iter().copied().collect();
    let n_citers = cfg.n_docs - n_featureless;

    // Zipf-ranked popularity: a few hub documents draw most citations,
    // mirroring how a handful of general criteria dominate real in-links
    let mut pop_order: Vec<usize> = (0..cfg.n_docs).collect();
    pop_order.shuffle(&mut rng);
    let mut popularity = vec![0.0; cfg.n_docs];
    for (rank, &i) in pop_order.iter().enumerate() {
        popularity[i] = 1.0 / (1.0 + rank as f64).powf(1.1);
    }

    let mut by_domain: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_domains];
    for i in 0..cfg.n_docs {
        by_domain[domain_of(i)].push(i);
    }

    let per_citer_mean = if n_citers == 0 {
        0.0
    } else {
        cfg.mean_out_degree * cfg.n_docs as f64 / n_citers as f64
    };

    let mut edges = Vec::new();
    for i in 0..cfg.n_docs {
        if !citers.contains(&i) {
            continue;
        }
        let degree = poisson(per_citer_mean, &mut rng).max(1).min(cfg.n_docs - 1);
        let mut targets = HashSet::new();
        let mut attempts = 0;
        while targets.len() < degree && attempts < degree * 50 {
            attempts += 1;
            let same = rng.gen_bool(cfg.within_domain_rate);
            let pool: &[usize] = if same {
                &by_domain[domain_of(i)]
            } else {
                // weighted pick of another domain by size
                let d = loop {
                    let cand = rng.gen_range(0..cfg.n_domains);
                    if cand != domain_of(i) || cfg.n_domains == 1 {
                        break cand;
                    }
                };
                &by_domain[d]
            };
            if pool.is_empty() || (pool.len() == 1 && pool[0] == i) {
                continue;
            }
            let j = weighted_pick(pool, &popularity, &mut rng);
            if j != i {
                targets.insert(j);
            }
        }
        let mut sorted: Vec<usize> = targets.into_iter().collect();
        sorted.sort_unstable();
        for j in sorted {
            let target_id = docs[j].id.clone();
            edges.push((docs[i].id.clone(), target_id.clone()));
            docs[i].links.as_mut().expect("links initialized").push(target_id);
        }
    }
    Ok((docs, edges))
}

fn poisson(lambda: f64, rng: &mut ChaCha8Rng) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    // Knuth's method; lambda stays small (~8) at desk scale
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

fn weighted_pick(pool: &[usize], weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = pool.iter().map(|&i| weights[i]).sum();
    let mut u = rng.gen::<f64>() * total;
    for &i in pool {
        u -= weights[i];
        if u <= 0.0 {
            return i;
        }
    }
    pool[pool.len() - 1]
}

/// Compact default stopword list; a file-based list can replace it.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "had", "has", "have",
    "he", "her", "his", "if", "in", "into", "is", "it", "its", "no", "not", "of", "on", "or",
    "our", "she", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to",
    "was", "we", "were", "which", "will", "with",
];

pub fn default_stopwords() -> HashSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// One lowercase word per line, UTF-8; blank lines ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let file = std::fs::File::open(path)?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() {
            set.insert(w.to_lowercase());
        }
    }
    Ok(set)
}

/// JSON-lines corpus: one document object per line.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path)?;
    let mut docs = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| CoreError::Format(format!("line {}: {e}", ln + 1)))?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    Ok(docs)
}

pub fn write_corpus_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Edge CSV with a `source_id,target_id` header. Ids must not contain commas,
/// quotes or newlines; `validate_id` enforces that on ingest paths.
pub fn write_edges_csv(path: &Path, edges: &[(String, String)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "source_id,target_id")?;
    for (a, b) in edges {
        validate_id(a)?;
        validate_id(b)?;
        writeln!(w, "{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let file = std::fs::File::open(path)?;
    let mut edges = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (ln == 0 && trimmed == "source_id,target_id") {
            continue;
        }
        let mut parts = trimmed.splitn(2, ',');
        match (parts.next(), parts.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                edges.push((a.to_string(), b.to_string()));
            }
            _ => {
                return Err(CoreError::Format(format!(
                    "edge csv line {}: expected source_id,target_id",
                    ln + 1
                )))
            }
        }
    }
    Ok(edges)
}

pub fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c == ',' || c == '"' || c.is_control()) {
        return Err(CoreError::Format(format!("invalid id {id:?}")));
    }
    Ok(())
}
