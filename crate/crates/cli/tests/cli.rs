//! End-to-end command tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn citerank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_citerank"))
}

fn run(args: &[&str]) -> Output {
    citerank().args(args).output().expect("spawn citerank")
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, seed: u64, extra_model: &str) -> PathBuf {
    let work = dir.join("work");
    let config = format!(
        "# test run\n\
         [paths]\n\
         corpus = {work}/synth-{seed}.corpus.jsonl\n\
         edges = {work}/synth-{seed}.edges.csv\n\
         workdir = {work}\n\
         \n\
         [synth]\n\
         n_docs = 60\n\
         n_domains = 3\n\
         within_domain_rate = 0.7\n\
         mean_out_degree = 4.0\n\
         vocab_size = 60\n\
         doc_len = 50\n\
         \n\
         [model]\n\
         embed_dim = 16\n\
         n_layers = 1\n\
         n_heads = 4\n\
         ffn_hidden = 16\n\
         {extra_model}\n\
         \n\
         [train]\n\
         total_updates = 12\n\
         eval_every = 4\n\
         \n\
         [eval]\n\
         k = 10\n\
         thresholds = 0.25,0.5,0.75\n\
         \n\
         [run]\n\
         seed = {seed}\n",
        work = work.display(),
    );
    let path = dir.join(format!("run-{seed}.conf"));
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn full_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 5, "");
    let cfg = cfg.to_str().unwrap();
    let work = dir.path().join("work");

    // synth writes the corpus the other commands consume
    let out = run(&["synth", "--config", cfg]);
    assert_exit(&out, 0, "synth");
    assert!(work.join("synth-5.corpus.jsonl").is_file());
    assert!(work.join("synth-5.edges.csv").is_file());

    let out = run(&["ingest", "--config", cfg]);
    assert_exit(&out, 0, "ingest");
    assert!(work.join("ingest-5.vocab.tsv").is_file());
    assert!(work.join("ingest-5.features.tsv").is_file());
    assert!(work.join("ingest-5.edges.csv").is_file());

    let out = run(&["train", "--config", cfg]);
    assert_exit(&out, 0, "train");
    let ckpt = work.join("train-5.ckpt");
    assert!(ckpt.is_file());
    assert!(work.join("train-5.log.csv").is_file());
    assert!(work.join("train-5.split.json").is_file());
    let log = std::fs::read_to_string(work.join("train-5.log.csv")).unwrap();
    assert!(log.starts_with("update,loss,val_map,val_mar,gate_mean_layer1"));
    assert_eq!(log.lines().count(), 13, "header + 12 updates");

    // idempotence: retraining reproduces the checkpoint byte for byte
    let first = std::fs::read(&ckpt).unwrap();
    let out = run(&["train", "--config", cfg]);
    assert_exit(&out, 0, "retrain");
    assert_eq!(first, std::fs::read(&ckpt).unwrap(), "checkpoint not deterministic");

    let out = run(&["evaluate", "--config", cfg]);
    assert_exit(&out, 0, "evaluate");
    let metrics = work.join("evaluate-5.metrics.json");
    let first = std::fs::read(&metrics).unwrap();
    let out = run(&["evaluate", "--config", cfg]);
    assert_exit(&out, 0, "re-evaluate");
    assert_eq!(first, std::fs::read(&metrics).unwrap(), "metrics not deterministic");

    // recommend: k lines of rank,candidate_id,probability on stdout
    let out = run(&["recommend", "--config", cfg, "--doc", "doc-0001", "--k", "7"]);
    assert_exit(&out, 0, "recommend");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 7);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3, "line {line:?}");
        assert_eq!(fields[0], (i + 1).to_string());
        assert_ne!(fields[1], "doc-0001", "self never recommended");
        let p: f64 = fields[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    let out = run(&["analyze", "--config", cfg]);
    assert_exit(&out, 0, "analyze");
    assert!(work.join("analyze-5.thresholds.json").is_file());
    assert!(work.join("analyze-5.true-crossref.csv").is_file());
    assert!(work.join("analyze-5.pred-crossref.csv").is_file());
    let true_csv = std::fs::read_to_string(work.join("analyze-5.true-crossref.csv")).unwrap();
    assert!(true_csv.starts_with("domain,"));

    let out = run(&["export", "--config", cfg]);
    assert_exit(&out, 0, "export");
    let tsv = std::fs::read_to_string(work.join("export-5.embeddings.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 60);
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 17, "id + 16 dims");

    let out = run(&["gate-report", "--config", cfg]);
    assert_exit(&out, 0, "gate-report");
    let gate_json = std::fs::read_to_string(work.join("gate-report-5.json")).unwrap();
    assert!(gate_json.contains("residual_weight_mean"));

    let out = run(&["ablate", "--config", cfg, "--variants", "tfidf,bilinear"]);
    assert_exit(&out, 0, "ablate");
    let report = std::fs::read_to_string(work.join("ablate-5.report.csv")).unwrap();
    assert!(report.starts_with("variant,map_at_k,mar_at_k,mse,cosine,n_params"));
    assert_eq!(report.lines().count(), 3);
    assert!(report.contains("tfidf") && report.contains("bilinear"));
}

#[test]
fn usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();

    // unknown subcommand: usage error on stderr, exit 1
    let out = run(&["frobnicate"]);
    assert_exit(&out, 1, "unknown subcommand");
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    // unknown ablation variant is a usage error
    let cfg = write_config(dir.path(), 9, "");
    let cfg_s = cfg.to_str().unwrap();
    let out = run(&["synth", "--config", cfg_s]);
    assert_exit(&out, 0, "synth");
    let out = run(&["ablate", "--config", cfg_s, "--variants", "nonsense"]);
    assert_exit(&out, 1, "bad variant");

    // missing corpus file: exit 2 and no partial outputs
    let missing = dir.path().join("missing.conf");
    std::fs::write(
        &missing,
        format!(
            "[paths]\ncorpus = {0}/nope.jsonl\nworkdir = {0}/w\n[run]\nseed = 3\n",
            dir.path().display()
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", missing.to_str().unwrap()]);
    assert_exit(&out, 2, "missing corpus");
    assert!(!dir.path().join("w").join("train-3.ckpt").exists());

    // unknown document id: data error
    let out = run(&["recommend", "--config", cfg_s, "--doc", "no-such-doc"]);
    assert_exit(&out, 2, "unknown doc requires checkpoint first");

    // malformed config key
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "[paths]\ncorpzz = x\n").unwrap();
    let out = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_exit(&out, 2, "unknown config key");

    // help exits 0
    let out = run(&["--help"]);
    assert_exit(&out, 0, "help");
}

#[test]
fn gate_report_requires_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 11, "learned_residual = false");
    let cfg = cfg.to_str().unwrap();
    assert_exit(&run(&["synth", "--config", cfg]), 0, "synth");
    assert_exit(&run(&["train", "--config", cfg]), 0, "train");
    let out = run(&["gate-report", "--config", cfg]);
    assert_exit(&out, 2, "gate-report without gate");
}
