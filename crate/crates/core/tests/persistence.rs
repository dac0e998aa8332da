use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sequnlearn::data::{generate_forget, generate_retain, CorpusSpec};
use sequnlearn::model::{ModelConfig, TransformerModel};
use sequnlearn::persistence::*;
use sequnlearn::trainer::{adamw_step, AdamWConfig, OptimizerState, Phase, PhaseConfig, RunReport, Trainer, Batching};
use sequnlearn::Error;
use sha2::{Digest, Sha256};

fn model() -> TransformerModel {
    TransformerModel::init(ModelConfig {
        context_len: 16,
        d_model: 16,
        n_heads: 2,
        ..ModelConfig::gradcheck()
    })
    .unwrap()
}

fn bits(m: &TransformerModel) -> Vec<(String, Vec<u32>)> {
    m.parameters()
        .iter()
        .map(|(n, t)| (n.clone(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

fn optimizer(m: &mut TransformerModel) -> OptimizerState {
    let name = "final_ln.gain".to_string();
    let g = vec![0.25f32; m.param(&name).unwrap().len()];
    let mut state = OptimizerState::new(AdamWConfig::with_lr(1e-2));
    for _ in 0..2 {
        adamw_step(m, &HashMap::from([(name.as_str(), g.as_slice())]), &BTreeSet::from([name.clone()]), &mut state).unwrap();
    }
    state
}

/// Rewrites the payload checksum after tampering.
fn reseal(bytes: &mut [u8]) {
    let n = bytes.len();
    let digest = Sha256::digest(&bytes[20..n - 32]);
    bytes[n - 32..].copy_from_slice(&digest);
}

#[test]
fn round_trip_is_bit_exact_including_optimizer_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = model();
    let opt = optimizer(&mut m);
    save_checkpoint(&m, Some(&opt), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(bits(&back.model), bits(&m));
    assert_eq!(back.model.config(), m.config());
    assert_eq!(back.optimizer.as_ref(), Some(&opt));
    assert_eq!(back.model.fingerprint(), m.fingerprint());

    save_checkpoint(&m, None, &path).unwrap();
    assert!(load_checkpoint(&path).unwrap().optimizer.is_none());
}

#[test]
fn saves_are_byte_deterministic_and_leave_no_temp_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&model(), None, &a).unwrap();
    save_checkpoint(&model(), None, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

fn load_bytes(bytes: &[u8]) -> sequnlearn::Result<Checkpoint> {
    decode_checkpoint(bytes, Path::new("test.ckpt"))
}

#[test]
fn every_truncation_is_an_integrity_error() {
    let bytes = encode_checkpoint(&model(), None).unwrap();
    for cut in [12, 20, 21, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(load_bytes(&bytes[..cut]), Err(Error::Integrity { .. })), "cut at {cut}");
    }
}

#[test]
fn distinct_errors_for_magic_version_checksum_and_shape() {
    let good = encode_checkpoint(&model(), None).unwrap();

    let mut bad = good.clone();
    bad[0] ^= 0xff;
    assert!(matches!(load_bytes(&bad), Err(Error::BadMagic { .. })));

    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match load_bytes(&bad) {
        Err(Error::UnsupportedVersion { found, supported, .. }) => assert_eq!((found, supported), (2, 1)),
        other => panic!("{other:?}"),
    }

    let mut bad = good.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(load_bytes(&bad), Err(Error::Integrity { .. })));

    // n_layers is the fifth u32 of the payload; 3 layers disagree with the stored tensors.
    let mut bad = good.clone();
    bad[20 + 16..20 + 20].copy_from_slice(&3u32.to_le_bytes());
    reseal(&mut bad);
    assert!(matches!(load_bytes(&bad), Err(Error::Shape(_))));

    // An invalid config is reported before any tensor is read.
    let mut bad = good;
    bad[20 + 12..20 + 16].copy_from_slice(&5u32.to_le_bytes());
    reseal(&mut bad);
    assert!(matches!(load_bytes(&bad), Err(Error::Config(_))));
}

#[test]
fn missing_file_reports_its_path() {
    let err = load_checkpoint("/nonexistent/dir/x.ckpt").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/dir/x.ckpt"));
}

#[test]
fn metrics_append_and_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let data = generate_retain(&CorpusSpec::new(16, 1)).unwrap();
    let mut m = model();
    let batching = Batching { max_in: 8, max_out: 8, mask_prompt: true };
    let cfg = PhaseConfig::new(Phase::Positive, 1e-3, 3, 8);
    let log = path.clone();
    let run = Trainer::new(batching)
        .on_epoch(move |r| append_metrics(&[MetricsRecord::Epoch(r.clone())], &log))
        .run_positive_phase(&mut m, &data, &cfg)
        .unwrap();
    append_metrics(
        &run.report.phases.iter().cloned().map(MetricsRecord::Phase).collect::<Vec<_>>(),
        &path,
    )
    .unwrap();

    let back = read_metrics(&path).unwrap();
    assert_eq!(back, MetricsRecord::from_report(&run.report));
    let epochs = back
        .iter()
        .filter(|r| matches!(r, MetricsRecord::Epoch(e) if e.phase == Phase::Positive))
        .count();
    assert_eq!(epochs, 3);

    let text = std::fs::read_to_string(&path).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["record", "phase", "epoch", "train_loss", "steps", "wall_time_s"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let mut report = RunReport::default();
    report.extend(run.report);
    assert_eq!(MetricsRecord::from_report(&report).len(), 4);
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forget.jsonl");
    let corpus = generate_forget(&CorpusSpec::new(30, 4)).unwrap();
    write_corpus(&corpus, &path).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), corpus);
    let line = std::fs::read_to_string(&path).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(rec["kind"], "forget");

    std::fs::write(&path, "{\"prompt\": \"a\"}\n").unwrap();
    let err = read_corpus(&path).unwrap_err();
    assert!(matches!(err, Error::Parse(_)));
    assert!(err.to_string().contains(":1:"));
}
