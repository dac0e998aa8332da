//! End-to-end acceptance run on the desk preset. Prints one line per
//! criterion and exits non-zero if any hard criterion fails. The capacity
//! ordering is soft: it warns instead of failing.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use sequnlearn::config::{Preset, RunConfig};
use sequnlearn::data::{Example, VOCAB_SIZE};
use sequnlearn::eval::{compare_capacity, mean_nll, perplexity};
use sequnlearn::grad::Tensor;
use sequnlearn::model::{check_model_gradients, select_trainable, ModelConfig, TransformerModel};
use sequnlearn::persistence::{encode_checkpoint, load_checkpoint, save_checkpoint};
use sequnlearn::trainer::{batch_gradients, run_pipeline, Objective, Phase, PipelineOutcome, Trainer};

// Pinned tolerances and thresholds.
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const POSITIVE_BUDGET: Duration = Duration::from_secs(300);
const MIN_FORGET_RISE: f64 = 0.05;
const SIGN_LAW_TOL: f64 = 1e-7;
const MAX_PPL_RATIO: f64 = 1.20;
const MAX_BENIGN_DROP: f64 = 0.1;
const MIN_PRE_EMISSION: f64 = 0.3;
const MAX_EMISSION_RATIO: f64 = 0.5;
const STABILIZE_TOL: f64 = 0.05;
const PPL_IDENTITY_TOL: f64 = 1e-9;
const UNIFORM_PPL_TOL: f64 = 1e-4;
const TOTAL_BUDGET: Duration = Duration::from_secs(15 * 60);

#[derive(PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Ledger {
    failures: usize,
    warnings: usize,
}

impl Ledger {
    fn record(&mut self, id: &str, what: &str, ok: bool, soft: bool, detail: String) {
        let v = match (ok, soft) {
            (true, _) => Verdict::Pass,
            (false, true) => Verdict::Warn,
            (false, false) => Verdict::Fail,
        };
        let tag = match v {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Warn => "WARN",
        };
        self.failures += usize::from(v == Verdict::Fail);
        self.warnings += usize::from(v == Verdict::Warn);
        println!("[{tag}] {id:>2} {what}: {detail}");
    }
}

fn uniform_model() -> TransformerModel {
    let mut m = TransformerModel::init(ModelConfig::small()).expect("valid config");
    for name in ["lm_head.w", "final_ln.bias"] {
        let t = m.param_mut(name).expect("untied head");
        *t = Tensor::zeros(t.shape().to_vec());
    }
    m
}

fn main() -> ExitCode {
    let total = Instant::now();
    let cfg = RunConfig::preset(Preset::Desk);
    let mut ledger = Ledger {
        failures: 0,
        warnings: 0,
    };
    println!("acceptance run: desk preset, seed {}", cfg.seed);

    // 1. Gradient correctness.
    let start = Instant::now();
    let gc = check_model_gradients(&ModelConfig::gradcheck(), GRADCHECK_STEP, GRADCHECK_TOL).expect("gradient check runs");
    let took = start.elapsed();
    let worst = gc.worst().expect("parameters");
    ledger.record(
        "1",
        "gradient correctness",
        gc.passed() && took < GRADCHECK_BUDGET && gc.params.len() == ModelConfig::gradcheck().parameter_layout().len(),
        false,
        format!(
            "max rel err {:.2e} (< {GRADCHECK_TOL:.0e}) over {} tensors, worst {}, {:.1?} (< {:?})",
            gc.max_rel_error(),
            gc.params.len(),
            worst.name,
            took,
            GRADCHECK_BUDGET
        ),
    );

    // The main run: base training, then the three phases on the large config.
    let corpora = cfg.data.corpora().expect("corpora");
    let suite = cfg.probe_suite().expect("probe suite");
    let pipeline_cfg = cfg.pipeline();
    let mut trainer = Trainer::new(pipeline_cfg.batching);
    let mut model = TransformerModel::init(cfg.model.clone()).expect("model");
    let base_start = Instant::now();
    trainer
        .run_pretrain(&mut model, &corpora.mixed(), &cfg.phases.pretrain)
        .expect("base training");
    println!("     base model trained in {:.1?}", base_start.elapsed());
    let out: PipelineOutcome =
        run_pipeline(model, &corpora, &pipeline_cfg, &suite, &mut trainer, |_| Ok(())).expect("pipeline");
    for s in &out.snapshots {
        println!("     {}", s.eval.summary());
    }
    let snap = |n: &str| out.snapshot(n).expect("snapshot");
    let (p1, p2, fin) = (snap("post_p1"), snap("post_p2"), snap("final"));

    // 2. Loss trajectory.
    let losses: Vec<f64> = out.report.epochs_of(Phase::Positive).map(|e| e.train_loss).collect();
    let pos = out.report.phase(Phase::Positive).expect("positive summary");
    let pos_time = Duration::from_secs_f64(pos.wall_time_s);
    ledger.record(
        "2",
        "positive-phase loss trend",
        losses.len() == 3 && losses.windows(2).all(|w| w[1] < w[0]) && pos_time < POSITIVE_BUDGET,
        false,
        format!(
            "epoch losses {:?}, {:.1?} (< {:?})",
            losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>(),
            pos_time,
            POSITIVE_BUDGET
        ),
    );

    // 3. Ascent direction.
    let neg = out.report.phase(Phase::Negative).expect("negative summary");
    let (before, after) = (neg.forget_nll_before.unwrap(), neg.forget_nll_after.unwrap());
    ledger.record(
        "3",
        "forget NLL rises",
        after - before >= MIN_FORGET_RISE,
        false,
        format!("{before:.4} -> {after:.4} (+{:.4}, need >= {MIN_FORGET_RISE})", after - before),
    );

    // 4. Freeze invariance.
    let trainable = select_trainable(&p1.model, cfg.phases.negative.freeze_policy).expect("policy");
    let mut frozen = 0;
    let mut moved = Vec::new();
    for (name, t) in p1.model.parameters() {
        if trainable.contains(name) {
            continue;
        }
        frozen += 1;
        let after = p2.model.param(name).expect("same layout");
        if !t.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            moved.push(name.clone());
        }
    }
    ledger.record(
        "4",
        "frozen parameters bitwise unchanged",
        moved.is_empty() && frozen > 0,
        false,
        format!("{frozen} frozen tensors, {} changed {moved:?}", moved.len()),
    );

    // 5. Sign law.
    let alpha = cfg.phases.negative.alpha;
    let batch: Vec<Example> = corpora.forget.iter().take(cfg.phases.negative.batch_size).cloned().collect();
    let (_, down) = batch_gradients(&p1.model, &batch, &pipeline_cfg.batching, &trainable, Objective::Descend)
        .expect("descent gradients");
    let (_, up) = batch_gradients(&p1.model, &batch, &pipeline_cfg.batching, &trainable, Objective::Ascend { alpha })
        .expect("ascent gradients");
    let mut worst_gap = 0.0f64;
    let mut count = 0usize;
    for (name, d) in &down {
        for (g_down, g_up) in d.iter().zip(&up[name]) {
            worst_gap = worst_gap.max((f64::from(*g_up) + alpha * f64::from(*g_down)).abs());
            count += 1;
        }
    }
    ledger.record(
        "5",
        "ascent gradient = -alpha x descent gradient",
        worst_gap <= SIGN_LAW_TOL && count > 0 && down.len() == trainable.len(),
        false,
        format!("max |g_neg + {alpha} g_pos| = {worst_gap:.2e} over {count} elements (<= {SIGN_LAW_TOL:.0e})"),
    );

    // 6. Utility preservation.
    let ppl_ratio = fin.eval.retain_val_ppl / p1.eval.retain_val_ppl;
    let benign_drop = p1.eval.benign_accuracy - fin.eval.benign_accuracy;
    ledger.record(
        "6",
        "utility preserved",
        ppl_ratio <= MAX_PPL_RATIO && benign_drop <= MAX_BENIGN_DROP + 1e-12,
        false,
        format!(
            "retain ppl {:.4} -> {:.4} (x{ppl_ratio:.3}, <= {MAX_PPL_RATIO}), benign acc {:.2} -> {:.2} (drop <= {MAX_BENIGN_DROP})",
            p1.eval.retain_val_ppl, fin.eval.retain_val_ppl, p1.eval.benign_accuracy, fin.eval.benign_accuracy
        ),
    );

    // 7. Behavioural suppression.
    let (pre, post) = (p1.eval.sensitive_emission_rate, fin.eval.sensitive_emission_rate);
    ledger.record(
        "7",
        "sensitive emission suppressed",
        pre >= MIN_PRE_EMISSION && post <= MAX_EMISSION_RATIO * pre,
        false,
        format!("emission rate {pre:.2} -> {post:.2} (pre >= {MIN_PRE_EMISSION}, post <= {MAX_EMISSION_RATIO} x pre)"),
    );

    // 8. Stabilization recovery.
    let stab = out.report.phase(Phase::Stabilize).expect("stabilize summary");
    let max_epochs = cfg.phases.stabilize.epochs;
    let (v1, vf) = (p1.eval.retain_val_nll, fin.eval.retain_val_nll);
    ledger.record(
        "8",
        "stabilization recovers retain loss",
        vf <= v1 * (1.0 + STABILIZE_TOL) && stab.stopped_early && stab.epochs_run <= max_epochs,
        false,
        format!(
            "retain val loss post-P1 {v1:.4}, post-P2 {:.4}, final {vf:.4} (<= {:.4}); early stop after {} of {max_epochs} epochs, best epoch {:?}",
            p2.eval.retain_val_nll,
            v1 * (1.0 + STABILIZE_TOL),
            stab.epochs_run,
            stab.best_epoch
        ),
    );

    // 9. Perplexity identity.
    let batching = pipeline_cfg.batching;
    let nll = mean_nll(out.final_model(), &corpora.retain_val, &batching).expect("nll");
    let ppl = perplexity(out.final_model(), &corpora.retain_val, &batching).expect("ppl");
    let identity = ((ppl - nll.exp()) / ppl).abs();
    let uniform = perplexity(&uniform_model(), &corpora.retain_val, &batching).expect("uniform ppl");
    ledger.record(
        "9",
        "perplexity identity",
        identity <= PPL_IDENTITY_TOL && (uniform - VOCAB_SIZE as f64).abs() <= UNIFORM_PPL_TOL,
        false,
        format!("|ppl - exp(nll)|/ppl = {identity:.1e}; uniform-logit ppl {uniform:.6} (vocab {VOCAB_SIZE})"),
    );

    // 10 and 11: an independent replica of the same run inside the capacity
    // comparison, next to the small config.
    let cap_start = Instant::now();
    let cap = compare_capacity(
        [("large", cfg.model.clone()), ("small", cfg.small_model.clone())],
        Some(&cfg.phases.pretrain),
        &corpora,
        &pipeline_cfg,
        &suite,
    )
    .expect("capacity comparison");
    println!("     capacity comparison in {:.1?}", cap_start.elapsed());
    for line in cap.table().lines() {
        println!("     {line}");
    }

    let first = encode_checkpoint(out.final_model(), None).expect("encode");
    let replica = encode_checkpoint(&cap.models[0], None).expect("encode");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("final.ckpt");
    save_checkpoint(out.final_model(), None, &path).expect("save");
    let loaded = load_checkpoint(&path).expect("load").model;
    let nll_back = mean_nll(&loaded, &corpora.retain_val, &batching).expect("nll");
    let ppl_back = perplexity(&loaded, &corpora.retain_val, &batching).expect("ppl");
    ledger.record(
        "10",
        "determinism and persistence",
        first == replica && nll_back.to_bits() == nll.to_bits() && ppl_back.to_bits() == ppl.to_bits(),
        false,
        format!(
            "replica checkpoint {} ({} bytes); reloaded ppl {ppl_back} vs {ppl}",
            if first == replica { "identical" } else { "differs" },
            first.len()
        ),
    );

    let (large, small) = (cap.row("large").unwrap(), cap.row("small").unwrap());
    ledger.record(
        "11",
        "capacity ordering (soft)",
        large.ppl <= small.ppl,
        true,
        format!("large ppl {:.4} vs small ppl {:.4}", large.ppl, small.ppl),
    );

    let elapsed = total.elapsed();
    ledger.record(
        "--",
        "total runtime",
        elapsed < TOTAL_BUDGET,
        true,
        format!("{elapsed:.1?} (target < {TOTAL_BUDGET:?})"),
    );
    println!(
        "acceptance: {} failed, {} warnings",
        ledger.failures, ledger.warnings
    );
    if ledger.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
