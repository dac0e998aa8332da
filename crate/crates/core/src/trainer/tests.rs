use std::collections::BTreeSet;

use super::*;
use crate::data::{generate_forget, generate_retain, split_train_val, CorpusSpec, Example};
use crate::eval::{mean_nll, ProbeSuite};
use crate::model::{select_trainable, FreezePolicy, ModelConfig, TransformerModel};
use crate::Error;

fn tiny() -> TransformerModel {
    TransformerModel::init(ModelConfig {
        context_len: 96,
        d_model: 16,
        n_heads: 2,
        ..ModelConfig::gradcheck()
    })
    .unwrap()
}

fn batching() -> Batching {
    Batching {
        max_in: 48,
        max_out: 48,
        mask_prompt: true,
    }
}

fn retain(n: usize) -> Vec<Example> {
    generate_retain(&CorpusSpec::new(n, 1)).unwrap()
}

fn forget(n: usize) -> Vec<Example> {
    generate_forget(&CorpusSpec::new(n, 2)).unwrap()
}

#[test]
fn positive_phase_lowers_loss_and_is_deterministic() {
    let data = retain(48);
    let cfg = PhaseConfig::new(Phase::Positive, 3e-3, 3, 8).with_seed(4);
    let run = |m: &mut TransformerModel| Trainer::new(batching()).run_positive_phase(m, &data, &cfg).unwrap();
    let (mut a, mut b) = (tiny(), tiny());
    let ra = run(&mut a);
    let rb = run(&mut b);
    assert_eq!(a, b);
    assert_eq!(ra.report.without_timing(), rb.report.without_timing());
    let losses: Vec<f64> = ra.report.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(ra.optimizer.step(), 3 * 6);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = retain(16);
    let mut m = tiny();
    let before = m.clone();
    let run = Trainer::new(batching())
        .run_positive_phase(&mut m, &data, &PhaseConfig::new(Phase::Positive, 0.0, 2, 4))
        .unwrap();
    assert_eq!(m, before);
    // Batches are reshuffled per epoch and each batch loss is an f32 reduction.
    let l: Vec<f64> = run.report.epochs.iter().map(|e| e.train_loss).collect();
    assert!((l[0] - l[1]).abs() < 1e-5 * l[0], "{l:?}");
}

#[test]
fn empty_corpora_and_wrong_phases_are_rejected() {
    let mut m = tiny();
    let mut t = Trainer::new(batching());
    let pos = PhaseConfig::new(Phase::Positive, 1e-3, 1, 4);
    assert!(t.run_positive_phase(&mut m, &[], &pos).is_err());
    assert!(t.run_negative_phase(&mut m, &[], &PhaseConfig::negative(1e-3, 0.1, 1, 4)).is_err());
    let stab = PhaseConfig::stabilize(1e-3, 2, 4, EarlyStop::default());
    assert!(t.run_stabilization(&mut m, &retain(8), &[], &stab).is_err());
    assert!(matches!(t.run_negative_phase(&mut m, &forget(8), &pos), Err(Error::Phase(_))));
}

#[test]
fn config_validation() {
    let bad = [
        PhaseConfig::negative(1e-3, -0.1, 1, 4),
        PhaseConfig::new(Phase::Positive, 1e-3, 0, 4),
        PhaseConfig::new(Phase::Positive, 1e-3, 1, 0),
        PhaseConfig::new(Phase::Positive, -1.0, 1, 4),
        PhaseConfig {
            freeze_policy: FreezePolicy::top_two(),
            ..PhaseConfig::new(Phase::Stabilize, 1e-3, 1, 4)
        },
        PhaseConfig::stabilize(1e-3, 3, 4, EarlyStop { patience: 0, min_delta: 0.0 }),
        PhaseConfig {
            early_stop: None,
            ..PhaseConfig::stabilize(1e-3, 3, 4, EarlyStop::default())
        },
        PhaseConfig {
            early_stop: Some(EarlyStop::default()),
            ..PhaseConfig::new(Phase::Positive, 1e-3, 1, 4)
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    PhaseConfig::negative(1e-3, 0.0, 0, 4).validate().unwrap();
}

#[test]
fn negative_phase_freezes_and_ascends() {
    let data = forget(40);
    let mut m = tiny();
    let before = m.clone();
    let cfg = PhaseConfig::negative(1e-3, 0.5, 20, 8);
    let run = Trainer::new(batching()).run_negative_phase(&mut m, &data, &cfg).unwrap();
    let trainable = select_trainable(&m, FreezePolicy::top_two()).unwrap();
    for (name, t) in m.parameters() {
        let old = before.param(name).unwrap();
        if trainable.contains(name) {
            assert_ne!(old, t, "{name} should move");
        } else {
            assert!(old.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
        }
    }
    let s = run.report.phase(Phase::Negative).unwrap();
    assert_eq!(s.steps, 100);
    assert_eq!(s.batch_losses.len(), 100);
    assert!(s.forget_nll_after.unwrap() > s.forget_nll_before.unwrap());
    assert_eq!(run.optimizer.moments().len(), trainable.len());
}

#[test]
fn zero_alpha_or_zero_epochs_is_a_no_op() {
    let data = forget(16);
    for cfg in [PhaseConfig::negative(1e-3, 0.0, 2, 4), PhaseConfig::negative(1e-3, 0.3, 0, 4)] {
        let mut m = tiny();
        let before = m.clone();
        let run = Trainer::new(batching()).run_negative_phase(&mut m, &data, &cfg).unwrap();
        assert_eq!(m, before);
        let s = &run.report.phases[0];
        assert_eq!(s.forget_nll_before, s.forget_nll_after);
    }
}

#[test]
fn ascent_gradient_is_scaled_negated_descent_gradient() {
    let m = tiny();
    let data = forget(6);
    let trainable = select_trainable(&m, FreezePolicy::top_two()).unwrap();
    let alpha = 0.05;
    let (ce_d, down) = batch_gradients(&m, &data, &batching(), &trainable, Objective::Descend).unwrap();
    let (ce_a, up) = batch_gradients(&m, &data, &batching(), &trainable, Objective::Ascend { alpha }).unwrap();
    assert_eq!(ce_d, ce_a);
    assert_eq!(down.keys().collect::<BTreeSet<_>>(), trainable.iter().collect());
    for (name, g) in &down {
        for (d, a) in g.iter().zip(&up[name]) {
            assert!((f64::from(*a) + alpha * f64::from(*d)).abs() <= 1e-7, "{name}: {a} vs {d}");
        }
    }
}

#[test]
fn stabilization_restores_the_best_weights() {
    let all = retain(60);
    let (train, val) = split_train_val(&all, 0.2, 1).unwrap();
    let mut m = tiny();
    let entry = mean_nll(&m, &val, &batching()).unwrap();
    // A huge step size makes validation loss worse, so the entry weights win.
    let cfg = PhaseConfig::stabilize(0.5, 4, 8, EarlyStop { patience: 1, min_delta: 0.0 });
    let before = m.clone();
    let run = Trainer::new(batching()).run_stabilization(&mut m, &train, &val, &cfg).unwrap();
    let s = run.report.phase(Phase::Stabilize).unwrap();
    assert!(s.exit_val_loss.unwrap() <= entry);
    assert!(s.epochs_run <= 4);
    if s.best_epoch == Some(0) {
        assert_eq!(m, before);
    }
    assert!((mean_nll(&m, &val, &batching()).unwrap() - s.exit_val_loss.unwrap()).abs() < 1e-12);

    let mut m = tiny();
    let cfg = PhaseConfig::stabilize(3e-3, 3, 8, EarlyStop::default());
    let run = Trainer::new(batching()).run_stabilization(&mut m, &train, &val, &cfg).unwrap();
    let s = &run.report.phases[0];
    assert!(s.epochs_run <= 3);
    assert!(s.exit_val_loss.unwrap() <= s.entry_val_loss.unwrap());
    assert!(run.report.epochs.iter().all(|e| e.val_loss.is_some()));
}

#[test]
fn epoch_callback_sees_every_epoch() {
    let mut seen = Vec::new();
    {
        let mut t = Trainer::new(batching()).with_label("x").on_epoch(|r| {
            seen.push((r.phase, r.epoch, r.model.clone()));
            Ok(())
        });
        t.run_pretrain(&mut tiny(), &retain(8), &PhaseConfig::new(Phase::Pretrain, 1e-3, 2, 4)).unwrap();
    }
    assert_eq!(
        seen,
        vec![(Phase::Pretrain, 1, Some("x".into())), (Phase::Pretrain, 2, Some("x".into()))]
    );
}

fn corpora() -> Corpora {
    let (retain_train, retain_val) = split_train_val(&retain(40), 0.25, 0).unwrap();
    Corpora {
        retain_train,
        retain_val,
        forget: forget(16),
    }
}

fn pipeline_cfg(negative_epochs: usize) -> PipelineConfig {
    PipelineConfig {
        positive: PhaseConfig::new(Phase::Positive, 1e-3, 1, 8),
        negative: PhaseConfig::negative(1e-3, 0.1, negative_epochs, 8),
        stabilize: PhaseConfig::stabilize(1e-3, 2, 8, EarlyStop::default()),
        batching: batching(),
        max_new: 4,
    }
}

#[test]
fn pipeline_structure() {
    let suite = ProbeSuite::standard(&CorpusSpec::new(1, 0), 0).unwrap();
    let mut names = Vec::new();
    let out = run_pipeline(tiny(), &corpora(), &pipeline_cfg(1), &suite, &mut Trainer::new(batching()), |s| {
        names.push(s.name);
        Ok(())
    })
    .unwrap();
    assert_eq!(names, SNAPSHOT_NAMES);
    assert_eq!(out.snapshots.len(), 4);
    let phases: Vec<Phase> = out.report.phases.iter().map(|p| p.phase).collect();
    assert_eq!(phases, [Phase::Positive, Phase::Negative, Phase::Stabilize]);
    assert_eq!(out.report.status, RunStatus::Completed);
    assert!(out.snapshot("init").unwrap().optimizer.is_none());
    assert_eq!(out.final_model(), &out.snapshot("final").unwrap().model);
}

#[test]
fn skipped_negative_phase_keeps_forget_loss() {
    let suite = ProbeSuite::standard(&CorpusSpec::new(1, 0), 0).unwrap();
    let out = run_pipeline(tiny(), &corpora(), &pipeline_cfg(0), &suite, &mut Trainer::new(batching()), |_| Ok(()))
        .unwrap();
    let p1 = out.snapshot("post_p1").unwrap();
    let p2 = out.snapshot("post_p2").unwrap();
    assert!((p1.eval.forget_mean_nll - p2.eval.forget_mean_nll).abs() < 1e-6);
    assert_eq!(p1.model, p2.model);
}

#[test]
fn pipeline_rejects_misordered_phases() {
    let suite = ProbeSuite::standard(&CorpusSpec::new(1, 0), 0).unwrap();
    let mut cfg = pipeline_cfg(1);
    std::mem::swap(&mut cfg.positive, &mut cfg.stabilize);
    let r = run_pipeline(tiny(), &corpora(), &cfg, &suite, &mut Trainer::new(batching()), |_| Ok(()));
    assert!(matches!(r, Err(Error::Phase(_))));
}
