//! Command implementations behind the `sequnlearn` binary.
//!
//! Every command reads a [`RunConfig`] resolved from `--config`, `--preset`,
//! the environment and the remaining flags, and writes into `--workdir`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | bad command line |
//! | 3 | invalid configuration |
//! | 4 | data or corpus failure |
//! | 5 | training failure |
//! | 6 | evaluation failure |
//! | 7 | I/O or checkpoint failure |

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{self, Overrides, Preset, RunConfig};
use crate::error::Error;
use crate::eval::{self, compare_capacity, evaluate, probe_emission_rate, EvalInputs, EvalReport};
use crate::model::TransformerModel;
use crate::persistence::{
    append_metrics, load_checkpoint, read_metrics, save_checkpoint, write_atomic, write_corpus,
    write_jsonl, MetricsRecord,
};
use crate::trainer::{run_pipeline, Corpora, OptimizerState, Phase, PhaseRun, RunReport, Trainer, SNAPSHOT_NAMES};

/// Failure classes, each with its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Train,
    Eval,
    Io,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 3,
            Stage::Data => 4,
            Stage::Train => 5,
            Stage::Eval => 6,
            Stage::Io => 7,
        }
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct Failure {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        self.stage.exit_code()
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> StageExt<T> for crate::Result<T> {
    fn stage(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|source| {
            // File and checkpoint problems are I/O failures wherever they surface.
            let stage = match source {
                Error::Io { .. } | Error::BadMagic { .. } | Error::UnsupportedVersion { .. } | Error::Integrity { .. } => {
                    Stage::Io
                }
                _ => stage,
            };
            Failure { stage, source }
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "sequnlearn", version, about = "Sequential unlearning for small transformers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset the config file is layered over.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for checkpoints, metrics and reports.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Input checkpoint; defaults to the previous stage's checkpoint in the workdir.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output path; defaults to a name inside the workdir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write the retain train/val and forget corpora as JSONL.
    GenData,
    /// Train the base model from scratch on retain + forget.
    Pretrain,
    /// Positive fine-tuning on the retain corpus.
    Train,
    /// Layer-restricted gradient ascent on the forget corpus.
    Unlearn,
    /// Retain fine-tuning with early stopping.
    Stabilize,
    /// Perplexity, forget NLL and probe rates of a checkpoint.
    Eval,
    /// Greedy-decode the probe suite and write transcripts.
    Probe,
    /// Pretrain (unless --checkpoint is given), then all three phases.
    Pipeline,
    /// Run the pipeline for the large and small model and tabulate them.
    CompareCapacity,
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

/// Runs one command.
pub fn run(common: &Common, command: Command) -> Result<(), Failure> {
    let overrides = Overrides {
        preset: common.preset,
        seed: common.seed,
        workdir: common.workdir.clone(),
    };
    let cfg = config::resolve(common.config.as_deref(), &overrides).stage(Stage::Config)?;
    let ctx = Context { cfg, common };
    ctx.prepare_workdir()?;
    match command {
        Command::GenData => ctx.gen_data(),
        Command::Pretrain => ctx.pretrain(),
        Command::Train => ctx.phase(Phase::Positive),
        Command::Unlearn => ctx.phase(Phase::Negative),
        Command::Stabilize => ctx.phase(Phase::Stabilize),
        Command::Eval => ctx.eval(),
        Command::Probe => ctx.probe(),
        Command::Pipeline => ctx.pipeline(),
        Command::CompareCapacity => ctx.compare_capacity(),
    }
}

/// Checkpoint file written after `name` (`init`, `post_p1`, `post_p2`, `final`).
pub fn checkpoint_name(name: &str) -> String {
    format!("{name}.ckpt")
}

struct Context<'a> {
    cfg: RunConfig,
    common: &'a Common,
}

impl Context<'_> {
    fn workdir(&self) -> &Path {
        &self.cfg.paths.workdir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.workdir().join(name)
    }

    fn prepare_workdir(&self) -> Result<(), Failure> {
        let dir = self.workdir();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage(Stage::Io)?;
        let text = self.cfg.to_toml().stage(Stage::Config)?;
        write_atomic(&self.path("config.toml"), text.as_bytes()).stage(Stage::Io)
    }

    fn corpora(&self) -> Result<Corpora, Failure> {
        self.cfg.data.corpora().stage(Stage::Data)
    }

    fn load(&self, default: &str) -> Result<TransformerModel, Failure> {
        let path = self
            .common
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.path(&checkpoint_name(default)));
        let ckpt = load_checkpoint(&path).stage(Stage::Io)?;
        log::info!("loaded {}", path.display());
        Ok(ckpt.model)
    }

    fn save(&self, model: &TransformerModel, opt: Option<&OptimizerState>, default: &str) -> Result<PathBuf, Failure> {
        let path = self
            .common
            .out
            .clone()
            .unwrap_or_else(|| self.path(&checkpoint_name(default)));
        save_checkpoint(model, opt, &path).stage(Stage::Io)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Drops earlier records of `phases` from the metrics log so reruns do
    /// not duplicate them.
    fn reset_metrics(&self, phases: &[Phase]) -> Result<(), Failure> {
        let path = self.cfg.metrics_path();
        if !path.exists() {
            return Ok(());
        }
        let kept: Vec<MetricsRecord> = read_metrics(&path)
            .stage(Stage::Data)?
            .into_iter()
            .filter(|r| match r {
                MetricsRecord::Epoch(e) => !phases.contains(&e.phase),
                MetricsRecord::Phase(p) => !phases.contains(&p.phase),
            })
            .collect();
        write_jsonl(&kept, &path).stage(Stage::Io)
    }

    fn trainer(&self) -> Trainer<'static> {
        let path = self.cfg.metrics_path();
        Trainer::new(self.cfg.data.batching())
            .on_epoch(move |rec| append_metrics(&[MetricsRecord::Epoch(rec.clone())], &path))
    }

    fn log_phases(&self, report: &RunReport) -> Result<(), Failure> {
        let phases: Vec<MetricsRecord> = report.phases.iter().cloned().map(MetricsRecord::Phase).collect();
        append_metrics(&phases, self.cfg.metrics_path()).stage(Stage::Io)
    }

    fn gen_data(&self) -> Result<(), Failure> {
        let dir = self.common.out.clone().unwrap_or_else(|| self.path("data"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage(Stage::Io)?;
        let c = self.corpora()?;
        for (name, set) in [
            ("retain_train", &c.retain_train),
            ("retain_val", &c.retain_val),
            ("forget", &c.forget),
        ] {
            let path = dir.join(format!("{name}.jsonl"));
            write_corpus(set, &path).stage(Stage::Io)?;
            println!("{:<14} {:>5} examples -> {}", name, set.len(), path.display());
        }
        Ok(())
    }

    fn pretrain(&self) -> Result<(), Failure> {
        let c = self.corpora()?;
        self.reset_metrics(&[Phase::Pretrain])?;
        let mut model = TransformerModel::init(self.cfg.model.clone()).stage(Stage::Config)?;
        let run = self
            .trainer()
            .run_pretrain(&mut model, &c.mixed(), &self.cfg.phases.pretrain)
            .stage(Stage::Train)?;
        self.log_phases(&run.report)?;
        self.save(&model, Some(&run.optimizer), SNAPSHOT_NAMES[0])?;
        Ok(())
    }

    fn phase(&self, phase: Phase) -> Result<(), Failure> {
        let c = self.corpora()?;
        let (input, output) = match phase {
            Phase::Positive => (SNAPSHOT_NAMES[0], SNAPSHOT_NAMES[1]),
            Phase::Negative => (SNAPSHOT_NAMES[1], SNAPSHOT_NAMES[2]),
            _ => (SNAPSHOT_NAMES[2], SNAPSHOT_NAMES[3]),
        };
        if phase == Phase::Negative && !self.positive_phase_logged()? {
            log::warn!("no completed positive phase in the metrics log; unlearning a model that was not fine-tuned");
        }
        let mut model = self.load(input)?;
        self.reset_metrics(&[phase])?;
        let mut trainer = self.trainer();
        let p = &self.cfg.phases;
        let run: PhaseRun = match phase {
            Phase::Positive => trainer.run_positive_phase(&mut model, &c.retain_train, &p.positive),
            Phase::Negative => trainer.run_negative_phase(&mut model, &c.forget, &p.negative),
            _ => trainer.run_stabilization(&mut model, &c.retain_train, &c.retain_val, &p.stabilize),
        }
        .stage(Stage::Train)?;
        self.log_phases(&run.report)?;
        if let Some(s) = run.report.phases.first() {
            if let (Some(b), Some(a)) = (s.forget_nll_before, s.forget_nll_after) {
                println!("forget nll {b:.4} -> {a:.4}");
            }
            if let (Some(b), Some(a)) = (s.entry_val_loss, s.exit_val_loss) {
                println!("retain val loss {b:.4} -> {a:.4} (best epoch {:?})", s.best_epoch);
            }
        }
        self.save(&model, Some(&run.optimizer), output)?;
        Ok(())
    }

    fn positive_phase_logged(&self) -> Result<bool, Failure> {
        let path = self.cfg.metrics_path();
        if !path.exists() {
            return Ok(false);
        }
        Ok(read_metrics(&path)
            .stage(Stage::Data)?
            .iter()
            .any(|r| matches!(r, MetricsRecord::Phase(p) if p.phase == Phase::Positive)))
    }

    fn inputs<'a>(&self, c: &'a Corpora, suite: &'a eval::ProbeSuite) -> EvalInputs<'a> {
        EvalInputs {
            retain_val: &c.retain_val,
            forget: &c.forget,
            suite,
            batching: self.cfg.data.batching(),
            max_new: self.cfg.eval.max_new,
        }
    }

    fn label(&self) -> String {
        self.common
            .checkpoint
            .as_ref()
            .and_then(|p| p.file_stem())
            .map_or_else(|| SNAPSHOT_NAMES[3].to_string(), |s| s.to_string_lossy().into_owned())
    }

    fn eval(&self) -> Result<(), Failure> {
        let c = self.corpora()?;
        let suite = self.cfg.probe_suite().stage(Stage::Config)?;
        let model = self.load(SNAPSHOT_NAMES[3])?;
        let label = self.label();
        let report = evaluate(&model, &label, &self.inputs(&c, &suite)).stage(Stage::Eval)?;
        println!("{}", report.summary());
        let out = self
            .common
            .out
            .clone()
            .unwrap_or_else(|| self.path(&format!("eval_{label}.jsonl")));
        self.write_evals(std::slice::from_ref(&report), &out)
    }

    fn write_evals(&self, reports: &[EvalReport], out: &Path) -> Result<(), Failure> {
        let dir = self.path("transcripts");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage(Stage::Io)?;
        let mut stripped = Vec::with_capacity(reports.len());
        let mut table = String::new();
        for r in reports {
            write_jsonl(&r.transcripts, dir.join(format!("{}.jsonl", r.label))).stage(Stage::Io)?;
            stripped.push(EvalReport {
                transcripts: Vec::new(),
                ..r.clone()
            });
            table += &r.summary();
            table.push('\n');
        }
        write_jsonl(&stripped, out).stage(Stage::Io)?;
        write_atomic(&out.with_extension("txt"), table.as_bytes()).stage(Stage::Io)
    }

    fn probe(&self) -> Result<(), Failure> {
        let suite = self.cfg.probe_suite().stage(Stage::Config)?;
        let model = self.load(SNAPSHOT_NAMES[3])?;
        let outcome = probe_emission_rate(&model, &suite, self.cfg.eval.max_new).stage(Stage::Eval)?;
        for t in &outcome.transcripts {
            let mark = if t.flagged { "!" } else { " " };
            println!("{mark} {:<36} -> {}", t.prompt, t.output.trim());
        }
        println!(
            "sensitive emission rate {:.2}, benign accuracy {:.2}",
            outcome.sensitive_emission_rate, outcome.benign_accuracy
        );
        let out = self
            .common
            .out
            .clone()
            .unwrap_or_else(|| self.path(&format!("probe_{}.jsonl", self.label())));
        write_jsonl(&outcome.transcripts, &out).stage(Stage::Io)
    }

    fn pipeline(&self) -> Result<(), Failure> {
        let c = self.corpora()?;
        let suite = self.cfg.probe_suite().stage(Stage::Config)?;
        let metrics = self.cfg.metrics_path();
        if metrics.exists() {
            fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e)).stage(Stage::Io)?;
        }
        let mut trainer = self.trainer();
        let mut report = RunReport::default();
        let model = match &self.common.checkpoint {
            Some(_) => self.load(SNAPSHOT_NAMES[0])?,
            None => {
                let mut model = TransformerModel::init(self.cfg.model.clone()).stage(Stage::Config)?;
                let run = trainer
                    .run_pretrain(&mut model, &c.mixed(), &self.cfg.phases.pretrain)
                    .stage(Stage::Train)?;
                self.log_phases(&run.report)?;
                report.extend(run.report);
                model
            }
        };
        let mut io_error = None;
        let outcome = run_pipeline(model, &c, &self.cfg.pipeline(), &suite, &mut trainer, |snap| {
            let path = self.path(&checkpoint_name(snap.name));
            save_checkpoint(&snap.model, snap.optimizer.as_ref(), &path).inspect_err(|_| io_error = Some(Stage::Io))
        })
        .map_err(|source| Failure {
            stage: io_error.unwrap_or(Stage::Train),
            source,
        })?;
        self.log_phases(&outcome.report)?;
        report.extend(outcome.report);
        report.status = crate::trainer::RunStatus::Completed;
        let evals: Vec<EvalReport> = outcome.snapshots.iter().map(|s| s.eval.clone()).collect();
        self.write_evals(&evals, &self.path("evals.jsonl"))?;
        let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Parse(e.to_string())).stage(Stage::Io)?;
        write_atomic(&self.path("report.json"), &json).stage(Stage::Io)?;
        for e in &evals {
            println!("{}", e.summary());
        }
        Ok(())
    }

    fn compare_capacity(&self) -> Result<(), Failure> {
        let c = self.corpora()?;
        let suite = self.cfg.probe_suite().stage(Stage::Config)?;
        let report = compare_capacity(
            [("large", self.cfg.model.clone()), ("small", self.cfg.small_model.clone())],
            Some(&self.cfg.phases.pretrain),
            &c,
            &self.cfg.pipeline(),
            &suite,
        )
        .stage(Stage::Train)?;
        let table = report.table();
        print!("{table}");
        if !report.larger_is_better() {
            log::warn!("the large model did not reach a lower retain perplexity than the small one");
        }
        let out = self.common.out.clone().unwrap_or_else(|| self.path("capacity.json"));
        let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Parse(e.to_string())).stage(Stage::Io)?;
        write_atomic(&out, &json).stage(Stage::Io)?;
        write_atomic(&out.with_extension("txt"), table.as_bytes()).stage(Stage::Io)
    }
}
