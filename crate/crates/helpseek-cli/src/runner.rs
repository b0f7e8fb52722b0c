//! Command implementations: warm-start corpus construction, training, and
//! dual-mode evaluation, all writing stamped artifacts under the output
//! directory.

use crate::artifacts::{
    self, ensure_dir, AbstentionReportFile, FileSink, JsonlHeader, SearchReportFile,
    TrainManifest, CORPUS_FORMAT, TRAJECTORY_FORMAT,
};
use crate::config::ResolvedConfig;
use anyhow::{bail, Result};
use helpseek::eval::{self, AbstentionReport, SearchModeReport};
use helpseek::grpo::{self, TrainOutcome};
use helpseek::policy::PolicyTable;
use helpseek::seed::derive_seed;
use helpseek::warmstart::{self, CorpusRecord};
use helpseek::world::{self, QuestionSpec};
use std::path::{Path, PathBuf};

pub struct WarmstartArtifacts {
    pub corpus_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub corpus: Vec<CorpusRecord>,
    pub init_policy: PolicyTable,
    pub l_histogram: Vec<(u32, usize)>,
}

/// Build the warm-start corpus and the cloned (or uniform, when disabled)
/// initial checkpoint.
pub fn run_warmstart(cfg: &ResolvedConfig) -> Result<WarmstartArtifacts> {
    let out = ensure_dir(cfg.out_dir())?;
    write_resolved_config(cfg, &out)?;
    let header = header_for(cfg, CORPUS_FORMAT);

    let corpus_path = out.join("corpus.jsonl");
    let (corpus, init_policy) = if cfg.experiment.warmstart.enabled {
        let ws = cfg.warmstart_config();
        let corpus = warmstart::generate_corpus(&cfg.world, &ws)?;
        artifacts::write_jsonl(&corpus_path, &header, &corpus)?;
        // Clone from the file contents, so the on-disk format is what feeds
        // the initial policy.
        let (_, rows) = artifacts::read_corpus(&corpus_path)?;
        let policy = warmstart::behavior_clone(&rows, &cfg.world)?;
        (rows, policy)
    } else {
        artifacts::write_jsonl::<CorpusRecord>(&corpus_path, &header, &[])?;
        (Vec::new(), PolicyTable::uniform(&cfg.world))
    };
    let checkpoint_path = out.join("checkpoint_init.json");
    artifacts::save_checkpoint(
        &checkpoint_path,
        &init_policy,
        &cfg.world_hash,
        0,
        &cfg.config_hash,
        cfg.seed(),
    )?;

    let l_max = cfg.experiment.warmstart.l_max;
    let mut l_histogram = Vec::new();
    for l in 0..=l_max {
        let count = corpus.iter().filter(|r| r.l_target == l).count();
        l_histogram.push((l, count));
    }
    if corpus.is_empty() {
        println!("warm-start disabled: wrote uniform-logit checkpoint");
    } else {
        println!(
            "warm-start corpus: {} rows, correct {:.1}%",
            corpus.len(),
            100.0 * corpus.iter().filter(|r| r.correct).count() as f64 / corpus.len() as f64
        );
        for (l, count) in &l_histogram {
            println!(
                "  l={l}: {count} ({:.1}%)",
                100.0 * *count as f64 / corpus.len() as f64
            );
        }
    }
    Ok(WarmstartArtifacts {
        corpus_path,
        checkpoint_path,
        corpus,
        init_policy,
        l_histogram,
    })
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub manifest: TrainManifest,
    pub best_checkpoint_path: PathBuf,
    pub final_checkpoint_path: PathBuf,
}

/// Run GRPO training from the initial checkpoint (an explicit `--checkpoint`
/// path, the output of a prior `warmstart` run in the same directory, or a
/// uniform table when warm-start is disabled).
pub fn run_train(cfg: &ResolvedConfig, checkpoint: Option<&Path>) -> Result<TrainArtifacts> {
    let out = ensure_dir(cfg.out_dir())?;
    write_resolved_config(cfg, &out)?;

    let init_policy = match checkpoint {
        Some(path) => load_matching_checkpoint(cfg, path)?,
        None => {
            let default_path = out.join("checkpoint_init.json");
            if default_path.exists() {
                load_matching_checkpoint(cfg, &default_path)?
            } else if cfg.experiment.warmstart.enabled {
                bail!(
                    "no initial checkpoint at {}; run `helpseek warmstart` first or pass --checkpoint",
                    default_path.display()
                );
            } else {
                PolicyTable::uniform(&cfg.world)
            }
        }
    };

    let reward_config = cfg.reward_config()?;
    let train_config = cfg.train_config();
    let header = header_for(cfg, "train-log/v1");
    let mut sink = FileSink::create(
        &out.join("train_log.jsonl"),
        &out.join("val_log.jsonl"),
        &header,
    )?;
    let outcome =
        match grpo::train(&cfg.world, &init_policy, &reward_config, &train_config, &mut sink) {
            Ok(outcome) => outcome,
            Err(err) => {
                // Step logs are already flushed; mark the run as failed.
                artifacts::write_json(
                    &out.join("failure.json"),
                    &serde_json::json!({
                        "error": err.to_string(),
                        "config_hash": cfg.config_hash,
                        "seed": cfg.seed(),
                    }),
                )?;
                return Err(err.into());
            }
        };

    let best_checkpoint_path = out.join("checkpoint_best.json");
    artifacts::save_checkpoint(
        &best_checkpoint_path,
        &outcome.best_policy,
        &cfg.world_hash,
        outcome.best_step.unwrap_or(0),
        &cfg.config_hash,
        cfg.seed(),
    )?;
    let final_checkpoint_path = out.join("checkpoint_final.json");
    artifacts::save_checkpoint(
        &final_checkpoint_path,
        &outcome.final_policy,
        &cfg.world_hash,
        train_config.steps,
        &cfg.config_hash,
        cfg.seed(),
    )?;

    let manifest = TrainManifest {
        best_step: outcome.best_step,
        best_val_tp: outcome.best_val_tp,
        final_step: train_config.steps,
        checkpoint_best: "checkpoint_best.json".into(),
        checkpoint_final: "checkpoint_final.json".into(),
        config_hash: cfg.config_hash.clone(),
        world_preset_hash: cfg.world_hash.clone(),
        seed: cfg.seed(),
    };
    artifacts::write_json(&out.join("manifest.json"), &manifest)?;

    if let (Some(step), Some(tp)) = (outcome.best_step, outcome.best_val_tp) {
        println!(
            "training done: {} steps, best checkpoint at step {step} (validation TP {tp:.4})",
            train_config.steps
        );
    } else {
        println!("training done: {} steps (no validation evals)", train_config.steps);
    }
    Ok(TrainArtifacts {
        outcome,
        manifest,
        best_checkpoint_path,
        final_checkpoint_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Search,
    Abstain,
}

pub enum EvalArtifacts {
    Search(SearchModeReport),
    Abstain(AbstentionReport),
}

/// Evaluate a checkpoint in one of the two inference modes and write the
/// report files.
pub fn run_eval(
    cfg: &ResolvedConfig,
    checkpoint: &Path,
    mode: EvalMode,
) -> Result<EvalArtifacts> {
    let out = ensure_dir(cfg.out_dir())?;
    write_resolved_config(cfg, &out)?;
    let policy = load_matching_checkpoint(cfg, checkpoint)?;
    let questions = eval_questions(cfg);
    let header = header_for(cfg, TRAJECTORY_FORMAT);

    match mode {
        EvalMode::Search => {
            let outcome = eval::eval_search_mode(
                &policy,
                &cfg.world,
                &questions,
                cfg.experiment.eval.samples_per_q,
                derive_seed(cfg.seed(), "eval-search-mode", &[]),
            )?;
            artifacts::write_trajectories(
                &out.join("trajectories_search.jsonl"),
                &header,
                &outcome.trajectories,
            )?;
            artifacts::write_json(
                &out.join("report_search.json"),
                &SearchReportFile {
                    report: outcome.report.clone(),
                    config_hash: cfg.config_hash.clone(),
                    world_preset_hash: cfg.world_hash.clone(),
                    seed: cfg.seed(),
                },
            )?;
            artifacts::write_bucket_csv(&out.join("tc_buckets.csv"), &outcome.report)?;
            print_search_report(&outcome.report);
            Ok(EvalArtifacts::Search(outcome.report))
        }
        EvalMode::Abstain => {
            let profile = eval::answerability_profile(
                &cfg.world,
                &questions,
                cfg.experiment.eval.k_samples,
                cfg.experiment.eval.lambda_ans,
                derive_seed(cfg.seed(), "profile", &[]),
            )?;
            let outcome = eval::eval_abstention_mode(
                &policy,
                &cfg.world,
                &questions,
                &profile,
                cfg.experiment.eval.samples_per_q,
                derive_seed(cfg.seed(), "eval-abstain-mode", &[]),
            )?;
            artifacts::write_trajectories(
                &out.join("trajectories_abstain.jsonl"),
                &header,
                &outcome.trajectories,
            )?;
            artifacts::write_json(
                &out.join("report_abstain.json"),
                &AbstentionReportFile {
                    report: outcome.report.clone(),
                    config_hash: cfg.config_hash.clone(),
                    world_preset_hash: cfg.world_hash.clone(),
                    seed: cfg.seed(),
                },
            )?;
            print_abstention_report(&outcome.report);
            Ok(EvalArtifacts::Abstain(outcome.report))
        }
    }
}

/// Sample the evaluation question set for this config.
pub fn eval_questions(cfg: &ResolvedConfig) -> Vec<QuestionSpec> {
    let mut rng = helpseek::seed::stream(cfg.seed(), "eval-q", &[]);
    (0..cfg.experiment.eval.num_questions)
        .map(|_| world::sample_question(&cfg.world, &mut rng).expect("validated world samples"))
        .collect()
}

fn load_matching_checkpoint(cfg: &ResolvedConfig, path: &Path) -> Result<PolicyTable> {
    let (policy, ckpt) = artifacts::load_checkpoint(path)?;
    if ckpt.world_preset_hash != cfg.world_hash {
        bail!(
            "checkpoint {} was trained against world {} but this config resolves to world {}",
            path.display(),
            ckpt.world_preset_hash,
            cfg.world_hash
        );
    }
    Ok(policy)
}

fn write_resolved_config(cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Stamped<'a> {
        config_hash: &'a str,
        world_preset_hash: &'a str,
        #[serde(flatten)]
        experiment: &'a crate::config::ExperimentConfig,
    }
    artifacts::write_json(
        &out.join("resolved_config.json"),
        &Stamped {
            config_hash: &cfg.config_hash,
            world_preset_hash: &cfg.world_hash,
            experiment: &cfg.experiment,
        },
    )
}

fn header_for(cfg: &ResolvedConfig, format: &str) -> JsonlHeader {
    JsonlHeader {
        format: format.to_string(),
        config_hash: cfg.config_hash.clone(),
        seed: cfg.seed(),
        world_preset_hash: cfg.world_hash.clone(),
    }
}

fn print_search_report(report: &SearchModeReport) {
    println!("search-mode evaluation ({} records)", report.num_records);
    println!(
        "  acc {:.4}  tc {:.3}  tp {:.4}",
        report.accuracy, report.mean_tool_calls, report.tool_productivity
    );
    for (label, bucket) in [
        ("tc=0 ", report.bucket_zero),
        ("tc=1 ", report.bucket_one),
        ("tc=2+", report.bucket_two_plus),
    ] {
        match bucket.accuracy {
            Some(acc) => println!(
                "  {label} fraction {:.3} accuracy {:.3}",
                bucket.fraction, acc
            ),
            None => println!("  {label} fraction {:.3} accuracy n/a", bucket.fraction),
        }
    }
}

fn print_abstention_report(report: &AbstentionReport) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    println!("abstention-mode evaluation ({} records)", report.num_records);
    println!(
        "  acc {:.4}  precision {}  abstain-rate {:.3}",
        report.overall_accuracy,
        report
            .precision
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.abstain_rate
    );
    println!(
        "  abs0 {}%  abs1 {}%  delta {}  (buckets: {} / {})",
        fmt(report.abs0_pct),
        fmt(report.abs1_pct),
        fmt(report.delta),
        report.num_always_incorrect,
        report.num_always_correct
    );
}
