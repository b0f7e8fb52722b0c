//! Canned experiments: seeded end-to-end runs emitting comparison tables and
//! plot-ready help-rate curves.

use crate::artifacts::{ensure_dir, write_json};
use crate::config::{ExperimentConfig, ResolvedConfig, WarmStartParams};
use crate::runner::{self, EvalMode};
use anyhow::{bail, Context, Result};
use helpseek::eval::{self, AbstentionReport, SearchModeReport};
use helpseek::grpo::TrainLogRecord;
use helpseek::policy::{Action, PolicyTable};
use helpseek::reward::RewardVariant;
use helpseek::seed::{derive_seed, stream};
use helpseek::world::{sample_question, QuestionSpec, WorldConfig};
use serde::Serialize;
use std::path::Path;

const VARIANTS: [RewardVariant; 3] = [
    RewardVariant::OtcStrict,
    RewardVariant::Exp,
    RewardVariant::Otc,
];

#[derive(Debug, Clone, Serialize)]
pub struct SelectiveSummary {
    pub variant: String,
    pub search: SearchModeReport,
    pub abstention: AbstentionReport,
    /// First-action search probability per question type, from the policy.
    pub first_action_search: Vec<TypeRate>,
    pub best_val_tp: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeRate {
    pub type_name: String,
    pub search_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRun {
    pub variant: String,
    pub seed: u64,
    pub first_step_at_95: Option<u64>,
    pub final_help_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCollapseSummary {
    pub runs: Vec<OracleRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRun {
    pub warmstart: bool,
    pub seed: u64,
    pub bucket_fractions: [f64; 3],
    pub max_bucket: f64,
    pub collapsed: bool,
    pub final_val_tp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    pub collapse_threshold: f64,
    pub runs: Vec<AblationRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub variant: String,
    pub accuracy: f64,
    pub mean_tool_calls: f64,
    pub tool_productivity: f64,
    pub precision: Option<f64>,
    pub abs0_pct: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeveritySweepSummary {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ReproduceOutcome {
    Selective(Box<SelectiveSummary>),
    OracleCollapse(OracleCollapseSummary),
    WarmstartAblation(AblationSummary),
    SeveritySweep(SeveritySweepSummary),
}

pub const EXPERIMENT_NAMES: [&str; 4] = [
    "selective",
    "oracle-collapse",
    "warmstart-ablation",
    "severity-sweep",
];

pub fn run_reproduce(name: &str, base: &ResolvedConfig) -> Result<ReproduceOutcome> {
    match name {
        "selective" => selective(base).map(|s| ReproduceOutcome::Selective(Box::new(s))),
        "oracle-collapse" => oracle_collapse(base).map(ReproduceOutcome::OracleCollapse),
        "warmstart-ablation" => warmstart_ablation(base).map(ReproduceOutcome::WarmstartAblation),
        "severity-sweep" => severity_sweep(base).map(ReproduceOutcome::SeveritySweep),
        other => bail!(
            "unknown experiment '{other}'; known: {}",
            EXPERIMENT_NAMES.join(", ")
        ),
    }
}

struct HelpRateCsv {
    rows: Vec<String>,
}

impl HelpRateCsv {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn add(&mut self, variant: &str, warmstart: bool, seed: u64, log: &[TrainLogRecord]) {
        for record in log {
            self.rows.push(format!(
                "{variant},{warmstart},{seed},{},{}",
                record.step, record.help_rate
            ));
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::from("variant,warmstart,seed,step,help_rate\n");
        for row in &self.rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Derive a sub-run config rooted under the experiment directory.
fn sub_config(
    base: &ResolvedConfig,
    dir: &Path,
    seed: u64,
    mutate: impl FnOnce(&mut ExperimentConfig),
) -> Result<ResolvedConfig> {
    let mut experiment = base.experiment.clone();
    experiment.out_dir = dir.to_path_buf();
    experiment.seed = seed;
    mutate(&mut experiment);
    crate::config::resolve(experiment)
}

fn first_action_rates(policy: &PolicyTable, world: &WorldConfig) -> Vec<TypeRate> {
    world
        .types
        .iter()
        .map(|t| {
            let state = policy
                .state_index(t.type_id, 0, 0)
                .expect("type within table");
            TypeRate {
                type_name: t.name.clone(),
                search_rate: policy.action_prob(state).expect("valid state")
                    [Action::Search.index()],
            }
        })
        .collect()
}

/// Warm-start + strict-penalty training on the default preset, evaluated in
/// both inference modes: the selective help-seeking emergence run.
fn selective(base: &ResolvedConfig) -> Result<SelectiveSummary> {
    let root = ensure_dir(&base.out_dir().join("selective"))?;
    let mut help_rates = HelpRateCsv::new();
    let cfg = sub_config(base, &root.join("otc-strict"), base.seed(), |e| {
        e.world_preset = "default".into();
        e.reward.variant = RewardVariant::OtcStrict;
        e.warmstart.enabled = true;
    })?;
    let ws = runner::run_warmstart(&cfg)?;
    let trained = runner::run_train(&cfg, Some(&ws.checkpoint_path))?;
    help_rates.add("otc-strict", true, cfg.seed(), &trained.outcome.step_log);

    let search = match runner::run_eval(&cfg, &trained.best_checkpoint_path, EvalMode::Search)? {
        runner::EvalArtifacts::Search(report) => report,
        _ => unreachable!(),
    };
    let abstention = match runner::run_eval(&cfg, &trained.best_checkpoint_path, EvalMode::Abstain)?
    {
        runner::EvalArtifacts::Abstain(report) => report,
        _ => unreachable!(),
    };
    let summary = SelectiveSummary {
        variant: "otc-strict".into(),
        search,
        abstention,
        first_action_search: first_action_rates(&trained.outcome.best_policy, &cfg.world),
        best_val_tp: trained.outcome.best_val_tp,
    };
    write_json(&root.join("summary.json"), &summary)?;
    help_rates.write(&root.join("help_rate.csv"))?;
    println!("selective: first-action search rates per type:");
    for rate in &summary.first_action_search {
        println!("  {:<14} {:.3}", rate.type_name, rate.search_rate);
    }
    Ok(summary)
}

/// All three variants against the oracle helper, three seeds each: every run
/// is expected to converge to near-universal help requests.
fn oracle_collapse(base: &ResolvedConfig) -> Result<OracleCollapseSummary> {
    let root = ensure_dir(&base.out_dir().join("oracle-collapse"))?;
    let mut help_rates = HelpRateCsv::new();
    let mut runs = Vec::new();
    for variant in VARIANTS {
        for offset in 0..3u64 {
            let seed = base.seed() + offset;
            let dir = root.join(format!("{}-seed{}", variant.label(), seed));
            let cfg = sub_config(base, &dir, seed, |e| {
                e.world_preset = "oracle".into();
                e.reward.variant = variant;
                e.warmstart = WarmStartParams {
                    enabled: true,
                    l_max: 1,
                    ..WarmStartParams::default()
                };
                e.train.steps = 50;
            })?;
            let ws = runner::run_warmstart(&cfg)?;
            let trained = runner::run_train(&cfg, Some(&ws.checkpoint_path))?;
            help_rates.add(variant.label(), true, seed, &trained.outcome.step_log);
            let first_step_at_95 = trained
                .outcome
                .step_log
                .iter()
                .find(|r| r.help_rate >= 0.95)
                .map(|r| r.step);
            let final_help_rate = trained
                .outcome
                .step_log
                .last()
                .map(|r| r.help_rate)
                .unwrap_or(0.0);
            runs.push(OracleRun {
                variant: variant.label().into(),
                seed,
                first_step_at_95,
                final_help_rate,
            });
        }
    }
    let summary = OracleCollapseSummary { runs };
    write_json(&root.join("summary.json"), &summary)?;
    help_rates.write(&root.join("help_rate.csv"))?;
    println!("oracle-collapse: step reaching help-rate 0.95 per run:");
    for run in &summary.runs {
        println!(
            "  {:<11} seed {}: {:>4}  (final {:.3})",
            run.variant,
            run.seed,
            run.first_step_at_95
                .map(|s| s.to_string())
                .unwrap_or_else(|| "none".into()),
            run.final_help_rate
        );
    }
    Ok(summary)
}

const COLLAPSE_THRESHOLD: f64 = 0.95;
const ABLATION_STEPS: u64 = 400;

/// Strict penalty on the two-hop-heavy preset, with and without warm-start,
/// three seeds each. Collapse means one search-count bucket swallows at least
/// 95% of evaluated trajectories.
fn warmstart_ablation(base: &ResolvedConfig) -> Result<AblationSummary> {
    let root = ensure_dir(&base.out_dir().join("warmstart-ablation"))?;
    let mut help_rates = HelpRateCsv::new();
    // One shared evaluation set keeps bucket distributions comparable.
    let eval_world = helpseek::world::presets::by_name("twohop").expect("shipped preset");
    let mut q_rng = stream(base.seed(), "ablation-eval-q", &[]);
    let eval_set: Vec<QuestionSpec> = (0..300)
        .map(|_| sample_question(&eval_world, &mut q_rng).expect("valid world"))
        .collect();

    let mut runs = Vec::new();
    for warmstart in [false, true] {
        for offset in 0..3u64 {
            let seed = base.seed() + offset;
            let label = if warmstart { "warm" } else { "cold" };
            let dir = root.join(format!("{label}-seed{seed}"));
            let cfg = sub_config(base, &dir, seed, |e| {
                e.world_preset = "twohop".into();
                e.reward.variant = RewardVariant::OtcStrict;
                e.warmstart.enabled = warmstart;
                e.train.steps = ABLATION_STEPS;
                e.train.val_questions = 300;
                e.train.val_samples_per_q = 4;
            })?;
            let ws = runner::run_warmstart(&cfg)?;
            let trained = runner::run_train(&cfg, Some(&ws.checkpoint_path))?;
            help_rates.add("otc-strict", warmstart, seed, &trained.outcome.step_log);
            let outcome = eval::eval_search_mode(
                &trained.outcome.final_policy,
                &eval_world,
                &eval_set,
                4,
                derive_seed(base.seed(), "ablation-eval", &[]),
            )?;
            let buckets = [
                outcome.report.bucket_zero.fraction,
                outcome.report.bucket_one.fraction,
                outcome.report.bucket_two_plus.fraction,
            ];
            let max_bucket = buckets.iter().cloned().fold(0.0, f64::max);
            let final_val_tp = trained
                .outcome
                .val_log
                .last()
                .map(|r| r.tool_productivity)
                .unwrap_or(0.0);
            runs.push(AblationRun {
                warmstart,
                seed,
                bucket_fractions: buckets,
                max_bucket,
                collapsed: max_bucket >= COLLAPSE_THRESHOLD,
                final_val_tp,
            });
        }
    }
    let summary = AblationSummary {
        collapse_threshold: COLLAPSE_THRESHOLD,
        runs,
    };
    write_json(&root.join("summary.json"), &summary)?;
    help_rates.write(&root.join("help_rate.csv"))?;

    let mut csv = String::from("warmstart,seed,m0,m1,m2plus,max_bucket,collapsed,final_val_tp\n");
    for run in &summary.runs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            run.warmstart,
            run.seed,
            run.bucket_fractions[0],
            run.bucket_fractions[1],
            run.bucket_fractions[2],
            run.max_bucket,
            run.collapsed,
            run.final_val_tp
        ));
    }
    std::fs::write(root.join("summary.csv"), csv)?;
    println!("warmstart-ablation:");
    for run in &summary.runs {
        println!(
            "  {} seed {}: buckets [{:.3} {:.3} {:.3}] max {:.3} collapsed={} final-val-tp {:.4}",
            if run.warmstart { "warm" } else { "cold" },
            run.seed,
            run.bucket_fractions[0],
            run.bucket_fractions[1],
            run.bucket_fractions[2],
            run.max_bucket,
            run.collapsed,
            run.final_val_tp
        );
    }
    Ok(summary)
}

/// All three penalty severities on the default preset with warm-start, both
/// inference modes: the severity comparison table.
fn severity_sweep(base: &ResolvedConfig) -> Result<SeveritySweepSummary> {
    let root = ensure_dir(&base.out_dir().join("severity-sweep"))?;
    let mut help_rates = HelpRateCsv::new();
    let mut rows = Vec::new();
    for variant in VARIANTS {
        let dir = root.join(variant.label());
        let cfg = sub_config(base, &dir, base.seed(), |e| {
            e.world_preset = "default".into();
            e.reward.variant = variant;
            e.warmstart.enabled = true;
        })?;
        let ws = runner::run_warmstart(&cfg)?;
        let trained = runner::run_train(&cfg, Some(&ws.checkpoint_path))?;
        help_rates.add(variant.label(), true, cfg.seed(), &trained.outcome.step_log);
        let search = match runner::run_eval(&cfg, &trained.best_checkpoint_path, EvalMode::Search)?
        {
            runner::EvalArtifacts::Search(report) => report,
            _ => unreachable!(),
        };
        let abstention =
            match runner::run_eval(&cfg, &trained.best_checkpoint_path, EvalMode::Abstain)? {
                runner::EvalArtifacts::Abstain(report) => report,
                _ => unreachable!(),
            };
        rows.push(SweepRow {
            variant: variant.label().into(),
            accuracy: search.accuracy,
            mean_tool_calls: search.mean_tool_calls,
            tool_productivity: search.tool_productivity,
            precision: abstention.precision,
            abs0_pct: abstention.abs0_pct,
            delta: abstention.delta,
        });
    }
    let summary = SeveritySweepSummary { rows };
    write_json(&root.join("summary.json"), &summary)?;
    help_rates.write(&root.join("help_rate.csv"))?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    let mut csv = String::from("variant,acc,tc,tp,precision,abs0_pct,delta\n");
    println!("severity-sweep:");
    println!(
        "  {:<11} {:>7} {:>6} {:>7} {:>7} {:>7} {:>7}",
        "variant", "acc", "tc", "tp", "prec", "abs0", "delta"
    );
    for row in &summary.rows {
        println!(
            "  {:<11} {:>7.4} {:>6.3} {:>7.4} {:>7} {:>7} {:>7}",
            row.variant,
            row.accuracy,
            row.mean_tool_calls,
            row.tool_productivity,
            fmt(row.precision),
            fmt(row.abs0_pct),
            fmt(row.delta)
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.variant,
            row.accuracy,
            row.mean_tool_calls,
            row.tool_productivity,
            row.precision.map(|v| v.to_string()).unwrap_or_default(),
            row.abs0_pct.map(|v| v.to_string()).unwrap_or_default(),
            row.delta.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(root.join("summary.csv"), csv)?;
    Ok(summary)
}
