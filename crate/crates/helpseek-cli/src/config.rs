//! Experiment configuration: JSON schema, validation, seed/output overrides,
//! and the config hash stamped into every artifact.

use anyhow::{anyhow, bail, Context, Result};
use helpseek::grpo::TrainConfig;
use helpseek::reward::{RewardConfig, RewardVariant};
use helpseek::seed::{derive_seed, fingerprint};
use helpseek::warmstart::WarmStartConfig;
use helpseek::world::{presets, WorldConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Reward section: variant plus parameters; `c` defaults to the world budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub variant: RewardVariant,
    pub lambda_decay: f64,
    pub c: Option<u32>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            variant: RewardVariant::OtcStrict,
            lambda_decay: 0.8,
            c: None,
        }
    }
}

/// Warm-start section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartParams {
    pub enabled: bool,
    pub l_max: u32,
    pub num_samples: usize,
    pub num_questions: usize,
}

impl Default for WarmStartParams {
    fn default() -> Self {
        let d = WarmStartConfig::default();
        Self {
            enabled: true,
            l_max: d.l_max,
            num_samples: d.num_samples,
            num_questions: d.num_questions,
        }
    }
}

/// Evaluation section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub num_questions: usize,
    pub samples_per_q: usize,
    pub k_samples: usize,
    pub lambda_ans: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            num_questions: 400,
            samples_per_q: 4,
            k_samples: 10,
            lambda_ans: 0.1,
        }
    }
}

/// Top-level experiment configuration (JSON schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Shipped preset name or a path to a world JSON file.
    pub world_preset: String,
    pub reward: RewardParams,
    pub warmstart: WarmStartParams,
    pub train: TrainConfig,
    pub eval: EvalParams,
    /// Where artifacts land. Not part of the experiment identity: it is
    /// excluded from serialization and therefore from the config hash, so
    /// equal hashes mean byte-identical artifacts wherever they are written.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world_preset: "default".into(),
            reward: RewardParams::default(),
            warmstart: WarmStartParams::default(),
            train: TrainConfig::default(),
            eval: EvalParams::default(),
            out_dir: PathBuf::from("runs/exp"),
            seed: 42,
        }
    }
}

/// Command-line / environment overrides applied on top of the config file.
/// Environment variables may override only the seed (`HELPSEEK_SEED`) and the
/// output directory (`HELPSEEK_OUT`); flags take precedence over both.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub preset: Option<String>,
}

/// A validated configuration with the world resolved and hashes computed.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub experiment: ExperimentConfig,
    pub world: WorldConfig,
    pub config_hash: String,
    pub world_hash: String,
}

impl ResolvedConfig {
    pub fn reward_config(&self) -> Result<RewardConfig> {
        let c = self.experiment.reward.c.unwrap_or(self.world.budget);
        RewardConfig::new(self.experiment.reward.variant, self.experiment.reward.lambda_decay, c)
            .map_err(|e| anyhow!("reward config invalid: {e}"))
    }

    pub fn warmstart_config(&self) -> WarmStartConfig {
        WarmStartConfig {
            l_max: self.experiment.warmstart.l_max,
            num_samples: self.experiment.warmstart.num_samples,
            num_questions: self.experiment.warmstart.num_questions,
            seed: derive_seed(self.experiment.seed, "warmstart", &[]),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.experiment.seed, "train", &[]),
            ..self.experiment.train.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed
    }

    pub fn out_dir(&self) -> &Path {
        &self.experiment.out_dir
    }
}

/// Load the config file (or defaults), apply overrides, resolve the world
/// preset, and validate everything.
pub fn load(config_path: Option<&Path>, overrides: &Overrides) -> Result<ResolvedConfig> {
    let mut experiment = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("config {} does not match the schema", path.display()))?
        }
        None => ExperimentConfig::default(),
    };

    if let Some(seed) = std::env::var("HELPSEEK_SEED")
        .ok()
        .map(|v| v.parse::<u64>())
        .transpose()
        .context("HELPSEEK_SEED must be an unsigned integer")?
    {
        experiment.seed = seed;
    }
    if let Ok(dir) = std::env::var("HELPSEEK_OUT") {
        if !dir.is_empty() {
            experiment.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(seed) = overrides.seed {
        experiment.seed = seed;
    }
    if let Some(dir) = &overrides.out_dir {
        experiment.out_dir = dir.clone();
    }
    if let Some(preset) = &overrides.preset {
        experiment.world_preset = preset.clone();
    }

    resolve(experiment)
}

pub fn resolve(experiment: ExperimentConfig) -> Result<ResolvedConfig> {
    let world = resolve_world(&experiment.world_preset)?;
    world
        .validate()
        .map_err(|e| anyhow!("world config invalid: {e}"))?;
    experiment
        .train
        .validate()
        .map_err(|e| anyhow!("train config invalid: {e}"))?;
    if experiment.warmstart.enabled && experiment.warmstart.l_max > world.budget {
        bail!(
            "warmstart l_max {} exceeds the world budget {}",
            experiment.warmstart.l_max,
            world.budget
        );
    }
    if experiment.eval.num_questions == 0 || experiment.eval.samples_per_q == 0 {
        bail!("eval needs at least one question and one sample");
    }
    if let Some(c) = experiment.reward.c {
        if c < 1 {
            bail!("reward c must be >= 1");
        }
    }
    let canonical = serde_json::to_string(&experiment).expect("config serializes");
    let config_hash = fingerprint(canonical.as_bytes());
    let world_hash = world.fingerprint();
    let resolved = ResolvedConfig {
        experiment,
        world,
        config_hash,
        world_hash,
    };
    // Fails on a bad lambda/c combination.
    resolved.reward_config()?;
    Ok(resolved)
}

fn resolve_world(name_or_path: &str) -> Result<WorldConfig> {
    if let Some(world) = presets::by_name(name_or_path) {
        return Ok(world);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        bail!(
            "world preset '{name_or_path}' is neither a shipped preset ({}) nor an existing file",
            presets::NAMES.join(", ")
        );
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read world file {}", path.display()))?;
    WorldConfig::from_json(&text)
        .with_context(|| format!("world file {} does not match the schema", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_resolves() {
        let resolved = resolve(ExperimentConfig::default()).unwrap();
        assert_eq!(resolved.world.types.len(), 4);
        assert_eq!(resolved.config_hash.len(), 16);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let cfg = ExperimentConfig {
            world_preset: "no-such-preset".into(),
            ..ExperimentConfig::default()
        };
        assert!(resolve(cfg).is_err());
    }

    #[test]
    fn l_max_beyond_budget_is_rejected() {
        let cfg = ExperimentConfig {
            warmstart: WarmStartParams {
                l_max: 10,
                ..WarmStartParams::default()
            },
            ..ExperimentConfig::default()
        };
        assert!(resolve(cfg).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = resolve(ExperimentConfig::default()).unwrap();
        let b = resolve(ExperimentConfig {
            seed: 7,
            ..ExperimentConfig::default()
        })
        .unwrap();
        assert_ne!(a.config_hash, b.config_hash);
    }
}
