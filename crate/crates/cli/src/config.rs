//! Run configuration: one TOML file, `key.path=value` overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use ess_core::augment::AugmentConfig;
use ess_core::encoder::Architecture;
use ess_core::env::{LightingId, LightingPolicy, MotionParams, PlanParams};
use ess_core::ess::{LossConfig, LossMode, TrainConfig};
use ess_core::eval::EvalConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_DIR_VAR: &str = "ESS_LAB_DATA_DIR";
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub plan_seed: u64,
    pub plan: PlanParams,
    /// Load this plan instead of generating one from `plan_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_file: Option<PathBuf>,
    pub steps: usize,
    pub walk_seed: u64,
    pub motion: MotionParams,
    /// Square frame side in pixels; must match `arch.resolution` for training.
    pub resolution: usize,
    pub lighting: LightingPolicy,
    /// Replay this recorded trajectory instead of walking.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    /// Also render a second walk with this seed for downstream evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_walk_seed: Option<u64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            plan_seed: 7,
            plan: PlanParams::default(),
            plan_file: None,
            steps: 2000,
            walk_seed: 11,
            motion: MotionParams::default(),
            resolution: 32,
            lighting: LightingPolicy::Fixed { id: 0 },
            trajectory: None,
            eval_walk_seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    /// Render every training pose under each of these illuminants and
    /// draw one per view. Empty means train on the recorded frames.
    pub lighting_ids: Vec<LightingId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    /// Side of the streamed frames.
    pub resolution: usize,
    pub step_length: f64,
    /// Degrees per turn.
    pub turn_increment: f64,
    pub lighting: LightingId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8765,
            resolution: 128,
            step_length: 0.2,
            turn_increment: 5.0,
            lighting: 0,
            static_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<LossMode>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            seeds: vec![0, 1, 2],
            modes: vec![LossMode::Baseline, LossMode::Mb],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root for datasets and runs; falls back to `$ESS_LAB_DATA_DIR`, then
    /// `./ess-lab-data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub run_name: String,
    pub env: EnvConfig,
    pub arch: Architecture,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub pretext: PretextConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: None,
            run_name: "run".into(),
            env: EnvConfig::default(),
            arch: Architecture::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            pretext: PretextConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Parses a flag value as a TOML scalar or array, falling back to a bare
/// string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {path:?}")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {path:?} descends into a non-table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.arch.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.env.motion.validate()?;
        if self.env.steps == 0 {
            return Err(CliError::Usage("env.steps must be positive".into()));
        }
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) || self.run_name == ".." {
            return Err(CliError::Usage(format!("run name {:?} is not a plain directory name", self.run_name)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Internal(format!("cannot serialise config: {e}")))
    }

    pub fn root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ess-lab-data"))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root().join("dataset")
    }

    pub fn eval_dataset_dir(&self) -> PathBuf {
        self.root().join("eval_dataset")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root().join("runs").join(&self.run_name)
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESOLVED_CONFIG), self.to_toml()?)?;
        Ok(())
    }
}
