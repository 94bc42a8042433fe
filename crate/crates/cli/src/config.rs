//! Run configuration: a TOML document with `model`, `pooling`, `train`,
//! `data` and `eval` sections. Every field has a default; unknown keys are
//! rejected; command-line `--set section.key=value` overrides file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use edgepool::data::Normalize;
use edgepool::model::{CaeSpec, ClassifierSpec};
use edgepool::pooling::{PoolConfig, PoolKind, Terminal};
use edgepool::train::{LossKind, OptimizerKind, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub pooling: PoolingSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "classifier" or "cae".
    pub kind: String,
    pub input_channels: usize,
    pub input_size: usize,
    pub stage_widths: Vec<usize>,
    pub cae_widths: Vec<usize>,
    pub classes: usize,
    /// Seed for weight initialization.
    pub model_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "classifier".into(),
            input_channels: 3,
            input_size: 64,
            stage_widths: vec![16, 32, 64],
            cae_widths: vec![48, 96, 192, 32],
            classes: 2,
            model_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingSection {
    /// "normal", "blur", "lgca" or "wadca".
    pub variant: String,
    /// "max" or "avg".
    pub terminal: String,
    pub stride: usize,
    pub gaussian_size: usize,
    pub se_reduction: usize,
    pub random_reduce_init: bool,
}

impl Default for PoolingSection {
    fn default() -> Self {
        PoolingSection {
            variant: "normal".into(),
            terminal: "max".into(),
            stride: 2,
            gaussian_size: 5,
            se_reduction: 16,
            random_reduce_init: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// "sgd_momentum" or "adam".
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    /// "cross_entropy" or "mse".
    pub loss: String,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            optimizer: "sgd_momentum".into(),
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 10,
            batch: 16,
            plateau_factor: 0.1,
            plateau_patience: 5,
            plateau_min_delta: 1e-4,
            loss: "cross_entropy".into(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synthetic" or "dir".
    pub source: String,
    pub path: String,
    /// "shapes2" or "shapes4" for the synthetic source.
    pub kind: String,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub normalize_mean: f64,
    pub normalize_std: f64,
    /// Resize loaded images to this square size when > 0.
    pub resize: usize,
    /// Center-crop after resize when > 0.
    pub center_crop: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".into(),
            path: String::new(),
            kind: "shapes2".into(),
            count: 256,
            size: 64,
            seed: 7,
            normalize_mean: 0.5,
            normalize_std: 0.5,
            resize: 0,
            center_crop: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub rotation_max: f64,
    pub translation_max: isize,
    pub consistency_degrees: usize,
    pub consistency_shift: usize,
    /// Evaluate the full (dx, dy) translation grid instead of the diagonal.
    pub full_grid: bool,
    /// Noise sigma on the normalized tensor scale.
    pub noise_sigma: f64,
    pub trials: usize,
    /// Held-out synthetic evaluation set size and seed.
    pub eval_count: usize,
    pub eval_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            rotation_max: 90.0,
            translation_max: 12,
            consistency_degrees: 15,
            consistency_shift: 12,
            full_grid: false,
            noise_sigma: 2.0,
            trials: 8,
            eval_count: 128,
            eval_seed: 1007,
        }
    }
}

pub const PRESETS: [(&str, &str); 3] = [
    (
        "classifier-sgd",
        r#"
[model]
kind = "classifier"

[train]
optimizer = "sgd_momentum"
lr = 0.001
momentum = 0.9
weight_decay = 4e-5
loss = "cross_entropy"
"#,
    ),
    (
        "classifier-adam",
        r#"
[model]
kind = "classifier"

[train]
optimizer = "adam"
lr = 0.001
weight_decay = 0.0
loss = "cross_entropy"
"#,
    ),
    (
        "cae-adam",
        r#"
[model]
kind = "cae"

[train]
optimizer = "adam"
lr = 0.001
weight_decay = 0.0
loss = "mse"
"#,
    ),
];

impl Config {
    /// Resolve a config from an optional preset, optional file, and
    /// `section.key=value` overrides (applied in that order).
    pub fn resolve(
        preset: Option<&str>,
        file: Option<&Path>,
        sets: &[String],
    ) -> Result<Config, CliError> {
        let mut table = toml::Table::new();
        if let Some(name) = preset {
            let text = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown preset '{name}' (available: {})",
                        PRESETS.map(|(n, _)| n).join(", ")
                    ))
                })?;
            merge(&mut table, text.parse::<toml::Table>().expect("preset parses"));
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: toml::Table = text
                .parse()
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            merge(&mut table, parsed);
        }
        for set in sets {
            apply_set(&mut table, set)?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pool_config()?;
        self.train_config()?;
        self.loss_kind()?;
        match self.model.kind.as_str() {
            "classifier" | "cae" => {}
            other => {
                return Err(CliError::Usage(format!(
                    "model.kind: unknown value '{other}' (expected classifier or cae)"
                )))
            }
        }
        match self.data.source.as_str() {
            "synthetic" | "dir" => {}
            other => {
                return Err(CliError::Usage(format!(
                    "data.source: unknown value '{other}' (expected synthetic or dir)"
                )))
            }
        }
        Ok(())
    }

    pub fn pool_config(&self) -> Result<PoolConfig, CliError> {
        let kind = match self.pooling.variant.as_str() {
            "normal" => PoolKind::Normal,
            "blur" => PoolKind::Blur,
            "lgca" => PoolKind::Lgca,
            "wadca" => PoolKind::Wadca,
            other => {
                return Err(CliError::Usage(format!(
                    "pooling.variant: unknown value '{other}'"
                )))
            }
        };
        let terminal = match self.pooling.terminal.as_str() {
            "max" => Terminal::Max,
            "avg" => Terminal::Avg,
            other => {
                return Err(CliError::Usage(format!(
                    "pooling.terminal: unknown value '{other}'"
                )))
            }
        };
        Ok(PoolConfig {
            kind,
            terminal,
            stride: self.pooling.stride,
            gaussian_size: self.pooling.gaussian_size,
            se_reduction: self.pooling.se_reduction,
            random_reduce_init: self.pooling.random_reduce_init,
        })
    }

    pub fn loss_kind(&self) -> Result<LossKind, CliError> {
        match self.train.loss.as_str() {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(CliError::Usage(format!("train.loss: unknown value '{other}'"))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let optimizer = match self.train.optimizer.as_str() {
            "sgd_momentum" => OptimizerKind::SgdMomentum,
            "adam" => OptimizerKind::Adam,
            other => {
                return Err(CliError::Usage(format!(
                    "train.optimizer: unknown value '{other}'"
                )))
            }
        };
        let cfg = TrainConfig {
            optimizer,
            lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            epochs: self.train.epochs,
            batch: self.train.batch,
            plateau_factor: self.train.plateau_factor,
            plateau_patience: self.train.plateau_patience,
            plateau_min_delta: self.train.plateau_min_delta,
            seed: self.train.seed,
            loss: self.loss_kind()?,
            threads: self.train.threads,
            normalize: self.normalize(),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn normalize(&self) -> Normalize {
        Normalize {
            mean: self.data.normalize_mean,
            std: self.data.normalize_std,
        }
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec, CliError> {
        Ok(ClassifierSpec {
            input: (self.model.input_channels, self.model.input_size, self.model.input_size),
            stage_widths: self.model.stage_widths.clone(),
            pool: self.pool_config()?,
            classes: self.model.classes,
        })
    }

    pub fn cae_spec(&self) -> Result<CaeSpec, CliError> {
        if self.model.cae_widths.len() != 4 {
            return Err(CliError::Usage(format!(
                "model.cae_widths: expected 4 widths, got {}",
                self.model.cae_widths.len()
            )));
        }
        Ok(CaeSpec {
            input: (self.model.input_channels, self.model.input_size, self.model.input_size),
            widths: [
                self.model.cae_widths[0],
                self.model.cae_widths[1],
                self.model.cae_widths[2],
                self.model.cae_widths[3],
            ],
            pool: self.pool_config()?,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Apply one `section.key=value` override; the value is parsed as TOML.
fn apply_set(table: &mut toml::Table, set: &str) -> Result<(), CliError> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set '{set}': expected section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Usage(format!("--set '{set}': key must be section.key")))?;
    let value: toml::Value = raw
        .trim()
        .parse()
        .or_else(|_| format!("\"{}\"", raw.trim()).parse())
        .map_err(|e| CliError::Usage(format!("--set '{set}': {e}")))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(CliError::Usage(format!("--set '{set}': '{section}' is not a section"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_validate() {
        let cfg = Config::resolve(None, None, &[]).unwrap();
        assert_eq!(cfg.model.kind, "classifier");
        assert_eq!(cfg.train.batch, 16);
    }

    #[test]
    fn presets_select_table_rows() {
        let cfg = Config::resolve(Some("cae-adam"), None, &[]).unwrap();
        assert_eq!(cfg.model.kind, "cae");
        assert_eq!(cfg.train.optimizer, "adam");
        assert_eq!(cfg.train.loss, "mse");
        assert!(Config::resolve(Some("nope"), None, &[]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = std::env::temp_dir().join(format!("edgepool-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        std::fs::write(&path, "[train]\nlearning_rate = 0.1\n").unwrap();
        match Config::resolve(None, Some(&path), &[]) {
            Err(CliError::Usage(msg)) => assert!(msg.contains("learning_rate"), "{msg}"),
            other => panic!("expected usage error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn set_overrides_apply_last() {
        let cfg = Config::resolve(
            Some("classifier-sgd"),
            None,
            &["train.lr=0.5".into(), "pooling.variant=lgca".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.pooling.variant, "lgca");
    }

    #[test]
    fn bad_set_values_are_usage_errors() {
        assert!(Config::resolve(None, None, &["no-equals".into()]).is_err());
        assert!(Config::resolve(None, None, &["train=3".into()]).is_err());
        assert!(Config::resolve(None, None, &["train.lr=-1".into()]).is_err());
        assert!(Config::resolve(None, None, &["pooling.variant=bogus".into()]).is_err());
    }

    #[test]
    fn resolved_config_echo_roundtrips() {
        let cfg = Config::resolve(None, None, &["train.epochs=3".into()]).unwrap();
        let echoed: Config = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(echoed.train.epochs, 3);
    }
}
