//! Pipeline configuration: one TOML file, every section optional.

use std::path::{Path, PathBuf};

use hpscreen::autoencoder::{AutoencoderConfig, TrainConfig};
use hpscreen::segmentation::{MaskConfig, WindowGeometry};
use hpscreen::synth::CohortSpec;
use hpscreen::RedFilterConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub synth: CohortSpec,
    pub red_filter: RedFilterConfig,
    pub mask: MaskConfig,
    pub sampling: SamplingConfig,
    pub autoencoder: AutoencoderConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// External dataset manifest. When unset, the synth stage generates a
    /// cohort under `<workdir>/cohort`.
    pub manifest: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { workdir: PathBuf::from("hpscreen-work"), manifest: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Training windows drawn per training slide.
    pub n_train_windows: usize,
    /// Border points between consecutive inference windows.
    pub stride: usize,
    pub window: WindowGeometry,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_train_windows: 50, stride: 112, window: WindowGeometry::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Windows reconstructed per forward pass. Does not affect results.
    pub batch_size: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { batch_size: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { k: 10, seed: 0 }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Segment,
    Sample,
    Train,
    Score,
    Diagnose,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Segment => "segment",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Diagnose => "diagnose",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (or the defaults), then applies `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::MissingInput {
                    path: p.to_path_buf(),
                    hint: e.to_string(),
                })?;
                text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: PipelineConfig =
            doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        self.autoencoder.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.slide.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.sampling.n_train_windows == 0 || self.sampling.stride == 0 {
            return cfg_err("sampling.n_train_windows and sampling.stride must be at least 1".into());
        }
        let g = self.sampling.window;
        if g.size == 0 || g.resized_to != self.autoencoder.input_size {
            return cfg_err(format!(
                "sampling.window.resized_to ({}) must equal autoencoder.input_size ({})",
                g.resized_to, self.autoencoder.input_size
            ));
        }
        if self.scoring.batch_size == 0 {
            return cfg_err("scoring.batch_size must be at least 1".into());
        }
        if self.evaluation.k < 2 {
            return cfg_err("evaluation.k must be at least 2".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Hash of every setting that can change the outputs of `stage` or of
    /// any stage before it. Paths and scoring batch size are excluded.
    pub fn stage_hash(&self, stage: Stage, manifest_digest: Option<&str>) -> String {
        let mut h = Sha256::new();
        let mut put = |name: &str, json: String| {
            h.update(name.as_bytes());
            h.update(json.as_bytes());
        };
        match manifest_digest {
            Some(d) => put("manifest", d.to_string()),
            None => put("synth", json(&self.synth)),
        }
        if stage >= Stage::Segment {
            put("mask", json(&self.mask));
        }
        if stage >= Stage::Sample {
            put("sampling", json(&self.sampling));
        }
        if stage >= Stage::Train {
            put("autoencoder", json(&self.autoencoder));
            put("train", json(&self.train));
        }
        if stage >= Stage::Score {
            put("red_filter", json(&self.red_filter));
        }
        if stage >= Stage::Evaluate {
            put("evaluation", json(&self.evaluation));
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn set_all_seeds(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.sampling.seed = seed;
        self.train.seed = seed;
        self.evaluation.seed = seed;
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config sections serialize")
}

/// Sets a dotted key in a TOML table. The value is parsed as a TOML value
/// and falls back to a plain string.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = PipelineConfig::load(None, &["train.epochs=3".into(), "paths.workdir=/tmp/x".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.paths.workdir, PathBuf::from("/tmp/x"));
        let cfg = PipelineConfig::load(None, &["synth.slide.spot_radius=[3, 5]".into()]).unwrap();
        assert_eq!(cfg.synth.slide.spot_radius, [3, 5]);
        assert!(matches!(PipelineConfig::load(None, &["train.epoch=3".into()]), Err(CliError::Config(_))));
        assert!(matches!(PipelineConfig::load(None, &["evaluation.k=1".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn stage_hash_ignores_paths_and_later_sections() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.workdir = "elsewhere".into();
        b.scoring.batch_size = 7;
        assert_eq!(a.stage_hash(Stage::Evaluate, None), b.stage_hash(Stage::Evaluate, None));
        b.evaluation.k = 5;
        assert_eq!(a.stage_hash(Stage::Score, None), b.stage_hash(Stage::Score, None));
        assert_ne!(a.stage_hash(Stage::Evaluate, None), b.stage_hash(Stage::Evaluate, None));
        b.mask.close_radius = 4;
        assert_eq!(a.stage_hash(Stage::Synth, None), b.stage_hash(Stage::Synth, None));
        assert_ne!(a.stage_hash(Stage::Segment, None), b.stage_hash(Stage::Segment, None));
    }
}
