use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::imageprobe::BandAxis;
use crate::types::{Modality, PositionSpec, Schedule};

/// What an audit measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMode {
    /// One segment kept at its own slot; accuracy per segment.
    Importance,
    /// Segments moved across slots, the rest masked.
    BiasMask,
    /// Text sub-texts moved across slots, the rest Lorem-Ipsum filler.
    BiasLorem,
    /// Image bands moved across slots, scored by zero-shot top-1.
    Classify,
}

impl AuditMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditMode::Importance => "importance",
            AuditMode::BiasMask => "bias-mask",
            AuditMode::BiasLorem => "bias-lorem",
            AuditMode::Classify => "classify",
        }
    }
}

impl fmt::Display for AuditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_recall_k() -> usize {
    1
}

fn default_prompt() -> String {
    "a photo of a {label}".into()
}

fn default_batch() -> usize {
    64
}

fn default_concurrency() -> usize {
    4
}

fn default_interpolation() -> usize {
    100
}

/// One experiment, as read from a JSON file.
///
/// Relative paths are kept as written and resolved against the directory
/// of the config file, so a run directory can be moved without changing
/// its config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_url: Option<String>,
    #[serde(default)]
    pub mock: bool,
    pub modality: Modality,
    /// Required by `audit`; the `importance` and `classify` commands fill it in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AuditMode>,
    pub num_segments: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Position count for the even-spread schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<usize>,
    /// Interior offsets for the explicit schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<usize>>,
    #[serde(default = "default_recall_k")]
    pub recall_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Shuffle each caption's sentences (seeded per item) before probing.
    #[serde(default)]
    pub shuffle_captions: bool,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub axis: BandAxis,
    #[serde(default = "default_prompt")]
    pub prompt_template: String,
    /// Only the first this-many caption tokens are segmented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lorem_bank: Option<PathBuf>,
    #[serde(default = "default_interpolation")]
    pub interpolation_points: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_schedule() -> Schedule {
    Schedule::StepEqual
}

/// Keys that change how a run executes but not what it computes.
const OPERATIONAL_KEYS: [&str; 5] = ["batch_size", "concurrency", "cache_dir", "provider_url", "mock"];

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.dataset_manifest)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.cache_dir {
            Some(dir) => self.resolve(dir),
            None => self.output_path().join("cache"),
        }
    }

    /// The mode, or a validation error when none was given.
    pub fn audit_mode(&self) -> Result<AuditMode> {
        self.mode
            .ok_or_else(|| Error::invalid("config does not name a mode (importance, bias-mask, bias-lorem, classify)"))
    }

    /// Sets the mode for a mode-specific command; a config naming another
    /// mode is rejected.
    pub fn require_mode(&mut self, mode: AuditMode) -> Result<()> {
        match self.mode {
            Some(m) if m != mode => Err(Error::invalid(format!("config mode {m} conflicts with the {mode} command"))),
            _ => {
                self.mode = Some(mode);
                Ok(())
            }
        }
    }

    /// The position schedule as the text planner wants it.
    pub fn position_spec(&self) -> Result<PositionSpec> {
        match self.schedule {
            Schedule::StepEqual => match self.positions {
                Some(p) if p != self.num_segments => Err(Error::invalid(format!(
                    "step-equal schedule has one position per segment; got positions = {p} for {} segments",
                    self.num_segments
                ))),
                _ => Ok(PositionSpec::StepEqual),
            },
            Schedule::EvenSpread => match self.positions {
                Some(positions) if positions >= 2 => Ok(PositionSpec::EvenSpread { positions }),
                _ => Err(Error::invalid("even-spread schedule needs positions >= 2")),
            },
            Schedule::Explicit => match &self.offsets {
                Some(o) if !o.is_empty() => Ok(PositionSpec::Explicit { offsets: o.clone() }),
                _ => Err(Error::invalid("explicit schedule needs a non-empty offsets list")),
            },
        }
    }

    /// Cells per segment: `P` for bias modes, 1 for importance.
    pub fn num_positions(&self) -> Result<usize> {
        if self.audit_mode()? == AuditMode::Importance {
            return Ok(1);
        }
        Ok(match self.position_spec()? {
            PositionSpec::StepEqual => self.num_segments,
            PositionSpec::EvenSpread { positions } => positions,
            PositionSpec::Explicit { offsets } => offsets.len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mode = self.audit_mode()?;
        if self.num_segments < 2 {
            return Err(Error::invalid("num_segments must be at least 2"));
        }
        if self.recall_k == 0 {
            return Err(Error::invalid("recall_k must be at least 1"));
        }
        if self.batch_size == 0 || self.concurrency == 0 {
            return Err(Error::invalid("batch_size and concurrency must be positive"));
        }
        if self.interpolation_points < 2 {
            return Err(Error::invalid("interpolation_points must be at least 2"));
        }
        match (mode, self.modality) {
            (AuditMode::BiasLorem, Modality::Image) => {
                return Err(Error::invalid("bias-lorem is a text-only mode"));
            }
            (AuditMode::Classify, Modality::Text) => {
                return Err(Error::invalid("classify perturbs images; set modality to image"));
            }
            _ => {}
        }
        if mode != AuditMode::Importance {
            self.position_spec()?;
        }
        if self.modality == Modality::Image && self.schedule != Schedule::StepEqual && mode != AuditMode::Importance {
            return Err(Error::invalid("image audits use the step-equal schedule"));
        }
        if self.region_tokens == Some(0) {
            return Err(Error::invalid("region_tokens must be positive"));
        }
        if mode == AuditMode::Classify && !self.prompt_template.contains("{label}") {
            return Err(Error::invalid("prompt_template must contain {label}"));
        }
        Ok(())
    }

    /// The config as hashed: compact JSON with sorted keys, operational
    /// settings removed.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            for key in OPERATIONAL_KEYS {
                obj.remove(key);
            }
        }
        // serde_json's map is ordered by key
        value.to_string()
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"dataset_manifest": "pairs.jsonl", "modality": "text", "mode": "bias-mask",
        "num_segments": 3, "output_dir": "out"}"#;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text, "/cfg").unwrap()
    }

    #[test]
    fn defaults_and_paths() {
        let c = cfg(BASE);
        c.validate().unwrap();
        assert_eq!(c.recall_k, 1);
        assert_eq!(c.prompt_template, "a photo of a {label}");
        assert_eq!(c.manifest_path(), PathBuf::from("/cfg/pairs.jsonl"));
        assert_eq!(c.cache_path(), PathBuf::from("/cfg/out/cache"));
        assert_eq!(c.num_positions().unwrap(), 3);
    }

    #[test]
    fn hash_ignores_key_order_and_operational_keys() {
        let a = cfg(BASE);
        let b = cfg(r#"{"output_dir": "out", "num_segments": 3, "mode": "bias-mask",
            "modality": "text", "dataset_manifest": "pairs.jsonl", "batch_size": 7, "mock": true}"#);
        assert_eq!(a.config_hash(), b.config_hash());
        let c = cfg(&BASE.replace("\"num_segments\": 3", "\"num_segments\": 4"));
        assert_ne!(a.config_hash(), c.config_hash());
        let canon = a.canonical_json();
        assert!(canon.starts_with("{\"axis\":\"horizontal\",\"dataset_manifest\":"), "{canon}");
        assert!(!canon.contains("\": ") && !canon.contains(", \""));
    }

    #[test]
    fn hash_is_independent_of_location() {
        let a = ExperimentConfig::from_json(BASE, "/one").unwrap();
        let b = ExperimentConfig::from_json(BASE, "/two").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn invalid_combinations() {
        let lorem_image = cfg(&BASE.replace("\"text\"", "\"image\"").replace("bias-mask", "bias-lorem"));
        assert!(lorem_image.validate().is_err());
        let classify_text = cfg(&BASE.replace("bias-mask", "classify"));
        assert!(classify_text.validate().is_err());
        let k0 = cfg(&BASE.replace("\"num_segments\": 3", "\"num_segments\": 3, \"recall_k\": 0"));
        assert!(k0.validate().is_err());
        let spread = cfg(&BASE.replace("\"num_segments\": 3", "\"num_segments\": 3, \"schedule\": \"even-spread\""));
        assert!(spread.validate().is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("\"mode\"", "\"mood\""), "/").is_err());
    }

    #[test]
    fn mode_commands() {
        let mut c = cfg(&BASE.replace(", \"mode\": \"bias-mask\"", ""));
        assert!(c.validate().is_err());
        c.require_mode(AuditMode::Importance).unwrap();
        c.validate().unwrap();
        assert_eq!(c.num_positions().unwrap(), 1);
        assert!(c.require_mode(AuditMode::Classify).is_err());
    }

    #[test]
    fn even_spread_positions() {
        let c = cfg(&BASE.replace(
            "\"num_segments\": 3",
            "\"num_segments\": 3, \"schedule\": \"even-spread\", \"positions\": 5",
        ));
        c.validate().unwrap();
        assert_eq!(c.position_spec().unwrap(), PositionSpec::EvenSpread { positions: 5 });
        assert_eq!(c.num_positions().unwrap(), 5);
    }
}
