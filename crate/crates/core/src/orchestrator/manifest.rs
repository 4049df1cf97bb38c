use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::backend::ProviderInfo;
use crate::error::{Error, Result};
use crate::types::{BiasCurve, ImportanceCurve, Modality};

use super::config::AuditMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantStatus {
    Pending,
    /// Embedded but not yet scored.
    Embedded,
    Scored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub status: VariantStatus,
    /// Retrieval hit within the top K, or a correct top-1 prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit: Option<bool>,
}

impl VariantRecord {
    pub fn pending() -> Self {
        Self {
            status: VariantStatus::Pending,
            hit: None,
        }
    }
}

/// Accuracy of one `(segment, position)` cell over every item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub segment: usize,
    pub position: usize,
    pub accuracy: f64,
}

/// Progress and provenance of a run, rewritten after every item chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// SHA-256 of the dataset manifest bytes.
    pub dataset_hash: String,
    pub config: serde_json::Value,
    pub provider: ProviderInfo,
    pub metric_id: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_unix: Option<u64>,
    pub variants: BTreeMap<String, VariantRecord>,
    #[serde(default)]
    pub cells: Vec<CellResult>,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Written to a sibling temp file and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn is_complete(&self) -> bool {
        self.variants.values().all(|v| v.status == VariantStatus::Scored)
    }

    pub fn scored(&self) -> usize {
        self.variants
            .values()
            .filter(|v| v.status == VariantStatus::Scored)
            .count()
    }
}

/// The result tables of a finished run; serialized as `curves.json`.
/// Carries no timestamps, so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTables {
    pub config_hash: String,
    pub model_id: String,
    pub modality: Modality,
    pub mode: AuditMode,
    pub metric_id: String,
    pub num_items: usize,
    pub num_segments: usize,
    pub num_positions: usize,
    pub cells: Vec<CellResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<Vec<BiasCurve>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceCurve>,
}
