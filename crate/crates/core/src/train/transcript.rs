use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One training unit of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub stage: String,
    pub epoch: usize,
    /// Epoch index counted across all stages (for plots).
    pub global_epoch: usize,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    /// Per-block quantiles (0, .25, .5, .75, 1) of the accumulated variation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ledger_quantiles: Vec<(String, [f64; 5])>,
    /// Distinct scalars changed so far in this stage.
    pub updated_params: usize,
    /// Mean |w| of the frozen and adaptive backbone weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neocortex_mean_abs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hippocampus_mean_abs: Option<f64>,
    /// Test MAE in original units, on evaluation records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<UnitRecord>,
}

impl Transcript {
    pub fn push(&mut self, rec: UnitRecord) {
        self.records.push(rec);
    }

    pub fn next_global_epoch(&self) -> usize {
        self.records.len()
    }

    /// Global epoch of the first record of `stage`.
    pub fn stage_start(&self, stage: &str) -> Option<usize> {
        self.records.iter().find(|r| r.stage == stage).map(|r| r.global_epoch)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Transcript> {
        let text = std::fs::read_to_string(path)?;
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Transcript { records })
    }
}
