use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{Block, ParamSet, TensorSpec};
use crate::error::{Error, Result};

/// Per-weight record of training dynamics: the last snapshot, the latest
/// absolute change, and the running sum of absolute changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationLedger {
    specs: Vec<TensorSpec>,
    pub last_snapshot: Vec<f64>,
    pub delta_abs: Vec<f64>,
    pub accum: Vec<f64>,
    /// Number of completed training units.
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub units: usize,
    /// Quantiles (0, 0.25, 0.5, 0.75, 1) of the accumulated variation per block.
    pub block_quantiles: BTreeMap<String, [f64; 5]>,
}

pub(crate) fn quantiles(values: &mut [f64]) -> [f64; 5] {
    if values.is_empty() {
        return [0.0; 5];
    }
    values.sort_by(f64::total_cmp);
    let pick = |q: f64| values[((values.len() - 1) as f64 * q).round() as usize];
    [pick(0.0), pick(0.25), pick(0.5), pick(0.75), pick(1.0)]
}

impl VariationLedger {
    /// Fresh ledger whose snapshot is the current parameter state.
    pub fn new(params: &ParamSet) -> VariationLedger {
        let n = params.len();
        VariationLedger {
            specs: params.specs().to_vec(),
            last_snapshot: params.values.clone(),
            delta_abs: vec![0.0; n],
            accum: vec![0.0; n],
            units: 0,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    /// Records the end of one training unit.
    pub fn update(&mut self, params: &ParamSet) -> Result<()> {
        if params.specs() != self.specs.as_slice() {
            return Err(Error::Ledger("parameter registry changed since the ledger was created".into()));
        }
        for i in 0..params.len() {
            let d = (params.values[i] - self.last_snapshot[i]).abs();
            self.delta_abs[i] = d;
            self.accum[i] += d;
        }
        self.last_snapshot.copy_from_slice(&params.values);
        self.units += 1;
        Ok(())
    }

    pub fn block_values(&self, block: Block) -> Vec<f64> {
        self.specs.iter().filter(|s| s.block == block).flat_map(|s| self.accum[s.range()].iter().copied()).collect()
    }

    pub fn summary(&self) -> LedgerSummary {
        let mut block_quantiles = BTreeMap::new();
        for block in [Block::Spatial, Block::Temporal, Block::Head] {
            let mut v = self.block_values(block);
            if !v.is_empty() {
                block_quantiles.insert(block.as_str().to_string(), quantiles(&mut v));
            }
        }
        LedgerSummary { units: self.units, block_quantiles }
    }

    /// One `<tensor>.csv` (index, accum) per tensor plus `summary.json`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for spec in &self.specs {
            let path = dir.join(format!("{}.csv", spec.name));
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(out, "index,accum")?;
            for (k, v) in self.accum[spec.range()].iter().enumerate() {
                writeln!(out, "{k},{v}")?;
            }
            out.flush()?;
            written.push(path);
        }
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.summary())?)?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", &[v.len()], Block::Spatial, v.to_vec());
        p
    }

    #[test]
    fn identical_snapshots_leave_accum() {
        let p = one(&[1.0, 2.0]);
        let mut l = VariationLedger::new(&p);
        l.update(&p).unwrap();
        assert_eq!(l.delta_abs, vec![0.0, 0.0]);
        assert_eq!(l.accum, vec![0.0, 0.0]);
        assert_eq!(l.units, 1);
    }

    #[test]
    fn scalar_path_accumulates() {
        let mut p = one(&[1.0]);
        let mut l = VariationLedger::new(&p);
        p.values[0] = 3.0;
        l.update(&p).unwrap();
        p.values[0] = 2.0;
        l.update(&p).unwrap();
        assert_eq!(l.accum, vec![3.0]);
    }

    #[test]
    fn element_wise_absolute_change() {
        let mut p = one(&[0.0, 0.0]);
        let mut l = VariationLedger::new(&p);
        p.values = vec![2.0, -1.0];
        l.update(&p).unwrap();
        assert_eq!(l.delta_abs, vec![2.0, 1.0]);
    }

    #[test]
    fn registry_drift_is_rejected() {
        let p = one(&[0.0, 0.0]);
        let mut l = VariationLedger::new(&p);
        assert!(matches!(l.update(&one(&[0.0, 0.0, 0.0])), Err(Error::Ledger(_))));
    }
}
