use std::ops::Range;

use ndarray::{ArrayView2, ArrayView3, ArrayViewMut2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{shape_err, Result};

/// Which functional block a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Spatial,
    Temporal,
    Head,
    PromptSpatial,
    PromptTemporal,
    Stim,
    Align,
}

impl Block {
    pub fn as_str(&self) -> &'static str {
        match self {
            Block::Spatial => "spatial",
            Block::Temporal => "temporal",
            Block::Head => "head",
            Block::PromptSpatial => "prompt_spatial",
            Block::PromptTemporal => "prompt_temporal",
            Block::Stim => "stim",
            Block::Align => "align",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub block: Block,
    pub offset: usize,
}

impl TensorSpec {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Named tensors laid out back to back in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    specs: Vec<TensorSpec>,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { specs: Vec::new(), values: Vec::new() }
    }

    /// Appends a tensor; returns its index in the registry.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], block: Block, init: Vec<f64>) -> usize {
        let name = name.into();
        assert!(self.specs.iter().all(|s| s.name != name), "duplicate tensor name {name}");
        let size: usize = shape.iter().product();
        assert_eq!(init.len(), size, "init length for {name}");
        let spec = TensorSpec { name, shape: shape.to_vec(), block, offset: self.values.len() };
        self.values.extend(init);
        self.specs.push(spec);
        self.specs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, idx: usize) -> &TensorSpec {
        &self.specs[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// `(name, shape, block)` in registry order.
    pub fn registry(&self) -> Vec<(String, Vec<usize>, Block)> {
        self.specs.iter().map(|s| (s.name.clone(), s.shape.clone(), s.block)).collect()
    }

    pub fn slice(&self, idx: usize) -> &[f64] {
        &self.values[self.specs[idx].range()]
    }

    pub fn slice_mut(&mut self, idx: usize) -> &mut [f64] {
        let r = self.specs[idx].range();
        &mut self.values[r]
    }

    pub fn mat(&self, idx: usize) -> ArrayView2<'_, f64> {
        let s = &self.specs[idx];
        assert_eq!(s.shape.len(), 2, "{} is not a matrix", s.name);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &self.values[s.range()]).expect("shape")
    }

    pub fn mat_mut(&mut self, idx: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.specs[idx].clone();
        assert_eq!(s.shape.len(), 2, "{} is not a matrix", s.name);
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut self.values[s.range()]).expect("shape")
    }

    pub fn tensor3(&self, idx: usize) -> ArrayView3<'_, f64> {
        let s = &self.specs[idx];
        assert_eq!(s.shape.len(), 3, "{} is not a 3-tensor", s.name);
        ArrayView3::from_shape((s.shape[0], s.shape[1], s.shape[2]), &self.values[s.range()]).expect("shape")
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.values.len() {
            return Err(shape_err(format!("flat vector has {} entries, expected {}", flat.len(), self.values.len())));
        }
        self.values.copy_from_slice(flat);
        Ok(())
    }

    /// Flat indices of every tensor in `block`.
    pub fn block_indices(&self, block: Block) -> Vec<usize> {
        self.specs.iter().filter(|s| s.block == block).flat_map(|s| s.range()).collect()
    }

    pub fn block_size(&self, block: Block) -> usize {
        self.specs.iter().filter(|s| s.block == block).map(TensorSpec::size).sum()
    }

    /// Stable digest of names, shapes and blocks.
    pub fn architecture_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.specs {
            h.update(s.name.as_bytes());
            h.update([0u8]);
            for d in &s.shape {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(s.block.as_str().as_bytes());
            h.update([0xffu8]);
        }
        hex_string(&h.finalize())
    }

    /// SHA-256 of the exact bit patterns of the selected flat indices.
    pub fn hash_indices(&self, indices: impl IntoIterator<Item = usize>) -> String {
        let mut h = Sha256::new();
        for i in indices {
            h.update((i as u64).to_le_bytes());
            h.update(self.values[i].to_bits().to_le_bytes());
        }
        hex_string(&h.finalize())
    }

    pub fn hash_all(&self) -> String {
        self.hash_indices(0..self.values.len())
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("a", &[2, 3], Block::Spatial, vec![1.0; 6]);
        p.push("b", &[4], Block::Head, vec![2.0; 4]);
        p.push("c", &[2, 2, 2], Block::Temporal, vec![3.0; 8]);
        p
    }

    #[test]
    fn accounting_and_blocks() {
        let p = sample();
        let total: usize = p.registry().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        assert_eq!(total, p.len());
        assert_eq!(p.block_indices(Block::Head), vec![6, 7, 8, 9]);
        assert_eq!(p.mat(0).dim(), (2, 3));
    }

    #[test]
    fn hash_sees_single_bit() {
        let mut p = sample();
        let before = p.hash_all();
        p.values[3] = f64::from_bits(p.values[3].to_bits() ^ 1);
        assert_ne!(before, p.hash_all());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_identity(v in proptest::collection::vec(-1e6f64..1e6, 18)) {
            let mut p = sample();
            p.unflatten(&v).unwrap();
            prop_assert_eq!(p.flatten(), v);
        }
    }
}
