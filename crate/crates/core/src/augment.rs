//! Repeat-unit chaining, augmented training corpora and seeded splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, EdgeKind, NodeAttr, PolymerGraph};
use crate::smiles::RepeatUnit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

/// A base sample: one repeat unit with its property value.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub unit: RepeatUnit,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub repeat_sizes: Vec<usize>,
    pub merge_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            repeat_sizes: vec![1, 3],
            merge_ratio: 1.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn new(repeat_sizes: Vec<usize>, merge_ratio: f64, seed: u64) -> Result<Self, AugmentError> {
        let spec = Self {
            repeat_sizes,
            merge_ratio,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.repeat_sizes.is_empty() {
            return Err(AugmentError::InvalidSpec("repeat_sizes is empty".into()));
        }
        if self.repeat_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AugmentError::InvalidSpec(
                "repeat_sizes must be sorted and distinct".into(),
            ));
        }
        if self.repeat_sizes[0] != 1 {
            return Err(AugmentError::InvalidSpec("repeat_sizes must contain 1".into()));
        }
        if !(self.merge_ratio > 0.0 && self.merge_ratio <= 1.0) {
            return Err(AugmentError::InvalidSpec(format!(
                "merge_ratio {} outside (0, 1]",
                self.merge_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            valid_frac: 0.1,
            test_frac: 0.3,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Chains `n` copies of the unit. Copy `i` occupies nodes
/// `i * |V_A| .. (i + 1) * |V_A|`; `anchor_out` of copy `i` is bonded to
/// `anchor_in` of copy `i + 1` with an inter-unit edge. Terminal anchors stay.
///
/// # Panics
/// If `n == 0`.
pub fn chain_repeat(ru: &RepeatUnit, n: usize) -> PolymerGraph {
    assert!(n >= 1, "repeat count must be positive");
    let k = ru.atoms.len();
    let mut nodes = Vec::with_capacity(n * k);
    let mut edges = Vec::with_capacity(n * ru.bonds.len() + n - 1);
    for copy in 0..n {
        let off = copy * k;
        nodes.extend(ru.atoms.iter().map(|a| NodeAttr {
            element: a.element,
            hydrogens: a.hydrogens,
        }));
        edges.extend(ru.bonds.iter().map(|b| Edge {
            u: off + b.a,
            v: off + b.b,
            kind: EdgeKind::from(b.order),
        }));
        if copy + 1 < n {
            edges.push(Edge {
                u: off + ru.anchor_out,
                v: off + k + ru.anchor_in,
                kind: EdgeKind::InterUnit,
            });
        }
    }
    PolymerGraph::new(nodes, edges, n, k, None).expect("chained repeat unit is a valid graph")
}

/// Number of base samples that receive an augmented copy at each extra size.
pub fn augmented_count(base_len: usize, ratio: f64) -> usize {
    ((ratio * base_len as f64).round() as usize).min(base_len)
}

/// Emits `G^(1)` for every base sample and `G^(n)` (each `n > 1`) for a seeded
/// `merge_ratio` fraction. Output is grouped per base sample in base order,
/// sizes ascending; every graph carries its base sample's value.
pub fn build_training_set(
    base: &[Sample],
    spec: &AugmentSpec,
) -> Result<Vec<PolymerGraph>, AugmentError> {
    spec.validate()?;
    let mut chosen = vec![vec![false; base.len()]; spec.repeat_sizes.len()];
    chosen[0].fill(true);
    let count = augmented_count(base.len(), spec.merge_ratio);
    for (slot, &size) in spec.repeat_sizes.iter().enumerate().skip(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut idx: Vec<usize> = (0..base.len()).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..count] {
            chosen[slot][i] = true;
        }
    }
    let mut out = Vec::with_capacity(base.len() * spec.repeat_sizes.len());
    for (i, s) in base.iter().enumerate() {
        for (slot, &size) in spec.repeat_sizes.iter().enumerate() {
            if chosen[slot][i] {
                out.push(chain_repeat(&s.unit, size).with_label(Some(s.value)));
            }
        }
    }
    Ok(out)
}

/// Seeded shuffle, then floor-rounded valid/test sizes with the remainder
/// going to train. Returns base-sample indices for (train, valid, test).
pub fn split_indices(
    len: usize,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), AugmentError> {
    if len == 0 {
        return Err(AugmentError::InvalidSplit("no samples to split".into()));
    }
    let fracs = [spec.train_frac, spec.valid_frac, spec.test_frac];
    if fracs.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(AugmentError::InvalidSplit("fractions must sum to 1".into()));
    }
    let floor = |f: f64| (f * len as f64 + 1e-9).floor() as usize;
    let n_valid = floor(spec.valid_frac);
    let n_test = floor(spec.test_frac);
    let n_train = len - n_valid - n_test;
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = idx.split_off(n_train + n_valid);
    let valid = idx.split_off(n_train);
    Ok((idx, valid, test))
}

pub fn split<T: Clone>(
    base: &[T],
    spec: &SplitSpec,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), AugmentError> {
    let (a, b, c) = split_indices(base.len(), spec)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| base[i].clone()).collect();
    Ok((pick(a), pick(b), pick(c)))
}
