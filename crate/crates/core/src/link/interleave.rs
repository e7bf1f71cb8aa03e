use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// No reordering.
    Identity,
    /// Row-column block interleaver: write rows of `depth`, read columns.
    Stride { depth: u64 },
    /// Uniform random bijection drawn from `seed`.
    Permutation { seed: u64 },
}

impl Scheme {
    pub fn id(&self) -> u8 {
        match self {
            Scheme::Identity => 0,
            Scheme::Stride { .. } => 1,
            Scheme::Permutation { .. } => 2,
        }
    }

    pub fn param(&self) -> u64 {
        match *self {
            Scheme::Identity => 0,
            Scheme::Stride { depth } => depth,
            Scheme::Permutation { seed } => seed,
        }
    }

    pub fn from_parts(id: u8, param: u64) -> Option<Self> {
        match id {
            0 => Some(Scheme::Identity),
            1 => Some(Scheme::Stride { depth: param }),
            2 => Some(Scheme::Permutation { seed: param }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterleaverSpec {
    pub scheme: Scheme,
    pub total_bits: usize,
}

impl InterleaverSpec {
    pub fn new(scheme: Scheme, total_bits: usize) -> Result<Self> {
        if let Scheme::Stride { depth: 0 } = scheme {
            return Err(Error::Config("interleaver depth must be >= 1".into()));
        }
        Ok(Self { scheme, total_bits })
    }

    /// Transmitted position of every input index.
    pub fn positions(&self) -> Vec<usize> {
        let n = self.total_bits;
        match self.scheme {
            Scheme::Identity => (0..n).collect(),
            Scheme::Stride { depth } => {
                let d = depth as usize;
                if n == 0 {
                    return Vec::new();
                }
                let rows = n.div_ceil(d);
                // Columns below `full` have `rows` entries, the rest one fewer.
                let full = n - (rows - 1) * d;
                (0..n)
                    .map(|i| {
                        let (row, col) = (i / d, i % d);
                        col * (rows - 1) + col.min(full) + row
                    })
                    .collect()
            }
            Scheme::Permutation { seed } => {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut seeds::rng(seed));
                p
            }
        }
    }

    fn check<T>(&self, items: &[T]) -> Result<()> {
        if items.len() != self.total_bits {
            return Err(Error::shape(
                "interleave",
                format!("{} items for an interleaver over {}", items.len(), self.total_bits),
            ));
        }
        Ok(())
    }
}

pub fn interleave<T: Copy + Default>(items: &[T], spec: &InterleaverSpec) -> Result<Vec<T>> {
    spec.check(items)?;
    let mut out = vec![T::default(); items.len()];
    for (i, p) in spec.positions().into_iter().enumerate() {
        out[p] = items[i];
    }
    Ok(out)
}

pub fn deinterleave<T: Copy + Default>(items: &[T], spec: &InterleaverSpec) -> Result<Vec<T>> {
    spec.check(items)?;
    Ok(spec.positions().into_iter().map(|p| items[p]).collect())
}
