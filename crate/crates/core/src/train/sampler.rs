use alloc::vec;
use alloc::vec::Vec;

use super::Dataset;
use crate::error::{bail, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Uniform over examples, with replacement.
    Uniform,
    /// Uniform over categories, then uniform within the category.
    Adaptive,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "adaptive" => Ok(SamplerKind::Adaptive),
            _ => bail!(Config, "unknown sampler {:?} (uniform | adaptive)", s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Adaptive => "adaptive",
        }
    }
}

/// Infinite stream of example indices.
#[derive(Debug, Clone)]
pub struct Sampler {
    groups: Vec<Vec<usize>>,
    rng: RngState,
}

impl Sampler {
    pub fn new(kind: SamplerKind, categories: &[Option<usize>], rng: RngState) -> Result<Self> {
        if categories.is_empty() {
            bail!(Argument, "cannot sample from an empty dataset");
        }
        let groups = match kind {
            SamplerKind::Uniform => vec![(0..categories.len()).collect()],
            SamplerKind::Adaptive => {
                let mut groups: Vec<Vec<usize>> = Vec::new();
                for (i, c) in categories.iter().enumerate() {
                    let Some(c) = *c else {
                        bail!(Config, "example {} has no sampling category", i);
                    };
                    if groups.len() <= c {
                        groups.resize(c + 1, Vec::new());
                    }
                    groups[c].push(i);
                }
                if let Some(k) = groups.iter().position(Vec::is_empty) {
                    bail!(Config, "sampling category {} is empty", k);
                }
                groups
            }
        };
        Ok(Sampler { groups, rng })
    }

    pub fn for_dataset(kind: SamplerKind, data: &Dataset, rng: RngState) -> Result<Self> {
        let cats: Vec<Option<usize>> = data.examples.iter().map(|e| e.category).collect();
        Self::new(kind, &cats, rng)
    }

    pub fn category_count(&self) -> usize {
        self.groups.len()
    }
}

impl Iterator for Sampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let g = &self.groups[self.rng.below(self.groups.len())];
        Some(g[self.rng.below(g.len())])
    }
}
