use alloc::format;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::mesh::{build_icosphere, Icosphere};
use crate::patching::{build_ico_patch_table, extract_sequence, PatchSequence, PatchTable};
use crate::resample::FeatureField;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}

impl Target {
    pub fn value(self) -> f64 {
        match self {
            Target::Value(v) => v,
            Target::Class(c) => c as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub field: FeatureField,
    pub target: Target,
    pub confound: Option<f64>,
    pub category: Option<usize>,
}

/// Examples sharing one patch table (and hence N, V, C).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub table: PatchTable,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(table: PatchTable, examples: Vec<Example>) -> Result<Self> {
        let d = Dataset { table, examples };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (i, e) in self.examples.iter().enumerate() {
            if e.field.mesh_id() != self.table.carrier() || e.field.vertex_count() != self.table.carrier_vertex_count() {
                bail!(Validation, "example {} lives on a different mesh than the patch table", i);
            }
            if e.field.channel_count() != c {
                bail!(Validation, "example {} has {} channels, expected {}", i, e.field.channel_count(), c);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.examples.first().map_or(0, |e| e.field.channel_count())
    }

    pub fn sequence(&self, i: usize) -> Result<PatchSequence> {
        extract_sequence(&self.examples[i].field, &self.table)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset { table: self.table.clone(), examples: indices.iter().map(|&i| self.examples[i].clone()).collect() }
    }
}

pub const SYNTHETIC_CHANNELS: usize = 4;
/// Index of `Y₁⁰ ∝ z` in [`synthetic_basis`]; its channel-0 coefficient is
/// the regression target.
pub const SYNTHETIC_TARGET_BASIS: usize = 2;

/// Real spherical harmonics of degree ≤ 3 at a unit vector.
pub fn synthetic_basis(p: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = p;
    [
        0.282_094_791_773_878_1,
        0.488_602_511_902_919_9 * y,
        0.488_602_511_902_919_9 * z,
        0.488_602_511_902_919_9 * x,
        1.092_548_430_592_079 * x * y,
        1.092_548_430_592_079 * y * z,
        0.315_391_565_252_520_05 * (3.0 * z * z - 1.0),
        1.092_548_430_592_079 * x * z,
        0.546_274_215_296_039_5 * (x * x - y * y),
        0.590_043_589_926_643_5 * y * (3.0 * x * x - y * y),
        2.890_611_442_640_554 * x * y * z,
        0.457_045_799_464_465_8 * y * (5.0 * z * z - 1.0),
        0.373_176_332_590_115_4 * z * (5.0 * z * z - 3.0),
        0.457_045_799_464_465_8 * x * (5.0 * z * z - 1.0),
        1.445_305_721_320_277 * z * (x * x - y * y),
        0.590_043_589_926_643_5 * x * (x * x - 3.0 * y * y),
    ]
}

/// Band-limited random fields on `ico` with seeded coefficients. The
/// regression target is the channel-0 coefficient of `Y₁⁰`; patches come
/// from the icosphere four orders coarser (order 0 below order 4).
pub fn gen_synthetic(ico: &Icosphere, n_examples: usize, rng: &mut RngState) -> Result<Dataset> {
    let coarse = build_icosphere(ico.order().saturating_sub(4))?;
    let table = build_ico_patch_table(ico, &coarse)?;
    let basis: Vec<[f64; 16]> = ico.mesh().vertices().iter().map(|&v| synthetic_basis(crate::mesh::to_f64(v))).collect();
    let names: Vec<_> = (0..SYNTHETIC_CHANNELS).map(|c| format!("sh{}", c)).collect();
    let mut examples = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let coeffs: Vec<[f64; 16]> = (0..SYNTHETIC_CHANNELS)
            .map(|_| core::array::from_fn(|_| rng.normal()))
            .collect();
        let mut values = Vec::with_capacity(basis.len() * SYNTHETIC_CHANNELS);
        for b in &basis {
            for c in &coeffs {
                values.push(b.iter().zip(c).map(|(x, y)| x * y).sum::<f64>() as f32);
            }
        }
        let field = FeatureField::new(ico.mesh().id(), names.clone(), values)?;
        let target = coeffs[0][SYNTHETIC_TARGET_BASIS];
        examples.push(Example { field, target: Target::Value(target), confound: None, category: None });
    }
    Dataset::new(table, examples)
}
