//! Attention map export: one channel per requested head plus the head
//! average, written on the carrier mesh with a provenance file.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sit_core::attention::{rollout_layers, upsample_map, HeadMode};
use sit_core::mesh::Mesh;
use sit_core::model::{forward, Confound, SiTModel};
use sit_core::patching::{PatchSequence, PatchTable};
use sit_core::resample::FeatureField;
use sit_core::RngState;

use crate::error::{write, Result};
use crate::format::save_field;

#[derive(Debug, Clone, Serialize)]
struct Provenance {
    channel: String,
    head: Option<usize>,
    layers: [usize; 2],
    degenerate: bool,
}

pub struct ExportRequest<'a> {
    pub heads: &'a [usize],
    /// Rolled-out layer range; all layers when `None`.
    pub layers: Option<Range<usize>>,
    pub confound: Confound<f32>,
}

/// Writes `attention.surf` and `attention.json` into `out_dir` and returns
/// their paths.
pub fn export_maps(
    model: &SiTModel<f32>,
    sequence: &PatchSequence,
    table: &PatchTable,
    carrier: &Mesh,
    request: &ExportRequest,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (_, stack) = forward(model, sequence, &request.confound, &mut RngState::new(0), false)?;
    let layers = request.layers.clone().unwrap_or(0..stack.layer_count());
    let modes: Vec<HeadMode> =
        request.heads.iter().map(|&h| HeadMode::Head(h)).chain(std::iter::once(HeadMode::Averaged)).collect();
    let mut names = Vec::new();
    let mut values: Vec<Vec<f32>> = Vec::new();
    let mut provenance = Vec::new();
    for mode in modes {
        let map = rollout_layers(&stack, mode, layers.clone())?;
        let field = upsample_map(&map, table)?;
        names.push(mode.label());
        values.push(field.column(0));
        provenance.push(Provenance {
            channel: mode.label(),
            head: match mode {
                HeadMode::Head(h) => Some(h),
                HeadMode::Averaged => None,
            },
            layers: [layers.start, layers.end],
            degenerate: map.degenerate,
        });
    }
    let field = FeatureField::from_channel_columns(
        table.carrier(),
        table.carrier_vertex_count(),
        names.iter().map(String::as_str).zip(values.iter().map(Vec::as_slice)),
    )?;
    let mesh_path = out_dir.join("attention.surf");
    let prov_path = out_dir.join("attention.json");
    save_field(carrier, &field, &mesh_path)?;
    write(&prov_path, serde_json::to_string_pretty(&provenance).expect("provenance serializes") + "\n")?;
    Ok(vec![mesh_path, prov_path])
}
