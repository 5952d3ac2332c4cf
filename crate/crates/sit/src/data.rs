//! Dataset description files: a TOML document naming the carrier mesh, the
//! patch table and one field file per example, all relative to the
//! description file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sit_core::mesh::Mesh;
use sit_core::train::{Dataset, Example, Target};

use crate::error::{read, write, Error, Result};
use crate::format::{load_field, load_mesh, load_patch_table, save_field, save_mesh, save_patch_table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleEntry {
    pub field: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub mesh: PathBuf,
    pub table: PathBuf,
    #[serde(default, rename = "example")]
    pub examples: Vec<ExampleEntry>,
}

/// A loaded dataset with its carrier geometry and the files it came from.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub carrier: Mesh,
    pub dataset: Dataset,
    /// Every file read, description first.
    pub inputs: Vec<PathBuf>,
}

pub fn load_dataset(path: &Path) -> Result<LoadedData> {
    let text = read(path)?;
    let desc: DatasetFile = toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(1, |s| text[..s.start].lines().count().max(1));
        Error::parse(path, line, e.message().to_string())
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mesh_path = base.join(&desc.mesh);
    let table_path = base.join(&desc.table);
    let carrier = load_mesh(&mesh_path)?;
    let table = load_patch_table(&table_path, carrier.id(), carrier.vertex_count())?;
    let mut inputs = vec![path.to_path_buf(), mesh_path, table_path];
    let mut examples = Vec::with_capacity(desc.examples.len());
    for (i, e) in desc.examples.iter().enumerate() {
        let target = match (e.target, e.class) {
            (Some(t), None) => Target::Value(t),
            (None, Some(c)) => Target::Class(c),
            (None, None) => Target::Value(f64::NAN),
            (Some(_), Some(_)) => {
                return Err(sit_core::Error::Validation(format!("example {i} has both a target and a class")).into())
            }
        };
        let fpath = base.join(&e.field);
        let (_, field) = load_field(&fpath)?;
        inputs.push(fpath);
        examples.push(Example { field, target, confound: e.confound, category: e.category });
    }
    let dataset = Dataset::new(table, examples)?;
    Ok(LoadedData { carrier, dataset, inputs })
}

/// Write `dataset` as a description file plus mesh, table and per-example
/// field files in `dir`. Returns the description path.
pub fn save_dataset(dir: &Path, carrier: &Mesh, dataset: &Dataset) -> Result<PathBuf> {
    let mut bare = carrier.clone();
    bare.clear_channels();
    save_mesh(&bare, &dir.join("mesh.surf"))?;
    save_patch_table(&dataset.table, &dir.join("patches.txt"))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, e) in dataset.examples.iter().enumerate() {
        let name = PathBuf::from(format!("example{i:04}.surf"));
        save_field(carrier, &e.field, &dir.join(&name))?;
        let (target, class) = match e.target {
            Target::Value(v) => (Some(v), None),
            Target::Class(c) => (None, Some(c)),
        };
        entries.push(ExampleEntry { field: name, target, class, confound: e.confound, category: e.category });
    }
    let desc = DatasetFile { mesh: "mesh.surf".into(), table: "patches.txt".into(), examples: entries };
    let path = dir.join("data.toml");
    write(&path, toml::to_string(&desc).expect("dataset description serializes"))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sit_core::mesh::build_icosphere;
    use sit_core::train::gen_synthetic;
    use sit_core::RngState;

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ico = build_icosphere(2).unwrap();
        let data = gen_synthetic(&ico, 3, &mut RngState::new(4)).unwrap();
        let p = save_dataset(dir.path(), &Mesh::Tri(ico.mesh().clone()), &data).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back.dataset.table, data.table);
        assert_eq!(back.inputs.len(), 6);
        for (a, b) in back.dataset.examples.iter().zip(&data.examples) {
            assert_eq!(a.field, b.field);
            assert_eq!(a.target.value().to_bits(), b.target.value().to_bits());
        }
    }
}
