//! Triangulated icospheres and subdivided quad meshes, with the subdivision
//! lineage the patchers rely on.

mod icosphere;
mod quad;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};

pub use icosphere::{build_icosphere, Icosphere, MAX_ICOSPHERE_ORDER};
pub use quad::{catmull_clark, QuadMesh};

pub type Vec3 = [f32; 3];

/// Identity of a carrier mesh: a fingerprint of its vertex positions and
/// connectivity. Fields and tables record the id of the mesh they live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeshId(pub u64);

#[derive(Default)]
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

pub(crate) fn fingerprint<const K: usize>(tag: u8, vertices: &[Vec3], faces: &[[usize; K]]) -> MeshId {
    let mut h = Fnv::new();
    h.write(&[tag]);
    h.write(&(vertices.len() as u64).to_le_bytes());
    h.write(&(faces.len() as u64).to_le_bytes());
    for v in vertices {
        for c in v {
            h.write(&c.to_bits().to_le_bytes());
        }
    }
    for f in faces {
        for &i in f {
            h.write(&(i as u64).to_le_bytes());
        }
    }
    MeshId(h.0)
}

/// A named per-vertex scalar array.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    channels: Vec<Channel>,
    id: MeshId,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        validate_faces(vertices.len(), &faces)?;
        let id = fingerprint(3, &vertices, &faces);
        Ok(TriMesh { vertices, faces, channels: Vec::new(), id })
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Attach a per-vertex channel. Channels do not affect the mesh id.
    pub fn add_channel(&mut self, name: impl Into<String>, values: Vec<f32>) -> Result<()> {
        if values.len() != self.vertices.len() {
            bail!(Shape, "channel has {} values for {} vertices", values.len(), self.vertices.len());
        }
        self.channels.push(Channel { name: name.into(), values });
        Ok(())
    }

    pub fn clear_channels(&mut self) {
        self.channels.clear();
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| edge_key(f[k], f[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }
}

#[inline]
pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn validate_faces<const K: usize>(vertex_count: usize, faces: &[[usize; K]]) -> Result<()> {
    for (fi, f) in faces.iter().enumerate() {
        for &i in f {
            if i >= vertex_count {
                bail!(Validation, "face {} references vertex {} but the mesh has {} vertices", fi, i, vertex_count);
            }
        }
        for a in 0..K {
            for b in a + 1..K {
                if f[a] == f[b] {
                    bail!(Validation, "face {} is degenerate: {:?}", fi, f);
                }
            }
        }
    }
    Ok(())
}

/// Either kind of mesh, as read from the native file format.
#[derive(Debug, Clone, PartialEq)]
pub enum Mesh {
    Tri(TriMesh),
    Quad(QuadMesh),
}

impl Mesh {
    pub fn id(&self) -> MeshId {
        match self {
            Mesh::Tri(m) => m.id(),
            Mesh::Quad(m) => m.id(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        match self {
            Mesh::Tri(m) => m.vertices(),
            Mesh::Quad(m) => m.vertices(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices().len()
    }

    pub fn channels(&self) -> &[Channel] {
        match self {
            Mesh::Tri(m) => m.channels(),
            Mesh::Quad(m) => m.channels(),
        }
    }

    pub fn add_channel(&mut self, name: impl Into<String>, values: Vec<f32>) -> Result<()> {
        match self {
            Mesh::Tri(m) => m.add_channel(name, values),
            Mesh::Quad(m) => m.add_channel(name, values),
        }
    }

    pub fn clear_channels(&mut self) {
        match self {
            Mesh::Tri(m) => m.clear_channels(),
            Mesh::Quad(m) => m.clear_channels(),
        }
    }

    /// All channels of the mesh as a field.
    pub fn field(&self) -> Result<crate::resample::FeatureField> {
        crate::resample::FeatureField::from_channel_columns(
            self.id(),
            self.vertex_count(),
            self.channels().iter().map(|c| (c.name.as_str(), c.values.as_slice())),
        )
    }
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn to_f64(v: Vec3) -> [f64; 3] {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

pub(crate) fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = libm::sqrt(dot3(v, v));
    [v[0] / n, v[1] / n, v[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_out_of_range_face() {
        let verts = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriMesh::new(verts.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(verts.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(verts, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn channel_length_checked() {
        let mut m = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(m.add_channel("a", vec![1.0; 2]).is_err());
        m.add_channel("a", vec![1.0; 3]).unwrap();
        assert_eq!(m.channels().len(), 1);
    }
}
