use alloc::vec::Vec;
use core::ops::Range;

use super::{edge_key, normalize3, TriMesh};
use crate::error::{bail, Result};

/// Orders above this would allocate well over a million faces.
pub const MAX_ICOSPHERE_ORDER: u32 = 8;

/// Corners of each child triangle in terms of the parent's corners `0..3`
/// and edge midpoints `(a, b)`. Child `k` of face `f` is face `4f + k`.
pub(crate) const TRI_CHILDREN: [[(usize, usize); 3]; 4] = [
    [(0, 0), (0, 1), (2, 0)],
    [(1, 1), (1, 2), (0, 1)],
    [(2, 2), (2, 0), (1, 2)],
    [(0, 1), (1, 2), (2, 0)],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Icosphere {
    order: u32,
    mesh: TriMesh,
    parent_face: Vec<usize>,
}

impl Icosphere {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriMesh {
        self.mesh
    }

    /// Parent face at order `n − 1` for each face; empty at order 0.
    pub fn parent_face(&self) -> &[usize] {
        &self.parent_face
    }

    /// Faces of this sphere descending from face `face` of the sphere
    /// `levels` orders coarser. Contiguous because children of `f` occupy
    /// `4f..4f+4`.
    pub fn descendant_faces(&self, face: usize, levels: u32) -> Range<usize> {
        let span = 1usize << (2 * levels);
        face * span..(face + 1) * span
    }

    pub fn expected_vertex_count(order: u32) -> usize {
        10 * (1usize << (2 * order)) + 2
    }

    pub fn expected_face_count(order: u32) -> usize {
        20 * (1usize << (2 * order))
    }
}

fn icosahedron() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + libm::sqrt(5.0)) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&v| normalize3(v)).collect();
    let faces = alloc::vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// One midpoint subdivision step. New vertices are appended in ascending
/// `(min, max)` parent-edge order and projected to the unit sphere.
fn subdivide(vertices: &mut Vec<[f64; 3]>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| (0..3).map(move |k| edge_key(f[k], f[(k + 1) % 3])))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let base = vertices.len();
    vertices.reserve(edges.len());
    for &(a, b) in &edges {
        let (pa, pb) = (vertices[a], vertices[b]);
        vertices.push(normalize3([(pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5, (pa[2] + pb[2]) * 0.5]));
    }
    let mid = |a: usize, b: usize| base + edges.binary_search(&edge_key(a, b)).expect("edge present");

    let mut out = Vec::with_capacity(faces.len() * 4);
    for f in faces {
        let corner = |(a, b): (usize, usize)| if a == b { f[a] } else { mid(f[a], f[b]) };
        for child in TRI_CHILDREN {
            out.push([corner(child[0]), corner(child[1]), corner(child[2])]);
        }
    }
    out
}

/// The regular icosahedron subdivided `order` times.
pub fn build_icosphere(order: u32) -> Result<Icosphere> {
    if order > MAX_ICOSPHERE_ORDER {
        bail!(ResourceLimit, "icosphere order {} exceeds the limit of {}", order, MAX_ICOSPHERE_ORDER);
    }
    let (mut vertices, mut faces) = icosahedron();
    for _ in 0..order {
        faces = subdivide(&mut vertices, &faces);
    }
    let parent_face = if order == 0 { Vec::new() } else { (0..faces.len()).map(|g| g / 4).collect() };
    let verts = vertices.iter().map(|v| [v[0] as f32, v[1] as f32, v[2] as f32]).collect();
    let mesh = TriMesh::new(verts, faces)?;
    Ok(Icosphere { order, mesh, parent_face })
}
