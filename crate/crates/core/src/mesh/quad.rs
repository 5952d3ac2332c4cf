use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{edge_key, fingerprint, to_f64, validate_faces, Channel, MeshId, Vec3};
use crate::error::{bail, Result};

/// Quad mesh, possibly open. Faces are vertex-index quadruples; child `k` of
/// a subdivided face `f` is face `4f + k` and starts at the parent's corner
/// `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 4]>,
    boundary_edges: Vec<(usize, usize)>,
    parent_face: Vec<usize>,
    channels: Vec<Channel>,
    id: MeshId,
}

struct EdgeTable {
    /// Sorted `(min, max)` keys.
    keys: Vec<(usize, usize)>,
    /// Up to two incident faces per edge.
    faces: Vec<[usize; 2]>,
    counts: Vec<u8>,
}

impl EdgeTable {
    fn build(faces: &[[usize; 4]]) -> Result<Self> {
        let mut keys: Vec<(usize, usize)> = faces
            .iter()
            .flat_map(|f| (0..4).map(move |k| edge_key(f[k], f[(k + 1) % 4])))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let mut incident = vec![[usize::MAX; 2]; keys.len()];
        let mut counts = vec![0u8; keys.len()];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..4 {
                let key = edge_key(f[k], f[(k + 1) % 4]);
                let e = keys.binary_search(&key).expect("edge present");
                if counts[e] >= 2 {
                    bail!(Structure, "non-manifold edge ({}, {}) is shared by more than two faces", key.0, key.1);
                }
                incident[e][counts[e] as usize] = fi;
                counts[e] += 1;
            }
        }
        Ok(EdgeTable { keys, faces: incident, counts })
    }

    fn index(&self, a: usize, b: usize) -> usize {
        self.keys.binary_search(&edge_key(a, b)).expect("edge present")
    }

    fn boundary(&self) -> Vec<(usize, usize)> {
        self.keys.iter().zip(&self.counts).filter(|(_, &c)| c == 1).map(|(&k, _)| k).collect()
    }
}

impl QuadMesh {
    /// Validate indices and manifoldness and derive the boundary edge set.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 4]>) -> Result<Self> {
        validate_faces(vertices.len(), &faces)?;
        let edges = EdgeTable::build(&faces)?;
        let boundary_edges = edges.boundary();
        let id = fingerprint(4, &vertices, &faces);
        Ok(QuadMesh { vertices, faces, boundary_edges, parent_face: Vec::new(), channels: Vec::new(), id })
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 4]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Edges used by exactly one face, as sorted `(min, max)` pairs.
    pub fn boundary_edges(&self) -> &[(usize, usize)] {
        &self.boundary_edges
    }

    /// Parent face one subdivision step up; empty for a control mesh.
    pub fn parent_face(&self) -> &[usize] {
        &self.parent_face
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

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
}

fn add(acc: &mut [f64; 3], p: [f64; 3], w: f64) {
    acc[0] += w * p[0];
    acc[1] += w * p[1];
    acc[2] += w * p[2];
}

/// One Catmull-Clark step.
///
/// New vertex order: the repositioned original vertices, then one face point
/// per face, then one edge point per edge in ascending `(min, max)` order.
/// Boundary edges take the endpoint midpoint and boundary vertices the
/// cubic B-spline curve rule `3/4·v + 1/8·(left + right)`.
pub fn catmull_clark(mesh: &QuadMesh) -> Result<QuadMesh> {
    let nv = mesh.vertices.len();
    let nf = mesh.faces.len();
    let edges = EdgeTable::build(&mesh.faces)?;
    let ne = edges.keys.len();
    let pos: Vec<[f64; 3]> = mesh.vertices.iter().map(|&v| to_f64(v)).collect();

    let face_points: Vec<[f64; 3]> = mesh
        .faces
        .iter()
        .map(|f| {
            let mut c = [0.0; 3];
            for &i in f {
                add(&mut c, pos[i], 0.25);
            }
            c
        })
        .collect();

    let edge_points: Vec<[f64; 3]> = (0..ne)
        .map(|e| {
            let (a, b) = edges.keys[e];
            let mut p = [0.0; 3];
            if edges.counts[e] == 1 {
                add(&mut p, pos[a], 0.5);
                add(&mut p, pos[b], 0.5);
            } else {
                add(&mut p, pos[a], 0.25);
                add(&mut p, pos[b], 0.25);
                add(&mut p, face_points[edges.faces[e][0]], 0.25);
                add(&mut p, face_points[edges.faces[e][1]], 0.25);
            }
            p
        })
        .collect();

    // Per-vertex incidence.
    let mut vertex_faces: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &i in f {
            vertex_faces[i].push(fi);
        }
    }
    let mut vertex_edges: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (e, &(a, b)) in edges.keys.iter().enumerate() {
        vertex_edges[a].push(e);
        vertex_edges[b].push(e);
    }

    let mut vertex_points = Vec::with_capacity(nv);
    for v in 0..nv {
        let incident = &vertex_edges[v];
        if incident.is_empty() {
            vertex_points.push(pos[v]);
            continue;
        }
        let boundary: Vec<usize> = incident.iter().copied().filter(|&e| edges.counts[e] == 1).collect();
        let mut p = [0.0; 3];
        if boundary.is_empty() {
            let n = incident.len() as f64;
            let mut q = [0.0; 3];
            for &f in &vertex_faces[v] {
                add(&mut q, face_points[f], 1.0 / vertex_faces[v].len() as f64);
            }
            let mut r = [0.0; 3];
            for &e in incident {
                let (a, b) = edges.keys[e];
                add(&mut r, pos[a], 0.5 / n);
                add(&mut r, pos[b], 0.5 / n);
            }
            add(&mut p, q, 1.0 / n);
            add(&mut p, r, 2.0 / n);
            add(&mut p, pos[v], (n - 3.0) / n);
        } else {
            if boundary.len() != 2 {
                bail!(Structure, "non-manifold boundary at vertex {} ({} boundary edges)", v, boundary.len());
            }
            add(&mut p, pos[v], 0.75);
            for &e in &boundary {
                let (a, b) = edges.keys[e];
                add(&mut p, pos[if a == v { b } else { a }], 0.125);
            }
        }
        vertex_points.push(p);
    }

    let mut vertices = Vec::with_capacity(nv + nf + ne);
    for p in vertex_points.iter().chain(&face_points).chain(&edge_points) {
        vertices.push([p[0] as f32, p[1] as f32, p[2] as f32]);
    }

    let face_point = |f: usize| nv + f;
    let edge_point = |a: usize, b: usize| nv + nf + edges.index(a, b);
    let mut faces = Vec::with_capacity(4 * nf);
    let mut parent_face = Vec::with_capacity(4 * nf);
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..4 {
            let next = f[(k + 1) % 4];
            let prev = f[(k + 3) % 4];
            faces.push([f[k], edge_point(f[k], next), face_point(fi), edge_point(prev, f[k])]);
            parent_face.push(fi);
        }
    }

    let mut out = QuadMesh::new(vertices, faces)?;
    out.parent_face = parent_face;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cube() -> QuadMesh {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        let f = vec![[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]];
        QuadMesh::new(v, f).unwrap()
    }

    #[test]
    fn cube_counts() {
        let c = cube();
        assert!(c.boundary_edges().is_empty());
        let s = catmull_clark(&c).unwrap();
        assert_eq!((s.vertex_count(), s.face_count()), (26, 24));
        assert!(s.boundary_edges().is_empty());
        assert_eq!(s.parent_face().len(), 24);
    }

    #[test]
    fn cube_corner_follows_interior_stencil() {
        // Corner (0,0,0): valence 3, Q = mean of three face centres,
        // R = mean of three edge midpoints, new = (Q + 2R)/3.
        let s = catmull_clark(&cube()).unwrap();
        let q = [1.0 / 3.0 * 0.5 * 2.0; 3]; // faces at x=0,y=0,z=0: centres average to 1/3
        let r = [1.0 / 6.0; 3];
        let want: Vec<f64> = (0..3).map(|k| (q[k] + 2.0 * r[k]) / 3.0).collect();
        for k in 0..3 {
            assert!((s.vertices()[0][k] as f64 - want[k]).abs() < 1e-6, "{:?}", s.vertices()[0]);
        }
    }

    #[test]
    fn single_quad_with_boundary() {
        let q = QuadMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2, 3]])
            .unwrap();
        assert_eq!(q.boundary_edges().len(), 4);
        let s = catmull_clark(&q).unwrap();
        assert_eq!((s.vertex_count(), s.face_count()), (9, 4));
        assert_eq!(s.boundary_edges().len(), 8);
        // corner rule: 3/4·(0,0) + 1/8·((1,0) + (0,1))
        assert_eq!(s.vertices()[0], [0.125, 0.125, 0.0]);
        // boundary edge point is the midpoint
        let e01 = 4 + 1 + 0; // edges sorted: (0,1),(0,3),(1,2),(2,3)
        assert_eq!(s.vertices()[e01], [0.5, 0.0, 0.0]);
    }

    #[test]
    fn boundary_doubles_per_step() {
        let q = QuadMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [2.0, 1.0, 0.0]],
            vec![[0, 1, 4, 3], [1, 2, 5, 4]],
        )
        .unwrap();
        let mut m = q;
        let mut b = m.boundary_edges().len();
        for _ in 0..3 {
            m = catmull_clark(&m).unwrap();
            assert_eq!(m.boundary_edges().len(), 2 * b);
            b = m.boundary_edges().len();
        }
        assert_eq!(m.face_count(), 2 * 64);
    }

    #[test]
    fn non_manifold_edge_named() {
        let v = vec![[0.0; 3]; 8];
        let f = vec![[0, 1, 2, 3], [1, 0, 4, 5], [0, 1, 6, 7]];
        match QuadMesh::new(v, f) {
            Err(crate::Error::Structure(msg)) => assert!(msg.contains("(0, 1)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(catmull_clark(&cube()).unwrap(), catmull_clark(&cube()).unwrap());
    }
}
