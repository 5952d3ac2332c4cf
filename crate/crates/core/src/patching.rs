//! Patch tables (mesh vertices → token patches) and flattened patch
//! sequences.
//!
//! Icosphere patches are the fine vertices inside one face of a coarser
//! icosphere; quad patches are the 5×5 descendant grids of control elements,
//! optionally concatenated in pairs. Vertices on patch boundaries are
//! duplicated into every incident patch.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::mesh::{Icosphere, MeshId, QuadMesh};
use crate::resample::FeatureField;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTable {
    n: usize,
    v: usize,
    rows: Vec<usize>,
    carrier: MeshId,
    carrier_vertex_count: usize,
}

impl PatchTable {
    /// `rows` holds `n · v` vertex indices, row-major.
    pub fn new(rows: Vec<usize>, v: usize, carrier: MeshId, carrier_vertex_count: usize) -> Result<Self> {
        if v == 0 || rows.is_empty() || rows.len() % v != 0 {
            bail!(Shape, "{} indices do not form rows of {} vertices", rows.len(), v);
        }
        let mut seen = vec![false; carrier_vertex_count];
        for (k, &i) in rows.iter().enumerate() {
            if i >= carrier_vertex_count {
                bail!(Validation, "row {} references vertex {} of a {}-vertex mesh", k / v, i, carrier_vertex_count);
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            bail!(Validation, "vertex {} is not covered by any patch", missing);
        }
        Ok(PatchTable { n: rows.len() / v, v, rows, carrier, carrier_vertex_count })
    }

    pub fn patch_count(&self) -> usize {
        self.n
    }

    pub fn vertices_per_patch(&self) -> usize {
        self.v
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r * self.v..(r + 1) * self.v]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.rows.chunks(self.v)
    }

    pub fn carrier(&self) -> MeshId {
        self.carrier
    }

    pub fn carrier_vertex_count(&self) -> usize {
        self.carrier_vertex_count
    }

    /// How many patches each carrier vertex belongs to.
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut m = vec![0; self.carrier_vertex_count];
        for &i in &self.rows {
            m[i] += 1;
        }
        m
    }
}

/// Offset of row `j` in a triangular grid of side `n`. Rows run parallel
/// to the edge corner0→corner1 (`j` fixed), starting at that edge; within a
/// row, `i` increases away from corner 0.
fn tri_row_offset(n: usize, j: usize) -> usize {
    j * (n + 1) - j * j.saturating_sub(1) / 2
}

/// Corners of child `d` of a triangle, as in icosphere subdivision.
fn tri_child(corners: [(usize, usize); 3], d: usize) -> [(usize, usize); 3] {
    const CHILDREN: [[(usize, usize); 3]; 4] = [
        [(0, 0), (0, 1), (2, 0)],
        [(1, 1), (1, 2), (0, 1)],
        [(2, 2), (2, 0), (1, 2)],
        [(0, 1), (1, 2), (2, 0)],
    ];
    CHILDREN[d].map(|(a, b)| {
        let (pa, pb) = (corners[a], corners[b]);
        ((pa.0 + pb.0) / 2, (pa.1 + pb.1) / 2)
    })
}

/// Each coarse face becomes one patch holding every fine vertex inside it,
/// in row-major triangular-grid order.
pub fn build_ico_patch_table(fine: &Icosphere, coarse: &Icosphere) -> Result<PatchTable> {
    if fine.order() < coarse.order() {
        bail!(Structure, "fine icosphere (order {}) is coarser than the patch grid (order {})", fine.order(), coarse.order());
    }
    let levels = fine.order() - coarse.order();
    let cv = coarse.mesh().vertex_count();
    if fine.mesh().vertex_count() < cv || fine.mesh().vertices()[..cv] != *coarse.mesh().vertices() {
        bail!(Structure, "meshes do not share subdivision lineage: coarse vertices are not a prefix of the fine mesh");
    }
    let n = 1usize << levels;
    let per_patch = (n + 1) * (n + 2) / 2;
    let mut rows = Vec::with_capacity(coarse.mesh().face_count() * per_patch);
    for (f, corners_idx) in coarse.mesh().faces().iter().enumerate() {
        let mut slots = vec![usize::MAX; per_patch];
        for g in fine.descendant_faces(f, levels) {
            let local = g - f * (1usize << (2 * levels));
            let mut corners = [(0, 0), (n, 0), (0, n)];
            for level in (0..levels).rev() {
                corners = tri_child(corners, (local >> (2 * level)) & 3);
            }
            for (k, &(i, j)) in corners.iter().enumerate() {
                let vtx = fine.mesh().faces()[g][k];
                let slot = tri_row_offset(n, j) + i;
                if slots[slot] != usize::MAX && slots[slot] != vtx {
                    bail!(Structure, "lattice point ({}, {}) of coarse face {} maps to vertices {} and {}", i, j, f, slots[slot], vtx);
                }
                slots[slot] = vtx;
            }
        }
        for (k, &(i, j)) in [(0, 0), (n, 0), (0, n)].iter().enumerate() {
            if slots[tri_row_offset(n, j) + i] != corners_idx[k] {
                bail!(Structure, "corner {} of coarse face {} is not a corner of its descendants", k, f);
            }
        }
        rows.extend_from_slice(&slots);
    }
    PatchTable::new(rows, per_patch, fine.mesh().id(), fine.mesh().vertex_count())
}

/// Corners of child `k` of a quad: the parent corner, the next edge
/// midpoint, the centre, the previous edge midpoint.
fn quad_child(corners: [(usize, usize); 4], k: usize) -> [(usize, usize); 4] {
    let mid = |a: (usize, usize), b: (usize, usize)| ((a.0 + b.0) / 2, (a.1 + b.1) / 2);
    let centre = mid(corners[0], corners[2]);
    [corners[k], mid(corners[k], corners[(k + 1) % 4]), centre, mid(corners[(k + 3) % 4], corners[k])]
}

/// The `(2^levels + 1)²` descendant vertices of each control element, in
/// row-major order (rows run from corner 0 towards corner 3).
fn quad_grids(control: &QuadMesh, fine: &QuadMesh, levels: u32) -> Result<Vec<Vec<usize>>> {
    let span = 1usize << (2 * levels);
    if fine.face_count() != control.face_count() * span {
        bail!(
            Structure,
            "fine mesh has {} faces; {} subdivision steps of {} elements give {}",
            fine.face_count(),
            levels,
            control.face_count(),
            control.face_count() * span
        );
    }
    let n = 1usize << levels;
    let side = n + 1;
    let mut grids = Vec::with_capacity(control.face_count());
    for (f, element) in control.faces().iter().enumerate() {
        let mut slots = vec![usize::MAX; side * side];
        for local in 0..span {
            let g = f * span + local;
            let mut corners = [(0, 0), (n, 0), (n, n), (0, n)];
            for level in (0..levels).rev() {
                corners = quad_child(corners, (local >> (2 * level)) & 3);
            }
            for (k, &(u, v)) in corners.iter().enumerate() {
                let vtx = fine.faces()[g][k];
                let slot = v * side + u;
                if slots[slot] != usize::MAX && slots[slot] != vtx {
                    bail!(Structure, "grid point ({}, {}) of element {} maps to vertices {} and {}", u, v, f, slots[slot], vtx);
                }
                slots[slot] = vtx;
            }
        }
        for (k, &(u, v)) in [(0, 0), (n, 0), (n, n), (0, n)].iter().enumerate() {
            if slots[v * side + u] != element[k] {
                bail!(Structure, "corner {} of element {} is not inherited by the fine mesh", k, f);
            }
        }
        grids.push(slots);
    }
    Ok(grids)
}

/// Quad patches from a control mesh and its twice-subdivided refinement.
/// Without a pairing every element is a 25-vertex patch; with one, each
/// pair `(a, b)` yields the 50-vertex row `grid(a) ++ grid(b)`.
pub fn build_quad_patch_table(control: &QuadMesh, fine: &QuadMesh, pairing: Option<&[(usize, usize)]>) -> Result<PatchTable> {
    let grids = quad_grids(control, fine, 2)?;
    let mut rows = Vec::new();
    let v = match pairing {
        None => {
            for g in &grids {
                rows.extend_from_slice(g);
            }
            25
        }
        Some(pairs) => {
            let mut used = vec![false; grids.len()];
            for &(a, b) in pairs {
                for e in [a, b] {
                    if e >= grids.len() {
                        bail!(Validation, "pairing references element {} of a {}-element control mesh", e, grids.len());
                    }
                    if used[e] {
                        bail!(Validation, "element {} appears in more than one pair", e);
                    }
                    used[e] = true;
                }
                rows.extend_from_slice(&grids[a]);
                rows.extend_from_slice(&grids[b]);
            }
            let unpaired: Vec<String> =
                used.iter().enumerate().filter(|(_, &u)| !u).map(|(i, _)| alloc::format!("{i}")).collect();
            if !unpaired.is_empty() {
                bail!(Validation, "unpaired elements: {}", unpaired.join(", "));
            }
            50
        }
    };
    PatchTable::new(rows, v, fine.id(), fine.vertex_count())
}

/// Flattened patches `X̃ ∈ R^{N×(V·C)}`, vertex-major within each row: all
/// channels of the row's first vertex, then the second vertex, …
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub n: usize,
    pub v: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl PatchSequence {
    pub fn row_len(&self) -> usize {
        self.v * self.c
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::matrix(self.n, self.row_len(), self.data.iter().map(|&x| T::of(x as f64)).collect())
            .expect("sequence dimensions are consistent")
    }
}

pub fn extract_sequence(field: &FeatureField, table: &PatchTable) -> Result<PatchSequence> {
    if field.mesh_id() != table.carrier || field.vertex_count() != table.carrier_vertex_count {
        bail!(Shape, "field carrier {:?} does not match patch table carrier {:?}", field.mesh_id(), table.carrier);
    }
    let c = field.channel_count();
    let mut data = Vec::with_capacity(table.rows.len() * c);
    for &vtx in &table.rows {
        data.extend_from_slice(field.vertex(vtx));
    }
    Ok(PatchSequence { n: table.n, v: table.v, c, data })
}

/// Inverse of [`extract_sequence`]: every vertex receives the mean of its
/// copies across patches.
pub fn scatter_mean(seq: &PatchSequence, table: &PatchTable, channel_names: Vec<String>) -> Result<FeatureField> {
    if seq.n != table.n || seq.v != table.v || channel_names.len() != seq.c {
        bail!(Shape, "sequence {}×{}×{} does not match table {}×{}", seq.n, seq.v, seq.c, table.n, table.v);
    }
    let c = seq.c;
    let mut acc = vec![0.0f64; table.carrier_vertex_count * c];
    let mult = table.multiplicity();
    for (k, &vtx) in table.rows.iter().enumerate() {
        for ch in 0..c {
            acc[vtx * c + ch] += seq.data[k * c + ch] as f64;
        }
    }
    let values = acc.iter().enumerate().map(|(i, &s)| (s / mult[i / c] as f64) as f32).collect();
    FeatureField::new(table.carrier, channel_names, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_icosphere, catmull_clark};
    use alloc::string::ToString;

    #[test]
    fn tri_offsets() {
        // n = 2: rows of 3, 2, 1
        assert_eq!(tri_row_offset(2, 0), 0);
        assert_eq!(tri_row_offset(2, 1), 3);
        assert_eq!(tri_row_offset(2, 2), 5);
    }

    #[test]
    fn small_ico_table() {
        let fine = build_icosphere(3).unwrap();
        let coarse = build_icosphere(1).unwrap();
        let t = build_ico_patch_table(&fine, &coarse).unwrap();
        assert_eq!((t.patch_count(), t.vertices_per_patch()), (80, 15));
        // first row entry is coarse corner 0, last is corner 2
        for (f, row) in t.rows().enumerate() {
            assert_eq!(row[0], coarse.mesh().faces()[f][0]);
            assert_eq!(row[4], coarse.mesh().faces()[f][1]);
            assert_eq!(row[14], coarse.mesh().faces()[f][2]);
        }
        let census: usize = t.multiplicity().iter().sum();
        assert_eq!(census, 80 * 15);
    }

    #[test]
    fn same_order_gives_single_faces() {
        let ico = build_icosphere(1).unwrap();
        let t = build_ico_patch_table(&ico, &ico).unwrap();
        assert_eq!((t.patch_count(), t.vertices_per_patch()), (80, 3));
    }

    #[test]
    fn unrelated_meshes_rejected() {
        let fine = build_icosphere(2).unwrap();
        let coarse = build_icosphere(3).unwrap();
        assert!(matches!(build_ico_patch_table(&fine, &coarse), Err(crate::Error::Structure(_))));
    }

    fn sheet() -> QuadMesh {
        // 2×2 sheet of quads
        let mut v = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                v.push([x as f32, y as f32, 0.0]);
            }
        }
        let f = vec![[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6], [4, 5, 8, 7]];
        QuadMesh::new(v, f).unwrap()
    }

    #[test]
    fn quad_table_single_elements() {
        let control = sheet();
        let fine = catmull_clark(&catmull_clark(&control).unwrap()).unwrap();
        let t = build_quad_patch_table(&control, &fine, None).unwrap();
        assert_eq!((t.patch_count(), t.vertices_per_patch()), (4, 25));
        assert_eq!(fine.vertex_count(), 81);
        // row-major: first row starts at corner 0 and ends at corner 1
        assert_eq!(t.row(0)[0], 0);
        assert_eq!(t.row(0)[4], 1);
        assert_eq!(t.row(0)[24], 4);
    }

    #[test]
    fn quad_table_pairing_errors() {
        let control = sheet();
        let fine = catmull_clark(&catmull_clark(&control).unwrap()).unwrap();
        let paired = build_quad_patch_table(&control, &fine, Some(&[(0, 1), (2, 3)])).unwrap();
        assert_eq!((paired.patch_count(), paired.vertices_per_patch()), (2, 50));
        match build_quad_patch_table(&control, &fine, Some(&[(0, 1), (1, 3)])) {
            Err(crate::Error::Validation(m)) => assert!(m.contains("element 1"), "{m}"),
            other => panic!("{other:?}"),
        }
        match build_quad_patch_table(&control, &fine, Some(&[(0, 1)])) {
            Err(crate::Error::Validation(m)) => assert!(m.contains("2, 3"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quad_table_needs_two_levels() {
        let control = sheet();
        let once = catmull_clark(&control).unwrap();
        assert!(build_quad_patch_table(&control, &once, None).is_err());
    }

    #[test]
    fn extract_and_scatter() {
        let fine = build_icosphere(2).unwrap();
        let coarse = build_icosphere(0).unwrap();
        let t = build_ico_patch_table(&fine, &coarse).unwrap();
        let vals: Vec<f32> = (0..fine.mesh().vertex_count() * 2).map(|i| i as f32 * 0.5).collect();
        let names = vec!["a".to_string(), "b".to_string()];
        let field = FeatureField::new(fine.mesh().id(), names.clone(), vals).unwrap();
        let seq = extract_sequence(&field, &t).unwrap();
        assert_eq!((seq.n, seq.row_len()), (20, 15 * 2));
        let vtx = t.row(3)[5];
        assert_eq!(&seq.row(3)[10..12], field.vertex(vtx));
        let back = scatter_mean(&seq, &t, names).unwrap();
        assert_eq!(back.values(), field.values());
    }

    #[test]
    fn table_rejects_uncovered_vertices() {
        assert!(PatchTable::new(vec![0, 1, 2], 3, MeshId(0), 4).is_err());
        assert!(PatchTable::new(vec![0, 1, 2, 3], 2, MeshId(0), 4).is_ok());
    }
}
