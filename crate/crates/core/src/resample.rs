//! Barycentric resampling of per-vertex data between spherical meshes, and
//! rotation augmentation expressed as resampling tables.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::mesh::{cross3, dot3, to_f64, Icosphere, MeshId, TriMesh};

/// Per-vertex multi-channel data on a carrier mesh, stored vertex-major
/// (`values[v * C + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    mesh_id: MeshId,
    channels: usize,
    values: Vec<f32>,
    channel_names: Vec<String>,
}

impl FeatureField {
    pub fn new(mesh_id: MeshId, channel_names: Vec<String>, values: Vec<f32>) -> Result<Self> {
        let channels = channel_names.len();
        if channels == 0 {
            bail!(Shape, "a feature field needs at least one channel");
        }
        if values.len() % channels != 0 {
            bail!(Shape, "{} values do not divide into {} channels", values.len(), channels);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(Validation, "non-finite value at vertex {} channel {}", i / channels, i % channels);
        }
        Ok(FeatureField { mesh_id, channels, values, channel_names })
    }

    /// Gather the named channels of `mesh` into a field; all channels when
    /// `names` is empty.
    pub fn from_mesh(mesh: &TriMesh, names: &[&str]) -> Result<Self> {
        let chans: Vec<_> = if names.is_empty() {
            mesh.channels().iter().collect()
        } else {
            names
                .iter()
                .map(|n| {
                    mesh.channels()
                        .iter()
                        .find(|c| c.name == *n)
                        .ok_or_else(|| crate::Error::Argument(alloc::format!("mesh has no channel named {n:?}")))
                })
                .collect::<Result<_>>()?
        };
        Self::from_channel_columns(mesh.id(), mesh.vertex_count(), chans.iter().map(|c| (c.name.as_str(), c.values.as_slice())))
    }

    pub fn from_channel_columns<'a>(
        mesh_id: MeshId,
        vertex_count: usize,
        columns: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    ) -> Result<Self> {
        let columns: Vec<(&str, &[f32])> = columns.into_iter().collect();
        let c = columns.len();
        let mut values = vec![0.0f32; vertex_count * c];
        for (k, (name, col)) in columns.iter().enumerate() {
            if col.len() != vertex_count {
                bail!(Shape, "channel {:?} has {} values for {} vertices", name, col.len(), vertex_count);
            }
            for v in 0..vertex_count {
                values[v * c + k] = col[v];
            }
        }
        Self::new(mesh_id, columns.iter().map(|(n, _)| String::from(*n)).collect(), values)
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh_id
    }

    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn vertex_count(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, vertex: usize, channel: usize) -> f32 {
        self.values[vertex * self.channels + channel]
    }

    pub fn vertex(&self, vertex: usize) -> &[f32] {
        &self.values[vertex * self.channels..(vertex + 1) * self.channels]
    }

    /// One channel as a contiguous column.
    pub fn column(&self, channel: usize) -> Vec<f32> {
        self.values.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    /// Reorder channels: output channel `k` is input channel `order[k]`.
    pub fn permute_channels(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.channels || order.iter().any(|&k| k >= self.channels) {
            bail!(Argument, "invalid channel permutation {:?}", order);
        }
        let c = self.channels;
        let mut values = vec![0.0; self.values.len()];
        for v in 0..self.vertex_count() {
            for (k, &src) in order.iter().enumerate() {
                values[v * c + k] = self.values[v * c + src];
            }
        }
        let names = order.iter().map(|&k| self.channel_names[k].clone()).collect();
        Self::new(self.mesh_id, names, values)
    }
}

/// Source face and barycentric weights for one destination vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleEntry {
    pub face: usize,
    pub vertices: [usize; 3],
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleTable {
    src: MeshId,
    src_vertex_count: usize,
    dst: Option<MeshId>,
    entries: Vec<ResampleEntry>,
}

impl ResampleTable {
    /// Rebuild a table from `(face, weights)` rows against its source mesh.
    pub fn from_rows(src: &TriMesh, rows: &[(usize, [f64; 3])]) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows.len());
        for (d, &(face, weights)) in rows.iter().enumerate() {
            if face >= src.face_count() {
                bail!(Validation, "row {} references face {} of a mesh with {} faces", d, face, src.face_count());
            }
            let sum: f64 = weights.iter().sum();
            if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                bail!(Validation, "row {} weights {:?} are not a partition of unity", d, weights);
            }
            entries.push(ResampleEntry { face, vertices: src.faces()[face], weights });
        }
        Ok(ResampleTable { src: src.id(), src_vertex_count: src.vertex_count(), dst: None, entries })
    }

    pub fn src(&self) -> MeshId {
        self.src
    }

    pub fn dst(&self) -> Option<MeshId> {
        self.dst
    }

    pub fn src_vertex_count(&self) -> usize {
        self.src_vertex_count
    }

    pub fn dst_vertex_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ResampleEntry] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    fn grow(&mut self, p: [f64; 3]) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        self.grow(o.min);
        self.grow(o.max);
    }

    /// Does the ray `t·dir, t ≥ 0` meet the box (padded by `pad`)?
    fn hit_by_ray(&self, dir: [f64; 3], pad: f64) -> bool {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            let (lo, hi) = (self.min[k] - pad, self.max[k] + pad);
            if dir[k].abs() < 1e-300 {
                if lo > 0.0 || hi < 0.0 {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = (lo * inv, hi * inv);
            if a > b {
                core::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

enum Node {
    Leaf { bounds: Aabb, faces: Vec<usize> },
    Inner { bounds: Aabb, children: [usize; 2] },
}

/// Bounding-volume hierarchy over the faces of a spherical mesh, queried by
/// rays from the origin.
struct FaceLocator<'a> {
    mesh: &'a TriMesh,
    pos: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;
const HIT_TOLERANCE: f64 = 1e-12;

impl<'a> FaceLocator<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        let pos: Vec<[f64; 3]> = mesh.vertices().iter().map(|&v| to_f64(v)).collect();
        let mut loc = FaceLocator { mesh, pos, nodes: Vec::new() };
        let mut order: Vec<usize> = (0..mesh.face_count()).collect();
        if !order.is_empty() {
            loc.build(&mut order);
        }
        loc
    }

    fn face_bounds(&self, f: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &i in &self.mesh.faces()[f] {
            b.grow(self.pos[i]);
        }
        b
    }

    fn centroid(&self, f: usize) -> [f64; 3] {
        let [a, b, c] = self.mesh.faces()[f].map(|i| self.pos[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0]
    }

    fn build(&mut self, faces: &mut [usize]) -> usize {
        let mut bounds = Aabb::empty();
        for &f in faces.iter() {
            bounds.merge(&self.face_bounds(f));
        }
        if faces.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, faces: faces.to_vec() });
            return self.nodes.len() - 1;
        }
        let mut cb = Aabb::empty();
        for &f in faces.iter() {
            cb.grow(self.centroid(f));
        }
        let ext = [cb.max[0] - cb.min[0], cb.max[1] - cb.min[1], cb.max[2] - cb.min[2]];
        let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
            0
        } else if ext[1] >= ext[2] {
            1
        } else {
            2
        };
        let keys: Vec<(f64, usize)> = faces.iter().map(|&f| (self.centroid(f)[axis], f)).collect();
        let mut keyed = keys;
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, (_, f)) in faces.iter_mut().zip(keyed) {
            *slot = f;
        }
        let mid = faces.len() / 2;
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { bounds, faces: Vec::new() });
        let (left, right) = faces.split_at_mut(mid);
        let l = self.build(left);
        let r = self.build(right);
        self.nodes[idx] = Node::Inner { bounds, children: [l, r] };
        idx
    }

    /// Solve `p = α·a + β·b + γ·c`; the normalized coefficients are the
    /// barycentric coordinates of the ray's hit on the face plane.
    fn coefficients(&self, f: usize, p: [f64; 3]) -> [f64; 3] {
        let [a, b, c] = self.mesh.faces()[f].map(|i| self.pos[i]);
        let det = dot3(a, cross3(b, c));
        [dot3(p, cross3(b, c)) / det, dot3(a, cross3(p, c)) / det, dot3(a, cross3(b, p)) / det]
    }

    fn locate(&self, p: [f64; 3]) -> (usize, [f64; 3], bool) {
        let mut best: Option<(usize, [f64; 3])> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { bounds, faces } => {
                    if !bounds.hit_by_ray(p, 1e-9) {
                        continue;
                    }
                    for &f in faces {
                        if best.is_some_and(|(b, _)| b < f) {
                            continue;
                        }
                        let x = self.coefficients(f, p);
                        let sum = x[0] + x[1] + x[2];
                        if sum > 0.0 && x.iter().all(|&w| w >= -HIT_TOLERANCE * sum) {
                            best = Some((f, x));
                        }
                    }
                }
                Node::Inner { bounds, children } => {
                    if bounds.hit_by_ray(p, 1e-9) {
                        stack.extend_from_slice(children);
                    }
                }
            }
        }
        if let Some((f, x)) = best {
            return (f, normalize_weights(x), true);
        }
        // Numerical miss: nearest face by centroid direction.
        let f = (0..self.mesh.face_count())
            .max_by(|&a, &b| {
                let (ca, cb) = (self.centroid(a), self.centroid(b));
                let da = dot3(ca, p) / libm::sqrt(dot3(ca, ca));
                let db = dot3(cb, p) / libm::sqrt(dot3(cb, cb));
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("mesh has faces");
        (f, normalize_weights(self.coefficients(f, p)), false)
    }
}

fn normalize_weights(x: [f64; 3]) -> [f64; 3] {
    let clamped = x.map(|w| if w > 0.0 { w } else { 0.0 });
    let sum: f64 = clamped.iter().sum();
    if !(sum > 0.0) {
        return [1.0 / 3.0; 3];
    }
    let w = clamped.map(|v| v / sum);
    for k in 0..3 {
        if w[k] >= 1.0 - 1e-12 {
            let mut one_hot = [0.0; 3];
            one_hot[k] = 1.0;
            return one_hot;
        }
    }
    w
}

fn check_spherical(mesh: &TriMesh, what: &str) -> Result<()> {
    for (i, v) in mesh.vertices().iter().enumerate() {
        let r = libm::sqrt(dot3(to_f64(*v), to_f64(*v)));
        if (r - 1.0).abs() > 1e-4 {
            bail!(Validation, "{} vertex {} has radius {}, expected a unit sphere", what, i, r);
        }
    }
    Ok(())
}

fn table_for_points(src: &TriMesh, points: impl Iterator<Item = [f64; 3]>) -> Result<ResampleTable> {
    if src.face_count() == 0 {
        bail!(Validation, "source mesh has no faces");
    }
    let locator = FaceLocator::new(src);
    let mut entries = Vec::new();
    let mut misses = 0usize;
    for p in points {
        let (face, weights, hit) = locator.locate(p);
        if !hit {
            misses += 1;
        }
        entries.push(ResampleEntry { face, vertices: src.faces()[face], weights });
    }
    if misses > 0 {
        log::warn!("{} destination vertices missed every source face; used nearest face centroid", misses);
    }
    Ok(ResampleTable { src: src.id(), src_vertex_count: src.vertex_count(), dst: None, entries })
}

/// Locate every `dst` vertex in the `src` face its ray from the origin hits.
pub fn build_resample_table(src: &TriMesh, dst: &TriMesh) -> Result<ResampleTable> {
    check_spherical(src, "source")?;
    check_spherical(dst, "destination")?;
    let mut t = table_for_points(src, dst.vertices().iter().map(|&v| to_f64(v)))?;
    t.dst = Some(dst.id());
    Ok(t)
}

/// `out[d, c] = Σᵢ wᵢ · field[vᵢ(d), c]`, accumulated in `f64`.
pub fn apply_resample(field: &FeatureField, table: &ResampleTable) -> Result<FeatureField> {
    if field.mesh_id() != table.src || field.vertex_count() != table.src_vertex_count {
        bail!(
            Shape,
            "field carrier ({:?}, {} vertices) does not match table source ({:?}, {} vertices)",
            field.mesh_id(),
            field.vertex_count(),
            table.src,
            table.src_vertex_count
        );
    }
    let c = field.channel_count();
    let mut out = vec![0.0f32; table.entries.len() * c];
    for (d, e) in table.entries.iter().enumerate() {
        for k in 0..c {
            let mut acc = 0.0f64;
            for i in 0..3 {
                if e.weights[i] != 0.0 {
                    acc += e.weights[i] * field.get(e.vertices[i], k) as f64;
                }
            }
            out[d * c + k] = acc as f32;
        }
    }
    let dst = table.dst.unwrap_or(table.src);
    FeatureField::new(dst, field.channel_names.clone(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => bail!(Argument, "unknown rotation axis {:?}; expected x, y or z", s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Rotate `v` by `degrees` about `axis` (right-handed).
pub fn rotate(axis: Axis, degrees: f64, v: [f64; 3]) -> [f64; 3] {
    let t = degrees.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    match axis {
        Axis::X => [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]],
        Axis::Y => [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]],
        Axis::Z => [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]],
    }
}

/// Table realizing `f_rot(v) = f(R⁻¹ v)` on the icosphere itself.
pub fn rotation_table(ico: &Icosphere, axis: Axis, degrees: f64) -> Result<ResampleTable> {
    if !degrees.is_finite() {
        bail!(Argument, "rotation angle must be finite");
    }
    let mesh = ico.mesh();
    let mut t = table_for_points(mesh, mesh.vertices().iter().map(|&v| rotate(axis, -degrees, to_f64(v))))?;
    t.dst = Some(mesh.id());
    Ok(t)
}

/// Angles available for rotation augmentation.
pub const AUGMENTATION_ANGLES: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

/// Precomputed rotation tables for augmentation: every axis and every
/// `±angle` up to `max_degrees`, plus the identity (index 0, no table).
#[derive(Debug, Clone)]
pub struct RotationBank {
    mesh: MeshId,
    configs: Vec<(Axis, f64)>,
    tables: Vec<ResampleTable>,
}

impl RotationBank {
    pub fn new(ico: &Icosphere, max_degrees: f64) -> Result<Self> {
        let mut configs = Vec::new();
        let mut tables = Vec::new();
        for axis in Axis::ALL {
            for &a in AUGMENTATION_ANGLES.iter().filter(|&&a| a <= max_degrees + 1e-9) {
                for deg in [a, -a] {
                    tables.push(rotation_table(ico, axis, deg)?);
                    configs.push((axis, deg));
                }
            }
        }
        Ok(RotationBank { mesh: ico.mesh().id(), configs, tables })
    }

    pub fn mesh(&self) -> MeshId {
        self.mesh
    }

    /// Number of choices, identity included.
    pub fn len(&self) -> usize {
        self.tables.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `None` for the identity choice `0`.
    pub fn config(&self, choice: usize) -> Option<(Axis, f64)> {
        choice.checked_sub(1).map(|k| self.configs[k])
    }

    pub fn apply(&self, choice: usize, field: &FeatureField) -> Result<FeatureField> {
        match choice.checked_sub(1) {
            None => Ok(field.clone()),
            Some(k) => apply_resample(field, &self.tables[k]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_icosphere;
    use alloc::string::ToString;

    fn field_from_fn(mesh: &TriMesh, f: impl Fn([f64; 3]) -> f64) -> FeatureField {
        let vals: Vec<f32> = mesh.vertices().iter().map(|&v| f(to_f64(v)) as f32).collect();
        FeatureField::new(mesh.id(), vec!["f".to_string()], vals).unwrap()
    }

    #[test]
    fn identity_table_is_one_hot_on_self() {
        let ico = build_icosphere(3).unwrap();
        let t = build_resample_table(ico.mesh(), ico.mesh()).unwrap();
        for (d, e) in t.entries().iter().enumerate() {
            let k = e.vertices.iter().position(|&v| v == d).expect("incident face");
            assert_eq!(e.weights[k], 1.0);
        }
        let f = field_from_fn(ico.mesh(), |p| p[0] * 3.0 + p[1]);
        assert_eq!(apply_resample(&f, &t).unwrap().values(), f.values());
    }

    #[test]
    fn partition_of_unity_and_convexity() {
        let src = build_icosphere(2).unwrap();
        let dst = build_icosphere(3).unwrap();
        let t = build_resample_table(src.mesh(), dst.mesh()).unwrap();
        for e in t.entries() {
            let s: f64 = e.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(e.weights.iter().all(|&w| w >= 0.0));
        }
        let f = field_from_fn(src.mesh(), |p| (3.0 * p[0]).sin() + p[2] * p[1]);
        let out = apply_resample(&f, &t).unwrap();
        let (lo, hi) = f.values().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(out.values().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn constant_field_exact() {
        let src = build_icosphere(2).unwrap();
        let dst = build_icosphere(3).unwrap();
        let t = build_resample_table(src.mesh(), dst.mesh()).unwrap();
        let f = field_from_fn(src.mesh(), |_| 3.7);
        assert!(apply_resample(&f, &t).unwrap().values().iter().all(|&v| v == 3.7f32));
        let r = rotation_table(&dst, Axis::Y, 17.0).unwrap();
        let g = field_from_fn(dst.mesh(), |_| -0.3);
        assert!(apply_resample(&g, &r).unwrap().values().iter().all(|&v| v == -0.3f32));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let ico = build_icosphere(3).unwrap();
        let t = rotation_table(&ico, Axis::X, 0.0).unwrap();
        let f = field_from_fn(ico.mesh(), |p| p[0] * p[1] + p[2]);
        let out = apply_resample(&f, &t).unwrap();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_moves_a_linear_field() {
        // f(v) = v_x rotated 90° about z becomes f(R⁻¹v) = v_y.
        let ico = build_icosphere(4).unwrap();
        let t = rotation_table(&ico, Axis::Z, 90.0).unwrap();
        let f = field_from_fn(ico.mesh(), |p| p[0]);
        let out = apply_resample(&f, &t).unwrap();
        for (v, &o) in ico.mesh().vertices().iter().zip(out.values()) {
            assert!((o as f64 - v[1] as f64).abs() < 2e-3);
        }
    }

    #[test]
    fn carrier_mismatch_rejected() {
        let a = build_icosphere(1).unwrap();
        let b = build_icosphere(2).unwrap();
        let t = build_resample_table(a.mesh(), b.mesh()).unwrap();
        let f = field_from_fn(b.mesh(), |_| 1.0);
        assert!(matches!(apply_resample(&f, &t), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn axis_parsing() {
        assert_eq!(Axis::parse("y").unwrap(), Axis::Y);
        assert!(matches!(Axis::parse("w"), Err(crate::Error::Argument(_))));
    }

    #[test]
    fn bank_size_respects_cap() {
        let ico = build_icosphere(1).unwrap();
        assert_eq!(RotationBank::new(&ico, 10.0).unwrap().len(), 3 * 2 * 2 + 1);
        assert_eq!(RotationBank::new(&ico, 30.0).unwrap().len(), 37);
    }

    #[test]
    fn non_spherical_input_rejected() {
        let m = TriMesh::new(vec![[0.0, 0.0, 2.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(build_resample_table(&m, &m).is_err());
    }
}
