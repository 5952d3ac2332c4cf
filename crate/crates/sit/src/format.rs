//! Native text formats: meshes with channels, resample tables, patch
//! tables and pairing lists.
//!
//! Mesh floats are written with nine significant digits, enough to
//! round-trip every `f32` exactly. Resample weights are `f64` and use the
//! shortest representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sit_core::mesh::{Mesh, MeshId, QuadMesh, TriMesh, Vec3};
use sit_core::patching::PatchTable;
use sit_core::resample::{FeatureField, ResampleTable};

use crate::error::{read, write, Error, Result};

/// Non-blank lines with their 1-based line numbers.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> =
            Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()));
        Lines { path, inner: it.peekable(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::parse(self.path, self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.path, line, msg)
    }

    fn fields<T: FromStr>(&mut self, what: &str, count: usize) -> Result<Vec<T>> {
        let (n, line) = self.next(what)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != count {
            return Err(self.err(n, format!("expected {count} fields for {what}, found {}", parts.len())));
        }
        parts.iter().map(|p| p.parse().map_err(|_| self.err(n, format!("cannot parse {p:?} in {what}")))).collect()
    }

    fn finish(&mut self) -> Result<()> {
        match self.inner.next() {
            Some((n, l)) => Err(self.err(n, format!("trailing content {l:?}"))),
            None => Ok(()),
        }
    }
}

fn header<'a>(lines: &mut Lines<'a>, magic: &str, count: usize) -> Result<(usize, Vec<&'a str>)> {
    let (n, line) = lines.next("header")?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() < 2 || parts[0] != magic || parts[1] != "v1" {
        return Err(lines.err(n, format!("expected `{magic} v1` header")));
    }
    if parts.len() != count + 2 {
        return Err(lines.err(n, format!("{magic} header needs {count} fields after the version")));
    }
    Ok((n, parts[2..].to_vec()))
}

fn parse_usize(lines: &Lines, line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| lines.err(line, format!("cannot parse {s:?} as a count")))
}

fn float9(out: &mut String, x: f32) {
    write!(out, "{x:.8e}").expect("writing to a string");
}

pub fn mesh_to_string(mesh: &Mesh) -> String {
    let (kind, faces): (&str, Vec<Vec<usize>>) = match mesh {
        Mesh::Tri(m) => ("tri", m.faces().iter().map(|f| f.to_vec()).collect()),
        Mesh::Quad(m) => ("quad", m.faces().iter().map(|f| f.to_vec()).collect()),
    };
    let verts = mesh.vertices();
    let chans = mesh.channels();
    let mut s = format!("SURFMESH v1 {kind} {} {} {}\n", verts.len(), faces.len(), chans.len());
    for v in verts {
        float9(&mut s, v[0]);
        s.push(' ');
        float9(&mut s, v[1]);
        s.push(' ');
        float9(&mut s, v[2]);
        s.push('\n');
    }
    for f in &faces {
        let idx: Vec<String> = f.iter().map(|i| i.to_string()).collect();
        s.push_str(&idx.join(" "));
        s.push('\n');
    }
    for c in chans {
        writeln!(s, "CHANNEL {}", c.name).expect("writing to a string");
        for &x in &c.values {
            float9(&mut s, x);
            s.push('\n');
        }
    }
    s
}

pub fn parse_mesh(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = Lines::new(path, text);
    let (hn, h) = header(&mut lines, "SURFMESH", 4)?;
    let kind = h[0];
    let nv = parse_usize(&lines, hn, h[1])?;
    let nf = parse_usize(&lines, hn, h[2])?;
    let nc = parse_usize(&lines, hn, h[3])?;
    let arity = match kind {
        "tri" => 3,
        "quad" => 4,
        other => return Err(lines.err(hn, format!("unknown mesh kind {other:?} (tri | quad)"))),
    };
    let mut vertices: Vec<Vec3> = Vec::with_capacity(nv);
    for _ in 0..nv {
        let v: Vec<f32> = lines.fields("vertex", 3)?;
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces: Vec<Vec<usize>> = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push(lines.fields("face", arity)?);
    }
    let mut channels = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (n, line) = lines.next("CHANNEL line")?;
        let name = match line.strip_prefix("CHANNEL") {
            Some(rest) if rest.starts_with(char::is_whitespace) && !rest.trim().is_empty() => rest.trim().to_string(),
            _ => return Err(lines.err(n, "expected `CHANNEL <name>`")),
        };
        let mut values = Vec::with_capacity(nv);
        for _ in 0..nv {
            values.push(lines.fields::<f32>("channel value", 1)?[0]);
        }
        channels.push((name, values));
    }
    lines.finish()?;
    let mut mesh = if arity == 3 {
        Mesh::Tri(TriMesh::new(vertices, faces.iter().map(|f| [f[0], f[1], f[2]]).collect())?)
    } else {
        Mesh::Quad(QuadMesh::new(vertices, faces.iter().map(|f| [f[0], f[1], f[2], f[3]]).collect())?)
    };
    for (name, values) in channels {
        mesh.add_channel(name, values)?;
    }
    Ok(mesh)
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    write(path, mesh_to_string(mesh))
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(path, &read(path)?)
}

pub fn load_tri_mesh(path: &Path) -> Result<TriMesh> {
    match load_mesh(path)? {
        Mesh::Tri(m) => Ok(m),
        Mesh::Quad(_) => Err(Error::parse(path, 1, "expected a triangle mesh")),
    }
}

pub fn load_quad_mesh(path: &Path) -> Result<QuadMesh> {
    match load_mesh(path)? {
        Mesh::Quad(m) => Ok(m),
        Mesh::Tri(_) => Err(Error::parse(path, 1, "expected a quad mesh")),
    }
}

/// The field's channels attached to a copy of its carrier geometry.
pub fn field_to_mesh(carrier: &Mesh, field: &FeatureField) -> Result<Mesh> {
    if field.vertex_count() != carrier.vertex_count() {
        return Err(sit_core::Error::Shape(format!(
            "field has {} vertices, mesh has {}",
            field.vertex_count(),
            carrier.vertex_count()
        ))
        .into());
    }
    let mut m = carrier.clone();
    m.clear_channels();
    for (c, name) in field.channel_names().iter().enumerate() {
        m.add_channel(name.clone(), field.column(c))?;
    }
    Ok(m)
}

pub fn save_field(carrier: &Mesh, field: &FeatureField, path: &Path) -> Result<()> {
    save_mesh(&field_to_mesh(carrier, field)?, path)
}

/// A mesh file with channels, split into geometry and field.
pub fn load_field(path: &Path) -> Result<(Mesh, FeatureField)> {
    let mesh = load_mesh(path)?;
    if mesh.channels().is_empty() {
        return Err(Error::parse(path, 1, "mesh carries no channels"));
    }
    let field = mesh.field()?;
    Ok((mesh, field))
}

pub fn resample_to_string(table: &ResampleTable) -> String {
    let mut s = format!("RESAMPLE v1 {}\n", table.dst_vertex_count());
    for e in table.entries() {
        writeln!(s, "{} {} {} {}", e.face, e.weights[0], e.weights[1], e.weights[2]).expect("writing to a string");
    }
    s
}

pub fn parse_resample(path: &Path, text: &str, src: &TriMesh) -> Result<ResampleTable> {
    let mut lines = Lines::new(path, text);
    let (hn, h) = header(&mut lines, "RESAMPLE", 1)?;
    let n = parse_usize(&lines, hn, h[0])?;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines.next("resample row")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(lines.err(ln, "expected `face w0 w1 w2`"));
        }
        let face: usize = parts[0].parse().map_err(|_| lines.err(ln, "bad face index"))?;
        let mut w = [0.0; 3];
        for k in 0..3 {
            w[k] = parts[k + 1].parse().map_err(|_| lines.err(ln, format!("bad weight {:?}", parts[k + 1])))?;
        }
        rows.push((face, w));
    }
    lines.finish()?;
    Ok(ResampleTable::from_rows(src, &rows)?)
}

pub fn save_resample(table: &ResampleTable, path: &Path) -> Result<()> {
    write(path, resample_to_string(table))
}

pub fn load_resample(path: &Path, src: &TriMesh) -> Result<ResampleTable> {
    parse_resample(path, &read(path)?, src)
}

pub fn patch_table_to_string(table: &PatchTable) -> String {
    let mut s = format!("PATCHTABLE v1 {} {}\n", table.patch_count(), table.vertices_per_patch());
    for row in table.rows() {
        let idx: Vec<String> = row.iter().map(|i| i.to_string()).collect();
        s.push_str(&idx.join(" "));
        s.push('\n');
    }
    s
}

/// Parse a patch table for the carrier mesh `(id, vertex count)`.
pub fn parse_patch_table(path: &Path, text: &str, carrier: MeshId, vertex_count: usize) -> Result<PatchTable> {
    let mut lines = Lines::new(path, text);
    let (hn, h) = header(&mut lines, "PATCHTABLE", 2)?;
    let n = parse_usize(&lines, hn, h[0])?;
    let v = parse_usize(&lines, hn, h[1])?;
    let mut rows = Vec::with_capacity(n * v);
    for _ in 0..n {
        rows.extend(lines.fields::<usize>("patch row", v)?);
    }
    lines.finish()?;
    Ok(PatchTable::new(rows, v, carrier, vertex_count)?)
}

pub fn save_patch_table(table: &PatchTable, path: &Path) -> Result<()> {
    write(path, patch_table_to_string(table))
}

pub fn load_patch_table(path: &Path, carrier: MeshId, vertex_count: usize) -> Result<PatchTable> {
    parse_patch_table(path, &read(path)?, carrier, vertex_count)
}

pub fn pairs_to_string(pairs: &[(usize, usize)]) -> String {
    pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
}

pub fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut lines = Lines::new(path, text);
    let mut out = Vec::new();
    while lines.inner.peek().is_some() {
        let v: Vec<usize> = lines.fields("element pair", 2)?;
        out.push((v[0], v[1]));
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_pairs(path, &read(path)?)
}
