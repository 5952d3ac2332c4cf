//! Model checkpoints: a text manifest (config fields and a tensor registry
//! of name, shape, byte offset and byte length) beside a blob of
//! little-endian `f32` values in registry order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sit_core::model::{SiTConfig, SiTModel};
use sit_core::RngState;

use crate::error::{read, write, Error, Result};

const MAGIC: &str = "SITCHECKPOINT v1";

/// Blob path for a manifest path: `x.ckpt` → `x.ckpt.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

fn tensors(model: &SiTModel<f32>) -> Vec<(String, &sit_core::Tensor<f32>)> {
    let mut t = model.params();
    t.extend(model.buffers());
    t
}

pub fn save_checkpoint(model: &SiTModel<f32>, path: &Path) -> Result<()> {
    let blob = blob_path(path);
    let mut m = format!("{MAGIC}\n");
    writeln!(m, "blob = {}", blob.file_name().expect("blob has a file name").to_string_lossy()).unwrap();
    for (k, v) in model.config.to_pairs() {
        writeln!(m, "config.{k} = {v}").unwrap();
    }
    let mut bytes = Vec::new();
    for (name, t) in tensors(model) {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(m, "tensor {} {} {} {}", name, shape.join(","), bytes.len(), 4 * t.len()).unwrap();
        for x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    write(&blob, bytes)?;
    write(path, m)
}

struct Entry {
    line: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<SiTModel<f32>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MAGIC}`"))),
    }
    let mut blob_name = None;
    let mut config = SiTConfig::tiny_ico(1);
    let mut seen = Vec::new();
    let mut entries = Vec::new();
    for (n, line) in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let p: Vec<&str> = rest.split_whitespace().collect();
            let bad = || Error::parse(path, n, "expected `tensor <name> <d0,d1,..> <offset> <bytes>`");
            if p.len() != 4 {
                return Err(bad());
            }
            let shape = p[1].split(',').map(str::parse).collect::<Result<Vec<usize>, _>>().map_err(|_| bad())?;
            let offset = p[2].parse().map_err(|_| bad())?;
            let len = p[3].parse().map_err(|_| bad())?;
            entries.push(Entry { line: n, name: p[0].to_string(), shape, offset, len });
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, n, format!("unrecognized line {line:?}")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k == "blob" {
            blob_name = Some(v.to_string());
        } else if let Some(field) = k.strip_prefix("config.") {
            config.set(field, v).map_err(|e| Error::parse(path, n, e.to_string()))?;
            seen.push(field.to_string());
        } else {
            return Err(Error::parse(path, n, format!("unknown key {k:?}")));
        }
    }
    for (k, _) in config.to_pairs() {
        if !seen.iter().any(|s| s == k) {
            return Err(Error::parse(path, 1, format!("config field {k} missing")));
        }
    }
    config.validate()?;
    let blob_name = blob_name.ok_or_else(|| Error::parse(path, 1, "missing `blob = <file>`"))?;
    let blob = path.with_file_name(blob_name);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;

    let mut model = SiTModel::<f32>::new(config, &mut RngState::new(0))?;
    let names: Vec<(String, Vec<usize>)> = {
        let mut v: Vec<_> = model.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        v.extend(model.buffers().into_iter().map(|(n, t)| (n, t.shape().to_vec())));
        v
    };
    if names.len() != entries.len() {
        return Err(Error::parse(path, 1, format!("registry lists {} tensors, config implies {}", entries.len(), names.len())));
    }
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(entries.len());
    for (e, (name, shape)) in entries.iter().zip(&names) {
        if &e.name != name || &e.shape != shape {
            return Err(Error::parse(path, e.line, format!("expected tensor {name} {shape:?}, found {} {:?}", e.name, e.shape)));
        }
        let want = 4 * shape.iter().product::<usize>();
        if e.len != want || e.offset + e.len > bytes.len() {
            return Err(Error::parse(path, e.line, format!("tensor {name} spans bytes {}..{} of {}", e.offset, e.offset + e.len, bytes.len())));
        }
        values.push(bytes[e.offset..e.offset + e.len].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
    }
    let mut all = model.params_mut();
    let n_params = all.len();
    for ((_, t), v) in all.iter_mut().zip(&values[..n_params]) {
        t.data_mut().copy_from_slice(v);
    }
    drop(all);
    for ((_, t), v) in model.buffers_mut().into_iter().zip(&values[n_params..]) {
        t.data_mut().copy_from_slice(v);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sit_core::model::HeadKind;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SiTConfig {
            layers: 2,
            dim: 12,
            heads: 3,
            mlp_dim: 24,
            num_patches: 5,
            vertices_per_patch: 3,
            channels: 2,
            head: HeadKind::Classification(2),
            mpp_head: true,
            deconfounder: true,
            ..SiTConfig::tiny_ico(2)
        };
        let mut m = SiTModel::<f32>::new(cfg, &mut RngState::new(3)).unwrap();
        m.deconfounder.as_mut().unwrap().init_stats(&[1.0, 2.0, 4.0]).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        assert!(blob_path(&p).exists());
        assert_eq!(load_checkpoint(&p).unwrap(), m);
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SiTConfig { layers: 1, dim: 8, heads: 2, mlp_dim: 8, num_patches: 2, vertices_per_patch: 2, ..SiTConfig::tiny_ico(1) };
        let m = SiTModel::<f32>::new(cfg, &mut RngState::new(3)).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        let b = std::fs::read(blob_path(&p)).unwrap();
        std::fs::write(blob_path(&p), &b[..b.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Parse { .. })));
    }
}
