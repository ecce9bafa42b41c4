//! Checkpoint format: `BNDSPOT1`, a little-endian u32 manifest length, a
//! UTF-8 manifest, then the f64 little-endian tensor data in manifest order.
//!
//! Manifest lines are `config <json>` followed by one
//! `tensor <name> <dim,dim,...> <byte offset>` per tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Spotter, SpotterConfig};
use crate::error::{Error, Result};
use crate::micronet::{Module, Tensor};

pub const MAGIC: &[u8; 8] = b"BNDSPOT1";

fn named_tensors(s: &Spotter) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = s.params().into_iter().map(|p| (p.name.clone(), &p.value)).collect();
    out.extend(s.buffers().into_iter().map(|b| (b.name.clone(), &b.value)));
    out
}

pub fn to_bytes(s: &Spotter) -> Result<Vec<u8>> {
    let tensors = named_tensors(s);
    let mut manifest = format!("config {}\n", serde_json::to_string(&s.config)?);
    let mut offset = 0usize;
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {name} {} {offset}\n", dims.join(",")));
        offset += t.len() * 8;
    }
    let len = u32::try_from(manifest.len()).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let mut out = Vec::with_capacity(12 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Spotter> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let manifest = bytes
        .get(12..12 + len)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest = std::str::from_utf8(manifest).map_err(|_| bad("manifest is not UTF-8"))?;
    let blobs = &bytes[12 + len..];

    let mut config: Option<SpotterConfig> = None;
    let mut entries = Vec::new();
    for line in manifest.lines().filter(|l| !l.is_empty()) {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad manifest line {line:?}")))?;
        match kind {
            "config" => config = Some(serde_json::from_str(rest)?),
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dims, offset] = parts[..] else {
                    return Err(bad(format!("bad tensor line {line:?}")));
                };
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape in {line:?}")))?;
                let offset = offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                entries.push(Entry {
                    name: name.to_string(),
                    shape,
                    offset,
                });
            }
            _ => return Err(bad(format!("unknown manifest record {kind:?}"))),
        }
    }
    let config = config.ok_or_else(|| bad("manifest has no config"))?;
    let mut spotter = Spotter::new(config, 0)?;

    let expected: Vec<(String, Vec<usize>)> = named_tensors(&spotter)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != entries.len() {
        return Err(bad(format!("expected {} tensors, found {}", expected.len(), entries.len())));
    }
    let mut values = Vec::with_capacity(entries.len());
    for ((name, shape), e) in expected.iter().zip(&entries) {
        if *name != e.name {
            return Err(bad(format!("expected tensor {name}, found {}", e.name)));
        }
        if *shape != e.shape {
            return Err(bad(format!("shape mismatch for {name}: expected {shape:?}, found {:?}", e.shape)));
        }
        let n: usize = shape.iter().product();
        let raw = blobs
            .get(e.offset..e.offset + 8 * n)
            .ok_or_else(|| bad(format!("data for {name} out of bounds")))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Tensor::from_vec(shape, data)?);
    }
    let mut values = values.into_iter();
    for p in spotter.params_mut() {
        p.value = values.next().expect("counted above");
    }
    for b in spotter.buffers_mut() {
        b.value = values.next().expect("counted above");
    }
    Ok(spotter)
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(s: &Spotter, path: &Path) -> Result<()> {
    let bytes = to_bytes(s)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Spotter> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SpotterConfig {
        SpotterConfig {
            k: 3,
            crop_height: 8,
            crop_width: 16,
            bpdn_channels: 2,
            rec_channels: 3,
            hidden: 4,
            attention: 5,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut s = Spotter::new(tiny(), 3).unwrap();
        s.bpdn.norms[0].running_var.value.data_mut()[0] = 2.5;
        let bytes = to_bytes(&s).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.config, s.config);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
        assert_eq!(back.bpdn.norms[0].running_var.value.data()[0], 2.5);
    }

    #[test]
    fn rejects_bad_magic_and_shapes() {
        let s = Spotter::new(tiny(), 3).unwrap();
        let mut bytes = to_bytes(&s).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));

        let bytes = to_bytes(&s).unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let manifest = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        let edited = manifest.replacen("tensor bpdn.conv0.weight 2,1,3,3", "tensor bpdn.conv0.weight 2,1,3,4", 1);
        assert_ne!(edited, manifest);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[12 + len..]);
        let err = from_bytes(&out).err().unwrap();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn atomic_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let s = Spotter::new(tiny(), 1).unwrap();
        save_checkpoint(&s, &path).unwrap();
        save_checkpoint(&s, &path).unwrap();
        assert!(!dir.path().join("model.ckpt.tmp").exists());
        assert_eq!(fs::read(&path).unwrap(), to_bytes(&s).unwrap());
    }
}
