//! Single-file, versioned, checksummed parameter container.
//!
//! Layout: `GATHCKPT` magic, `u32` format version, `u64` header length, JSON
//! header (kind, metadata, tensor index), little-endian `f32` blobs, then a
//! CRC-32 of every preceding byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GathError, Result};
use crate::nn::{ParamKind, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GATHCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorIndex {
    group: String,
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorIndex>,
}

/// Named parameter groups plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub kind: String,
    pub meta: serde_json::Value,
    pub groups: BTreeMap<String, ParamSet<f32>>,
}

impl Bundle {
    pub fn group(&self, name: &str) -> Result<&ParamSet<f32>> {
        self.groups
            .get(name)
            .ok_or_else(|| GathError::Incompatible(format!("missing parameter group `{name}`")))
    }
}

pub fn encode_bundle(bundle: &Bundle) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (group, set) in &bundle.groups {
        for e in set.entries() {
            tensors.push(TensorIndex {
                group: group.clone(),
                name: e.name.clone(),
                kind: e.kind,
                shape: e.value.shape().to_vec(),
                offset: blob.len(),
            });
            for v in e.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        kind: bundle.kind.clone(),
        meta: bundle.meta.clone(),
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(24 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle> {
    let integrity = |m: &str| GathError::Integrity(m.to_string());
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(integrity("not a checkpoint file (bad magic)"));
    }
    if bytes.len() < 24 {
        return Err(integrity("file truncated inside preamble"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(GathError::Incompatible(format!(
            "format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(integrity("checksum mismatch (truncated or corrupted file)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| integrity("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&body[20..header_end]).map_err(|e| integrity(&format!("header: {e}")))?;
    let blob = &body[header_end..];
    let mut groups: BTreeMap<String, ParamSet<f32>> = BTreeMap::new();
    for t in header.tensors {
        let count: usize = t.shape.iter().product();
        let end = t.offset + 4 * count;
        if end > blob.len() {
            return Err(integrity(&format!("tensor `{}` extends past end of data", t.name)));
        }
        let data = blob[t.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let value = Tensor::from_vec(&t.shape, data)?;
        groups.entry(t.group).or_default().add(t.name, t.kind, value);
    }
    Ok(Bundle {
        kind: header.kind,
        meta: header.meta,
        groups,
    })
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| GathError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        GathError::io(path, e)
    })
}

pub fn save_bundle(path: &Path, bundle: &Bundle) -> Result<()> {
    write_atomic(path, &encode_bundle(bundle))
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let bytes = std::fs::read(path).map_err(|e| GathError::io(path, e))?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bundle {
        let mut a = ParamSet::new();
        a.add("w", ParamKind::Weight, Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1 - 0.25));
        a.add("rm", ParamKind::Buffer, Tensor::full(&[3], f32::MIN_POSITIVE));
        let mut b = ParamSet::new();
        b.add("x", ParamKind::Weight, Tensor::scalar(-0.0));
        Bundle {
            kind: "test".into(),
            meta: serde_json::json!({"iteration": 5}),
            groups: [("a".to_string(), a), ("b".to_string(), b)].into_iter().collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = sample();
        let back = decode_bundle(&encode_bundle(&b)).unwrap();
        assert_eq!(back, b);
        for (name, set) in &b.groups {
            assert_eq!(back.groups[name].checksum(), set.checksum());
        }
    }

    #[test]
    fn damage_is_detected() {
        let bytes = encode_bundle(&sample());
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_bundle(&bytes[..cut]), Err(GathError::Integrity(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 10;
        flipped[mid] ^= 1;
        assert!(matches!(decode_bundle(&flipped), Err(GathError::Integrity(_))));
        let mut newer = bytes;
        newer[8] = 9;
        assert!(matches!(decode_bundle(&newer), Err(GathError::Incompatible(_))));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        std::fs::write(&p, b"old").unwrap();
        save_bundle(&p, &sample()).unwrap();
        assert_eq!(load_bundle(&p).unwrap(), sample());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
