//! Tensor files and parameter checkpoints.
//!
//! Tensor file layout (all little-endian):
//!
//! ```text
//! offset 0   4 bytes   magic "AFF1"
//! offset 4   u32       rank (>= 1)
//! offset 8   rank x u32 dims (each >= 1)
//! then       prod(dims) x f32, row-major
//! ```
//!
//! A checkpoint is a directory holding one tensor file per parameter and a
//! `manifest.txt` whose lines are `name<TAB>file<TAB>d0xd1x...`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AFF1";
pub const MANIFEST: &str = "manifest.txt";

fn format_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset: offset as u64, msg: msg.into() })
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    let rank = u32::try_from(t.rank()).map_err(|_| Error::Dimension("rank does not fit in u32".into()))?;
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Dimension(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_le_bytes(b.try_into().unwrap())),
        None => format_err(bytes.len(), format!("truncated while reading {what}")),
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return format_err(bytes.len(), "truncated magic");
    }
    if &bytes[..4] != MAGIC {
        return format_err(0, format!("bad magic {:?}", &bytes[..4]));
    }
    let rank = read_u32(bytes, 4, "rank")? as usize;
    if rank == 0 {
        return format_err(4, "rank must be at least 1");
    }
    let mut shape = Vec::with_capacity(rank);
    for k in 0..rank {
        let at = 8 + 4 * k;
        let d = read_u32(bytes, at, "dimension")? as usize;
        if d == 0 {
            return format_err(at, format!("dimension {k} is zero"));
        }
        shape.push(d);
    }
    let start = 8 + 4 * rank;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format { offset: 8, msg: "element count overflows".into() })?;
    let end = start + 4 * n;
    if bytes.len() < end {
        return format_err(bytes.len(), format!("truncated data: need {end} bytes, have {}", bytes.len()));
    }
    if bytes.len() > end {
        return format_err(end, "trailing bytes after tensor data");
    }
    let data = bytes[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save_checkpoint(dir: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, t) in entries {
        if name.is_empty() || name.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::Config(format!("invalid tensor name {name:?}")));
        }
        let file = format!("{name}.aff");
        save_tensor(dir.join(&file), t)?;
        manifest.push_str(&format!("{name}\t{file}\t{}\n", shape_text(t.shape())));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return format_err(offset, format!("manifest line {line:?} needs three tab-separated fields"));
        }
        let t = load_tensor(dir.join(fields[1]))?;
        if shape_text(t.shape()) != fields[2] {
            return format_err(
                offset,
                format!("{} has shape {:?}, manifest says {}", fields[0], t.shape(), fields[2]),
            );
        }
        out.push((fields[0].to_string(), t));
        offset += line.len() + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_at_f32_precision() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.731).sin() * 1e3);
        let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(&b[..4], b"AFF1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn rejects_malformed() {
        let good = encode_tensor(&Tensor::zeros(&[2, 2])).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { offset: 0, .. })));

        let e = decode_tensor(&good[..good.len() - 3]).unwrap_err();
        assert!(matches!(e, Error::Format { .. }));

        let mut empty = good[..4].to_vec();
        empty.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tensor(&empty), Err(Error::Format { offset: 4, .. })));

        let mut zero_dim = good.clone();
        zero_dim[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tensor(&zero_dim), Err(Error::Format { offset: 12, .. })));

        let mut trailing = good;
        trailing.push(0);
        assert!(decode_tensor(&trailing).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ("a.w".to_string(), Tensor::from_fn(&[3, 2], |i| i as f64 * 0.5)),
            ("b".to_string(), Tensor::full(&[1], 2.0)),
        ];
        save_checkpoint(dir.path(), &entries).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), entries);
    }
}
