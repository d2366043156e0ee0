//! Binary container for preprocessed features.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "ALSLPREP"
//! version      u32      1
//! rate         f32      Hz
//! window_sec   f32
//! stft_window  f32      seconds
//! stft_hop     f32      seconds
//! entry_count  u32
//! entries:
//!   window_id  u32
//!   pair       u16
//!   kind       u8       0 = PCA series, 1 = spectrogram
//!   label      u8       class index, 255 = unlabeled
//!   ndim       u8
//!   dims       u32 × ndim
//!   data       f32 × product(dims), row-major
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 8] = b"ALSLPREP";
pub const BLOB_VERSION: u32 = 1;
pub const UNLABELED: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobHeader {
    pub rate: f32,
    pub window_sec: f32,
    pub stft_window_sec: f32,
    pub stft_hop_sec: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobEntry {
    pub window_id: u32,
    pub pair: u16,
    pub kind: u8,
    pub label: u8,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlob {
    pub header: BlobHeader,
    pub entries: Vec<BlobEntry>,
}

pub fn write_blob<W: Write>(mut w: W, blob: &FeatureBlob) -> Result<()> {
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&BLOB_VERSION.to_le_bytes())?;
    let h = &blob.header;
    for v in [h.rate, h.window_sec, h.stft_window_sec, h.stft_hop_sec] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(blob.entries.len() as u32).to_le_bytes())?;
    for e in &blob.entries {
        let n: usize = e.dims.iter().map(|&d| d as usize).product();
        if n != e.data.len() || e.dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("blob entry {}/{}: dims do not match data", e.window_id, e.pair)));
        }
        w.write_all(&e.window_id.to_le_bytes())?;
        w.write_all(&e.pair.to_le_bytes())?;
        w.write_all(&[e.kind, e.label, e.dims.len() as u8])?;
        for d in &e.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * n);
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated feature blob: {e}")))?;
    Ok(b)
}

pub fn read_blob<R: Read>(mut r: R) -> Result<FeatureBlob> {
    if &take::<8, _>(&mut r)? != BLOB_MAGIC {
        return Err(Error::Format("not a feature blob (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != BLOB_VERSION {
        return Err(Error::Format(format!("unsupported feature blob version {version}")));
    }
    let mut f = || -> Result<f32> { Ok(f32::from_le_bytes(take(&mut r)?)) };
    let header = BlobHeader { rate: f()?, window_sec: f()?, stft_window_sec: f()?, stft_hop_sec: f()? };
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let window_id = u32::from_le_bytes(take(&mut r)?);
        let pair = u16::from_le_bytes(take(&mut r)?);
        let [kind, label, ndim] = take::<3, _>(&mut r)?;
        let dims = (0..ndim).map(|_| Ok(u32::from_le_bytes(take(&mut r)?))).collect::<Result<Vec<u32>>>()?;
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut raw = vec![0u8; 4 * n];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated feature blob: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push(BlobEntry { window_id, pair, kind, label, dims, data });
    }
    Ok(FeatureBlob { header, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_stable() {
        let blob = FeatureBlob {
            header: BlobHeader { rate: 10.0, window_sec: 20.0, stft_window_sec: 10.0, stft_hop_sec: 1.0 },
            entries: vec![BlobEntry { window_id: 7, pair: 1, kind: 0, label: 2, dims: vec![2], data: vec![1.0, -0.5] }],
        };
        let mut bytes = Vec::new();
        write_blob(&mut bytes, &blob).unwrap();
        assert_eq!(&bytes[..8], b"ALSLPREP");
        assert_eq!(bytes.len(), 8 + 4 + 16 + 4 + (4 + 2 + 3 + 4 + 8));
        assert_eq!(&bytes[32..36], &7u32.to_le_bytes());
        assert_eq!(read_blob(&bytes[..]).unwrap(), blob);
        assert!(read_blob(&bytes[..bytes.len() - 1]).is_err());
    }
}
