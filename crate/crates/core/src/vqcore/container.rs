//! Binary layer container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "EVAQ" | version u32 | K u32 | N u32 | d u32 | n u32 | C u32 | N_share u32
//! codebooks: for each group g, for each codebook c: d x 2^n f32, row-major
//! indices:   for each codebook c: V x N u16, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{Codebook, IndexMatrix, QuantizedLayer, VqConfig};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"EVAQ";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_BYTES: usize = 32;

pub fn encode_layer(layer: &QuantizedLayer) -> Vec<u8> {
    let cfg = layer.config();
    let (k, n) = layer.shape();
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.extend_from_slice(CONTAINER_MAGIC);
    for field in [
        CONTAINER_VERSION,
        k as u32,
        n as u32,
        cfg.vector_dim() as u32,
        cfg.index_bits(),
        cfg.num_codebooks() as u32,
        cfg.group_size() as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for set in layer.groups() {
        for cb in set {
            for &v in cb.entries() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    for im in layer.indices() {
        for &i in im.as_slice() {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::corrupt(format!("container truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_layer(bytes: &[u8]) -> Result<QuantizedLayer> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4, "magic")? != CONTAINER_MAGIC {
        return Err(Error::corrupt("bad magic, not an EVAQ container"));
    }
    let version = rd.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::corrupt(format!("unsupported container version {version}")));
    }
    let k = rd.u32("K")? as usize;
    let n = rd.u32("N")? as usize;
    let d = rd.u32("d")? as usize;
    let bits = rd.u32("n")?;
    let c = rd.u32("C")? as usize;
    let share = rd.u32("N_share")? as usize;
    let config = VqConfig::new(d, bits, c, share).map_err(|e| Error::corrupt(e.to_string()))?;
    if k == 0 || n == 0 || !k.is_multiple_of(d) {
        return Err(Error::corrupt(format!("invalid layer shape {k} x {n} for d = {d}")));
    }

    let size = config.codebook_size();
    let groups_n = config.num_groups(n);
    let mut groups = Vec::with_capacity(groups_n);
    for _ in 0..groups_n {
        let mut set = Vec::with_capacity(c);
        for _ in 0..c {
            let raw = rd.take(4 * d * size, "codebooks")?;
            let entries = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            set.push(Codebook::new(d, size, entries)?);
        }
        groups.push(set);
    }

    let v = k / d;
    let mut indices = Vec::with_capacity(c);
    for _ in 0..c {
        let raw = rd.take(2 * v * n, "index matrices")?;
        let data = raw
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        indices.push(IndexMatrix::new(v, n, bits, data)?);
    }
    if rd.pos != bytes.len() {
        return Err(Error::corrupt(format!(
            "{} trailing bytes after index matrices",
            bytes.len() - rd.pos
        )));
    }
    QuantizedLayer::new(config, (k, n), groups, indices)
}

pub fn write_layer(layer: &QuantizedLayer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_layer(layer))?;
    Ok(())
}

pub fn read_layer(path: impl AsRef<Path>) -> Result<QuantizedLayer> {
    decode_layer(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_layer() -> QuantizedLayer {
        let cfg = VqConfig::new(2, 2, 2, 2).unwrap();
        let cb = |o: f64| Codebook::from_centroids(2, &[o, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.5]).unwrap();
        let groups = vec![vec![cb(0.0), cb(10.0)], vec![cb(-1.0), cb(0.25)]];
        let ims = vec![
            IndexMatrix::new(2, 3, 2, vec![0, 1, 2, 3, 2, 1]).unwrap(),
            IndexMatrix::new(2, 3, 2, vec![3, 3, 0, 0, 1, 2]).unwrap(),
        ];
        QuantizedLayer::new(cfg, (4, 3), groups, ims).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_layer(&tiny_layer());
        assert_eq!(&bytes[..4], b"EVAQ");
        let words: Vec<u32> = bytes[4..32]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        assert_eq!(words, [1, 4, 3, 2, 2, 2, 2]);
        // 2 groups x 2 codebooks x 2 x 4 f32, then 2 x (2 x 3) u16.
        assert_eq!(bytes.len(), 32 + 2 * 2 * 8 * 4 + 2 * 6 * 2);
        // First codebook row 0 is [o, 2, 4, 6] with o = 0.
        assert_eq!(f32::from_le_bytes(bytes[36..40].try_into().unwrap()), 2.0);
        // Second index matrix, element (0,0) = 3.
        let idx_start = 32 + 128 + 12;
        assert_eq!(u16::from_le_bytes(bytes[idx_start..idx_start + 2].try_into().unwrap()), 3);
    }

    #[test]
    fn round_trip_exact_for_f32_representable_values() {
        let layer = tiny_layer();
        assert_eq!(decode_layer(&encode_layer(&layer)).unwrap(), layer);
    }

    #[test]
    fn corrupt_index_is_reported() {
        let mut bytes = encode_layer(&tiny_layer());
        let last = bytes.len() - 2;
        bytes[last..].copy_from_slice(&7u16.to_le_bytes());
        assert!(matches!(decode_layer(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_layer(&tiny_layer());
        assert!(matches!(decode_layer(&bytes[..bytes.len() - 1]), Err(Error::Corruption(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_layer(&bad), Err(Error::Corruption(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_layer(&extra), Err(Error::Corruption(_))));
    }
}
