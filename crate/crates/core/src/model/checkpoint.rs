//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "SBAE" | u32 version | u64 config length | config JSON
//! repeated per tensor, in `param_shapes` order:
//!   u16 name length | name | u8 rank | rank x u64 dims | f32 data
//! ```
//!
//! Weights are always stored as f32, whatever the in-memory element type.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{Autoencoder, ModelConfig, ModelError, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBAE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Element, W: Write>(model: &Autoencoder<T>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(model.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    for (name, p) in model.param_names().iter().zip(model.params()) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[p.value.rank() as u8])?;
        for &dim in p.value.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for &v in p.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn truncated(e: io::Error) -> ModelError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ModelError::Checkpoint("truncated file".into())
    } else {
        e.into()
    }
}

pub fn read_checkpoint<T: Element, R: Read>(mut r: R) -> Result<Autoencoder<T>> {
    if &read_array::<4, _>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config).map_err(truncated)?;
    let config: ModelConfig = serde_json::from_slice(&config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let expected = super::param_shapes(&config).len();

    let mut tensors = Vec::with_capacity(expected);
    for _ in 0..expected {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Autoencoder::from_parts(config, tensors)
}

/// Writes to a sibling temporary file and renames it into place, so a failed
/// write never leaves a partial checkpoint at `path`.
pub fn save_checkpoint<T: Element>(model: &Autoencoder<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let result = fs::File::create(&tmp)
        .map_err(ModelError::from)
        .and_then(|f| write_checkpoint(model, io::BufWriter::new(f)))
        .and_then(|_| fs::rename(&tmp, path).map_err(ModelError::from));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Autoencoder<T>> {
    read_checkpoint(io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Multiplier;

    fn model() -> Autoencoder<f32> {
        let mut c = ModelConfig::new(8, 1, Multiplier::Finite(2), 12);
        c.n_heads = 2;
        c.max_seq_len = 6;
        Autoencoder::init(c, 1).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SBAE");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let cfg: ModelConfig = serde_json::from_slice(&buf[16..16 + len]).unwrap();
        assert_eq!(cfg.d, 8);
        let at = 16 + len;
        let name_len = u16::from_le_bytes(buf[at..at + 2].try_into().unwrap()) as usize;
        assert_eq!(&buf[at + 2..at + 2 + name_len], b"token_embedding");
        assert_eq!(buf[at + 2 + name_len], 2);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back: Autoencoder<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params()) {
            assert!(a.value.bit_eq(&b.value));
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        assert!(read_checkpoint::<f32, _>(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint::<f32, _>(&extra[..]).is_err());
        buf[0] = b'X';
        assert!(read_checkpoint::<f32, _>(&buf[..]).is_err());
    }
}
