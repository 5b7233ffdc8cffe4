use std::path::Path;

use super::model::{Model, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSVW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes the weighted layers: magic, version, layer count, then per layer
/// its weight rank and shape followed by weights and biases, all little-endian.
pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    if !model.is_canonical() {
        return Err(Error::Checkpoint(
            "only the canonical conv-stage/FC topology can be checkpointed".into(),
        ));
    }
    let params = model.params();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.weights.rank() as u32).to_le_bytes());
        for &d in p.weights.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.weights.data().iter().chain(p.bias.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            kind: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let rank = r.u32()? as usize;
        if rank != 2 && rank != 4 {
            return Err(Error::Checkpoint(format!("layer {i}: unsupported weight rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Checkpoint(format!("layer {i}: bad shape {shape:?}")))?;
        let weights = Tensor::new(&shape, r.f64s(n)?)
            .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        let bias = Tensor::new(&[shape[0]], r.f64s(shape[0])?)
            .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
        params.push(Params { weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.pos
        )));
    }
    Model::from_weighted(params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_model, ModelConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let m = build_model(&ModelConfig { seed: 9, ..Default::default() }).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_or_corrupt_checkpoint_fails() {
        let m = build_model(&ModelConfig::default()).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        for cut in [0, 3, 11, 100, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut at {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        let mut old = bytes.clone();
        old[4] = 7;
        assert!(matches!(decode_checkpoint(&old), Err(Error::Version { found: 7, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Checkpoint(_))));
    }
}
