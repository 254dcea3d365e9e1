use std::collections::BTreeMap;
use std::path::Path;

use super::params::running_names;
use super::{Model, ModelConfig, ModelError};
use crate::ndcore::{Rng, Tensor};

/// Leading bytes of every checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CMNV1";

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn entries(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    model.params.visit(&mut |name, t| out.push((name, t)));
    for (i, stats) in model.running.iter().enumerate() {
        let (mean, var) = running_names(i);
        out.push((mean, &stats.mean));
        out.push((var, &stats.var));
    }
    out
}

/// Serialises every trainable tensor and the batch-norm statistics.
///
/// Layout: magic, then per entry `name_len`, UTF-8 name, `rank`, dims (all
/// u64 little-endian) and row-major f64 little-endian values, until EOF.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for (name, t) in entries(model) {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, t.rank() as u64);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Checkpoint(format!("truncated {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize, ModelError> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ModelError::Checkpoint(format!("{what} {v} too large")))
    }
}

/// Parses a checkpoint against `config`. Every expected tensor must appear
/// exactly once with the shape the config implies.
pub fn read_checkpoint(bytes: &[u8], config: &ModelConfig) -> Result<Model, ModelError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("missing CMNV1 magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let mut found: BTreeMap<String, Tensor> = BTreeMap::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let len = r.u64("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| ModelError::Checkpoint(format!("non-UTF-8 name at byte {start}")))?
            .to_string();
        let rank = r.u64("rank")?;
        if rank > 8 {
            return Err(ModelError::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64("dimension")).collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| ModelError::Checkpoint(format!("{name}: shape {shape:?} overflows")))?;
        let data = r
            .take(count, &name)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)?;
        if found.insert(name.clone(), t).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate entry {name}")));
        }
    }

    let mut model = Model::new(config.clone(), &mut Rng::new(0))?;
    let mut fill = |name: String, slot: &mut Tensor| -> Result<(), ModelError> {
        let t = found
            .remove(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing entry {name}")))?;
        if t.shape() != slot.shape() {
            return Err(ModelError::Checkpoint(format!(
                "{name}: stored shape {:?}, config expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
        Ok(())
    };
    let mut result = Ok(());
    model.params.visit_mut(&mut |name, slot| {
        if result.is_ok() {
            result = fill(name, slot);
        }
    });
    result?;
    for (i, stats) in model.running.iter_mut().enumerate() {
        let (mean, var) = running_names(i);
        fill(mean, &mut stats.mean)?;
        fill(var, &mut stats.var)?;
    }
    if let Some(name) = found.keys().next() {
        return Err(ModelError::Checkpoint(format!("unknown entry {name}")));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<Model, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> Model {
        let mut config = ModelConfig::reduced();
        config.attention.enabled = true;
        let mut m = Model::new(config, &mut Rng::new(seed)).unwrap();
        m.running[0].mean = Tensor::from_fn(&[8], |i| i as f64 * 0.25);
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model(7);
        let bytes = write_checkpoint(&m);
        assert_eq!(&bytes[..5], b"CMNV1");
        let back = read_checkpoint(&bytes, &m.config).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let m = model(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cmn");
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path, &m.config).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = write_checkpoint(&model(1));
        bytes[4] = b'2';
        assert!(matches!(read_checkpoint(&bytes, &model(1).config), Err(ModelError::Checkpoint(_))));
        assert!(read_checkpoint(b"CM", &model(1).config).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let m = model(2);
        let mut other = m.config.clone();
        other.fc_hidden = 9;
        let err = read_checkpoint(&write_checkpoint(&m), &other).unwrap_err();
        assert!(err.to_string().contains("fc1.weight"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_missing_entries() {
        let m = model(3);
        let bytes = write_checkpoint(&m);
        for cut in [bytes.len() - 3, bytes.len() / 2, 9] {
            assert!(read_checkpoint(&bytes[..cut], &m.config).is_err(), "cut {cut}");
        }
        let mut no_attn = m.config.clone();
        no_attn.attention.enabled = false;
        let err = read_checkpoint(&bytes, &no_attn).unwrap_err();
        assert!(err.to_string().contains("unknown entry attention"), "{err}");
    }
}
