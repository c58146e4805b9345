//! Checkpoint file: `(kind, config JSON, seed, epoch, parameter stores)` in
//! a little-endian binary layout. Values are written as raw f64 bits, so a
//! save/load round trip is bit-exact.
//!
//! Layout: magic `SQFZ`, version u32, seed u64, epoch u64, kind string,
//! config string, store count u64, then per store the parameter entries
//! (name string, decay u8, shape, value bits). Strings are u64 length +
//! UTF-8 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SQFZ";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub seed: u64,
    pub epoch: u64,
    pub stores: Vec<ParamStore>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.epoch.to_le_bytes())?;
        write_string(&mut w, &self.kind)?;
        write_string(&mut w, &self.config_json)?;
        w.write_all(&(self.stores.len() as u64).to_le_bytes())?;
        for store in &self.stores {
            w.write_all(&(store.len() as u64).to_le_bytes())?;
            for (_, entry) in store.iter() {
                write_string(&mut w, &entry.name)?;
                w.write_all(&[entry.decay as u8])?;
                let shape = entry.tensor.shape();
                w.write_all(&(shape.len() as u64).to_le_bytes())?;
                for &d in shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                w.write_all(&(entry.tensor.numel() as u64).to_le_bytes())?;
                for &v in entry.tensor.values() {
                    w.write_all(&v.to_bits().to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint file",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let seed = read_u64(&mut r)?;
        let epoch = read_u64(&mut r)?;
        let kind = read_string(&mut r)?;
        let config_json = read_string(&mut r)?;
        let store_count = read_u64(&mut r)? as usize;
        let mut stores = Vec::with_capacity(store_count);
        for _ in 0..store_count {
            let param_count = read_u64(&mut r)? as usize;
            let mut store = ParamStore::new();
            for _ in 0..param_count {
                let name = read_string(&mut r)?;
                let mut decay = [0u8; 1];
                r.read_exact(&mut decay)?;
                let rank = read_u64(&mut r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u64(&mut r)? as usize);
                }
                let numel = read_u64(&mut r)? as usize;
                let mut values = Vec::with_capacity(numel);
                for _ in 0..numel {
                    values.push(f64::from_bits(read_u64(&mut r)?));
                }
                let tensor = Tensor::new(shape, values)
                    .map_err(|e| Error::Checkpoint(format!("corrupt tensor: {e}")))?;
                store.add(name, tensor, decay[0] != 0);
            }
            stores.push(store);
        }
        Ok(Checkpoint {
            kind,
            config_json,
            seed,
            epoch,
            stores,
        })
    }
}

/// Copies saved values into a freshly constructed store, matching by name.
pub fn restore_store(target: &mut ParamStore, saved: &ParamStore) -> Result<()> {
    if target.len() != saved.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: model has {}, checkpoint has {}",
            target.len(),
            saved.len()
        )));
    }
    for (_, entry) in saved.iter() {
        let id = target.find(&entry.name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint parameter {} unknown to model", entry.name))
        })?;
        if target.get(id).shape() != entry.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: {:?} vs {:?}",
                entry.name,
                target.get(id).shape(),
                entry.tensor.shape()
            )));
        }
        let values = entry.tensor.values().to_vec();
        target.get_mut(id).apply_update(|i, v| *v = values[i]);
    }
    Ok(())
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > (1 << 30) {
        return Err(Error::Checkpoint(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn fixture_store(seed: u64) -> ParamStore {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        store.add("w", Tensor::uniform(&[3, 4], 1.0, &mut rng), true);
        store.add("b", Tensor::uniform(&[4], 1.0, &mut rng), false);
        // awkward values must survive bit-exactly
        store.add(
            "edge",
            Tensor::new(vec![3], vec![-0.0, f64::MIN_POSITIVE / 2.0, 1.0 + f64::EPSILON]).unwrap(),
            true,
        );
        store
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint {
            kind: "temma".into(),
            config_json: "{\"d_model\":8}".into(),
            seed: 99,
            epoch: 17,
            stores: vec![fixture_store(1), fixture_store(2)],
        };
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.kind, "temma");
        assert_eq!(loaded.config_json, ckpt.config_json);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.epoch, 17);
        assert_eq!(loaded.stores.len(), 2);
        for (a, b) in ckpt.stores.iter().zip(&loaded.stores) {
            for ((_, ea), (_, eb)) in a.iter().zip(b.iter()) {
                assert_eq!(ea.name, eb.name);
                assert_eq!(ea.decay, eb.decay);
                assert_eq!(ea.tensor.shape(), eb.tensor.shape());
                for (x, y) in ea.tensor.values().iter().zip(eb.tensor.values()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn restore_matches_by_name_and_shape() {
        let saved = fixture_store(3);
        let mut target = fixture_store(4);
        restore_store(&mut target, &saved).unwrap();
        for ((_, a), (_, b)) in target.iter().zip(saved.iter()) {
            for (x, y) in a.tensor.values().iter().zip(b.tensor.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let mut small = ParamStore::new();
        small.add("w", Tensor::zeros(&[3, 4]), true);
        assert!(restore_store(&mut small, &saved).is_err());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
