//! Versioned on-disk container for model parameters.
//!
//! Layout: magic `RCKP`, a little-endian u32 format version, a u64 header
//! length, a JSON header (kind, config, epoch counters, parameter table),
//! then the raw little-endian f64 parameter data in table order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::nn::{InitSpec, ParamStore};

const MAGIC: &[u8; 4] = b"RCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct ParamMeta {
    name: String,
    group: String,
    shape: Vec<usize>,
    init: InitSpec,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Header {
    kind: String,
    config_json: String,
    epochs_trained: BTreeMap<String, u64>,
    params: Vec<ParamMeta>,
}

/// A model snapshot: parameter store plus enough metadata to rebuild and
/// validate the owning model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub epochs_trained: BTreeMap<String, u64>,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: &str, config_json: String, store: ParamStore) -> Checkpoint {
        Checkpoint {
            kind: kind.to_string(),
            config_json,
            epochs_trained: BTreeMap::new(),
            store,
        }
    }

    pub fn epochs(&self, phase: &str) -> u64 {
        self.epochs_trained.get(phase).copied().unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            config_json: self.config_json.clone(),
            epochs_trained: self.epochs_trained.clone(),
            params: self
                .store
                .entries()
                .iter()
                .map(|e| ParamMeta {
                    name: e.name.clone(),
                    group: e.group.clone(),
                    shape: e.value.shape().to_vec(),
                    init: e.init,
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let io = |e| Error::io(path, e);
        file.write_all(MAGIC).map_err(io)?;
        file.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        file.write_all(&(header_json.len() as u64).to_le_bytes())
            .map_err(io)?;
        file.write_all(&header_json).map_err(io)?;
        let mut buf = Vec::new();
        for entry in self.store.entries() {
            for &v in entry.value.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        file.write_all(&buf).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[0..4] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Checkpoint("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("header parse: {e}")))?;

        let total: usize = header
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        let expected = header_end + total * 8;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint data length {} does not match parameter table ({} expected)",
                bytes.len(),
                expected
            )));
        }

        let mut store = ParamStore::new();
        let mut offset = header_end;
        // ParamStore::add samples an init; overwrite with the stored data.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for meta in &header.params {
            let n: usize = meta.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let at = offset + i * 8;
                data.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
            }
            offset += n * 8;
            let id = store.add(&meta.name, &meta.group, &meta.shape, meta.init, &mut rng);
            store.set_value(
                id,
                ArrayD::from_shape_vec(IxDyn(&meta.shape), data)
                    .map_err(|e| Error::Checkpoint(format!("bad parameter shape: {e}")))?,
            );
        }
        Ok(Checkpoint {
            kind: header.kind,
            config_json: header.config_json,
            epochs_trained: header.epochs_trained,
            store,
        })
    }

    /// Checks that this checkpoint's parameter table matches a freshly
    /// constructed store (names, groups, shapes, in order).
    pub fn validate_against(&self, reference: &ParamStore) -> Result<()> {
        if self.store.len() != reference.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                self.store.len(),
                reference.len()
            )));
        }
        for (a, b) in self.store.entries().iter().zip(reference.entries().iter()) {
            if a.name != b.name || a.group != b.group || a.value.shape() != b.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} ({:?} in {}) does not match model {} ({:?} in {})",
                    a.name,
                    a.value.shape(),
                    a.group,
                    b.name,
                    b.value.shape(),
                    b.group,
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add(
            "w",
            "enc",
            &[3, 4],
            InitSpec::XavierUniform { fan_in: 3, fan_out: 4 },
            &mut rng,
        );
        store.add("b", "dec", &[4], InitSpec::Zeros, &mut rng);
        store
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let store = sample_store();
        let mut ckpt = Checkpoint::new("test", "{}".into(), store.clone());
        ckpt.epochs_trained.insert("pretrain".into(), 7);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.kind, "test");
        assert_eq!(loaded.epochs("pretrain"), 7);
        assert_eq!(
            loaded.store.group_hash(&["enc", "dec"]),
            store.group_hash(&["enc", "dec"])
        );
        loaded.validate_against(&store).unwrap();
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::new("test", "{}".into(), sample_store())
            .save(&path)
            .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn shape_mismatch_fails_validation() {
        let store = sample_store();
        let ckpt = Checkpoint::new("test", "{}".into(), store);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut other = ParamStore::new();
        other.add(
            "w",
            "enc",
            &[4, 4],
            InitSpec::XavierUniform { fan_in: 4, fan_out: 4 },
            &mut rng,
        );
        other.add("b", "dec", &[4], InitSpec::Zeros, &mut rng);
        assert!(ckpt.validate_against(&other).is_err());
    }
}
