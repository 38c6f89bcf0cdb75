use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Matrix, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PIQL-CK1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self, CheckpointError> {
        match t {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(CheckpointError::Corrupt(format!("unknown dtype tag {other}"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Named-tensor container with a metadata map. Layout on disk:
/// magic, version, metadata entries, a tensor directory
/// (name, dtype, rows, cols, payload offset), then the little-endian payload.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, value) in store.iter() {
            tensors.insert(name.clone(), value.clone());
        }
        Checkpoint {
            metadata: BTreeMap::new(),
            tensors,
        }
    }

    pub fn into_store(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new(seed);
        for (name, value) in &self.tensors {
            store.insert(name, value.clone());
        }
        store
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<(), CheckpointError> {
        let mut payload: Vec<u8> = Vec::new();
        let mut directory: Vec<(String, u64, u64, u64)> = Vec::new();
        for (name, tensor) in &self.tensors {
            let offset = payload.len() as u64;
            match dtype {
                Dtype::F32 => {
                    for v in tensor.iter() {
                        payload.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
                Dtype::F64 => {
                    for v in tensor.iter() {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            directory.push((
                name.clone(),
                tensor.nrows() as u64,
                tensor.ncols() as u64,
                offset,
            ));
        }

        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            write_str(&mut out, k);
            write_str(&mut out, v);
        }
        out.extend_from_slice(&(directory.len() as u64).to_le_bytes());
        for (name, rows, cols, offset) in &directory {
            write_str(&mut out, name);
            out.push(dtype.tag());
            out.extend_from_slice(&rows.to_le_bytes());
            out.extend_from_slice(&cols.to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *cur + n > bytes.len() {
                return Err(CheckpointError::Corrupt("truncated file".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };

        if take(&mut cur, 8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let meta_count = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        let mut metadata = BTreeMap::new();
        for _ in 0..meta_count {
            let k = read_str(&bytes, &mut cur)?;
            let v = read_str(&bytes, &mut cur)?;
            metadata.insert(k, v);
        }
        let tensor_count = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap());
        let mut dirs = Vec::new();
        for _ in 0..tensor_count {
            let name = read_str(&bytes, &mut cur)?;
            let dtype = Dtype::from_tag(take(&mut cur, 1)?[0])?;
            let rows = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            let offset = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            dirs.push((name, dtype, rows, cols, offset));
        }
        let payload_len = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let payload = take(&mut cur, payload_len)?;

        let mut tensors = BTreeMap::new();
        for (name, dtype, rows, cols, offset) in dirs {
            let n = rows * cols;
            let width = match dtype {
                Dtype::F32 => 4,
                Dtype::F64 => 8,
            };
            if offset + n * width > payload.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor `{name}` runs past payload"
                )));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let at = offset + i * width;
                let v = match dtype {
                    Dtype::F32 => {
                        f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64
                    }
                    Dtype::F64 => f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()),
                };
                data.push(v);
            }
            let m = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.insert(name, m);
        }
        Ok(Checkpoint { metadata, tensors })
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_str(bytes: &[u8], cur: &mut usize) -> Result<String, CheckpointError> {
    if *cur + 4 > bytes.len() {
        return Err(CheckpointError::Corrupt("truncated string length".into()));
    }
    let len = u32::from_le_bytes(bytes[*cur..*cur + 4].try_into().unwrap()) as usize;
    *cur += 4;
    if *cur + len > bytes.len() {
        return Err(CheckpointError::Corrupt("truncated string".into()));
    }
    let s = String::from_utf8(bytes[*cur..*cur + len].to_vec())
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    *cur += len;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("piql-ck-test-f64.bin");
        let mut ck = Checkpoint::default().with_meta("variant", "NoPI");
        ck.tensors.insert(
            "w".into(),
            Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 + 0.125) * (j as f64 - 0.7)),
        );
        ck.save(&dir, Dtype::F64).unwrap();
        let loaded = Checkpoint::load(&dir).unwrap();
        assert_eq!(loaded.metadata["variant"], "NoPI");
        assert_eq!(loaded.tensors["w"], ck.tensors["w"]);
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn f32_round_trip_narrows() {
        let dir = std::env::temp_dir().join("piql-ck-test-f32.bin");
        let mut ck = Checkpoint::default();
        ck.tensors
            .insert("w".into(), Array2::from_elem((1, 1), 0.1f64));
        ck.save(&dir, Dtype::F32).unwrap();
        let loaded = Checkpoint::load(&dir).unwrap();
        let v = loaded.tensors["w"][[0, 0]];
        assert_eq!(v, 0.1f32 as f64);
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = std::env::temp_dir().join("piql-ck-test-bad.bin");
        std::fs::write(&dir, b"NOTMAGIC rest").unwrap();
        assert!(matches!(
            Checkpoint::load(&dir),
            Err(CheckpointError::BadMagic)
        ));
        std::fs::remove_file(dir).ok();
    }
}
