use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{LabeledDataset, PriorsError};

pub const DATASET_MAGIC: &[u8; 8] = b"PIQL-DS1";

/// Writes a dataset: header (magic, spec_id, D, n, q, label counts), then
/// little-endian f32 matrices row-major and byte label vectors. Point latents
/// are train-time state and are not persisted.
pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<(), PriorsError> {
    dataset.validate()?;
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&dataset.spec_id.to_le_bytes());
    out.extend_from_slice(&(dataset.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.n_context() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.n_query() as u32).to_le_bytes());
    let ctx_outliers = dataset.context_y.iter().filter(|y| **y == 1).count() as u32;
    let query_outliers = dataset.query_y.iter().filter(|y| **y == 1).count() as u32;
    out.extend_from_slice(&ctx_outliers.to_le_bytes());
    out.extend_from_slice(&query_outliers.to_le_bytes());
    for v in dataset.context_x.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&dataset.context_y);
    for v in dataset.query_x.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&dataset.query_y);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PriorsError::Io(e.to_string()))?;
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| PriorsError::Io(e.to_string()))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, PriorsError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| PriorsError::Io(e.to_string()))?;
    let mut cur = 0usize;
    let take = |cur: &mut usize, n: usize| -> Result<&[u8], PriorsError> {
        if *cur + n > bytes.len() {
            return Err(PriorsError::Io("truncated dataset file".into()));
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };
    if take(&mut cur, 8)? != DATASET_MAGIC {
        return Err(PriorsError::Io("bad magic; not a dataset file".into()));
    }
    let spec_id = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap());
    let dim = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let q = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let ctx_outliers = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
    let query_outliers = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;

    let mut read_matrix = |rows: usize| -> Result<Array2<f64>, PriorsError> {
        let mut m = Array2::zeros((rows, dim));
        for i in 0..rows {
            for j in 0..dim {
                let b = take(&mut cur, 4)?;
                m[[i, j]] = f32::from_le_bytes(b.try_into().unwrap()) as f64;
            }
        }
        Ok(m)
    };
    let context_x = read_matrix(n)?;
    let context_y = take(&mut cur, n)?.to_vec();
    let query_x = read_matrix(q)?;
    let query_y = take(&mut cur, q)?.to_vec();

    let dataset = LabeledDataset {
        context_x,
        context_y,
        query_x,
        query_y,
        spec_id,
        point_latents: None,
    };
    dataset.validate()?;
    let got_ctx = dataset.context_y.iter().filter(|y| **y == 1).count();
    let got_q = dataset.query_y.iter().filter(|y| **y == 1).count();
    if got_ctx != ctx_outliers || got_q != query_outliers {
        return Err(PriorsError::Io("label counts disagree with header".into()));
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{generate_dataset, sample_spec, Family, SamplingRanges};

    #[test]
    fn save_load_round_trip_at_f32() {
        let spec = sample_spec(Family::Gmm, &SamplingRanges::desk(6), 4, 9).unwrap();
        let ds = generate_dataset(&spec, 30, 10, 0.15, 2).unwrap();
        let path = std::env::temp_dir().join("piql-ds-roundtrip.bin");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.spec_id, ds.spec_id);
        assert_eq!(loaded.context_y, ds.context_y);
        assert_eq!(loaded.query_y, ds.query_y);
        // features narrowed to f32 on disk
        for (a, b) in loaded.context_x.iter().zip(ds.context_x.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(loaded.point_latents.is_none());
        std::fs::remove_file(path).ok();
    }
}
