use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GalleryIndex, Metric};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PFDM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;

/// Per-row labels stored in the JSON sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMeta {
    pub paths: Vec<String>,
    pub identities: Vec<u32>,
    pub cameras: Vec<Option<u32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorFile {
    pub metric: Metric,
    pub descriptors: Vec<Vec<f32>>,
    pub meta: DescriptorMeta,
}

impl DescriptorFile {
    pub fn dim(&self) -> usize {
        self.descriptors.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let m = self.descriptors.len();
        if self.meta.paths.len() != m || self.meta.identities.len() != m || self.meta.cameras.len() != m {
            return Err(Error::InvalidInput("descriptor sidecar length differs from row count".into()));
        }
        let d = self.dim();
        if self.descriptors.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("descriptor rows differ in length".into()));
        }
        Ok(())
    }

    pub fn to_index(&self) -> Result<GalleryIndex> {
        GalleryIndex::build(
            self.descriptors.clone(),
            self.meta.identities.clone(),
            self.meta.cameras.clone(),
            self.metric,
        )
    }
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_descriptor_file(path: &Path, file: &DescriptorFile) -> Result<()> {
    file.validate()?;
    let (m, d) = (file.descriptors.len(), file.dim());
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m * d);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    buf.push(file.metric.as_u8());
    for row in &file.descriptors {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&file.meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_descriptor_file(path: &Path) -> Result<DescriptorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {msg}", path.display()));
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a descriptor file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let metric = Metric::from_u8(bytes[24])?;
    let payload = &bytes[HEADER_LEN..];
    if m.checked_mul(d).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
        return Err(bad("payload length does not match header"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let descriptors = if d == 0 {
        vec![Vec::new(); m]
    } else {
        values.chunks(d).map(<[f32]>::to_vec).collect()
    };
    let side = sidecar_path(path);
    let meta: DescriptorMeta =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let file = DescriptorFile {
        metric,
        descriptors,
        meta,
    };
    file.validate()?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_distances_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let descriptors: Vec<Vec<f32>> = (0..7)
            .map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let file = DescriptorFile {
            metric: Metric::Cosine,
            meta: DescriptorMeta {
                paths: (0..7).map(|i| format!("img_{i}.png")).collect(),
                identities: (0..7).map(|i| i % 3).collect(),
                cameras: (0..7).map(|i| (i % 2 == 0).then_some(i)).collect(),
            },
            descriptors,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gallery.desc");
        write_descriptor_file(&path, &file).unwrap();
        let back = read_descriptor_file(&path).unwrap();
        assert_eq!(back, file);

        let a = file.to_index().unwrap();
        let b = back.to_index().unwrap();
        let q = &file.descriptors[2];
        let da: Vec<u64> = a.distances(q).unwrap().iter().map(|d| d.to_bits()).collect();
        let db: Vec<u64> = b.distances(q).unwrap().iter().map(|d| d.to_bits()).collect();
        assert_eq!(da, db);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.desc");
        fs::write(&path, b"nonsense").unwrap();
        assert!(read_descriptor_file(&path).is_err());

        let file = DescriptorFile {
            metric: Metric::Euclidean,
            descriptors: vec![vec![1.0, 2.0]],
            meta: DescriptorMeta {
                paths: vec!["a".into()],
                identities: vec![1],
                cameras: vec![None],
            },
        };
        write_descriptor_file(&path, &file).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(read_descriptor_file(&path).is_err());

        let mut short = file.clone();
        short.meta.identities.clear();
        assert!(write_descriptor_file(&path, &short).is_err());
    }
}
