use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{load_pose_file, Sample, SampleMeta, Subset};
use crate::error::{Error, Result};
use crate::image::Image;

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Naming {
    /// `ID_cCsS_frame_bbox.ext`, subsets taken from the directory names.
    Market1501,
    /// Labels come from a `manifest.csv` next to the images.
    Flat,
}

/// One row of the flat-naming label manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub identity: u32,
    pub camera: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

/// Parses a Market-1501 style file name into `(identity, camera)`.
///
/// Junk images (identity `-1`) and anything not matching the pattern yield
/// `None`.
pub fn parse_market1501_name(name: &str) -> Option<(u32, u32)> {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let re = PATTERN.get_or_init(|| {
        Regex::new(r"^(-?\d+)_c(\d+)(?:s\d+)?_\d+(?:_\d+)?\.[A-Za-z]+$").expect("valid regex")
    });
    let caps = re.captures(name)?;
    let identity: i64 = caps[1].parse().ok()?;
    let camera: u32 = caps[2].parse().ok()?;
    (identity >= 0).then_some((identity as u32, camera))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sibling_pose_file(image_path: &Path) -> Option<PathBuf> {
    let stem = image_path.file_stem()?.to_str()?;
    let dir = image_path.parent()?;
    [format!("{stem}_keypoints.json"), format!("{stem}.json")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn subset_from_dirs(path: &Path, root: &Path) -> Option<Subset> {
    let rel = path.strip_prefix(root).ok()?;
    rel.parent()?
        .components()
        .rev()
        .filter_map(|c| c.as_os_str().to_str())
        .find_map(Subset::parse)
}

struct Pending {
    path: PathBuf,
    identity: u32,
    camera: Option<u32>,
    subset: Option<Subset>,
}

fn decode(pending: Pending) -> Option<Sample> {
    let image = match Image::load(&pending.path) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("skipping {}: {e}", pending.path.display());
            return None;
        }
    };
    let pose = match sibling_pose_file(&pending.path) {
        Some(pose_path) => match load_pose_file(&pose_path, image.width(), image.height()) {
            Ok(pose) => Some(pose),
            Err(e) => {
                log::warn!("ignoring pose for {}: {e}", pending.path.display());
                None
            }
        },
        None => None,
    };
    Some(Sample {
        image,
        meta: SampleMeta {
            path: pending.path,
            identity: pending.identity,
            camera: pending.camera,
            pose,
            subset: pending.subset,
        },
    })
}

/// Loads every labelled image under `root`, sorted by path.
///
/// Files whose name or contents cannot be parsed are skipped with a warning.
/// Detector keypoint files named `<stem>_keypoints.json` or `<stem>.json`
/// next to an image are attached as its pose.
pub fn load_image_dir(root: &Path, naming: Naming) -> Result<Vec<Sample>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut pending = match naming {
        Naming::Market1501 => {
            let mut out = Vec::new();
            for entry in WalkDir::new(root).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    Error::io(root, std::io::Error::other(e.to_string()))
                })?;
                let path = entry.path();
                if !entry.file_type().is_file() || !is_image(path) {
                    continue;
                }
                let name = entry.file_name().to_string_lossy();
                match parse_market1501_name(&name) {
                    Some((identity, camera)) => out.push(Pending {
                        path: path.to_path_buf(),
                        identity,
                        camera: Some(camera),
                        subset: subset_from_dirs(path, root),
                    }),
                    None => log::warn!("skipping {}: unparseable file name", path.display()),
                }
            }
            out
        }
        Naming::Flat => {
            let manifest = root.join(super::MANIFEST_FILE);
            if !manifest.is_file() {
                return Err(Error::NoSamples(root.to_path_buf()));
            }
            read_manifest(&manifest)?
                .into_iter()
                .map(|row| Pending {
                    path: root.join(&row.path),
                    identity: row.identity,
                    camera: row.camera,
                    subset: row.split.as_deref().and_then(Subset::parse),
                })
                .collect()
        }
    };
    pending.sort_by(|a, b| a.path.cmp(&b.path));

    let samples: Vec<Sample> = pending.into_par_iter().filter_map(decode).collect();
    if samples.is_empty() {
        return Err(Error::NoSamples(root.to_path_buf()));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_market_names() {
        assert_eq!(parse_market1501_name("0002_c1s1_000451_03.jpg"), Some((2, 1)));
        assert_eq!(parse_market1501_name("1501_c6s4_001902_01.png"), Some((1501, 6)));
        assert_eq!(parse_market1501_name("-1_c3s2_000123_02.jpg"), None);
        assert_eq!(parse_market1501_name("Thumbs.db"), None);
        assert_eq!(parse_market1501_name("person.jpg"), None);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_image_dir(dir.path(), Naming::Market1501).unwrap_err();
        assert!(err.to_string().contains("no samples found"));
    }

    #[test]
    fn loads_market_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("bounding_box_train");
        std::fs::create_dir_all(&train).unwrap();
        let names = [
            "0002_c1s1_000451_03.jpg",
            "0002_c2s1_000551_01.jpg",
            "0007_c1s1_000101_01.jpg",
            "0007_c3s1_000201_01.jpg",
        ];
        let img = Image::filled(8, 4, [0.2, 0.4, 0.6]);
        for name in names {
            img.to_rgb8().save(train.join(name)).unwrap();
        }
        std::fs::write(train.join("notes.txt"), "ignored").unwrap();
        std::fs::write(train.join("bogus_name.png"), "ignored").unwrap();

        let samples = load_image_dir(dir.path(), Naming::Market1501).unwrap();
        assert_eq!(samples.len(), 4);
        let ids: std::collections::BTreeSet<u32> = samples.iter().map(|s| s.identity()).collect();
        assert_eq!(ids.len(), 2);
        assert_eq!(samples[0].identity(), 2);
        assert_eq!(samples[0].camera(), Some(1));
        assert_eq!(samples[0].meta.subset, Some(Subset::Train));
        assert!(samples.iter().all(|s| s.image.in_unit_range()));
    }

    #[test]
    fn corrupt_image_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        Image::filled(4, 4, [1.0, 0.0, 0.0])
            .save_png(&dir.path().join("0001_c1s1_000001_01.png"))
            .unwrap();
        std::fs::write(dir.path().join("0001_c2s1_000002_01.png"), b"not a png").unwrap();
        let samples = load_image_dir(dir.path(), Naming::Market1501).unwrap();
        assert_eq!(samples.len(), 1);
    }
}
