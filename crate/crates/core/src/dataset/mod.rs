//! Samples, pose vectors, dataset ingestion and train/test splits.

mod load;
mod pose;
mod split;
mod toy;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::image::Image;

pub use self::load::{load_image_dir, parse_market1501_name, read_manifest, ManifestRow, Naming};
pub use self::pose::{
    load_pose_file, parse_pose_json, pose_to_json, Joint, PoseSource, PoseVector, JOINT_NAMES,
    LIMBS, NUM_JOINTS, POSE_FEATURE_DIM,
};
pub use self::split::{make_split, Protocol};
pub use self::toy::{
    detect_markers, render_skeleton, synth_toy_dataset, write_toy_dataset, PoseRange, ToySpec,
    MANIFEST_FILE,
};

/// Which evaluation subset a sample was published in, when the dataset
/// layout says so.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    /// Test images without a query/gallery assignment.
    Test,
    Query,
    Gallery,
}

impl Subset {
    pub fn parse(s: &str) -> Option<Subset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "bounding_box_train" => Some(Subset::Train),
            "test" => Some(Subset::Test),
            "query" => Some(Subset::Query),
            "gallery" | "bounding_box_test" => Some(Subset::Gallery),
            _ => None,
        }
    }
}

/// Everything about a sample except its pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub path: PathBuf,
    pub identity: u32,
    pub camera: Option<u32>,
    pub pose: Option<PoseVector>,
    pub subset: Option<Subset>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn identity(&self) -> u32 {
        self.meta.identity
    }

    pub fn camera(&self) -> Option<u32> {
        self.meta.camera
    }

    pub fn pose(&self) -> Option<&PoseVector> {
        self.meta.pose.as_ref()
    }

    /// True when the sample carries a pose with at least one detected joint.
    pub fn has_pose(&self) -> bool {
        self.meta.pose.as_ref().is_some_and(|p| p.present_count() > 0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub gallery: Vec<Sample>,
    pub query: Vec<Sample>,
    pub num_identities_train: usize,
}

impl DatasetSplit {
    pub fn train_identities(&self) -> BTreeSet<u32> {
        self.train.iter().map(Sample::identity).collect()
    }

    pub fn test_identities(&self) -> BTreeSet<u32> {
        self.gallery
            .iter()
            .chain(&self.query)
            .map(Sample::identity)
            .collect()
    }
}
