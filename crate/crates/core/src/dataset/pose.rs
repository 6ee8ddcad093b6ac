//! BODY_25 pose vectors and the detector's JSON keypoint format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 25;
/// Length of the flattened `(x, y)` pose encoding.
pub const POSE_FEATURE_DIM: usize = 2 * NUM_JOINTS;

/// BODY_25 joint names, in keypoint order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist", "MidHip",
    "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye", "LEye", "REar", "LEar",
    "LBigToe", "LSmallToe", "LHeel", "RBigToe", "RSmallToe", "RHeel",
];

/// Limb segments used for drawing skeletons.
pub const LIMBS: [(usize, usize); 24] = [
    (1, 8),
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (1, 0),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    /// Detection confidence; exactly zero marks a missing joint.
    pub c: f64,
}

impl Joint {
    pub const MISSING: Joint = Joint {
        x: 0.0,
        y: 0.0,
        c: 0.0,
    };

    pub fn present(x: f64, y: f64) -> Joint {
        Joint { x, y, c: 1.0 }
    }

    pub fn is_present(&self) -> bool {
        self.c > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    Detected,
    Clustered,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseVector {
    pub joints: [Joint; NUM_JOINTS],
    pub source: PoseSource,
}

impl PoseVector {
    pub fn missing(source: PoseSource) -> Self {
        Self {
            joints: [Joint::MISSING; NUM_JOINTS],
            source,
        }
    }

    /// Builds a fully present pose from a flattened `(x, y)` vector.
    pub fn from_feature(feature: &[f64], source: PoseSource) -> Result<Self> {
        if feature.len() != POSE_FEATURE_DIM {
            return Err(Error::shape(POSE_FEATURE_DIM, feature.len()));
        }
        let mut joints = [Joint::MISSING; NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            *joint = Joint::present(feature[2 * j], feature[2 * j + 1]);
        }
        Ok(Self { joints, source })
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_present()).count()
    }

    pub fn present_fraction(&self) -> f64 {
        self.present_count() as f64 / NUM_JOINTS as f64
    }

    pub fn total_confidence(&self) -> f64 {
        self.joints.iter().map(|j| j.c).sum()
    }

    /// Checks the structural invariants: finite coordinates, confidences in
    /// `[0, 1]`, missing joints at the origin and full confidence for
    /// non-detected poses.
    pub fn validate(&self) -> Result<()> {
        for (j, joint) in self.joints.iter().enumerate() {
            if !joint.x.is_finite() || !joint.y.is_finite() || !(0.0..=1.0).contains(&joint.c) {
                return Err(Error::PoseFormat(format!("joint {j} is malformed: {joint:?}")));
            }
            if !joint.is_present() && (joint.x != 0.0 || joint.y != 0.0) {
                return Err(Error::PoseFormat(format!(
                    "missing joint {j} must sit at the origin"
                )));
            }
            if self.source != PoseSource::Detected && joint.is_present() && joint.c != 1.0 {
                return Err(Error::PoseFormat(format!(
                    "{:?} pose joint {j} must have confidence 1",
                    self.source
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct KeypointFile {
    #[serde(default = "default_version")]
    version: f64,
    people: Vec<KeypointPerson>,
}

fn default_version() -> f64 {
    1.3
}

#[derive(Debug, Deserialize, Serialize)]
struct KeypointPerson {
    pose_keypoints_2d: Vec<f64>,
}

/// Parses detector JSON text. Pixel coordinates are divided by the image
/// width and height; when several people are present the one with the
/// largest summed confidence wins.
pub fn parse_pose_json(text: &str, width: usize, height: usize) -> Result<PoseVector> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let file: KeypointFile = serde_json::from_str(text)
        .map_err(|e| Error::PoseFormat(format!("not a keypoint file: {e}")))?;

    let mut best: Option<(f64, PoseVector)> = None;
    for (idx, person) in file.people.iter().enumerate() {
        let kp = &person.pose_keypoints_2d;
        if kp.len() != 3 * NUM_JOINTS {
            return Err(Error::PoseFormat(format!(
                "person {idx}: pose_keypoints_2d has {} values, expected {}",
                kp.len(),
                3 * NUM_JOINTS
            )));
        }
        let mut pose = PoseVector::missing(PoseSource::Detected);
        for (j, triple) in kp.chunks_exact(3).enumerate() {
            let (x, y, c) = (triple[0], triple[1], triple[2]);
            if !(x.is_finite() && y.is_finite() && c.is_finite()) {
                return Err(Error::PoseFormat(format!("person {idx}: non-finite keypoint {j}")));
            }
            let c = c.clamp(0.0, 1.0);
            pose.joints[j] = if c > 0.0 {
                Joint {
                    x: (x / width as f64).clamp(0.0, 1.0),
                    y: (y / height as f64).clamp(0.0, 1.0),
                    c,
                }
            } else {
                Joint::MISSING
            };
        }
        let score = pose.total_confidence();
        // Strictly greater keeps the first person on ties.
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, pose));
        }
    }
    Ok(best
        .map(|(_, pose)| pose)
        .unwrap_or_else(|| PoseVector::missing(PoseSource::Detected)))
}

pub fn load_pose_file(path: &Path, width: usize, height: usize) -> Result<PoseVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_json(&text, width, height)
        .map_err(|e| Error::PoseFormat(format!("{}: {e}", path.display())))
}

/// Serializes a pose back to detector JSON, in pixel units.
pub fn pose_to_json(pose: &PoseVector, width: usize, height: usize) -> String {
    let mut keypoints = Vec::with_capacity(3 * NUM_JOINTS);
    for joint in &pose.joints {
        keypoints.push(joint.x * width as f64);
        keypoints.push(joint.y * height as f64);
        keypoints.push(joint.c);
    }
    let file = KeypointFile {
        version: default_version(),
        people: vec![KeypointPerson {
            pose_keypoints_2d: keypoints,
        }],
    };
    serde_json::to_string(&file).expect("keypoint file serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn person(values: &[f64]) -> String {
        format!(
            "{{\"pose_keypoints_2d\":[{}]}}",
            values
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )
    }

    #[test]
    fn zeros_give_all_missing() {
        let text = format!("{{\"people\":[{}]}}", person(&[0.0; 75]));
        let pose = parse_pose_json(&text, 64, 128).unwrap();
        assert!(pose.joints.iter().all(|j| j.c == 0.0));
        pose.validate().unwrap();
    }

    #[test]
    fn normalizes_by_width_and_height() {
        let mut kp = vec![0.0; 75];
        kp[0] = 64.0;
        kp[1] = 32.0;
        kp[2] = 0.9;
        let text = format!("{{\"people\":[{}]}}", person(&kp));
        let pose = parse_pose_json(&text, 128, 128).unwrap();
        assert_eq!(pose.joints[0], Joint { x: 0.5, y: 0.25, c: 0.9 });
    }

    #[test]
    fn picks_most_confident_person() {
        // Summed confidences: 10.2 for the first person, 3.1 for the second.
        let mut a = vec![0.0; 75];
        let mut b = vec![0.0; 75];
        for j in 0..12 {
            a[3 * j] = 10.0;
            a[3 * j + 2] = 0.85;
        }
        for j in 0..5 {
            b[3 * j] = 20.0;
            b[3 * j + 2] = 0.62;
        }
        let sum_a: f64 = (0..25).map(|j| a[3 * j + 2]).sum();
        let sum_b: f64 = (0..25).map(|j| b[3 * j + 2]).sum();
        assert!((sum_a - 10.2).abs() < 1e-9 && (sum_b - 3.1).abs() < 1e-9);

        let text = format!("{{\"people\":[{},{}]}}", person(&a), person(&b));
        let pose = parse_pose_json(&text, 100, 100).unwrap();
        assert_eq!(pose.joints[0].x, 0.1);
        assert_eq!(pose.present_count(), 12);
    }

    #[test]
    fn no_people_is_all_missing() {
        let pose = parse_pose_json("{\"people\":[]}", 10, 10).unwrap();
        assert_eq!(pose.present_count(), 0);
    }

    #[test]
    fn format_errors() {
        assert!(parse_pose_json("{\"persons\":[]}", 10, 10).is_err());
        let text = format!("{{\"people\":[{}]}}", person(&[1.0; 74]));
        assert!(parse_pose_json(&text, 10, 10).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut pose = PoseVector::missing(PoseSource::Detected);
        pose.joints[3] = Joint { x: 0.25, y: 0.75, c: 0.5 };
        pose.joints[9] = Joint { x: 0.5, y: 0.125, c: 1.0 };
        let text = pose_to_json(&pose, 64, 128);
        assert_eq!(parse_pose_json(&text, 64, 128).unwrap(), pose);
    }
}
