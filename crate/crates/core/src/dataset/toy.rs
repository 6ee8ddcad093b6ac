//! Synthetic articulated stick-figure dataset.
//!
//! Every identity gets its own torso / leg / head colours; every image draws
//! a fresh set of limb angles. Each of the 25 BODY_25 joints is stamped as a
//! single marker pixel whose colour encodes the joint index, so ground-truth
//! poses can be recovered from the pixels alone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pose_to_json, Joint, ManifestRow, PoseSource, PoseVector, Sample, SampleMeta, LIMBS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.csv";

const MARKER_RED: u8 = 255;
const MARKER_GREEN: u8 = 0;
const MAX_COLOR_LEVEL: u32 = 220;
const MIN_COLOR_LEVEL: u32 = 25;

/// Angle bounds (degrees) and placement jitter for toy poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRange {
    pub arm_swing_deg: f64,
    pub elbow_bend_deg: f64,
    pub leg_swing_deg: f64,
    pub knee_bend_deg: f64,
    pub lean_deg: f64,
    /// Horizontal shift of the figure as a fraction of the image width.
    pub shift_frac: f64,
}

impl Default for PoseRange {
    fn default() -> Self {
        Self {
            arm_swing_deg: 40.0,
            elbow_bend_deg: 35.0,
            leg_swing_deg: 20.0,
            knee_bend_deg: 20.0,
            lean_deg: 8.0,
            shift_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub num_identities: usize,
    pub images_per_identity: usize,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub appearance_seed: u64,
    #[serde(default)]
    pub pose_range: PoseRange,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_identities: 10,
            images_per_identity: 8,
            image_size: (64, 32),
            appearance_seed: 7,
            pose_range: PoseRange::default(),
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::Config("toy dataset needs at least 2 identities".into()));
        }
        if self.images_per_identity < 2 {
            return Err(Error::Config("toy dataset needs at least 2 images per identity".into()));
        }
        let (h, w) = self.image_size;
        if h < 32 || w < 16 {
            return Err(Error::Config(format!("toy image size {h}x{w} is below 32x16")));
        }
        let r = &self.pose_range;
        let angles = [r.arm_swing_deg, r.elbow_bend_deg, r.leg_swing_deg, r.knee_bend_deg, r.lean_deg];
        if angles.iter().any(|a| !(0.0..=90.0).contains(a)) || !(0.0..0.3).contains(&r.shift_frac) {
            return Err(Error::Config("toy pose range out of bounds".into()));
        }
        Ok(())
    }
}

type Rgb = [f32; 3];

#[derive(Clone, Copy, Debug)]
struct Appearance {
    torso: Rgb,
    legs: Rgb,
    head: Rgb,
}

fn level(v: u32) -> f32 {
    v as f32 / 255.0
}

fn random_color(rng: &mut ChaCha8Rng) -> [u32; 3] {
    [0; 3].map(|_| rng.random_range(MIN_COLOR_LEVEL..=MAX_COLOR_LEVEL))
}

fn appearances(n: usize, rng: &mut ChaCha8Rng) -> Vec<Appearance> {
    let mut chosen: Vec<[[u32; 3]; 3]> = Vec::with_capacity(n);
    let mut min_gap = 60u32;
    while chosen.len() < n {
        let mut accepted = false;
        for _ in 0..500 {
            let scheme = [random_color(rng), random_color(rng), random_color(rng)];
            let far_enough = chosen.iter().all(|other| {
                // Torso and legs must both be distinguishable.
                (0..2).all(|part| {
                    (0..3).any(|c| scheme[part][c].abs_diff(other[part][c]) >= min_gap)
                })
            });
            if far_enough {
                chosen.push(scheme);
                accepted = true;
                break;
            }
        }
        if !accepted {
            min_gap = (min_gap * 3) / 4;
        }
    }
    chosen
        .into_iter()
        .map(|[t, l, h]| Appearance {
            torso: t.map(level),
            legs: l.map(level),
            head: h.map(level),
        })
        .collect()
}

fn background(camera: u32) -> Rgb {
    match camera % 2 {
        0 => [level(235), level(235), level(235)],
        _ => [level(205), level(215), level(228)],
    }
}

fn marker_color(joint: usize) -> Rgb {
    [level(MARKER_RED as u32), level(MARKER_GREEN as u32), level(10 * joint as u32 + 5)]
}

fn dir(angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.to_radians();
    (a.sin(), a.cos())
}

fn add(p: (f64, f64), d: (f64, f64), len: f64) -> (f64, f64) {
    (p.0 + d.0 * len, p.1 + d.1 * len)
}

/// Continuous joint positions in pixel coordinates.
fn skeleton(h: usize, w: usize, range: &PoseRange, rng: &mut ChaCha8Rng) -> [(f64, f64); NUM_JOINTS] {
    let hf = h as f64;
    let u = hf / 64.0;
    let mut sym = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };

    let shift = sym(range.shift_frac) * w as f64;
    let lean = sym(range.lean_deg);
    let arm_r = -15.0 + sym(range.arm_swing_deg);
    let arm_l = 15.0 + sym(range.arm_swing_deg);
    let elbow_r = arm_r + sym(range.elbow_bend_deg);
    let elbow_l = arm_l + sym(range.elbow_bend_deg);
    let leg_r = -6.0 + sym(range.leg_swing_deg);
    let leg_l = 6.0 + sym(range.leg_swing_deg);
    let knee_r = leg_r + sym(range.knee_bend_deg);
    let knee_l = leg_l + sym(range.knee_bend_deg);

    let mut j = [(0.0, 0.0); NUM_JOINTS];
    let up = (lean.to_radians().sin(), -lean.to_radians().cos());
    j[8] = (w as f64 / 2.0 + shift, 0.56 * hf);
    j[1] = add(j[8], up, 0.24 * hf);
    j[0] = add(j[1], up, 0.085 * hf);
    j[15] = (j[0].0 - 2.0 * u, j[0].1 - 2.0 * u);
    j[16] = (j[0].0 + 2.0 * u, j[0].1 - 2.0 * u);
    j[17] = (j[0].0 - 4.0 * u, j[0].1 - 1.0 * u);
    j[18] = (j[0].0 + 4.0 * u, j[0].1 - 1.0 * u);
    j[2] = (j[1].0 - 5.0 * u, j[1].1 + 0.5 * u);
    j[5] = (j[1].0 + 5.0 * u, j[1].1 + 0.5 * u);
    j[3] = add(j[2], dir(arm_r), 0.15 * hf);
    j[4] = add(j[3], dir(elbow_r), 0.13 * hf);
    j[6] = add(j[5], dir(arm_l), 0.15 * hf);
    j[7] = add(j[6], dir(elbow_l), 0.13 * hf);
    j[9] = (j[8].0 - 3.0 * u, j[8].1);
    j[12] = (j[8].0 + 3.0 * u, j[8].1);
    j[10] = add(j[9], dir(leg_r), 0.17 * hf);
    j[11] = add(j[10], dir(knee_r), 0.16 * hf);
    j[13] = add(j[12], dir(leg_l), 0.17 * hf);
    j[14] = add(j[13], dir(knee_l), 0.16 * hf);
    // Feet: right toes point to image-left, left toes to image-right.
    let foot = |ankle: (f64, f64), side: f64| {
        [
            (ankle.0 + side * 3.0 * u, ankle.1 + u),
            (ankle.0 + side * 2.0 * u, ankle.1 + 2.0 * u),
            (ankle.0 - side * u, ankle.1 + 2.0 * u),
        ]
    };
    let [lbig, lsmall, lheel] = foot(j[14], 1.0);
    let [rbig, rsmall, rheel] = foot(j[11], -1.0);
    j[19] = lbig;
    j[20] = lsmall;
    j[21] = lheel;
    j[22] = rbig;
    j[23] = rsmall;
    j[24] = rheel;
    j
}

/// Snaps joints to pixel indices; `None` if two joints share a pixel.
fn snap(joints: &[(f64, f64); NUM_JOINTS], h: usize, w: usize) -> Option<[(usize, usize); NUM_JOINTS]> {
    let mut px = [(0usize, 0usize); NUM_JOINTS];
    for (p, &(x, y)) in px.iter_mut().zip(joints) {
        let col = x.floor().clamp(0.0, (w - 1) as f64) as usize;
        let row = y.floor().clamp(0.0, (h - 1) as f64) as usize;
        *p = (col, row);
    }
    for a in 0..NUM_JOINTS {
        for b in a + 1..NUM_JOINTS {
            if px[a] == px[b] {
                return None;
            }
        }
    }
    Some(px)
}

fn pixel_pose(px: &[(usize, usize); NUM_JOINTS], h: usize, w: usize) -> PoseVector {
    let mut pose = PoseVector::missing(PoseSource::Synthetic);
    for (joint, &(col, row)) in pose.joints.iter_mut().zip(px) {
        *joint = Joint::present((col as f64 + 0.5) / w as f64, (row as f64 + 0.5) / h as f64);
    }
    pose
}

fn draw_segment(img: &mut Image, a: (f64, f64), b: (f64, f64), radius: f64, color: Rgb) {
    let (h, w) = img.shape();
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil() as usize).min(w - 1);
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + radius).ceil() as usize).min(h - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((cx - a.0) * dx + (cy - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (a.0 + t * dx - cx, a.1 + t * dy - cy);
            if qx * qx + qy * qy <= radius * radius {
                img.set_pixel(y, x, color);
            }
        }
    }
}

fn render_figure(h: usize, w: usize, joints: &[(f64, f64); NUM_JOINTS], look: &Appearance, bg: Rgb) -> Image {
    let u = h as f64 / 64.0;
    let mut img = Image::filled(h, w, bg);
    let limb = 1.3 * u;
    for &(a, b) in &[(9, 10), (10, 11), (12, 13), (13, 14), (14, 19), (14, 21), (11, 22), (11, 24)] {
        draw_segment(&mut img, joints[a], joints[b], limb, look.legs);
    }
    draw_segment(&mut img, joints[9], joints[12], limb, look.legs);
    draw_segment(&mut img, joints[1], joints[8], 4.0 * u, look.torso);
    draw_segment(&mut img, joints[2], joints[5], limb, look.torso);
    for &(a, b) in &[(2, 3), (3, 4), (5, 6), (6, 7)] {
        draw_segment(&mut img, joints[a], joints[b], limb, look.torso);
    }
    let head_centre = (
        (joints[0].0 + joints[15].0 + joints[16].0) / 3.0,
        (joints[0].1 + joints[15].1 + joints[16].1) / 3.0,
    );
    draw_segment(&mut img, head_centre, head_centre, 4.0 * u, look.head);
    img
}

/// Renders the toy dataset in memory. Returns the samples and, paired by
/// index, the exact pose of each figure (also attached to the sample).
pub fn synth_toy_dataset(spec: &ToySpec) -> Result<(Vec<Sample>, Vec<PoseVector>)> {
    spec.validate()?;
    let (h, w) = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.appearance_seed);
    let looks = appearances(spec.num_identities, &mut rng);

    let mut samples = Vec::with_capacity(spec.num_identities * spec.images_per_identity);
    let mut poses = Vec::with_capacity(samples.capacity());
    for (identity, look) in looks.iter().enumerate() {
        for idx in 0..spec.images_per_identity {
            let camera = (idx % 2) as u32;
            let mut attempts = 0;
            let (joints, px) = loop {
                let joints = skeleton(h, w, &spec.pose_range, &mut rng);
                if let Some(px) = snap(&joints, h, w) {
                    break (joints, px);
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config("toy pose range produces overlapping joints".into()));
                }
            };
            let mut image = render_figure(h, w, &joints, look, background(camera));
            for (j, &(col, row)) in px.iter().enumerate() {
                image.set_pixel(row, col, marker_color(j));
            }
            let pose = pixel_pose(&px, h, w);
            samples.push(Sample {
                image,
                meta: SampleMeta {
                    path: PathBuf::from(format!("id{identity:03}_{idx:03}.png")),
                    identity: identity as u32,
                    camera: Some(camera),
                    pose: Some(pose.clone()),
                    subset: None,
                },
            });
            poses.push(pose);
        }
    }
    Ok((samples, poses))
}

/// Writes PNG images, one `<stem>_keypoints.json` per image and the label
/// manifest into `dir`, so the set can be reloaded with flat naming.
pub fn write_toy_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest_path)?;
    for s in samples {
        let name = s
            .meta
            .path
            .file_name()
            .ok_or_else(|| Error::InvalidInput(format!("bad sample path {}", s.meta.path.display())))?;
        let image_path = dir.join(name);
        s.image.save_png(&image_path)?;
        if let Some(pose) = &s.meta.pose {
            let stem = image_path.file_stem().and_then(|x| x.to_str()).unwrap_or_default();
            let pose_path = dir.join(format!("{stem}_keypoints.json"));
            fs::write(&pose_path, pose_to_json(pose, s.image.width(), s.image.height()))
                .map_err(|e| Error::io(&pose_path, e))?;
        }
        writer.serialize(ManifestRow {
            path: name.to_string_lossy().into_owned(),
            identity: s.identity(),
            camera: s.camera(),
            split: None,
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Finds the joint marker pixels in a toy image and returns their
/// normalized centres, one slot per joint.
pub fn detect_markers(image: &Image) -> [Option<(f64, f64)>; NUM_JOINTS] {
    let tol = 0.5 / 255.0;
    let (h, w) = image.shape();
    let mut found = [None; NUM_JOINTS];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = image.pixel(y, x);
            if (r - 1.0).abs() > tol || g.abs() > tol {
                continue;
            }
            let code = (b * 255.0).round() as i64 - 5;
            if code >= 0 && code % 10 == 0 && ((code / 10) as usize) < NUM_JOINTS {
                found[(code / 10) as usize] =
                    Some(((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64));
            }
        }
    }
    found
}

/// Draws a pose as a dark stick figure on white, for visual grids.
pub fn render_skeleton(pose: &PoseVector, h: usize, w: usize) -> Image {
    let mut img = Image::filled(h, w, [1.0; 3]);
    let to_px = |j: &Joint| (j.x * w as f64, j.y * h as f64);
    let radius = (h as f64 / 64.0).max(0.5);
    for &(a, b) in &LIMBS {
        let (ja, jb) = (&pose.joints[a], &pose.joints[b]);
        if ja.is_present() && jb.is_present() {
            draw_segment(&mut img, to_px(ja), to_px(jb), radius, [0.2, 0.2, 0.2]);
        }
    }
    img
}
