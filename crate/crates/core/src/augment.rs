//! Image augmentation used while training the generator.
//!
//! Every operator is a pure function of `(image, config, rng state)`,
//! preserves the image shape and keeps intensities in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);
const MIN_CROP_SIDE: usize = 8;
const DISTORT_GRID: (usize, usize) = (4, 3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub erase_prob: f64,
    pub erase_area_frac: (f64, f64),
    /// Crop window side length as a fraction of the image side.
    pub crop_scale: (f64, f64),
    pub rotation_deg: f64,
    /// Per-channel multiplicative factor range.
    pub jitter_strength: (f64, f64),
    pub flip_prob: f64,
    /// Maximum displacement, in pixels, of the smooth warp field.
    pub distortion_strength: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            erase_prob: 0.5,
            erase_area_frac: (0.02, 0.2),
            crop_scale: (0.8, 1.0),
            rotation_deg: 20.0,
            jitter_strength: (0.8, 1.2),
            flip_prob: 0.5,
            distortion_strength: 2.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration under which every operator is the identity.
    pub fn identity() -> Self {
        Self {
            erase_prob: 0.0,
            erase_area_frac: (0.0, 0.0),
            crop_scale: (1.0, 1.0),
            rotation_deg: 0.0,
            jitter_strength: (1.0, 1.0),
            flip_prob: 0.0,
            distortion_strength: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = prob(self.erase_prob)
            && prob(self.flip_prob)
            && ordered(self.erase_area_frac)
            && self.erase_area_frac.0 >= 0.0
            && self.erase_area_frac.1 <= 1.0
            && ordered(self.crop_scale)
            && self.crop_scale.0 > 0.0
            && self.crop_scale.1 <= 1.0
            && ordered(self.jitter_strength)
            && self.jitter_strength.0 >= 0.0
            && self.rotation_deg >= 0.0
            && self.distortion_strength >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation config: {self:?}")))
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// With probability `erase_prob`, fills a random rectangle with uniform
/// noise. The rectangle area is drawn from `erase_area_frac`.
pub fn random_erase(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let mut out = image.clone();
    if cfg.erase_prob <= 0.0 || !rng.random_bool(cfg.erase_prob) {
        return out;
    }
    let (h, w) = image.shape();
    let area = uniform(rng, cfg.erase_area_frac) * (h * w) as f64;
    if area <= 0.0 {
        return out;
    }
    let (log_lo, log_hi) = (ERASE_ASPECT.0.ln(), ERASE_ASPECT.1.ln());
    let mut rect = None;
    for _ in 0..100 {
        let aspect = rng.random_range(log_lo..log_hi).exp();
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        if (1..=h).contains(&eh) && (1..=w).contains(&ew) {
            rect = Some((eh, ew));
            break;
        }
    }
    let (eh, ew) = rect.unwrap_or_else(|| {
        let eh = (area.sqrt().round() as usize).clamp(1, h);
        (eh, ((area / eh as f64).round() as usize).clamp(1, w))
    });
    let top = rng.random_range(0..=h - eh);
    let left = rng.random_range(0..=w - ew);
    for y in top..top + eh {
        for x in left..left + ew {
            let rgb = [0; CHANNELS].map(|_| rng.random::<f32>());
            out.set_pixel(y, x, rgb);
        }
    }
    out
}

/// Cuts the integer window `[top, top+h) x [left, left+w)` and resizes it
/// back to the input shape. Sampling never reaches outside the window.
pub fn crop_window(image: &Image, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
    let (ih, iw) = image.shape();
    if h == 0 || w == 0 || top + h > ih || left + w > iw {
        return Err(Error::InvalidInput(format!(
            "crop window {h}x{w}+{top}+{left} outside {ih}x{iw} image"
        )));
    }
    let window = Image::from_fn(h, w, |y, x| image.pixel(top + y, left + x));
    Ok(window.resize(ih, iw))
}

pub fn random_crop(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image> {
    let (h, w) = image.shape();
    let side = |s: f64, n: usize| ((s * n as f64).round() as usize).clamp(1, n);
    if side(cfg.crop_scale.0, h) < MIN_CROP_SIDE || side(cfg.crop_scale.0, w) < MIN_CROP_SIDE {
        return Err(Error::Config(format!(
            "crop scale {} leaves a window smaller than {MIN_CROP_SIDE}x{MIN_CROP_SIDE} on a {h}x{w} image",
            cfg.crop_scale.0
        )));
    }
    let scale = uniform(rng, cfg.crop_scale);
    let (ch, cw) = (side(scale, h), side(scale, w));
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    crop_window(image, top, left, ch, cw)
}

/// Rotates about the image centre by an angle uniform in `±rotation_deg`,
/// replicating the border.
pub fn random_rotate(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let angle = uniform(rng, (-cfg.rotation_deg, cfg.rotation_deg));
    rotate(image, angle)
}

pub fn rotate(image: &Image, angle_deg: f64) -> Image {
    let (h, w) = image.shape();
    let (sin, cos) = (angle_deg.to_radians() as f32).sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    Image::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f32 - cy, x as f32 - cx);
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        image.sample_bilinear(sy, sx)
    })
}

/// Multiplies each channel by its own factor from `jitter_strength`.
pub fn color_jitter(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let factors = [0; CHANNELS].map(|_| uniform(rng, cfg.jitter_strength) as f32);
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(CHANNELS) {
        for (v, f) in px.iter_mut().zip(factors) {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn horizontal_flip(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    if cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob) {
        image.flip_horizontal()
    } else {
        image.clone()
    }
}

/// Warps the image with a smooth displacement field: random offsets in
/// `±distortion_strength` pixels on a coarse grid, bilinearly interpolated.
pub fn random_distort(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Image {
    let s = cfg.distortion_strength;
    if s <= 0.0 {
        return image.clone();
    }
    let (gh, gw) = DISTORT_GRID;
    let grid: Vec<(f32, f32)> = (0..gh * gw)
        .map(|_| (rng.random_range(-s..=s) as f32, rng.random_range(-s..=s) as f32))
        .collect();
    let (h, w) = image.shape();
    let fy = (gh - 1) as f32 / (h.max(2) - 1) as f32;
    let fx = (gw - 1) as f32 / (w.max(2) - 1) as f32;
    Image::from_fn(h, w, |y, x| {
        let gy = y as f32 * fy;
        let gx = x as f32 * fx;
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (ty, tx) = (gy - y0 as f32, gx - x0 as f32);
        let at = |r: usize, c: usize| grid[r * gw + c];
        let lerp = |a: (f32, f32), b: (f32, f32), t: f32| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = lerp(at(y0, x0), at(y0, x1), tx);
        let bottom = lerp(at(y1, x0), at(y1, x1), tx);
        let (dy, dx) = lerp(top, bottom, ty);
        image.sample_bilinear(y as f32 + dy, x as f32 + dx)
    })
}

/// Applies the operators in the fixed order
/// flip, crop, rotate, jitter, distort, erase.
pub fn augment(image: &Image, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Image> {
    let img = horizontal_flip(image, cfg, rng);
    let img = random_crop(&img, cfg, rng)?;
    let img = random_rotate(&img, cfg, rng);
    let img = color_jitter(&img, cfg, rng);
    let img = random_distort(&img, cfg, rng);
    Ok(random_erase(&img, cfg, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn erase_probability_zero_is_identity() {
        let img = noise(32, 16, 1);
        let cfg = AugmentConfig {
            erase_prob: 0.0,
            ..AugmentConfig::default()
        };
        assert_eq!(random_erase(&img, &cfg, &mut rng(0)), img);
    }

    #[test]
    fn erase_covers_requested_area() {
        for seed in 0..20 {
            let img = noise(64, 32, seed);
            let cfg = AugmentConfig {
                erase_prob: 1.0,
                erase_area_frac: (0.1, 0.1),
                ..AugmentConfig::default()
            };
            let out = random_erase(&img, &cfg, &mut rng(seed));
            let differing = (0..64)
                .flat_map(|y| (0..32).map(move |x| (y, x)))
                .filter(|&(y, x)| img.pixel(y, x) != out.pixel(y, x))
                .count();
            let target: f64 = 0.1 * 64.0 * 32.0;
            // Rounding the rectangle sides moves the area by at most one
            // row plus one column.
            let slack = (target.sqrt() * 3.3f64.sqrt()) * 2.0 + 1.0;
            assert!(
                (differing as f64 - target).abs() <= slack,
                "seed {seed}: {differing} pixels differ, expected ~{target}"
            );
        }
    }

    #[test]
    fn full_frame_crop_is_identity() {
        let img = noise(20, 12, 3);
        let cfg = AugmentConfig {
            crop_scale: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        let out = random_crop(&img, &cfg, &mut rng(1)).unwrap();
        assert!(img.max_abs_diff(&out) < 1e-6);
    }

    #[test]
    fn top_left_crop_of_half_black_image_is_black() {
        let img = Image::from_fn(32, 16, |_, x| if x < 8 { [0.0; 3] } else { [1.0; 3] });
        let out = crop_window(&img, 0, 0, 16, 8).unwrap();
        assert_eq!(out.shape(), (32, 16));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_crop_scale_is_rejected() {
        let img = noise(32, 16, 0);
        let cfg = AugmentConfig {
            crop_scale: (0.2, 1.0),
            ..AugmentConfig::default()
        };
        assert!(random_crop(&img, &cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn double_flip_is_identity() {
        let img = noise(10, 7, 5);
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::default()
        };
        let once = horizontal_flip(&img, &cfg, &mut rng(0));
        assert_ne!(once, img);
        assert_eq!(horizontal_flip(&once, &cfg, &mut rng(0)), img);
    }

    #[test]
    fn zero_rotation_and_unit_jitter_are_identity() {
        let img = noise(16, 9, 2);
        let cfg = AugmentConfig::identity();
        assert!(random_rotate(&img, &cfg, &mut rng(0)).max_abs_diff(&img) < 1e-6);
        assert_eq!(color_jitter(&img, &cfg, &mut rng(0)), img);
        assert_eq!(random_distort(&img, &cfg, &mut rng(0)), img);
        assert!(augment(&img, &cfg, &mut rng(0)).unwrap().max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn rotation_by_180_reverses_pixels() {
        let img = noise(9, 5, 4);
        let out = rotate(&img, 180.0);
        for y in 0..9 {
            for x in 0..5 {
                let a = out.pixel(y, x);
                let b = img.pixel(8 - y, 4 - x);
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-4);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pipeline_preserves_shape_range_and_is_deterministic(
            h in 16usize..48, w in 16usize..40, seed in 0u64..1000,
        ) {
            let img = noise(h, w, seed);
            let cfg = AugmentConfig { erase_prob: 1.0, flip_prob: 0.5, ..AugmentConfig::default() };
            let a = augment(&img, &cfg, &mut rng(seed)).unwrap();
            let b = augment(&img, &cfg, &mut rng(seed)).unwrap();
            prop_assert_eq!(a.shape(), (h, w));
            prop_assert!(a.in_unit_range());
            prop_assert_eq!(a, b);
        }
    }
}
