//! Owned RGB intensity images in `[0, 1]`, stored row-major HWC.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(
                height * width * CHANNELS,
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres sit on
    /// integers). Out-of-range coordinates replicate the border.
    pub fn sample_bilinear(&self, y: f32, x: f32) -> [f32; 3] {
        let max_y = (self.height - 1) as f32;
        let max_x = (self.width - 1) as f32;
        let y = y.clamp(0.0, max_y);
        let x = x.clamp(0.0, max_x);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = y - y0 as f32;
        let fx = x - x0 as f32;
        let (a, b, c, d) = (
            self.pixel(y0, x0),
            self.pixel(y0, x1),
            self.pixel(y1, x0),
            self.pixel(y1, x1),
        );
        let mut out = [0.0; 3];
        for ch in 0..CHANNELS {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bottom = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = top + (bottom - top) * fy;
        }
        out
    }

    /// Bilinear resize of the window `[top, top + h) x [left, left + w)` to
    /// `out_h x out_w`, using pixel-centre alignment.
    pub fn resize_window(
        &self,
        top: f32,
        left: f32,
        h: f32,
        w: f32,
        out_h: usize,
        out_w: usize,
    ) -> Image {
        let sy = h / out_h as f32;
        let sx = w / out_w as f32;
        Image::from_fn(out_h, out_w, |y, x| {
            let src_y = top + (y as f32 + 0.5) * sy - 0.5;
            let src_x = left + (x as f32 + 0.5) * sx - 0.5;
            self.sample_bilinear(src_y, src_x)
        })
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if (out_h, out_w) == self.shape() {
            return self.clone();
        }
        self.resize_window(
            0.0,
            0.0,
            self.height as f32,
            self.width as f32,
            out_h,
            out_w,
        )
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| {
            self.pixel(y, self.width - 1 - x)
        })
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn load(path: &Path) -> Result<Image> {
        let decoded = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&decoded.to_rgb8()))
    }

    pub fn from_rgb8(buf: &::image::RgbImage) -> Image {
        let (w, h) = buf.dimensions();
        let data = buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ::image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, ::image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Paste `other` with its top-left corner at `(top, left)`, clipping at the
    /// borders.
    pub fn paste(&mut self, other: &Image, top: usize, left: usize) {
        for y in 0..other.height.min(self.height.saturating_sub(top)) {
            for x in 0..other.width.min(self.width.saturating_sub(left)) {
                self.set_pixel(top + y, left + x, other.pixel(y, x));
            }
        }
    }
}
