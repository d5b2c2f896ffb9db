//! Channel-first float images in the `[-1, 1]` training range.

use std::path::Path;

use fast_nn::Tensor;
use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{FastError, Result};

pub const HEIGHT: usize = 64;
pub const WIDTH: usize = 256;

/// A `C × H × W` image with values in `[-1, 1]`. Masks use exactly `-1`
/// (background) and `+1` (text).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorImage(Tensor);

impl TensorImage {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(FastError::ShapeMismatch(format!("expected C×H×W, got {:?}", tensor.shape())));
        }
        Ok(Self(tensor))
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::new(&[channels, height, width], data)?)
    }

    pub fn full(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self(Tensor::full(&[channels, height, width], value))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.0.data_mut()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height() * self.width();
        &self.0.data()[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height() * self.width();
        &mut self.0.data_mut()[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.0.data()[(c * self.height() + y) * self.width() + x]
    }

    /// Converts an 8-bit RGB image; `v / 127.5 - 1`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
            }
        }
        Self(Tensor::new(&[3, h, w], data).expect("sized buffer"))
    }

    /// Inverse of [`from_rgb`](Self::from_rgb) with rounding and clamping.
    pub fn to_rgb(&self) -> RgbImage {
        let (c, h, w) = self.dims();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |k: usize| to_u8(self.at(k.min(c - 1), y as usize, x as usize));
            Rgb([px(0), px(1), px(2)])
        })
    }

    /// Reads a grayscale mask (`> 127` is text) as a `channels × H × W` ±1 image.
    pub fn mask_from_gray(img: &GrayImage, channels: usize) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane: Vec<f32> = img.pixels().map(|p| if p[0] > 127 { 1.0 } else { -1.0 }).collect();
        let data = plane.repeat(channels);
        Self(Tensor::new(&[channels, h, w], data).expect("sized buffer"))
    }

    /// First channel as a `{0, 255}` mask, thresholded at 0.
    pub fn to_mask_gray(&self) -> GrayImage {
        let (_, h, w) = self.dims();
        GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if self.at(0, y as usize, x as usize) > 0.0 { 255 } else { 0 }]))
    }

    /// First channel as 8-bit gray over the full `[-1, 1]` range.
    pub fn to_gray(&self) -> GrayImage {
        let (_, h, w) = self.dims();
        GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(self.at(0, y as usize, x as usize))]))
    }

    pub fn load_rgb(path: &Path) -> Result<Self> {
        Ok(Self::from_rgb(&image::open(path)?.to_rgb8()))
    }

    pub fn load_mask(path: &Path, channels: usize) -> Result<Self> {
        Ok(Self::mask_from_gray(&image::open(path)?.to_luma8(), channels))
    }

    pub fn save_rgb(&self, path: &Path) -> Result<()> {
        self.to_rgb().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn save_mask(&self, path: &Path) -> Result<()> {
        self.to_mask_gray().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// `+1` where the value exceeds `threshold`, else `-1`.
    pub fn binarize(&self, threshold: f32) -> Self {
        Self(self.0.map(|v| if v > threshold { 1.0 } else { -1.0 }))
    }

    /// Fraction of first-channel pixels that are positive.
    pub fn coverage(&self) -> f64 {
        let p = self.plane(0);
        p.iter().filter(|&&v| v > 0.0).count() as f64 / p.len() as f64
    }

    /// Repeats a single-channel image to `channels`.
    pub fn replicate(&self, channels: usize) -> Self {
        let (_, h, w) = self.dims();
        let data = self.plane(0).repeat(channels);
        Self(Tensor::new(&[channels, h, w], data).expect("sized buffer"))
    }

    /// Keeps the first `channels` planes.
    pub fn take_channels(&self, channels: usize) -> Self {
        let (_, h, w) = self.dims();
        let data = self.data()[..channels * h * w].to_vec();
        Self(Tensor::new(&[channels, h, w], data).expect("sized buffer"))
    }

    /// Values mapped to `[0, 1]` as `f64`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.data().iter().map(|&v| ((v as f64 + 1.0) / 2.0).clamp(0.0, 1.0)).collect()
    }

    /// Bilinear resize (half-pixel centres, edge clamping).
    pub fn resize(&self, height: usize, width: usize) -> Self {
        let (c, h, w) = self.dims();
        if (h, w) == (height, width) {
            return self.clone();
        }
        let sy = h as f32 / height as f32;
        let sx = w as f32 / width as f32;
        let taps = |out: usize, scale: f32, len: usize| -> Vec<(usize, usize, f32)> {
            (0..out)
                .map(|o| {
                    let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(len - 1);
                    (i0, i1, src - i0 as f32)
                })
                .collect()
        };
        let ty = taps(height, sy, h);
        let tx = taps(width, sx, w);
        let mut out = vec![0.0; c * height * width];
        for ch in 0..c {
            let src = self.plane(ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    out[(ch * height + oy) * width + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Self(Tensor::new(&[c, height, width], out).expect("sized buffer"))
    }

    /// Rounds every value onto the 8-bit grid so PNG round-trips are exact.
    pub fn quantize(&self) -> Self {
        Self(self.0.map(quantize_value))
    }

    pub fn ensure_dims(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        if self.dims() != (channels, height, width) {
            return Err(FastError::ShapeMismatch(format!(
                "expected {channels}×{height}×{width}, got {:?}",
                self.0.shape()
            )));
        }
        Ok(())
    }
}

/// Nearest value representable in an 8-bit PNG.
pub fn quantize_value(v: f32) -> f32 {
    to_u8(v) as f32 / 127.5 - 1.0
}

fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Stacks equally shaped images into an `N × C × H × W` batch.
pub fn batch(images: &[&TensorImage]) -> Result<Tensor> {
    let items: Vec<Tensor> = images.iter().map(|i| i.0.clone()).collect();
    Ok(Tensor::stack(&items)?)
}

/// Extracts item `i` of an `N × C × H × W` batch.
pub fn unbatch(batch: &Tensor, i: usize) -> TensorImage {
    let (_, c, h, w) = batch.dims4();
    let n = c * h * w;
    TensorImage(Tensor::new(&[c, h, w], batch.data()[i * n..(i + 1) * n].to_vec()).expect("sized buffer"))
}

pub fn decode_png(bytes: &[u8]) -> Result<image::DynamicImage> {
    Ok(image::load_from_memory(bytes)?)
}

pub fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}
