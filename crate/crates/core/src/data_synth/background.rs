//! Background sources: procedural textures or crops of images on disk.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::splitmix64;
use crate::error::{FastError, Result};
use crate::image::{TensorImage, HEIGHT, WIDTH};

#[derive(Clone, Debug)]
enum Entry {
    Procedural(u64),
    Image { name: String, image: TensorImage },
}

/// A pool of backgrounds addressable by a stable id: `proc-K` for procedural
/// texture `K`, `name@x,y` for a 64×256 crop of image `name` at offset `(x, y)`.
#[derive(Clone, Debug, Default)]
pub struct BackgroundSet {
    entries: Vec<Entry>,
}

impl BackgroundSet {
    pub fn procedural(count: usize) -> Self {
        Self { entries: (0..count as u64).map(Entry::Procedural).collect() }
    }

    /// Loads every PNG/JPEG in `dir`, sorted by name. Images smaller than the
    /// canvas are upscaled to cover it.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        let mut entries = Vec::with_capacity(paths.len());
        for p in paths {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().replace('@', "_");
            let mut image = TensorImage::load_rgb(&p)?;
            let (h, w) = (image.height(), image.width());
            if h < HEIGHT || w < WIDTH {
                let s = (HEIGHT as f64 / h as f64).max(WIDTH as f64 / w as f64);
                image = image.resize((h as f64 * s).ceil() as usize, (w as f64 * s).ceil() as usize);
            }
            entries.push(Entry::Image { name, image });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Picks a background uniformly and, for images, a uniform crop offset.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(String, TensorImage)> {
        if self.entries.is_empty() {
            return Err(FastError::InsufficientAssets("no backgrounds".into()));
        }
        let id = match &self.entries[rng.gen_range(0..self.entries.len())] {
            Entry::Procedural(k) => format!("proc-{k}"),
            Entry::Image { name, image } => {
                let x = rng.gen_range(0..=image.width() - WIDTH);
                let y = rng.gen_range(0..=image.height() - HEIGHT);
                format!("{name}@{x},{y}")
            }
        };
        let img = self.resolve(&id)?;
        Ok((id, img))
    }

    /// Reconstructs the 3×64×256 background named by `id`.
    pub fn resolve(&self, id: &str) -> Result<TensorImage> {
        if let Some(k) = id.strip_prefix("proc-").and_then(|k| k.parse().ok()) {
            return Ok(procedural_texture(k));
        }
        let bad = || FastError::InsufficientAssets(format!("unknown background `{id}`"));
        let (name, at) = id.split_once('@').ok_or_else(bad)?;
        let (x, y) = at.split_once(',').ok_or_else(bad)?;
        let (x, y): (usize, usize) = (x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?);
        let image = self
            .entries
            .iter()
            .find_map(|e| match e {
                Entry::Image { name: n, image } if n == name => Some(image),
                _ => None,
            })
            .ok_or_else(bad)?;
        if x + WIDTH > image.width() || y + HEIGHT > image.height() {
            return Err(bad());
        }
        let mut out = TensorImage::full(3, HEIGHT, WIDTH, 0.0);
        for c in 0..3 {
            let src = image.plane(c);
            let dst = out.plane_mut(c);
            for r in 0..HEIGHT {
                let s = (y + r) * image.width() + x;
                dst[r * WIDTH..(r + 1) * WIDTH].copy_from_slice(&src[s..s + WIDTH]);
            }
        }
        Ok(out)
    }
}

/// Deterministic smooth texture: a two-colour linear gradient modulated by
/// bilinear value noise, quantised to 8 bits.
pub fn procedural_texture(k: u64) -> TensorImage {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(k ^ 0x6261_636b));
    let c0: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let noise_amp: f32 = rng.gen_range(0.0..0.25);
    let cell = [8usize, 16, 32][rng.gen_range(0..3)];
    let (gh, gw) = (HEIGHT / cell + 2, WIDTH / cell + 2);
    let grid: Vec<f32> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (dx, dy) = (angle.cos(), angle.sin());
    let norm = (WIDTH as f32 * dx.abs() + HEIGHT as f32 * dy.abs()).max(1.0);
    let mut out = TensorImage::full(3, HEIGHT, WIDTH, 0.0);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let t = (((x as f32 - WIDTH as f32 / 2.0) * dx + (y as f32 - HEIGHT as f32 / 2.0) * dy) / norm + 0.5).clamp(0.0, 1.0);
            let (gx, gy) = (x as f32 / cell as f32, y as f32 / cell as f32);
            let (ix, iy) = (gx as usize, gy as usize);
            let (fx, fy) = (smooth(gx - ix as f32), smooth(gy - iy as f32));
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let n = (g(iy, ix) * (1.0 - fx) + g(iy, ix + 1) * fx) * (1.0 - fy) + (g(iy + 1, ix) * (1.0 - fx) + g(iy + 1, ix + 1) * fx) * fy;
            for c in 0..3 {
                let v = (c0[c] * (1.0 - t) + c1[c] * t + noise_amp * n).clamp(0.0, 1.0);
                out.plane_mut(c)[y * WIDTH + x] = v * 2.0 - 1.0;
            }
        }
    }
    out.quantize()
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}
