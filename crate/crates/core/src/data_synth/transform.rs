//! Rotation, sinusoidal curve and perspective warp of a glyph layer.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::style::StyleSpec;
use crate::error::{FastError, Result};
use crate::image::TensorImage;

/// The composed forward map `perspective ∘ curve ∘ rotation` and its inverse.
#[derive(Clone, Debug)]
pub struct Warp {
    rotation: Option<(f64, f64, f64, f64)>,
    curve: Option<(f64, f64, f64)>,
    homography: Option<(Matrix3<f64>, Matrix3<f64>)>,
}

impl Warp {
    /// `ink_x` is the horizontal ink extent of the untransformed layer, over
    /// which the curve spans one half-period.
    pub fn new(style: &StyleSpec, height: usize, width: usize, ink_x: Option<(f64, f64)>) -> Result<Self> {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let rotation = (style.rotation_deg != 0.0).then(|| {
            let t = (style.rotation_deg as f64).to_radians();
            (t.cos(), t.sin(), cx, cy)
        });
        let curve = match ink_x {
            Some((x0, x1)) if style.curve_amplitude_px != 0.0 && x1 > x0 => Some((style.curve_amplitude_px as f64, x0, x1)),
            _ => None,
        };
        let homography = if style.perspective_warp.iter().any(|&v| v != 0.0) {
            let h = corner_homography(&style.perspective_warp, height, width)?;
            let inv = h
                .try_inverse()
                .ok_or_else(|| FastError::InvalidConfig("degenerate perspective warp".into()))?;
            Some((h, inv))
        } else {
            None
        };
        Ok(Self { rotation, curve, homography })
    }

    pub fn is_identity(&self) -> bool {
        self.rotation.is_none() && self.curve.is_none() && self.homography.is_none()
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut x, mut y) = (x, y);
        if let Some((c, s, cx, cy)) = self.rotation {
            let (dx, dy) = (x - cx, y - cy);
            (x, y) = (cx + c * dx - s * dy, cy + s * dx + c * dy);
        }
        if let Some(curve) = self.curve {
            y += curve_offset(curve, x);
        }
        if let Some((h, _)) = &self.homography {
            (x, y) = apply_h(h, x, y);
        }
        (x, y)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut x, mut y) = (x, y);
        if let Some((_, hinv)) = &self.homography {
            (x, y) = apply_h(hinv, x, y);
        }
        if let Some(curve) = self.curve {
            y -= curve_offset(curve, x);
        }
        if let Some((c, s, cx, cy)) = self.rotation {
            let (dx, dy) = (x - cx, y - cy);
            (x, y) = (cx + c * dx + s * dy, cy - s * dx + c * dy);
        }
        (x, y)
    }
}

fn curve_offset((amp, x0, x1): (f64, f64, f64), x: f64) -> f64 {
    if x < x0 || x > x1 {
        0.0
    } else {
        amp * (std::f64::consts::PI * (x - x0) / (x1 - x0)).sin()
    }
}

fn apply_h(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Homography taking the canvas corners (TL, TR, BR, BL) to the corners
/// displaced by `offsets = [dx_tl, dy_tl, dx_tr, dy_tr, dx_br, dy_br, dx_bl, dy_bl]`.
pub fn corner_homography(offsets: &[f32; 8], height: usize, width: usize) -> Result<Matrix3<f64>> {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    let src = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (k, &(x, y)) in src.iter().enumerate() {
        let u = x + offsets[2 * k] as f64;
        let v = y + offsets[2 * k + 1] as f64;
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| FastError::InvalidConfig("degenerate perspective warp".into()))?;
    Ok(Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0))
}

/// Horizontal extent of pixels whose last channel (alpha) is positive.
pub fn ink_x_extent(layer: &TensorImage) -> Option<(f64, f64)> {
    let (c, h, w) = layer.dims();
    let alpha = layer.plane(c - 1);
    let cols: Vec<usize> = (0..w).filter(|&x| (0..h).any(|y| alpha[y * w + x] > 0.0)).collect();
    Some((*cols.first()? as f64, *cols.last()? as f64))
}

/// Warps every channel of `canvas` (last channel = alpha) by the style's
/// rotation, curve and perspective, with inverse-mapped bilinear sampling.
/// Samples falling outside the source read as zero.
pub fn apply_geometric_transform(canvas: &TensorImage, style: &StyleSpec) -> Result<TensorImage> {
    let (c, h, w) = canvas.dims();
    let warp = Warp::new(style, h, w, ink_x_extent(canvas))?;
    if warp.is_identity() {
        return Ok(canvas.clone());
    }
    check_overflow(canvas, &warp)?;
    let mut out = TensorImage::full(c, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = warp.inverse(x as f64, y as f64);
            let taps = bilinear_taps(u, v, h, w);
            for ch in 0..c {
                let src = canvas.plane(ch);
                let mut acc = 0.0f64;
                for &(idx, wt) in taps.iter().flatten() {
                    acc += src[idx] as f64 * wt;
                }
                out.plane_mut(ch)[y * w + x] = acc as f32;
            }
        }
    }
    Ok(out)
}

fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> [Option<(usize, f64)>; 4] {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let mut taps = [None; 4];
    for (k, (dx, dy, wt)) in [(0.0, 0.0, (1.0 - fx) * (1.0 - fy)), (1.0, 0.0, fx * (1.0 - fy)), (0.0, 1.0, (1.0 - fx) * fy), (1.0, 1.0, fx * fy)]
        .into_iter()
        .enumerate()
    {
        let (xi, yi) = (x0 + dx, y0 + dy);
        if wt != 0.0 && xi >= 0.0 && yi >= 0.0 && xi < w as f64 && yi < h as f64 {
            taps[k] = Some((yi as usize * w + xi as usize, wt));
        }
    }
    taps
}

fn check_overflow(canvas: &TensorImage, warp: &Warp) -> Result<()> {
    let (c, h, w) = canvas.dims();
    let alpha = canvas.plane(c - 1);
    for y in 0..h {
        for x in 0..w {
            if alpha[y * w + x] > 0.0 {
                let (u, v) = warp.forward(x as f64, y as f64);
                if u < -0.5 || v < -0.5 || u > w as f64 - 0.5 || v > h as f64 - 0.5 {
                    return Err(FastError::GlyphOverflow(format!("ink pixel ({x},{y}) maps outside the canvas")));
                }
            }
        }
    }
    Ok(())
}
