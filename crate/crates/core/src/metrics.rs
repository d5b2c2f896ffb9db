//! Evaluation metrics on `[0, 1]` RGB, computed in `f64`.

use std::path::Path;

use fast_nn::{Ctx, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_synth::read_manifest;
use crate::error::{FastError, Result};
use crate::image::{TensorImage, HEIGHT, WIDTH};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP_DB: f64 = 100.0;

/// The first three of the canonical five MS-SSIM weights
/// (0.0448, 0.2856, 0.3001), renormalised to sum to one. Three scales is the
/// most a 64-pixel-high image supports with an 11-tap window.
pub const MSSSIM_WEIGHTS: [f64; 3] = [0.0448 / 0.6305, 0.2856 / 0.6305, 0.3001 / 0.6305];

/// Normalised 1-D Gaussian, `σ = 1.5`, 11 taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// A single channel plane in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (h, w) = (self.height, self.width);
        let (ho, wo) = (h + 1 - n, w + 1 - n);
        let mut tmp = vec![0.0; h * wo];
        for r in 0..h {
            for c in 0..wo {
                tmp[r * wo + c] = (0..n).map(|i| self.data[r * w + c + i] * k[i]).sum();
            }
        }
        let mut out = vec![0.0; ho * wo];
        for r in 0..ho {
            for c in 0..wo {
                out[r * wo + c] = (0..n).map(|i| tmp[(r + i) * wo + c] * k[i]).sum();
            }
        }
        Plane { height: ho, width: wo, data: out }
    }

    /// 2×2 average pooling; a trailing odd row or column is dropped.
    pub fn downsample(&self) -> Plane {
        let (ho, wo) = (self.height / 2, self.width / 2);
        let w = self.width;
        let data = (0..ho * wo)
            .map(|i| {
                let (r, c) = (2 * (i / wo), 2 * (i % wo));
                (self.data[r * w + c] + self.data[r * w + c + 1] + self.data[(r + 1) * w + c] + self.data[(r + 1) * w + c + 1]) / 4.0
            })
            .collect();
        Plane { height: ho, width: wo, data }
    }
}

/// Per-channel `[0, 1]` planes of a `[-1, 1]` image.
pub fn unit_planes(img: &TensorImage) -> Vec<Plane> {
    let (c, h, w) = img.dims();
    let unit = img.to_unit();
    (0..c).map(|k| Plane { height: h, width: w, data: unit[k * h * w..(k + 1) * h * w].to_vec() }).collect()
}

/// Mean SSIM and mean contrast-structure term over valid window positions.
pub fn ssim_cs(x: &Plane, y: &Plane) -> (f64, f64) {
    let g = gaussian_window();
    let mu1 = x.filter_valid(&g);
    let mu2 = y.filter_valid(&g);
    let xx = x.map2(x, |a, b| a * b).filter_valid(&g);
    let yy = y.map2(y, |a, b| a * b).filter_valid(&g);
    let xy = x.map2(y, |a, b| a * b).filter_valid(&g);
    let n = mu1.data.len() as f64;
    let (mut s, mut cs) = (0.0, 0.0);
    for i in 0..mu1.data.len() {
        let (m1, m2) = (mu1.data[i], mu2.data[i]);
        let s11 = xx.data[i] - m1 * m1;
        let s22 = yy.data[i] - m2 * m2;
        let s12 = xy.data[i] - m1 * m2;
        let c = (2.0 * s12 + SSIM_C2) / (s11 + s22 + SSIM_C2);
        cs += c;
        s += (2.0 * m1 * m2 + SSIM_C1) / (m1 * m1 + m2 * m2 + SSIM_C1) * c;
    }
    (s / n, cs / n)
}

fn check_pair(a: &TensorImage, b: &TensorImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(FastError::ShapeMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error on `[0, 1]` values.
pub fn mse(a: &TensorImage, b: &TensorImage) -> Result<f64> {
    check_pair(a, b)?;
    let (ua, ub) = (a.to_unit(), b.to_unit());
    Ok(ua.iter().zip(&ub).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ua.len() as f64)
}

/// `10·log10(1 / mse)` for unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &TensorImage, b: &TensorImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Single-scale SSIM averaged over channels.
pub fn ssim(a: &TensorImage, b: &TensorImage) -> Result<f64> {
    check_pair(a, b)?;
    let (pa, pb) = (unit_planes(a), unit_planes(b));
    Ok(pa.iter().zip(&pb).map(|(x, y)| ssim_cs(x, y).0).sum::<f64>() / pa.len() as f64)
}

/// MS-SSIM over [`MSSSIM_WEIGHTS`] scales, per channel then averaged.
/// Negative per-scale terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &TensorImage, b: &TensorImage) -> Result<f64> {
    check_pair(a, b)?;
    let min_side = SSIM_WINDOW << (MSSSIM_WEIGHTS.len() - 1);
    if a.height() < min_side || a.width() < min_side {
        return Err(FastError::ShapeMismatch(format!("ms_ssim needs sides ≥ {min_side}, got {:?}", a.dims())));
    }
    let (pa, pb) = (unit_planes(a), unit_planes(b));
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ms_ssim_plane(x, y)).sum();
    Ok(total / pa.len() as f64)
}

pub fn ms_ssim_plane(x: &Plane, y: &Plane) -> f64 {
    let (mut x, mut y) = (x.clone(), y.clone());
    let mut out = 1.0;
    for (j, &w) in MSSSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_cs(&x, &y);
        let last = j + 1 == MSSSIM_WEIGHTS.len();
        out *= (if last { s } else { cs }).max(0.0).powf(w);
        if !last {
            x = x.downsample();
            y = y.downsample();
        }
    }
    out
}

const SQUEEZE_LAYER_CHANNELS: [usize; 7] = [64, 128, 256, 384, 384, 512, 512];
const LPIPS_SHIFT: [f32; 3] = [-0.030, -0.088, -0.188];
const LPIPS_SCALE: [f32; 3] = [0.458, 0.448, 0.450];

#[derive(Clone, Debug)]
struct Fire {
    squeeze: fast_nn::layers::Conv2d,
    expand1: fast_nn::layers::Conv2d,
    expand3: fast_nn::layers::Conv2d,
}

/// LPIPS over a SqueezeNet 1.1 backbone with learned per-layer linear heads.
///
/// Weights use torchvision names for the backbone (`features.{i}...`) and
/// `lin{k}.model.1.weight` for the heads.
#[derive(Clone, Debug)]
pub struct Lpips {
    params: ParamSet,
    conv0: fast_nn::layers::Conv2d,
    fires: Vec<(usize, Fire)>,
    lins: Vec<fast_nn::layers::Conv2d>,
    pub backbone: String,
}

impl Lpips {
    fn build(rng: &mut ChaCha8Rng) -> Self {
        use fast_nn::layers::Conv2d;
        let mut set = ParamSet::new();
        let conv0 = Conv2d::new(&mut set, "features.0", 3, 64, 3, 2, 0, true, rng);
        let plan = [(3, 64, 16, 64), (4, 128, 16, 64), (6, 128, 32, 128), (7, 256, 32, 128), (9, 256, 48, 192), (10, 384, 48, 192), (11, 384, 64, 256), (12, 512, 64, 256)];
        let fires = plan
            .iter()
            .map(|&(i, cin, s, e)| {
                let p = format!("features.{i}");
                let fire = Fire {
                    squeeze: Conv2d::new(&mut set, &format!("{p}.squeeze"), cin, s, 1, 1, 0, true, rng),
                    expand1: Conv2d::new(&mut set, &format!("{p}.expand1x1"), s, e, 1, 1, 0, true, rng),
                    expand3: Conv2d::new(&mut set, &format!("{p}.expand3x3"), s, e, 3, 1, 1, true, rng),
                };
                (i, fire)
            })
            .collect();
        let lins = SQUEEZE_LAYER_CHANNELS
            .iter()
            .enumerate()
            .map(|(k, &c)| Conv2d::new(&mut set, &format!("lin{k}.model.1"), c, 1, 1, 1, 0, false, rng))
            .collect();
        Self { params: set, conv0, fires, lins, backbone: String::new() }
    }

    /// Loads backbone and linear-head weights from one safetensors file.
    pub fn from_safetensors(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(FastError::BackboneUnavailable(format!("{} not found", path.display())));
        }
        let mut l = Self::build(&mut ChaCha8Rng::seed_from_u64(0));
        fast_nn::io::load_into(&mut l.params, path).map_err(|e| FastError::BackboneUnavailable(format!("{}: {e}", path.display())))?;
        l.backbone = format!("squeezenet1_1 lpips-v0.1 ({})", path.display());
        Ok(l)
    }

    /// Seeded random weights with nonnegative heads. Only for exercising the
    /// adapter; distances are not LPIPS values.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Self::build(&mut rng);
        for e in l.params.entries_mut() {
            if e.name.starts_with("lin") {
                e.value = e.value.map(f32::abs);
            } else if e.name.ends_with(".weight") {
                let s = e.value.shape().to_vec();
                let fan_in = (s[1] * s[2] * s[3]) as f32;
                e.value = Tensor::randn(&s, (2.0 / fan_in).sqrt(), &mut rng);
            }
        }
        l.backbone = format!("random(seed={seed})");
        l
    }

    fn layers(&self, x: &Tensor) -> Vec<Tensor> {
        let ctx = Ctx::eval();
        let set = &self.params;
        let (_, _, h, w) = x.dims4();
        let mut scaled = x.clone();
        for c in 0..3 {
            for v in &mut scaled.data_mut()[c * h * w..(c + 1) * h * w] {
                *v = (*v - LPIPS_SHIFT[c]) / LPIPS_SCALE[c];
            }
        }
        let mut h = self.conv0.forward(&ctx, set, &Var::constant(scaled)).relu();
        let mut outs = vec![h.value().clone()];
        for (i, fire) in &self.fires {
            if matches!(i, 3 | 6 | 9) {
                h = Var::constant(max_pool3_s2_ceil(h.value()));
            }
            let s = fire.squeeze.forward(&ctx, set, &h).relu();
            let e1 = fire.expand1.forward(&ctx, set, &s).relu();
            let e3 = fire.expand3.forward(&ctx, set, &s).relu();
            h = Var::cat_channels(&[&e1, &e3]);
            if matches!(i, 4 | 7 | 9 | 10 | 11 | 12) {
                outs.push(h.value().clone());
            }
        }
        outs
    }

    /// LPIPS distance between two `[-1, 1]` RGB images.
    pub fn distance(&self, a: &TensorImage, b: &TensorImage) -> Result<f64> {
        check_pair(a, b)?;
        let ta = crate::image::batch(&[a])?;
        let tb = crate::image::batch(&[b])?;
        let (la, lb) = (self.layers(&ta), self.layers(&tb));
        let ctx = Ctx::eval();
        let mut total = 0.0f64;
        for (k, (fa, fb)) in la.iter().zip(&lb).enumerate() {
            let (na, nb) = (unit_normalize(fa), unit_normalize(fb));
            let d = Tensor::new(na.shape(), na.data().iter().zip(nb.data()).map(|(x, y)| (x - y) * (x - y)).collect())?;
            let out = self.lins[k].forward(&ctx, &self.params, &Var::constant(d));
            total += out.value().mean();
        }
        Ok(total)
    }
}

fn unit_normalize(t: &Tensor) -> Tensor {
    let (_, c, h, w) = t.dims4();
    let hw = h * w;
    let mut out = t.clone();
    for p in 0..hw {
        let norm = (0..c).map(|k| (t.data()[k * hw + p] as f64).powi(2)).sum::<f64>().sqrt() as f32 + 1e-10;
        for k in 0..c {
            out.data_mut()[k * hw + p] /= norm;
        }
    }
    out
}

/// 3×3 max pooling, stride 2, ceil mode (single batch item).
fn max_pool3_s2_ceil(t: &Tensor) -> Tensor {
    let (n, c, h, w) = t.dims4();
    let out_dim = |d: usize| (d - 3).div_ceil(2) + 1;
    let (ho, wo) = (out_dim(h), out_dim(w));
    let mut out = vec![f32::MIN; n * c * ho * wo];
    for p in 0..n * c {
        let src = &t.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f32::MIN;
                for y in 2 * oy..(2 * oy + 3).min(h) {
                    for x in 2 * ox..(2 * ox + 3).min(w) {
                        m = m.max(src[y * w + x]);
                    }
                }
                out[(p * ho + oy) * wo + ox] = m;
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out).expect("sized buffer")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub lpips: Option<f64>,
}

pub fn sample_metrics(id: &str, generated: &TensorImage, truth: &TensorImage, lpips: Option<&Lpips>) -> Result<SampleMetrics> {
    let m = mse(generated, truth)?;
    Ok(SampleMetrics {
        id: id.to_string(),
        mse: m,
        psnr_db: psnr_from_mse(m),
        ssim: ssim(generated, truth)?,
        ms_ssim: ms_ssim(generated, truth)?,
        lpips: lpips.map(|l| l.distance(generated, truth)).transpose()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    /// Absent when no perceptual backbone weights are available.
    pub lpips: Option<f64>,
    pub n_samples: usize,
    pub msssim_scales: usize,
    pub msssim_weights: Vec<f64>,
    pub lpips_backbone: Option<String>,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>, lpips_backbone: Option<String>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(FastError::EmptyDataset);
        }
        let n = per_sample.len() as f64;
        let mean = |f: &dyn Fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        let lpips = per_sample.iter().map(|s| s.lpips).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n);
        Ok(Self {
            mse: mean(&|s| s.mse),
            psnr_db: mean(&|s| s.psnr_db),
            ssim: mean(&|s| s.ssim),
            ms_ssim: mean(&|s| s.ms_ssim),
            lpips,
            n_samples: per_sample.len(),
            msssim_scales: MSSSIM_WEIGHTS.len(),
            msssim_weights: MSSSIM_WEIGHTS.to_vec(),
            lpips_backbone: lpips.and(lpips_backbone),
            per_sample,
        })
    }
}

/// Compares `<generated>/<id>.png` with the dataset's target image for every
/// manifest entry. Generated images are resized to 64×256 if needed.
pub fn evaluate_pairs(dataset: &Path, generated: &Path, lpips: Option<&Lpips>) -> Result<MetricReport> {
    let records = read_manifest(dataset)?;
    let mut per = Vec::with_capacity(records.len());
    for r in &records {
        let truth = TensorImage::load_rgb(&dataset.join("i_t").join(format!("{}.png", r.id)))?.resize(HEIGHT, WIDTH);
        let gen = TensorImage::load_rgb(&generated.join(format!("{}.png", r.id)))?.resize(HEIGHT, WIDTH);
        per.push(sample_metrics(&r.id, &gen, &truth, lpips)?);
    }
    MetricReport::from_samples(per, lpips.map(|l| l.backbone.clone()))
}
