//! Independent reference implementations used as test oracles.

use fast_nn::{Tensor, Var};
use fast_ste::losses::FeatureExtractor;
use fast_ste::TensorImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative error between the analytic gradient of `loss` at `x` and
/// central differences of the f64 `oracle`, over five random coordinates.
pub fn gradient_error(x: &Tensor, loss: impl Fn(&Var) -> Var, oracle: impl Fn(&[f64]) -> f64, seed: u64) -> f64 {
    let leaf = Var::leaf(x.clone());
    let grads = loss(&leaf).backward();
    let analytic = grads.get(&leaf).expect("gradient").clone();
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let i = rng.gen_range(0..base.len());
        let (mut up, mut down) = (base.clone(), base.clone());
        up[i] += h;
        down[i] -= h;
        let numeric = (oracle(&up) - oracle(&down)) / (2.0 * h);
        let a = analytic.data()[i] as f64;
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-9 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

pub fn check_gradient(x: &Tensor, loss: impl Fn(&Var) -> Var, oracle: impl Fn(&[f64]) -> f64, seed: u64) {
    let e = gradient_error(x, loss, oracle, seed);
    assert!(e < 1e-2, "relative gradient error {e}");
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// `1 − MS-SSIM` of `[-1, 1]` planar data.
pub fn msssim_oracle(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize) -> f64 {
    let plane = |d: &[f64], k: usize| d[k * h * w..(k + 1) * h * w].iter().map(|v| (v + 1.0) / 2.0).collect::<Vec<f64>>();
    let s: f64 = (0..channels).map(|k| ms_ssim_plane_oracle(plane(a, k), plane(b, k), h, w)).sum();
    1.0 - s / channels as f64
}

/// Direct-loop VGG prefix in f64 that reads the extractor's weights by name.
pub struct VggOracle {
    layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

const TORCH_INDEX: [usize; 9] = [0, 2, 5, 7, 10, 12, 14, 16, 19];
const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const STD: [f64; 3] = [0.229, 0.224, 0.225];

impl VggOracle {
    pub fn new(fe: &FeatureExtractor) -> Self {
        let p = fe.params();
        let get = |n: String| p.get(p.id_of(&n).unwrap_or_else(|| panic!("{n}"))).clone();
        let layers = TORCH_INDEX
            .iter()
            .map(|i| {
                let w = get(format!("features.{i}.weight"));
                let b = get(format!("features.{i}.bias"));
                (to_f64(&w), to_f64(&b), w.shape()[0], w.shape()[1])
            })
            .collect();
        Self { layers }
    }

    /// Activations after ReLU of convolutions 4 and 9 for one `[-1, 1]` image.
    pub fn taps(&self, x: &[f64], mut h: usize, mut w: usize) -> [Vec<f64>; 2] {
        let hw = h * w;
        let mut a: Vec<f64> = (0..3 * hw).map(|i| ((x[i] + 1.0) / 2.0 - MEAN[i / hw]) / STD[i / hw]).collect();
        let mut out: [Vec<f64>; 2] = Default::default();
        for (k, (wt, bias, cout, cin)) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; cout * h * w];
            for o in 0..*cout {
                for r in 0..h {
                    for col in 0..w {
                        let mut s = bias[o];
                        for ci in 0..*cin {
                            for dr in 0..3 {
                                for dc in 0..3 {
                                    let (rr, cc) = (r as isize + dr as isize - 1, col as isize + dc as isize - 1);
                                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                                        s += wt[((o * cin + ci) * 3 + dr) * 3 + dc] * a[(ci * h + rr as usize) * w + cc as usize];
                                    }
                                }
                            }
                        }
                        y[(o * h + r) * w + col] = s.max(0.0);
                    }
                }
            }
            a = y;
            match k + 1 {
                4 => out[0] = a.clone(),
                9 => out[1] = a.clone(),
                _ => {}
            }
            if [2, 4, 8].contains(&(k + 1)) {
                let (ho, wo) = (h / 2, w / 2);
                let mut p = vec![0.0; cout * ho * wo];
                for o in 0..*cout {
                    for r in 0..ho {
                        for col in 0..wo {
                            let at = |dr: usize, dc: usize| a[(o * h + 2 * r + dr) * w + 2 * col + dc];
                            p[(o * ho + r) * wo + col] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                        }
                    }
                }
                a = p;
                (h, w) = (ho, wo);
            }
        }
        out
    }

    pub fn loss(&self, a: &[f64], b: &[f64], h: usize, w: usize) -> [f64; 2] {
        let (ta, tb) = (self.taps(a, h, w), self.taps(b, h, w));
        [0, 1].map(|k| ta[k].iter().zip(&tb[k]).map(|(x, y)| (x - y).abs()).sum::<f64>() / ta[k].len() as f64)
    }
}

/// Sliding-window SSIM with an explicit 2-D Gaussian over every valid
/// placement; returns (ssim, cs) for one `[0, 1]` plane pair.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, f64) {
    let r = 5usize;
    let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let total: f64 = g1.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut s, mut cs, mut n) = (0.0, 0.0, 0.0);
    for cy in r..h - r {
        for cx in r..w - r {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let wt = g1[dy] * g1[dx] / total;
                    let i = (cy + dy - r) * w + cx + dx - r;
                    mx += wt * x[i];
                    my += wt * y[i];
                    xx += wt * x[i] * x[i];
                    yy += wt * y[i] * y[i];
                    xy += wt * x[i] * y[i];
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let c = (2.0 * cov + c2) / (vx + vy + c2);
            cs += c;
            s += c * (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            n += 1.0;
        }
    }
    (s / n, cs / n)
}

pub fn halve(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..h / 2 {
        for c in 0..w / 2 {
            out.push((p[2 * r * w + 2 * c] + p[2 * r * w + 2 * c + 1] + p[(2 * r + 1) * w + 2 * c] + p[(2 * r + 1) * w + 2 * c + 1]) / 4.0);
        }
    }
    out
}

pub fn unit_plane(img: &TensorImage, c: usize) -> Vec<f64> {
    img.plane(c).iter().map(|&v| (v as f64 + 1.0) / 2.0).collect()
}

/// Three-scale MS-SSIM of one `[0, 1]` plane pair, weights renormalised from
/// the first three canonical values.
pub fn ms_ssim_plane_oracle(mut x: Vec<f64>, mut y: Vec<f64>, mut h: usize, mut w: usize) -> f64 {
    let canonical = [0.0448, 0.2856, 0.3001];
    let z: f64 = canonical.iter().sum();
    let mut v = 1.0;
    for (j, wt) in canonical.iter().enumerate() {
        let (s, cs) = ssim_oracle(&x, &y, h, w);
        v *= (if j == 2 { s } else { cs }).max(0.0).powf(wt / z);
        x = halve(&x, h, w);
        y = halve(&y, h, w);
        (h, w) = (h / 2, w / 2);
    }
    v
}

pub fn ms_ssim_oracle(a: &TensorImage, b: &TensorImage) -> f64 {
    let (h, w) = (a.height(), a.width());
    (0..3).map(|c| ms_ssim_plane_oracle(unit_plane(a, c), unit_plane(b, c), h, w)).sum::<f64>() / 3.0
}
