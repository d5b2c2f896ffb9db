//! Training objectives for both stages.

use std::path::Path;

use fast_nn::layers::Conv2d;
use fast_nn::{Ctx, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FastError, Result};
use crate::metrics::{gaussian_window, MSSSIM_WEIGHTS, SSIM_C1, SSIM_C2};

pub const BCE_EPS: f32 = 1e-7;

/// VGG-19 convolution indices (1-based, counting convolutions only) whose
/// post-ReLU activations feed the perceptual loss.
pub const PERCEPTUAL_TAPS: [usize; 2] = [4, 9];

const VGG19_PLAN: [usize; 9] = [64, 64, 128, 128, 256, 256, 256, 256, 512];
/// Max-pooling follows these convolutions (1-based).
const VGG19_POOL_AFTER: [usize; 3] = [2, 4, 8];
/// Position of each convolution inside torchvision's `features` sequence.
const VGG19_TORCH_INDEX: [usize; 9] = [0, 2, 5, 7, 10, 12, 14, 16, 19];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
    pub lambda4: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub beta3: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 5.0, lambda3: 1.0, lambda4: 100.0, beta1: 5.0, beta2: 1.0, beta3: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.beta1, self.beta2, self.beta3];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FastError::InvalidConfig(format!("loss weights must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }
}

fn check_same(a: &Var, b: &Var, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FastError::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn pixel_l2(a: &Var, b: &Var) -> Result<Var> {
    check_same(a, b, "pixel_l2")?;
    Ok(a.mse(b))
}

pub fn pixel_l1(a: &Var, b: &Var) -> Result<Var> {
    check_same(a, b, "pixel_l1")?;
    Ok(a.l1(b))
}

/// Mean BCE of a probability map against all-ones.
pub fn gan_loss_generator(fake_map: &Var) -> Var {
    fake_map.bce_const(1.0, BCE_EPS)
}

/// `½ [BCE(real, 1) + BCE(fake, 0)]`.
pub fn gan_loss_discriminator(real_map: &Var, fake_map: &Var) -> Var {
    real_map.bce_const(1.0, BCE_EPS).add(&fake_map.bce_const(0.0, BCE_EPS)).mul_scalar(0.5)
}

/// Differentiable `1 − MS-SSIM(a, b)` for `[-1, 1]` inputs, which are mapped
/// to `[0, 1]` first. Same scales, window and weights as
/// [`crate::metrics::ms_ssim`].
pub fn msssim_loss(a: &Var, b: &Var) -> Result<Var> {
    check_same(a, b, "msssim_loss")?;
    let to_unit = |v: &Var| v.add_scalar(1.0).mul_scalar(0.5);
    Ok(ms_ssim_var(&to_unit(a), &to_unit(b)).mul_scalar(-1.0).add_scalar(1.0))
}

/// MS-SSIM of `[0, 1]` NCHW inputs, averaged over batch and channels.
pub fn ms_ssim_var(x: &Var, y: &Var) -> Var {
    let win = gaussian_window().map(|v| v as f32);
    let (c1, c2) = (SSIM_C1 as f32, SSIM_C2 as f32);
    let (mut x, mut y) = (x.clone(), y.clone());
    let mut product: Option<Var> = None;
    let levels = MSSSIM_WEIGHTS.len();
    for (j, &w) in MSSSIM_WEIGHTS.iter().enumerate() {
        let f = |v: &Var| v.separable_filter_valid(&win);
        let (mu1, mu2) = (f(&x), f(&y));
        let (mu11, mu22, mu12) = (mu1.sqr(), mu2.sqr(), mu1.mul(&mu2));
        let s11 = f(&x.sqr()).sub(&mu11);
        let s22 = f(&y.sqr()).sub(&mu22);
        let s12 = f(&x.mul(&y)).sub(&mu12);
        let cs_map = s12.mul_scalar(2.0).add_scalar(c2).div(&s11.add(&s22).add_scalar(c2));
        let term = if j + 1 < levels {
            cs_map.mean_spatial()
        } else {
            let lum = mu12.mul_scalar(2.0).add_scalar(c1).div(&mu11.add(&mu22).add_scalar(c1));
            lum.mul(&cs_map).mean_spatial()
        };
        let term = term.relu().pow_pos(w as f32);
        product = Some(match product {
            None => term,
            Some(p) => p.mul(&term),
        });
        if j + 1 < levels {
            x = x.avg_pool2();
            y = y.avg_pool2();
        }
    }
    product.expect("at least one scale").mean_all()
}

/// Frozen VGG-19 prefix (through the ninth convolution) for perceptual loss.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamSet,
    convs: Vec<Conv2d>,
    normalize: (Tensor, Tensor),
    /// Where the weights came from: a file path or `random(seed, width/d)`.
    pub source: String,
}

impl FeatureExtractor {
    fn build(divisor: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if divisor == 0 || VGG19_PLAN.iter().any(|c| c % divisor != 0) {
            return Err(FastError::InvalidConfig(format!("vgg width divisor {divisor} must divide 64")));
        }
        let mut params = ParamSet::new();
        let mut cin = 3;
        let convs = VGG19_PLAN
            .iter()
            .zip(VGG19_TORCH_INDEX)
            .map(|(&c, idx)| {
                let cout = c / divisor;
                let conv = Conv2d::new(&mut params, &format!("features.{idx}"), cin, cout, 3, 1, 1, true, rng);
                cin = cout;
                conv
            })
            .collect();
        // Folds [-1, 1] → [0, 1] → ImageNet normalisation into a fixed 1×1 convolution.
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        let mut b = Tensor::zeros(&[3]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 0.5 / IMAGENET_STD[c];
            b.data_mut()[c] = (0.5 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
        Ok(Self { params, convs, normalize: (w, b), source: String::new() })
    }

    /// Randomly initialised (He-normal) frozen weights at `1/divisor` width.
    pub fn random(seed: u64, divisor: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fe = Self::build(divisor, &mut rng)?;
        for e in fe.params.entries_mut() {
            if e.name.ends_with(".weight") {
                let s = e.value.shape();
                let fan_in = (s[1] * s[2] * s[3]) as f32;
                e.value = Tensor::randn(s, (2.0 / fan_in).sqrt(), &mut rng);
            } else {
                e.value = Tensor::zeros(e.value.shape());
            }
        }
        fe.source = format!("random(seed={seed}, width=1/{divisor})");
        Ok(fe)
    }

    /// Loads torchvision-named VGG-19 weights (`features.{i}.weight/bias`) from safetensors.
    pub fn from_safetensors(path: &Path) -> Result<Self> {
        let mut fe = Self::build(1, &mut ChaCha8Rng::seed_from_u64(0))?;
        fast_nn::io::load_into(&mut fe.params, path)?;
        fe.source = path.display().to_string();
        Ok(fe)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Post-ReLU activations at [`PERCEPTUAL_TAPS`] for `[-1, 1]` NCHW input.
    pub fn features(&self, x: &Var) -> Vec<Var> {
        let ctx = Ctx::eval();
        let (w, b) = &self.normalize;
        let mut h = x.conv2d(&Var::constant(w.clone()), Some(&Var::constant(b.clone())), 1, 0);
        let mut taps = Vec::with_capacity(PERCEPTUAL_TAPS.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let idx = i + 1;
            h = conv.forward(&ctx, &self.params, &h).relu();
            if PERCEPTUAL_TAPS.contains(&idx) {
                taps.push(h.clone());
            }
            if idx == *PERCEPTUAL_TAPS.last().expect("taps") {
                break;
            }
            if VGG19_POOL_AFTER.contains(&idx) {
                h = h.max_pool2();
            }
        }
        taps
    }
}

/// Mean absolute feature difference at each tap, normalised by the feature
/// volume (and batch size).
pub fn perceptual_loss(a: &Var, b: &Var, extractor: &FeatureExtractor) -> Result<Vec<Var>> {
    check_same(a, b, "perceptual_loss")?;
    let fa = extractor.features(a);
    let fb = extractor.features(b);
    Ok(fa.iter().zip(&fb).map(|(x, y)| x.l1(y)).collect())
}

/// Scalar components of a stage objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTerms<T> {
    pub pixel: T,
    pub gan: T,
    pub p4: T,
    pub p9: T,
    /// `1 − MS-SSIM`; unused by stage II.
    pub ssim: T,
}

/// `λ1·L2 + λ2·GAN + λ3·(P4 + P9) + λ4·(1 − MS-SSIM)`.
pub fn stage1_generator_objective(t: &StageTerms<f64>, w: &LossWeights) -> f64 {
    w.lambda1 as f64 * t.pixel + w.lambda2 as f64 * t.gan + w.lambda3 as f64 * (t.p4 + t.p9) + w.lambda4 as f64 * t.ssim
}

/// `β1·L1 + β2·GAN + β3·(P4 + P9)`.
pub fn stage2_generator_objective(t: &StageTerms<f64>, w: &LossWeights) -> f64 {
    w.beta1 as f64 * t.pixel + w.beta2 as f64 * t.gan + w.beta3 as f64 * (t.p4 + t.p9)
}

/// Differentiable stage-I objective over variable terms.
pub fn stage1_objective_var(t: &StageTerms<Var>, w: &LossWeights) -> Var {
    t.pixel
        .mul_scalar(w.lambda1)
        .add(&t.gan.mul_scalar(w.lambda2))
        .add(&t.p4.add(&t.p9).mul_scalar(w.lambda3))
        .add(&t.ssim.mul_scalar(w.lambda4))
}

/// Differentiable stage-II objective over variable terms.
pub fn stage2_objective_var(t: &StageTerms<Var>, w: &LossWeights) -> Var {
    t.pixel.mul_scalar(w.beta1).add(&t.gan.mul_scalar(w.beta2)).add(&t.p4.add(&t.p9).mul_scalar(w.beta3))
}

impl StageTerms<Var> {
    pub fn values(&self) -> StageTerms<f64> {
        StageTerms {
            pixel: self.pixel.item() as f64,
            gan: self.gan.item() as f64,
            p4: self.p4.item() as f64,
            p9: self.p9.item() as f64,
            ssim: self.ssim.item() as f64,
        }
    }
}
