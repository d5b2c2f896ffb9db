mod common;

use common::oracles::*;

use fast_nn::Tensor;
use fast_ste::data_synth::{generate_dataset, BackgroundSet, FontSet, SynthConfig, WordList};
use fast_ste::metrics::*;
use fast_ste::{FastError, TensorImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_img(seed: u64, h: usize, w: usize) -> TensorImage {
    TensorImage::new(Tensor::rand_uniform(&[3, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn noisy(x: &TensorImage, eps: f32, seed: u64) -> TensorImage {
    let n = rand_img(seed, x.height(), x.width());
    TensorImage::new(x.tensor().zip_map(n.tensor(), |a, b| (a + eps * b).clamp(-1.0, 1.0))).unwrap()
}

/// Structured test image: smooth gradients plus a little texture.
fn scene(seed: u64, h: usize, w: usize) -> TensorImage {
    let base = rand_img(seed, h, w);
    let mut out = TensorImage::full(3, h, w, 0.0);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = ((x as f32 / 17.0 + c as f32).sin() * (y as f32 / 11.0).cos()) * 0.7 + 0.2 * base.at(c, y, x);
                out.plane_mut(c)[y * w + x] = v;
            }
        }
    }
    out
}

#[test]
fn ssim_matches_a_sliding_window_oracle() {
    let a = scene(1, 40, 72);
    let b = noisy(&a, 0.3, 2);
    let want: f64 = (0..3).map(|c| ssim_oracle(&unit_plane(&a, c), &unit_plane(&b, c), 40, 72).0).sum::<f64>() / 3.0;
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-4);
}

#[test]
fn ms_ssim_matches_an_independent_oracle() {
    let a = scene(3, 64, 256);
    let b = noisy(&a, 0.2, 4);
    let got = ms_ssim(&a, &b).unwrap();
    assert!((got - ms_ssim_oracle(&a, &b)).abs() < 1e-4, "{got}");
    assert!(got > 0.0 && got < 1.0);
}

#[test]
fn ms_ssim_decreases_with_noise() {
    let a = scene(5, 64, 256);
    let v: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&e| ms_ssim(&a, &noisy(&a, e, 6)).unwrap()).collect();
    assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
    assert!(ms_ssim(&rand_img(1, 32, 32), &rand_img(2, 32, 32)).is_err());
}

#[test]
fn identity_and_degenerate_cases() {
    let a = scene(7, 64, 256);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    let mid = TensorImage::full(3, 64, 256, 0.0);
    assert!((ssim(&mid, &TensorImage::new(mid.tensor().map(|v| -v)).unwrap()).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn uniform_offset_gives_known_mse_and_psnr() {
    let a = TensorImage::full(3, 64, 256, 0.0);
    let b = TensorImage::full(3, 64, 256, 0.2);
    let m = mse(&a, &b).unwrap();
    assert!((m - 0.01).abs() < 1e-9, "{m}");
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
}

#[test]
fn mse_matches_a_scalar_loop() {
    let (a, b) = (rand_img(8, 16, 24), rand_img(9, 16, 24));
    let mut s = 0.0;
    for c in 0..3 {
        for (x, y) in unit_plane(&a, c).iter().zip(unit_plane(&b, c)) {
            s += (x - y) * (x - y);
        }
    }
    assert!((mse(&a, &b).unwrap() - s / (3.0 * 16.0 * 24.0)).abs() < 1e-7);
}

#[test]
fn evaluate_pairs_identity_and_averages() {
    let data = tempfile::tempdir().unwrap();
    let records =
        generate_dataset(3, &FontSet::bundled(), &BackgroundSet::procedural(4), &WordList::bundled(), 9, &SynthConfig::default(), data.path()).unwrap();
    let same = data.path().join("i_t");
    let r = evaluate_pairs(data.path(), &same, None).unwrap();
    assert_eq!(r.n_samples, 3);
    assert_eq!((r.mse, r.psnr_db), (0.0, 100.0));
    assert!((r.ssim - 1.0).abs() < 1e-9 && (r.ms_ssim - 1.0).abs() < 1e-9);
    assert_eq!(r.lpips, None);
    assert_eq!(r.msssim_scales, 3);

    let r = evaluate_pairs(data.path(), &data.path().join("i_s"), None).unwrap();
    let mut sums = [0.0; 4];
    for rec in &records {
        let g = TensorImage::load_rgb(&data.path().join("i_s").join(format!("{}.png", rec.id))).unwrap();
        let t = TensorImage::load_rgb(&data.path().join("i_t").join(format!("{}.png", rec.id))).unwrap();
        let m = mse(&g, &t).unwrap();
        for (k, v) in [m, psnr_from_mse(m), ssim(&g, &t).unwrap(), ms_ssim(&g, &t).unwrap()].into_iter().enumerate() {
            sums[k] += v / 3.0;
        }
    }
    for (got, want) in [r.mse, r.psnr_db, r.ssim, r.ms_ssim].iter().zip(sums) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert!(json["lpips"].is_null());

    let empty = tempfile::tempdir().unwrap();
    assert!(evaluate_pairs(data.path(), empty.path(), None).is_err());
}

#[test]
fn lpips_without_weights_is_unavailable() {
    assert!(matches!(Lpips::from_safetensors(std::path::Path::new("/nonexistent/lpips.safetensors")), Err(FastError::BackboneUnavailable(_))));
}

fn box_blur(x: &TensorImage) -> TensorImage {
    let (c, h, w) = x.dims();
    let mut out = x.clone();
    for k in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (yy, xq) = (y as i32 + dy, xx as i32 + dx);
                        if yy >= 0 && xq >= 0 && (yy as usize) < h && (xq as usize) < w {
                            s += x.at(k, yy as usize, xq as usize);
                            n += 1.0;
                        }
                    }
                }
                out.plane_mut(k)[y * w + xx] = s / n;
            }
        }
    }
    out
}

#[test]
fn lpips_adapter_identity_symmetry_and_ordering() {
    let l = Lpips::random(1);
    let data = common::samples(20, 33);
    let mut wins = 0;
    for (i, s) in data.iter().enumerate() {
        let x = &s.i_a;
        if i == 0 {
            assert!(l.distance(x, x).unwrap().abs() < 1e-6);
            let other = &data[1].i_b;
            assert!((l.distance(x, other).unwrap() - l.distance(other, x).unwrap()).abs() < 1e-6);
        }
        let unrelated = &data[(i + 7) % data.len()].i_b;
        if l.distance(x, &box_blur(x)).unwrap() < l.distance(x, unrelated).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 18, "{wins}/20");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ssim_and_ms_ssim_are_symmetric(seed in any::<u64>(), eps in 0.05f32..0.8) {
        let a = scene(seed, 48, 64);
        let b = noisy(&a, eps, seed ^ 3);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-7);
        prop_assert!((ms_ssim(&a, &b).unwrap() - ms_ssim(&b, &a).unwrap()).abs() <= 1e-7);
        prop_assert!(ssim(&a, &b).unwrap() < 1.0 - 1e-9);
    }

    #[test]
    fn psnr_is_consistent_with_mse_and_decreasing(seed in any::<u64>()) {
        let a = rand_img(seed, 8, 8);
        let b = rand_img(seed ^ 5, 8, 8);
        let m = mse(&a, &b).unwrap();
        prop_assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-6);
        prop_assert!(psnr_from_mse(m) > psnr_from_mse(m * 1.01));
    }
}
