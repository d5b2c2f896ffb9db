//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test --release --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use common::oracles::*;
use fast_nn::optim::{Adam, AdamConfig};
use fast_nn::{Ctx, Tensor, Var};
use fast_ste::checkpoint::{CheckpointDir, Net};
use fast_ste::data_synth::*;
use fast_ste::discriminator::{DiscriminatorConfig, PatchDiscriminator};
use fast_ste::generator::{Generator, GeneratorConfig};
use fast_ste::image::batch;
use fast_ste::losses::*;
use fast_ste::mask_unet::{pixel_accuracy, unet_step, unit_target, MaskUnet, UnetConfig};
use fast_ste::metrics::{ms_ssim, mse, psnr, ssim};
use fast_ste::pipeline::{encode_rgb_png, EditOptions};
use fast_ste::service::{load_model, router, AppState};
use fast_ste::trainer::*;
use fast_ste::TensorImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const ORACLE_PAIRS: usize = 20;
const ORACLE_TOL: f64 = 1e-4;
const ORACLE_RUNTIME: Duration = Duration::from_secs(60);
const MSE_TOL: f64 = 1e-9;
const PSNR_TOL: f64 = 1e-6;
const SSIM_IDENTITY_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-2;

const OVERFIT_SAMPLES: usize = 8;
const OVERFIT_MAX_ITERS: usize = 2000;
const OVERFIT_EVAL_EVERY: usize = 50;
const OVERFIT_BASE: usize = 8;
const OVERFIT_BATCH: usize = 8;
const OVERFIT_VGG_DIVISOR: usize = 16;
const STAGE1_L2_MAX: f64 = 0.02;
const STAGE2_L1_MAX: f64 = 0.03;
const OVERFIT_CPU_BUDGET: Duration = Duration::from_secs(4 * 3600);

const SYNTH_SAMPLES: usize = 100;

const UNET_SAMPLES: usize = 8;
const UNET_MAX_STEPS: usize = 500;
const UNET_EVAL_EVERY: usize = 25;
const UNET_ACCURACY_MIN: f64 = 0.98;
const UNET_BASE: usize = 8;

const ABLATION_ITERS: usize = 100;
const ABLATION_BASE: usize = 4;
const ABLATION_BATCH: usize = 2;

const CONCURRENT_CALLS: usize = 8;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_img(seed: u64, h: usize, w: usize) -> TensorImage {
    TensorImage::new(Tensor::rand_uniform(&[3, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn metric_oracles() -> Check {
    let data = common::samples(ORACLE_PAIRS, 101);
    let (mut d_ssim, mut d_ms) = (0.0f64, 0.0f64);
    let mut runtime = Duration::ZERO;
    for (i, s) in data.iter().enumerate() {
        let eps = 0.05 + 0.05 * (i % 10) as f32;
        let noise = rand_img(i as u64, 64, 256);
        let b = TensorImage::new(s.i_a.tensor().zip_map(noise.tensor(), |a, n| (a + eps * n).clamp(-1.0, 1.0))).unwrap();
        let t = Instant::now();
        let (got_s, got_m) = (ssim(&s.i_a, &b).map_err(fail)?, ms_ssim(&s.i_a, &b).map_err(fail)?);
        runtime += t.elapsed();
        let want_s = (0..3).map(|c| ssim_oracle(&unit_plane(&s.i_a, c), &unit_plane(&b, c), 64, 256).0).sum::<f64>() / 3.0;
        d_ssim = d_ssim.max((got_s - want_s).abs());
        d_ms = d_ms.max((got_m - ms_ssim_oracle(&s.i_a, &b)).abs());
    }
    ensure(
        d_ssim < ORACLE_TOL && d_ms < ORACLE_TOL && runtime < ORACLE_RUNTIME,
        format!("{ORACLE_PAIRS} pairs: max |Δssim| {d_ssim:.2e}, max |Δms_ssim| {d_ms:.2e} (< {ORACLE_TOL:e}); metric time {:.2}s", runtime.as_secs_f64()),
    )
}

fn analytic_metrics() -> Check {
    let a = TensorImage::full(3, 64, 256, 0.0);
    let b = TensorImage::full(3, 64, 256, 0.2);
    let m = mse(&a, &b).map_err(fail)?;
    let p = psnr(&a, &b).map_err(fail)?;
    let x = common::samples(1, 5)[0].i_a.clone();
    let s = ssim(&x, &x).map_err(fail)?;
    ensure(
        (m - 0.01).abs() <= MSE_TOL && (p - 20.0).abs() <= PSNR_TOL && (s - 1.0).abs() <= SSIM_IDENTITY_TOL,
        format!("mse {m:.12} (|Δ| {:.1e}), psnr {p:.9} dB, ssim(x,x) {s:.12}", (m - 0.01).abs()),
    )
}

fn loss_composition() -> Check {
    let w = LossWeights::default();
    let ones = StageTerms { pixel: 1.0, gan: 1.0, p4: 1.0, p9: 1.0, ssim: 1.0 };
    let (s1, s2) = (stage1_generator_objective(&ones, &w), stage2_generator_objective(&ones, &w));
    let one = || Var::constant(Tensor::scalar(1.0));
    let vars = StageTerms { pixel: one(), gan: one(), p4: one(), p9: one(), ssim: one() };
    let (v1, v2) = (stage1_objective_var(&vars, &w).item(), stage2_objective_var(&vars, &w).item());
    ensure(s1 == 108.0 && s2 == 16.0 && v1 == 108.0 && v2 == 16.0, format!("stage I {s1} (graph {v1}), stage II {s2} (graph {v2})"))
}

fn gradient_checks() -> Check {
    let t = |shape: &[usize], lo: f32, hi: f32, seed: u64| Tensor::rand_uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed));
    let c = |t: &Tensor| Var::constant(t.clone());
    let mut errs: Vec<(&str, f64)> = Vec::new();

    let x = t(&[1, 3, 6, 6], -1.0, 1.0, 1);
    let y = t(&[1, 3, 6, 6], -1.0, 1.0, 2);
    let fy = to_f64(&y);
    let n = fy.len() as f64;
    errs.push(("pixel_l2", gradient_error(&x, |v| pixel_l2(v, &c(&y)).unwrap(), |x| x.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n, 1)));
    errs.push(("pixel_l1", gradient_error(&x, |v| pixel_l1(v, &c(&y)).unwrap(), |x| x.iter().zip(&fy).map(|(a, b)| (a - b).abs()).sum::<f64>() / n, 2)));

    let p = t(&[1, 1, 4, 16], 0.05, 0.95, 3);
    let q = t(&[1, 1, 4, 16], 0.05, 0.95, 4);
    let fq = to_f64(&q);
    let m = fq.len() as f64;
    errs.push(("bce_generator", gradient_error(&p, gan_loss_generator, |x| x.iter().map(|&v| bce(v, 1.0)).sum::<f64>() / m, 3)));
    errs.push((
        "bce_discriminator",
        gradient_error(
            &p,
            |v| gan_loss_discriminator(v, &c(&q)),
            |x| 0.5 * (x.iter().map(|&v| bce(v, 1.0)).sum::<f64>() / m + fq.iter().map(|&v| bce(v, 0.0)).sum::<f64>() / m),
            4,
        ),
    ));

    let fe = FeatureExtractor::random(3, 16).map_err(fail)?;
    let oracle = VggOracle::new(&fe);
    let a = t(&[1, 3, 16, 16], -1.0, 1.0, 5);
    let b = t(&[1, 3, 16, 16], -1.0, 1.0, 6);
    let fb = to_f64(&b);
    for (k, name) in [(0, "perceptual_4"), (1, "perceptual_9")] {
        errs.push((name, gradient_error(&a, |v| perceptual_loss(v, &c(&b), &fe).unwrap()[k].clone(), |x| oracle.loss(x, &fb, 16, 16)[k], 7 + k as u64)));
    }

    let a = t(&[1, 2, 48, 48], -1.0, 1.0, 9);
    let b = t(&[1, 2, 48, 48], -0.3, 0.3, 10).zip_map(&a.map(|v| 0.6 * v + 0.1), |n, s| n + s);
    let fa = to_f64(&a);
    errs.push(("msssim", gradient_error(&b, |v| msssim_loss(&c(&a), v).unwrap(), |x| msssim_oracle(&fa, x, 2, 48, 48), 11)));

    let worst = errs.iter().cloned().fold(("", 0.0), |w, e| if e.1 > w.1 { e } else { w });
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst.1 < GRAD_REL_TOL, format!("max relative error {:.1e} ({}); {detail}", worst.1, worst.0))
}

fn architecture_contracts() -> Check {
    let mut notes = Vec::new();
    for cfg in [GeneratorConfig::stage1(), GeneratorConfig::stage2()] {
        let g = Generator::new(cfg.clone().with_base_channels(8), 1).map_err(fail)?;
        let out = g.infer(&rand_img(1, 64, 256).tensor().clone().reshape(&[1, 3, 64, 256]).unwrap(), &Tensor::rand_uniform(&[1, cfg.mask_channels(), 64, 256], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2))).map_err(fail)?;
        if out.shape() != [1, 3, 64, 256] || out.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(format!("generator output {:?} out of contract", out.shape()));
        }
    }
    notes.push("G 3×64×256 in [-1,1]".to_string());

    let d = PatchDiscriminator::new(DiscriminatorConfig::default(), 0).map_err(fail)?;
    let pm = d.infer(&Tensor::zeros(&[1, 3, 64, 256]), &rand_img(3, 64, 256).tensor().clone().reshape(&[1, 3, 64, 256]).unwrap()).map_err(fail)?;
    if pm.shape() != [1, 1, 4, 16] || pm.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("patch map {:?} out of contract", pm.shape()));
    }
    notes.push("D 4×16 in [0,1]".to_string());

    let g = Generator::new(GeneratorConfig::stage1().with_base_channels(8), 5).map_err(fail)?;
    let sa = g.self_attention(0).ok_or("no self-attention in block 1")?;
    let x = Var::constant(Tensor::rand_uniform(&[2, 128, 4, 16], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9)));
    if sa.forward(&Ctx::eval(), g.params(), &x).value().data() != x.value().data() {
        return Err("self-attention at γ = 0 is not the identity".into());
    }
    notes.push("SA(γ=0) = id".to_string());

    let data = common::samples(2, 21);
    let refs: Vec<&SceneTextSample> = data.iter().collect();
    for stage in [Stage::Mask, Stage::Image] {
        let mut cfg = common::small_config(stage, 8);
        cfg.perceptual.width_divisor = 16;
        let mut t = StageTrainer::new(cfg, None).map_err(fail)?;
        let b = t.make_batch(&refs).map_err(fail)?;
        t.step_on(&b).map_err(fail)?;
        let ctx = Ctx::train().track(t.generator().params());
        let (total, _) = t.generator_objective(&ctx, &b).map_err(fail)?;
        let grads = ctx.param_grads(t.generator().params(), &total.backward());
        let mut checked = 0;
        for (e, g) in t.generator().params().entries().iter().zip(&grads) {
            if !e.trainable {
                continue;
            }
            match g {
                Some(g) if g.data().iter().any(|&v| v != 0.0) => checked += 1,
                _ => return Err(format!("{stage:?}: {} has zero gradient", e.name)),
            }
        }
        notes.push(format!("{stage:?}: {checked} params with nonzero grad"));
    }
    Ok(notes.join("; "))
}

struct Overfit {
    gm: Generator,
    gi: Generator,
}

fn overfit_stage(stage: Stage, data: &[SceneTextSample], threshold: f64) -> std::result::Result<(StageTrainer, usize, f64, Duration), String> {
    let mut cfg = TrainConfig::for_stage(stage);
    cfg.generator.base_channels = OVERFIT_BASE;
    cfg.discriminator.base_channels = OVERFIT_BASE;
    cfg.perceptual.width_divisor = OVERFIT_VGG_DIVISOR;
    cfg.batch_size = OVERFIT_BATCH;
    cfg.iterations = OVERFIT_MAX_ITERS;
    let mut t = StageTrainer::new(cfg, None).map_err(fail)?;
    let refs: Vec<&SceneTextSample> = data.iter().collect();
    let started = Instant::now();
    let mut last = f64::INFINITY;
    for i in 1..=OVERFIT_MAX_ITERS {
        t.step(data).map_err(fail)?;
        if i % OVERFIT_EVAL_EVERY == 0 {
            last = t.eval_pixel_loss(&refs).map_err(fail)?;
            eprintln!("  {stage:?} overfit: iteration {i}, eval loss {last:.4}");
            if last < threshold {
                return Ok((t, i, last, started.elapsed()));
            }
        }
    }
    Ok((t, OVERFIT_MAX_ITERS, last, started.elapsed()))
}

fn overfit_smoke(slot: &mut Option<Overfit>) -> Check {
    let data = common::samples(OVERFIT_SAMPLES, 7);
    let (t1, i1, l2, d1) = overfit_stage(Stage::Mask, &data, STAGE1_L2_MAX)?;
    let (t2, i2, l1, d2) = overfit_stage(Stage::Image, &data, STAGE2_L1_MAX)?;
    *slot = Some(Overfit { gm: t1.generator().clone(), gi: t2.generator().clone() });
    ensure(
        l2 < STAGE1_L2_MAX && l1 < STAGE2_L1_MAX && d1 < OVERFIT_CPU_BUDGET && d2 < OVERFIT_CPU_BUDGET,
        format!(
            "stage I L2 {l2:.4} (< {STAGE1_L2_MAX}) at {i1} it in {:.0}s; stage II L1 {l1:.4} (< {STAGE2_L1_MAX}) at {i2} it in {:.0}s",
            d1.as_secs_f64(),
            d2.as_secs_f64()
        ),
    )
}

fn data_generator() -> Check {
    let (fonts, bgs, words) = (FontSet::bundled(), BackgroundSet::procedural(16), WordList::bundled());
    let cfg = SynthConfig::default();
    let samples = synthesize_samples(SYNTH_SAMPLES, 11, &fonts, &bgs, &words, &cfg).map_err(fail)?;
    let mut outside = 0usize;
    for (k, s) in samples.iter().enumerate() {
        for i in 0..64 * 256 {
            if s.m_a.plane(0)[i] < 0.0 && s.m_b.plane(0)[i] < 0.0 {
                outside += 1;
                if (0..3).any(|c| s.i_a.plane(c)[i].to_bits() != s.i_b.plane(c)[i].to_bits()) {
                    return Err(format!("sample {k}: background differs at pixel {i}"));
                }
            }
        }
        let restyled = StyleSpec { rotation_deg: 5.0, fill_rgb: [200, 30, 30], ..StyleSpec::plain("DejaVuSerif", 24) };
        let alt = make_paired_sample("X", &s.text_tgt, &restyled, &procedural_texture(k as u64), &fonts);
        if let Ok(alt) = alt {
            if alt.m_f != s.m_f {
                return Err(format!("sample {k}: m_F depends on style"));
            }
        }
        if s.m_f != render_fixed_mask(&s.text_tgt, &fonts).map_err(fail)? {
            return Err(format!("sample {k}: m_F differs from the fixed-font rendering"));
        }
    }
    let (d1, d2) = (tempfile::tempdir().map_err(fail)?, tempfile::tempdir().map_err(fail)?);
    generate_dataset(SYNTH_SAMPLES, &fonts, &bgs, &words, 11, &cfg, d1.path()).map_err(fail)?;
    generate_dataset(SYNTH_SAMPLES, &fonts, &bgs, &words, 11, &cfg, d2.path()).map_err(fail)?;
    let read = |d: &std::path::Path| std::fs::read(d.join(MANIFEST_FILE)).map_err(fail);
    let same = read(d1.path())? == read(d2.path())?;
    ensure(same, format!("{SYNTH_SAMPLES} samples, {outside} background pixels bit-identical, m_F style-free, manifests identical: {same}"))
}

fn unet_overfit(slot: &mut Option<MaskUnet>) -> Check {
    let data = common::samples(UNET_SAMPLES, 13);
    let mut unet = MaskUnet::new(UnetConfig { base_channels: UNET_BASE }, 0).map_err(fail)?;
    let mut adam = Adam::new(AdamConfig { lr: 1e-3, beta1: 0.5, beta2: 0.999, ..AdamConfig::default() });
    let images = batch(&data.iter().map(|s| &s.i_a).collect::<Vec<_>>()).map_err(fail)?;
    let targets: Vec<TensorImage> = data.iter().map(|s| unit_target(&s.m_a)).collect();
    let targets = batch(&targets.iter().collect::<Vec<_>>()).map_err(fail)?;
    let accuracy = |u: &MaskUnet| -> std::result::Result<f64, String> {
        let mut acc = 0.0;
        for s in &data {
            acc += pixel_accuracy(&u.estimate_mask(&s.i_a).map_err(fail)?, &s.m_a);
        }
        Ok(acc / data.len() as f64)
    };
    let (mut steps, mut acc) = (0, accuracy(&unet)?);
    while steps < UNET_MAX_STEPS && acc <= UNET_ACCURACY_MIN {
        unet_step(&mut unet, &mut adam, &images, &targets).map_err(fail)?;
        steps += 1;
        if steps % UNET_EVAL_EVERY == 0 {
            acc = accuracy(&unet)?;
            eprintln!("  U-Net: step {steps}, accuracy {acc:.4}");
        }
    }
    *slot = Some(unet);
    ensure(acc > UNET_ACCURACY_MIN, format!("accuracy {acc:.4} (> {UNET_ACCURACY_MIN}) after {steps} steps (≤ {UNET_MAX_STEPS})"))
}

fn ablation_harness() -> Check {
    let small = |stage: Stage| {
        let mut c = common::small_config(stage, ABLATION_BASE);
        c.batch_size = ABLATION_BATCH;
        c.iterations = ABLATION_ITERS;
        c
    };
    let (s1, s2) = (small(Stage::Mask), small(Stage::Image));
    let datasets = BTreeMap::from([
        ("Synth".to_string(), common::samples(8, 31)),
        ("Flat".to_string(), synthesize_samples(8, 32, &FontSet::bundled(), &BackgroundSet::procedural(8), &WordList::bundled(), &SynthConfig::flat()).map_err(fail)?),
    ]);
    let eval = common::samples(4, 33);
    let mut matrices = vec![AblationMatrix::attention(&s1, &s2), AblationMatrix::data_mixing(&s1, &s2, "Synth", "Flat"), AblationMatrix::inputs(&s1, &s2)];
    matrices[0].default_data = vec!["Synth".into()];
    matrices[2].default_data = vec!["Synth".into()];
    let mut summary = Vec::new();
    for m in &matrices {
        let table = run_ablation(m, &datasets, &eval).map_err(fail)?;
        let mut expect = m.label_columns.clone();
        expect.extend(["MSE ↓", "PSNR ↑", "SSIM ↑"].map(String::from));
        let ok = table.headers() == expect
            && table.rows.len() == m.rows.len()
            && table.rows.iter().zip(&m.rows).all(|(r, row)| r.labels == row.labels && r.mse.is_finite() && r.psnr_db.is_finite() && r.ssim.is_finite());
        if !ok {
            return Err(format!("{}: table does not match the matrix", m.title));
        }
        eprintln!("{}", table.to_markdown());
        summary.push(format!("{} ({} rows)", m.title, table.rows.len()));
    }
    Ok(format!("{ABLATION_ITERS} iterations per run: {}", summary.join(", ")))
}

fn end_to_end_determinism(models: Option<&Overfit>, unet: Option<&MaskUnet>) -> Check {
    let dir = tempfile::tempdir().map_err(fail)?;
    let ck = CheckpointDir::new(dir.path());
    let (gm, gi, trained) = match models {
        Some(m) => (m.gm.clone(), m.gi.clone(), true),
        None => (
            Generator::new(GeneratorConfig::stage1().with_base_channels(4), 1).map_err(fail)?,
            Generator::new(GeneratorConfig::stage2().with_base_channels(4), 2).map_err(fail)?,
            false,
        ),
    };
    let unet = match unet {
        Some(u) => u.clone(),
        None => MaskUnet::new(UnetConfig { base_channels: 4 }, 3).map_err(fail)?,
    };
    ck.save(Net::MaskGenerator, gm.params()).map_err(fail)?;
    ck.save(Net::ImageGenerator, gi.params()).map_err(fail)?;
    ck.save(Net::Unet, unet.params()).map_err(fail)?;
    ck.update_config(|c| {
        c.mask_generator = gm.config().clone();
        c.image_generator = gi.config().clone();
        c.unet = unet.config().clone();
    })
    .map_err(fail)?;
    let state = AppState::ready(load_model(dir.path(), EditOptions::default()).map_err(fail)?);
    let sample = &common::samples(1, 41)[0];
    let body = serde_json::json!({ "image_b64_png": B64.encode(encode_rgb_png(&sample.i_a).map_err(fail)?), "target_text": "HOUSES" }).to_string();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().map_err(fail)?;
    let outs: Vec<(StatusCode, Vec<u8>)> = rt.block_on(async {
        let tasks: Vec<_> = (0..CONCURRENT_CALLS)
            .map(|_| {
                let (st, b) = (state.clone(), body.clone());
                tokio::spawn(async move {
                    let req = Request::builder().method("POST").uri("/edit").header("content-type", "application/json").body(Body::from(b)).unwrap();
                    let res = router(st).oneshot(req).await.unwrap();
                    let status = res.status();
                    (status, axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
                })
            })
            .collect();
        let mut v = Vec::new();
        for t in tasks {
            v.push(t.await.unwrap());
        }
        v
    });
    let edited: Vec<String> = outs
        .iter()
        .map(|(s, b)| {
            let v: serde_json::Value = serde_json::from_slice(b).unwrap_or_default();
            format!("{s} {}", v["edited_b64_png"].as_str().unwrap_or(""))
        })
        .collect();
    let all_ok = outs.iter().all(|(s, _)| *s == StatusCode::OK);
    let identical = edited.iter().all(|e| e == &edited[0]);
    ensure(
        all_ok && identical,
        format!("{CONCURRENT_CALLS} concurrent /edit calls, {} checkpoint: all 200 {all_ok}, identical bytes {identical}", if trained { "trained" } else { "random" }),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failures += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let mut overfit = None;
    let mut unet = None;
    report("metric oracles", &mut metric_oracles);
    report("analytic metric checks", &mut analytic_metrics);
    report("loss composition", &mut loss_composition);
    report("gradient checks", &mut gradient_checks);
    report("architecture contracts", &mut architecture_contracts);
    report("data generator", &mut data_generator);
    report("u-net overfit", &mut || unet_overfit(&mut unet));
    report("ablation harness", &mut ablation_harness);
    report("overfit smoke", &mut || overfit_smoke(&mut overfit));
    report("end-to-end determinism", &mut || end_to_end_determinism(overfit.as_ref(), unet.as_ref()));
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
