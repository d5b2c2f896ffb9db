//! Adversarial training for both stages, U-Net training, checkpointing and
//! the ablation matrix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fast_nn::optim::{Adam, AdamConfig};
use fast_nn::{Ctx, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointDir, Net};
use crate::data_synth::{load_dataset, SceneTextSample};
use crate::discriminator::{DiscriminatorConfig, PatchDiscriminator};
use crate::error::{FastError, Result};
use crate::generator::{Attention, ConditionKind, Generator, GeneratorConfig};
use crate::image::{batch, unbatch, TensorImage};
use crate::losses::{
    gan_loss_discriminator, gan_loss_generator, msssim_loss, perceptual_loss, pixel_l1, pixel_l2, stage1_objective_var,
    stage2_objective_var, FeatureExtractor, LossWeights, StageTerms,
};
use crate::mask_unet::{train_mask_unet, MaskUnet, UnetConfig, UnetTrainConfig};
use crate::metrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[serde(alias = "MASK")]
    Mask,
    #[serde(alias = "IMAGE")]
    Image,
    #[serde(alias = "UNET")]
    Unet,
}

/// Where stage II takes its target-mask input from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2Source {
    /// Ground-truth `m_B`.
    #[default]
    TeacherForced,
    /// Outputs of a frozen stage-I generator.
    Cascaded,
}

/// Weights for the frozen perceptual-loss network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptualSpec {
    /// Torchvision-named VGG-19 safetensors; random frozen weights when absent.
    pub weights: Option<PathBuf>,
    /// Width divisor for the random fallback.
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for PerceptualSpec {
    fn default() -> Self {
        Self { weights: None, width_divisor: 1, seed: 0 }
    }
}

impl PerceptualSpec {
    pub fn build(&self) -> Result<FeatureExtractor> {
        match &self.weights {
            Some(p) => FeatureExtractor::from_safetensors(p),
            None => FeatureExtractor::random(self.seed, self.width_divisor),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub seed: u64,
    /// Save every this many iterations; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Evaluate every this many iterations; 0 disables.
    pub eval_every: usize,
    pub discriminator: DiscriminatorConfig,
    pub perceptual: PerceptualSpec,
    pub unet: UnetConfig,
    pub stage2_source: Stage2Source,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_stage(Stage::Mask)
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            iterations: 100_000,
            batch_size: 40,
            lr: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            generator: if stage == Stage::Image { GeneratorConfig::stage2() } else { GeneratorConfig::stage1() },
            seed: 0,
            checkpoint_every: 10_000,
            eval_every: 10_000,
            discriminator: DiscriminatorConfig::default(),
            perceptual: PerceptualSpec::default(),
            unet: UnetConfig::default(),
            stage2_source: Stage2Source::TeacherForced,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(FastError::InvalidConfig("iterations must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(FastError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(FastError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        self.weights.validate()?;
        if self.stage != Stage::Unet {
            self.generator.validate()?;
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, ..AdamConfig::default() })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Epoch-wise shuffled index stream.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Loss values of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iter: usize,
    pub components: BTreeMap<String, f64>,
    pub wall_time: f64,
}

/// Assembled network inputs for a batch.
pub struct StageBatch {
    pub condition: Tensor,
    pub masks: Tensor,
    pub target: Tensor,
    /// First element of every discriminator pair.
    pub anchor: Tensor,
}

fn stack(samples: &[&SceneTextSample], f: impl Fn(&SceneTextSample) -> &TensorImage) -> Result<Tensor> {
    batch(&samples.iter().map(|s| f(s)).collect::<Vec<_>>())
}

/// Stage-I inputs: condition `I_A` or `m_A`, masks `(m_A, m_F)` or `m_F`, target `m_B`.
pub fn stage1_batch(g: &GeneratorConfig, samples: &[&SceneTextSample]) -> Result<StageBatch> {
    let m_a = stack(samples, |s| &s.m_a)?;
    let m_f = stack(samples, |s| &s.m_f)?;
    let condition = match g.condition_kind {
        ConditionKind::Image => stack(samples, |s| &s.i_a)?,
        ConditionKind::Mask => m_a.clone(),
    };
    let masks = if g.concat_source_mask { Tensor::cat_channels(&[&m_a, &m_f])? } else { m_f };
    Ok(StageBatch { condition, masks, target: stack(samples, |s| &s.m_b)?, anchor: m_a })
}

/// Stage-II inputs given the target-mask estimate `m_b` (N×3×H×W).
pub fn stage2_batch(g: &GeneratorConfig, samples: &[&SceneTextSample], m_b: Tensor) -> Result<StageBatch> {
    let m_a = stack(samples, |s| &s.m_a)?;
    let i_a = stack(samples, |s| &s.i_a)?;
    let condition = match g.condition_kind {
        ConditionKind::Image => i_a.clone(),
        ConditionKind::Mask => m_a.clone(),
    };
    let masks = if g.concat_source_mask { Tensor::cat_channels(&[&m_a, &m_b])? } else { m_b };
    Ok(StageBatch { condition, masks, target: stack(samples, |s| &s.i_b)?, anchor: i_a })
}

/// One adversarial stage: generator, discriminator, their optimisers and the
/// frozen perceptual network.
pub struct StageTrainer {
    stage: Stage,
    config: TrainConfig,
    g: Generator,
    d: PatchDiscriminator,
    opt_g: Adam,
    opt_d: Adam,
    extractor: FeatureExtractor,
    sampler: Option<BatchSampler>,
    /// Frozen stage-I generator for cascaded stage II.
    stage1: Option<Generator>,
    iter: usize,
    started: Instant,
}

impl StageTrainer {
    pub fn new(config: TrainConfig, stage1: Option<Generator>) -> Result<Self> {
        config.validate()?;
        if config.stage == Stage::Unet {
            return Err(FastError::InvalidConfig("use train_unet for the U-Net stage".into()));
        }
        if config.stage == Stage::Image && config.stage2_source == Stage2Source::Cascaded && stage1.is_none() {
            return Err(FastError::MissingStage1Checkpoint(PathBuf::new()));
        }
        let g = Generator::new(config.generator.clone(), config.seed)?;
        let d = PatchDiscriminator::new(config.discriminator.clone(), config.seed.wrapping_add(1))?;
        let extractor = config.perceptual.build()?;
        Ok(Self {
            stage: config.stage,
            opt_g: config.adam(),
            opt_d: config.adam(),
            config,
            g,
            d,
            extractor,
            sampler: None,
            stage1,
            iter: 0,
            started: Instant::now(),
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }

    pub fn discriminator(&self) -> &PatchDiscriminator {
        &self.d
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn stage1_generator(&self) -> Option<&Generator> {
        self.stage1.as_ref()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iterations_done(&self) -> usize {
        self.iter
    }

    /// Builds the stage inputs for `samples`, running the frozen stage-I
    /// generator in eval mode for cascaded stage II.
    pub fn make_batch(&self, samples: &[&SceneTextSample]) -> Result<StageBatch> {
        match self.stage {
            Stage::Mask => stage1_batch(&self.config.generator, samples),
            _ => {
                let m_b = match (&self.stage1, self.config.stage2_source) {
                    (Some(g1), Stage2Source::Cascaded) => {
                        let b = stage1_batch(g1.config(), samples)?;
                        g1.infer(&b.condition, &b.masks)?
                    }
                    _ => stack(samples, |s| &s.m_b)?,
                };
                stage2_batch(&self.config.generator, samples, m_b)
            }
        }
    }

    fn generator_terms(&self, fake: &Var, target: &Var, anchor: &Var) -> Result<StageTerms<Var>> {
        let ctx_d = Ctx::train();
        let pred = self.d.forward(&ctx_d, anchor, fake)?;
        let perc = perceptual_loss(fake, target, &self.extractor)?;
        Ok(match self.stage {
            Stage::Mask => StageTerms {
                pixel: pixel_l2(fake, target)?,
                gan: gan_loss_generator(&pred),
                p4: perc[0].clone(),
                p9: perc[1].clone(),
                ssim: msssim_loss(fake, target)?,
            },
            _ => StageTerms {
                pixel: pixel_l1(fake, target)?,
                gan: gan_loss_generator(&pred),
                p4: perc[0].clone(),
                p9: perc[1].clone(),
                ssim: Var::constant(Tensor::scalar(0.0)),
            },
        })
    }

    /// Loss graph of the generator objective on a batch without updating
    /// anything; returns the total and its terms.
    pub fn generator_objective(&self, ctx: &Ctx, b: &StageBatch) -> Result<(Var, StageTerms<Var>)> {
        let fake = self.g.forward(ctx, &Var::constant(b.condition.clone()), &Var::constant(b.masks.clone()))?;
        let terms = self.generator_terms(&fake, &Var::constant(b.target.clone()), &Var::constant(b.anchor.clone()))?;
        let total = match self.stage {
            Stage::Mask => stage1_objective_var(&terms, &self.config.weights),
            _ => stage2_objective_var(&terms, &self.config.weights),
        };
        Ok((total, terms))
    }

    /// One iteration on an explicit batch: a discriminator step on the
    /// detached fake, then a generator step through the updated discriminator.
    pub fn step_on(&mut self, b: &StageBatch) -> Result<StepLog> {
        let iteration = self.iter;
        let cond = Var::constant(b.condition.clone());
        let masks = Var::constant(b.masks.clone());
        let target = Var::constant(b.target.clone());
        let anchor = Var::constant(b.anchor.clone());

        let ctx_g = Ctx::train().track(self.g.params());
        let fake = self.g.forward(&ctx_g, &cond, &masks)?;

        let ctx_d = Ctx::train().track(self.d.params());
        let real_map = self.d.forward(&ctx_d, &anchor, &target)?;
        let fake_map = self.d.forward(&ctx_d, &anchor, &fake.detach())?;
        let d_loss = gan_loss_discriminator(&real_map, &fake_map);
        let d_value = d_loss.item();
        if !d_value.is_finite() {
            return Err(FastError::NonFiniteLoss { iteration });
        }
        let d_grads = ctx_d.param_grads(self.d.params(), &d_loss.backward());
        ctx_d.apply_buffer_updates(self.d.params_mut());
        self.opt_d.step(self.d.params_mut(), &d_grads);

        let terms = self.generator_terms(&fake, &target, &anchor)?;
        let total = match self.stage {
            Stage::Mask => stage1_objective_var(&terms, &self.config.weights),
            _ => stage2_objective_var(&terms, &self.config.weights),
        };
        let g_value = total.item();
        if !g_value.is_finite() {
            return Err(FastError::NonFiniteLoss { iteration });
        }
        let g_grads = ctx_g.param_grads(self.g.params(), &total.backward());
        ctx_g.apply_buffer_updates(self.g.params_mut());
        self.opt_g.step(self.g.params_mut(), &g_grads);

        self.iter += 1;
        let v = terms.values();
        let mut components = BTreeMap::from([
            ("d".to_string(), d_value as f64),
            ("g_total".to_string(), g_value as f64),
            ("pixel".to_string(), v.pixel),
            ("gan".to_string(), v.gan),
            ("p4".to_string(), v.p4),
            ("p9".to_string(), v.p9),
        ]);
        if self.stage == Stage::Mask {
            components.insert("ssim".into(), v.ssim);
        }
        Ok(StepLog { iter: iteration, components, wall_time: self.started.elapsed().as_secs_f64() })
    }

    /// One iteration on the next sampled batch of `data`.
    pub fn step(&mut self, data: &[SceneTextSample]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(FastError::EmptyDataset);
        }
        let seed = self.config.seed;
        let sampler = self.sampler.get_or_insert_with(|| BatchSampler::new(data.len(), seed ^ 0x5eed));
        let idx = sampler.next_batch(self.config.batch_size);
        let samples: Vec<&SceneTextSample> = idx.iter().map(|&i| &data[i]).collect();
        let b = self.make_batch(&samples)?;
        self.step_on(&b)
    }

    /// Eval-mode generator outputs for `samples`.
    pub fn predict(&self, samples: &[&SceneTextSample]) -> Result<Vec<TensorImage>> {
        let b = self.make_batch(samples)?;
        let out = self.g.infer(&b.condition, &b.masks)?;
        Ok((0..samples.len()).map(|i| unbatch(&out, i)).collect())
    }

    /// Mean eval-mode pixel loss (L2 for stage I, L1 for stage II) against
    /// the targets of `samples`.
    pub fn eval_pixel_loss(&self, samples: &[&SceneTextSample]) -> Result<f64> {
        let b = self.make_batch(samples)?;
        let out = self.g.infer(&b.condition, &b.masks)?;
        let n = out.numel() as f64;
        let sum: f64 = out
            .data()
            .iter()
            .zip(b.target.data())
            .map(|(&a, &t)| {
                let d = (a - t) as f64;
                if self.stage == Stage::Mask {
                    d * d
                } else {
                    d.abs()
                }
            })
            .sum();
        Ok(sum / n)
    }

    /// Writes this stage's generator and discriminator plus config.
    pub fn save(&self, dir: &CheckpointDir) -> Result<()> {
        let (gn, dn) = match self.stage {
            Stage::Mask => (Net::MaskGenerator, Net::MaskDiscriminator),
            _ => (Net::ImageGenerator, Net::ImageDiscriminator),
        };
        dir.save(gn, self.g.params())?;
        dir.save(dn, self.d.params())?;
        let (stage, g, d, w) = (self.stage, self.config.generator.clone(), self.config.discriminator.clone(), self.config.weights.clone());
        dir.update_config(|c| {
            match stage {
                Stage::Mask => c.mask_generator = g,
                _ => c.image_generator = g,
            }
            c.discriminator = d;
            c.weights = w;
        })
    }
}

/// Output locations for a training run.
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub checkpoint: Option<CheckpointDir>,
    /// JSONL with one [`StepLog`] per iteration.
    pub log: Option<PathBuf>,
    /// JSONL with one [`EvalRecord`] per evaluation.
    pub eval_log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_samples: usize,
}

const EVAL_SAMPLES: usize = 16;

fn evaluate_outputs(outputs: &[TensorImage], targets: &[&TensorImage], iter: usize) -> Result<EvalRecord> {
    let (mut mse, mut psnr, mut ssim) = (0.0, 0.0, 0.0);
    for (o, t) in outputs.iter().zip(targets) {
        let m = metrics::mse(o, t)?;
        mse += m;
        psnr += metrics::psnr_from_mse(m);
        ssim += metrics::ssim(o, t)?;
    }
    let n = outputs.len() as f64;
    Ok(EvalRecord { iter, mse: mse / n, psnr_db: psnr / n, ssim: ssim / n, n_samples: outputs.len() })
}

struct JsonlWriter(Option<BufWriter<File>>);

impl JsonlWriter {
    fn open(path: Option<&Path>) -> Result<Self> {
        Ok(Self(match path {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                Some(BufWriter::new(File::create(p)?))
            }
            None => None,
        }))
    }

    fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Result of a full adversarial run.
pub struct TrainOutcome {
    pub trainer: StageTrainer,
    pub log: Vec<StepLog>,
    pub evals: Vec<EvalRecord>,
}

fn run_stage(config: TrainConfig, data: &[SceneTextSample], stage1: Option<Generator>, out: &RunOutputs) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(FastError::EmptyDataset);
    }
    let mut t = StageTrainer::new(config, stage1)?;
    let mut log_w = JsonlWriter::open(out.log.as_deref())?;
    let mut eval_w = JsonlWriter::open(out.eval_log.as_deref())?;
    let eval_set: Vec<&SceneTextSample> = data.iter().take(EVAL_SAMPLES).collect();
    let (mut log, mut evals) = (Vec::new(), Vec::new());
    let (iterations, ck_every, ev_every) = (t.config.iterations, t.config.checkpoint_every, t.config.eval_every);
    for i in 1..=iterations {
        let entry = match t.step(data) {
            Ok(e) => e,
            Err(e) => {
                if let FastError::NonFiniteLoss { iteration } = &e {
                    tracing::error!(iteration, "non-finite loss; aborting");
                    log_w.write(&serde_json::json!({ "iter": iteration, "error": "non-finite loss" }))?;
                }
                return Err(e);
            }
        };
        log_w.write(&entry)?;
        log.push(entry);
        if ev_every > 0 && i % ev_every == 0 {
            let outputs = t.predict(&eval_set)?;
            let targets: Vec<&TensorImage> =
                eval_set.iter().map(|s| if t.stage == Stage::Mask { &s.m_b } else { &s.i_b }).collect();
            let rec = evaluate_outputs(&outputs, &targets, i)?;
            tracing::info!(iter = i, mse = rec.mse, ssim = rec.ssim, "eval");
            eval_w.write(&rec)?;
            evals.push(rec);
        }
        if let Some(dir) = &out.checkpoint {
            if (ck_every > 0 && i % ck_every == 0) || i == iterations {
                t.save(dir)?;
            }
        }
    }
    Ok(TrainOutcome { trainer: t, log, evals })
}

/// Trains `G_m`/`D_m` on `(I_A, m_A, m_F) → m_B`.
pub fn train_stage1(config: TrainConfig, data: &[SceneTextSample], out: &RunOutputs) -> Result<TrainOutcome> {
    if config.stage != Stage::Mask {
        return Err(FastError::InvalidConfig(format!("train_stage1 needs stage mask, got {:?}", config.stage)));
    }
    run_stage(config, data, None, out)
}

/// Trains `G_i`/`D_i` on `(I_A, m_A, m_B or m̄_B) → I_B`. Cascaded mode needs
/// the frozen stage-I generator.
pub fn train_stage2(config: TrainConfig, data: &[SceneTextSample], stage1: Option<Generator>, out: &RunOutputs) -> Result<TrainOutcome> {
    if config.stage != Stage::Image {
        return Err(FastError::InvalidConfig(format!("train_stage2 needs stage image, got {:?}", config.stage)));
    }
    run_stage(config, data, stage1, out)
}

/// Trains the mask U-Net on `(I_A, m_A)` pairs for `iterations` steps.
pub fn train_unet(config: &TrainConfig, data: &[SceneTextSample], out: &RunOutputs) -> Result<(MaskUnet, Vec<f32>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(FastError::EmptyDataset);
    }
    let mut unet = MaskUnet::new(config.unet.clone(), config.seed)?;
    let pairs: Vec<(TensorImage, TensorImage)> = data.iter().map(|s| (s.i_a.clone(), s.m_a.clone())).collect();
    let per_epoch = data.len().div_ceil(config.batch_size);
    let tc = UnetTrainConfig {
        epochs: config.iterations.div_ceil(per_epoch),
        lr: config.lr,
        batch_size: config.batch_size,
        adam_beta1: config.adam_beta1,
        adam_beta2: config.adam_beta2,
        seed: config.seed,
        max_steps: Some(config.iterations),
    };
    let started = Instant::now();
    let losses = train_mask_unet(&mut unet, &pairs, &tc)?;
    let mut w = JsonlWriter::open(out.log.as_deref())?;
    let wall = started.elapsed().as_secs_f64();
    for (i, l) in losses.iter().enumerate() {
        w.write(&StepLog { iter: i, components: BTreeMap::from([("bce".to_string(), *l as f64)]), wall_time: wall })?;
    }
    if let Some(dir) = &out.checkpoint {
        dir.save(Net::Unet, unet.params())?;
        let u = config.unet.clone();
        dir.update_config(|c| c.unet = u)?;
    }
    Ok((unet, losses))
}

/// Runs the stage named by `config.stage` on the dataset at `data_dirs`
/// (concatenated), writing checkpoints and `train_log.jsonl` under `out`.
pub fn train_from_dirs(config: TrainConfig, data_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut data = Vec::new();
    for d in data_dirs {
        data.extend(load_dataset(d)?);
    }
    let dir = CheckpointDir::new(out);
    let outputs = RunOutputs {
        checkpoint: Some(dir.clone()),
        log: Some(out.join(format!("train_{}.jsonl", stage_name(config.stage)))),
        eval_log: Some(out.join(format!("eval_{}.jsonl", stage_name(config.stage)))),
    };
    match config.stage {
        Stage::Mask => train_stage1(config, &data, &outputs).map(|_| ()),
        Stage::Image => {
            let stage1 = if config.stage2_source == Stage2Source::Cascaded {
                if !dir.has(Net::MaskGenerator) {
                    return Err(FastError::MissingStage1Checkpoint(dir.path(Net::MaskGenerator)));
                }
                Some(dir.load_generator(Net::MaskGenerator)?)
            } else {
                None
            };
            train_stage2(config, &data, stage1, &outputs).map(|_| ())
        }
        Stage::Unet => train_unet(&config, &data, &outputs).map(|_| ()),
    }
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Mask => "mask",
        Stage::Image => "image",
        Stage::Unet => "unet",
    }
}

/// One configuration of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Values of the table's label columns.
    pub labels: Vec<String>,
    /// Stage-I configuration.
    pub config: TrainConfig,
    /// Names of the training sets to concatenate; empty uses the default.
    #[serde(default)]
    pub data: Vec<String>,
}

/// A table's worth of stage-I variants sharing one stage-II generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub title: String,
    pub label_columns: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// Stage-II configuration, trained once (teacher-forced) and shared.
    pub stage2: TrainConfig,
    /// Named training sets on disk (used by the CLI).
    #[serde(default)]
    pub datasets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub default_data: Vec<String>,
    /// Held-out evaluation set on disk (used by the CLI).
    #[serde(default)]
    pub eval_data: Option<PathBuf>,
}

fn attention_label(a: Attention) -> &'static str {
    match a {
        Attention::SelfAttention => "SA",
        Attention::Sigmoid => "σ",
    }
}

impl AblationMatrix {
    fn variant(base: &TrainConfig, f: impl FnOnce(&mut GeneratorConfig)) -> TrainConfig {
        let mut c = base.clone();
        c.stage = Stage::Mask;
        c.generator.condition_kind = ConditionKind::Mask;
        c.generator.concat_source_mask = true;
        f(&mut c.generator);
        c
    }

    /// Attention schedules {σσσσ, SA×4, SA SA σ σ}; mask condition with concatenation.
    pub fn attention(stage1: &TrainConfig, stage2: &TrainConfig) -> Self {
        use Attention::*;
        let schedules = [[Sigmoid; 4], [SelfAttention; 4], [SelfAttention, SelfAttention, Sigmoid, Sigmoid]];
        let rows = schedules
            .iter()
            .map(|s| AblationRow {
                labels: s.iter().map(|&a| attention_label(a).to_string()).collect(),
                config: Self::variant(stage1, |g| g.attention_schedule = s.to_vec()),
                data: Vec::new(),
            })
            .collect();
        Self {
            title: "Ablation of different attention mechanisms".into(),
            label_columns: ["Block A", "Block B", "Block C", "Block D"].map(String::from).to_vec(),
            rows,
            stage2: stage2.clone(),
            datasets: BTreeMap::new(),
            default_data: Vec::new(),
            eval_data: None,
        }
    }

    /// Single dataset against the mixture of both.
    pub fn data_mixing(stage1: &TrainConfig, stage2: &TrainConfig, single: &str, other: &str) -> Self {
        let cfg = Self::variant(stage1, |_| {});
        Self {
            title: "Effectiveness of Data Mixing".into(),
            label_columns: vec!["Dataset".into()],
            rows: vec![
                AblationRow { labels: vec![single.into()], config: cfg.clone(), data: vec![single.into()] },
                AblationRow { labels: vec!["Mixed".into()], config: cfg, data: vec![single.into(), other.into()] },
            ],
            stage2: stage2.clone(),
            datasets: BTreeMap::new(),
            default_data: vec![single.into()],
            eval_data: None,
        }
    }

    /// {Mask, Image} condition × {Concat, w/o Concat}.
    pub fn inputs(stage1: &TrainConfig, stage2: &TrainConfig) -> Self {
        let mut rows = Vec::new();
        for (kind, kl) in [(ConditionKind::Mask, "Mask"), (ConditionKind::Image, "Image")] {
            for (concat, cl) in [(true, "Concat"), (false, "w/o Concat")] {
                rows.push(AblationRow {
                    labels: vec![kl.into(), cl.into()],
                    config: Self::variant(stage1, |g| {
                        g.condition_kind = kind;
                        g.concat_source_mask = concat;
                    }),
                    data: Vec::new(),
                });
            }
        }
        Self {
            title: "Effectiveness of Inputs".into(),
            label_columns: vec!["Input Image Type".into(), "Mask (m_a) Concatenation".into()],
            rows,
            stage2: stage2.clone(),
            datasets: BTreeMap::new(),
            default_data: Vec::new(),
            eval_data: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(FastError::InvalidConfig("ablation matrix has no rows".into()));
        }
        for r in &self.rows {
            if r.labels.len() != self.label_columns.len() {
                return Err(FastError::InvalidConfig(format!("row {:?} does not match columns {:?}", r.labels, self.label_columns)));
            }
            r.config.validate()?;
        }
        self.stage2.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub labels: Vec<String>,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub title: String,
    pub label_columns: Vec<String>,
    pub rows: Vec<AblationResult>,
}

impl AblationTable {
    pub fn headers(&self) -> Vec<String> {
        let mut h = self.label_columns.clone();
        h.extend(["MSE ↓", "PSNR ↑", "SSIM ↑"].map(String::from));
        h
    }

    pub fn to_markdown(&self) -> String {
        let h = self.headers();
        let mut s = format!("{}\n\n| {} |\n|{}\n", self.title, h.join(" | "), "---|".repeat(h.len()));
        for r in &self.rows {
            s.push_str(&format!("| {} | {:.4} | {:.2} | {:.3} |\n", r.labels.join(" | "), r.mse, r.psnr_db, r.ssim));
        }
        s
    }
}

/// Runs the cascade `G_m → G_i` in eval mode and scores `Ī_B` against `I_B`.
pub fn evaluate_cascade(gm: &Generator, gi: &Generator, eval: &[SceneTextSample]) -> Result<EvalRecord> {
    let mut outputs = Vec::with_capacity(eval.len());
    for chunk in eval.chunks(8) {
        let refs: Vec<&SceneTextSample> = chunk.iter().collect();
        let b1 = stage1_batch(gm.config(), &refs)?;
        let m_b = gm.infer(&b1.condition, &b1.masks)?;
        let b2 = stage2_batch(gi.config(), &refs, m_b)?;
        let out = gi.infer(&b2.condition, &b2.masks)?;
        outputs.extend((0..refs.len()).map(|i| unbatch(&out, i)));
    }
    let targets: Vec<&TensorImage> = eval.iter().map(|s| &s.i_b).collect();
    evaluate_outputs(&outputs, &targets, 0)
}

/// Trains a shared stage II, then every stage-I row, and evaluates each
/// cascade on `eval`.
pub fn run_ablation(
    matrix: &AblationMatrix,
    datasets: &BTreeMap<String, Vec<SceneTextSample>>,
    eval: &[SceneTextSample],
) -> Result<AblationTable> {
    matrix.validate()?;
    if eval.is_empty() {
        return Err(FastError::EmptyDataset);
    }
    let gather = |names: &[String]| -> Result<Vec<SceneTextSample>> {
        let names = if names.is_empty() { &matrix.default_data } else { names };
        let mut out = Vec::new();
        if names.is_empty() {
            for d in datasets.values() {
                out.extend(d.iter().cloned());
            }
        }
        for n in names {
            let d = datasets.get(n).ok_or_else(|| FastError::InvalidConfig(format!("unknown dataset {n:?}")))?;
            out.extend(d.iter().cloned());
        }
        Ok(out)
    };
    let base = gather(&[])?;
    let mut s2 = matrix.stage2.clone();
    s2.stage = Stage::Image;
    s2.stage2_source = Stage2Source::TeacherForced;
    let gi = train_stage2(s2, &base, None, &RunOutputs::default())?.trainer.g;
    let mut rows = Vec::with_capacity(matrix.rows.len());
    for row in &matrix.rows {
        let data = gather(&row.data)?;
        tracing::info!(labels = ?row.labels, n = data.len(), "ablation row");
        let gm = train_stage1(row.config.clone(), &data, &RunOutputs::default())?.trainer.g;
        let e = evaluate_cascade(&gm, &gi, eval)?;
        rows.push(AblationResult { labels: row.labels.clone(), mse: e.mse, psnr_db: e.psnr_db, ssim: e.ssim });
    }
    Ok(AblationTable { title: matrix.title.clone(), label_columns: matrix.label_columns.clone(), rows })
}

/// Loads the matrix's datasets from disk and runs it.
pub fn run_ablation_from_file(path: &Path) -> Result<AblationTable> {
    let matrix: AblationMatrix = serde_json::from_slice(&std::fs::read(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mut datasets = BTreeMap::new();
    for (name, p) in &matrix.datasets {
        datasets.insert(name.clone(), load_dataset(&resolve(p))?);
    }
    let eval_dir = matrix.eval_data.as_ref().ok_or_else(|| FastError::InvalidConfig("matrix needs eval_data".into()))?;
    let eval = load_dataset(&resolve(eval_dir))?;
    run_ablation(&matrix, &datasets, &eval)
}
