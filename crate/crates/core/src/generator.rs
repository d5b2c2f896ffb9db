//! Dual-branch encoder–decoder generator with attention-gated fusion.
//!
//! A condition branch (image or mask) and a mask branch are encoded into
//! four-level pyramids. Decoder block `k` multiplies its input by an attention
//! map over the mask features at the matching resolution, then upsamples.

use fast_nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, ResidualBlock};
use fast_nn::{Ctx, ParamId, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FastError, Result};

pub const N_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attention {
    #[serde(rename = "SELF")]
    SelfAttention,
    #[serde(rename = "SIGMOID")]
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConditionKind {
    Image,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_scales: usize,
    /// Ordered from the lowest to the highest decoder resolution.
    pub attention_schedule: Vec<Attention>,
    pub condition_kind: ConditionKind,
    pub concat_source_mask: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl GeneratorConfig {
    pub fn stage1() -> Self {
        use Attention::*;
        Self {
            base_channels: 64,
            n_scales: N_SCALES,
            attention_schedule: vec![SelfAttention, SelfAttention, Sigmoid, Sigmoid],
            condition_kind: ConditionKind::Image,
            concat_source_mask: true,
        }
    }

    pub fn stage2() -> Self {
        Self { attention_schedule: vec![Attention::Sigmoid; N_SCALES], ..Self::stage1() }
    }

    pub fn with_base_channels(mut self, c: usize) -> Self {
        self.base_channels = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales != N_SCALES {
            return Err(FastError::InvalidConfig(format!("n_scales must be {N_SCALES}, got {}", self.n_scales)));
        }
        if self.attention_schedule.len() != self.n_scales {
            return Err(FastError::InvalidConfig(format!(
                "attention_schedule has {} entries, expected {}",
                self.attention_schedule.len(),
                self.n_scales
            )));
        }
        if self.base_channels == 0 {
            return Err(FastError::InvalidConfig("base_channels must be positive".into()));
        }
        for (k, a) in self.attention_schedule.iter().enumerate() {
            if *a == Attention::SelfAttention && self.level_channels(N_SCALES - k) < 8 {
                return Err(FastError::InvalidConfig(format!("self-attention at decoder block {} needs ≥ 8 channels", k + 1)));
            }
        }
        Ok(())
    }

    /// Channels of pyramid level `l` (0 = stem).
    pub fn level_channels(&self, l: usize) -> usize {
        self.base_channels << l
    }

    pub fn condition_channels(&self) -> usize {
        3
    }

    pub fn mask_channels(&self) -> usize {
        if self.concat_source_mask {
            6
        } else {
            3
        }
    }
}

/// Encoder output: the stem and four downsampled levels.
#[derive(Clone)]
pub struct FeaturePyramid {
    pub stem: Var,
    pub levels: Vec<Var>,
}

#[derive(Clone, Debug)]
struct Encoder {
    in_channels: usize,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    down: Vec<(Conv2d, BatchNorm2d, ResidualBlock)>,
}

impl Encoder {
    fn new(set: &mut ParamSet, name: &str, in_channels: usize, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let c0 = cfg.level_channels(0);
        let stem = Conv2d::new(set, &format!("{name}.stem"), in_channels, c0, 3, 1, 1, false, rng);
        let stem_bn = BatchNorm2d::new(set, &format!("{name}.stem_bn"), c0);
        let down = (1..=N_SCALES)
            .map(|l| {
                let (cin, cout) = (cfg.level_channels(l - 1), cfg.level_channels(l));
                let p = format!("{name}.down{l}");
                (
                    Conv2d::new(set, &format!("{p}.conv"), cin, cout, 4, 2, 1, false, rng),
                    BatchNorm2d::new(set, &format!("{p}.bn"), cout),
                    ResidualBlock::new(set, &format!("{p}.res"), cout, rng),
                )
            })
            .collect();
        Self { in_channels, stem, stem_bn, down }
    }

    fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Result<FeaturePyramid> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels || !s[2].is_multiple_of(16) || !s[3].is_multiple_of(16) || s[2] == 0 || s[3] == 0 {
            return Err(FastError::ShapeMismatch(format!(
                "encoder expects N×{}×H×W with H, W multiples of 16, got {s:?}",
                self.in_channels
            )));
        }
        let stem = self.stem_bn.forward(ctx, set, &self.stem.forward(ctx, set, x)).relu();
        let mut levels = Vec::with_capacity(N_SCALES);
        let mut h = stem.clone();
        for (conv, bn, res) in &self.down {
            h = bn.forward(ctx, set, &conv.forward(ctx, set, &h)).relu();
            h = res.forward(ctx, set, &h);
            levels.push(h.clone());
        }
        Ok(FeaturePyramid { stem, levels })
    }
}

/// Spatial self-attention with `C/8`-channel query/key projections and a
/// residual scale `γ` initialised to zero.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    gamma: ParamId,
}

impl SelfAttention {
    pub fn new(set: &mut ParamSet, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let inner = (channels / 8).max(1);
        Self {
            query: Conv2d::new(set, &format!("{name}.query"), channels, inner, 1, 1, 0, true, rng),
            key: Conv2d::new(set, &format!("{name}.key"), channels, inner, 1, 1, 0, true, rng),
            value: Conv2d::new(set, &format!("{name}.value"), channels, channels, 1, 1, 0, true, rng),
            gamma: set.add(format!("{name}.gamma"), Tensor::zeros(&[1])),
        }
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    /// Row-stochastic `N × HW × HW` attention matrix; row `i` weights every
    /// position attended by position `i`.
    pub fn attention_map(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let (n, _, h, w) = x.value().dims4();
        let q = self.query.forward(ctx, set, x);
        let k = self.key.forward(ctx, set, x);
        let inner = q.shape()[1];
        let q = q.reshape(&[n, inner, h * w]).transpose12();
        let k = k.reshape(&[n, inner, h * w]);
        q.bmm(&k).softmax_last()
    }

    pub fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let (n, c, h, w) = x.value().dims4();
        let attn = self.attention_map(ctx, set, x);
        let v = self.value.forward(ctx, set, x).reshape(&[n, c, h * w]);
        let out = v.bmm(&attn.transpose12()).reshape(&[n, c, h, w]);
        x.add(&out.scale_by(&ctx.param(set, self.gamma)))
    }
}

/// `decoder ⊙ σ(mask)`.
pub fn sigmoid_gate(decoder: &Var, mask: &Var) -> Result<Var> {
    if decoder.shape() != mask.shape() {
        return Err(FastError::ShapeMismatch(format!("gate {:?} vs {:?}", decoder.shape(), mask.shape())));
    }
    Ok(decoder.mul(&mask.sigmoid()))
}

#[derive(Clone, Debug)]
enum Gate {
    SelfAttention(SelfAttention),
    Sigmoid,
}

#[derive(Clone, Debug)]
struct UpBlock {
    gate: Gate,
    up: ConvTranspose2d,
    bn: BatchNorm2d,
    res: ResidualBlock,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
    condition: Encoder,
    mask: Encoder,
    up: Vec<UpBlock>,
    post: Vec<ResidualBlock>,
    head: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let condition = Encoder::new(&mut set, "cond", config.condition_channels(), &config, &mut rng);
        let mask = Encoder::new(&mut set, "mask", config.mask_channels(), &config, &mut rng);
        let up = config
            .attention_schedule
            .iter()
            .enumerate()
            .map(|(k, kind)| {
                let ch = config.level_channels(N_SCALES - k);
                let p = format!("dec{}", k + 1);
                let gate = match kind {
                    Attention::SelfAttention => Gate::SelfAttention(SelfAttention::new(&mut set, &format!("{p}.attn"), ch, &mut rng)),
                    Attention::Sigmoid => Gate::Sigmoid,
                };
                UpBlock {
                    gate,
                    up: ConvTranspose2d::new(&mut set, &format!("{p}.up"), ch, ch / 2, 4, 2, 1, &mut rng),
                    bn: BatchNorm2d::new(&mut set, &format!("{p}.bn"), ch / 2),
                    res: ResidualBlock::new(&mut set, &format!("{p}.res"), ch / 2, &mut rng),
                }
            })
            .collect();
        let c0 = config.level_channels(0);
        let post = (1..=4).map(|i| ResidualBlock::new(&mut set, &format!("post{i}"), c0, &mut rng)).collect();
        let head = Conv2d::new(&mut set, "head", c0, 3, 1, 1, 0, false, &mut rng);
        Ok(Self { config, params: set, condition, mask, up, post, head })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Self-attention modules by decoder block index.
    pub fn self_attention(&self, block: usize) -> Option<&SelfAttention> {
        match &self.up.get(block)?.gate {
            Gate::SelfAttention(sa) => Some(sa),
            Gate::Sigmoid => None,
        }
    }

    pub fn encode_condition(&self, ctx: &Ctx, x: &Var) -> Result<FeaturePyramid> {
        self.condition.forward(ctx, &self.params, x)
    }

    pub fn encode_mask(&self, ctx: &Ctx, x: &Var) -> Result<FeaturePyramid> {
        self.mask.forward(ctx, &self.params, x)
    }

    pub fn decode(&self, ctx: &Ctx, cond: &FeaturePyramid, mask: &FeaturePyramid) -> Result<Var> {
        let set = &self.params;
        let mut x = cond.levels[N_SCALES - 1].clone();
        for (k, block) in self.up.iter().enumerate() {
            let m = &mask.levels[N_SCALES - 1 - k];
            if x.shape() != m.shape() {
                return Err(FastError::ShapeMismatch(format!("decoder block {}: {:?} vs {:?}", k + 1, x.shape(), m.shape())));
            }
            let gated = match &block.gate {
                Gate::SelfAttention(sa) => x.mul(&sa.forward(ctx, set, m)),
                Gate::Sigmoid => sigmoid_gate(&x, m)?,
            };
            let h = block.bn.forward(ctx, set, &block.up.forward(ctx, set, &gated)).relu();
            x = block.res.forward(ctx, set, &h);
        }
        for r in &self.post {
            x = r.forward(ctx, set, &x);
        }
        Ok(self.head.forward(ctx, set, &x).tanh())
    }

    /// `condition`: N×3×H×W; `masks`: N×3×H×W or N×6×H×W per the config.
    pub fn forward(&self, ctx: &Ctx, condition: &Var, masks: &Var) -> Result<Var> {
        let c = self.encode_condition(ctx, condition)?;
        let m = self.encode_mask(ctx, masks)?;
        self.decode(ctx, &c, &m)
    }

    /// Eval-mode forward on plain tensors.
    pub fn infer(&self, condition: &Tensor, masks: &Tensor) -> Result<Tensor> {
        let ctx = Ctx::eval();
        let out = self.forward(&ctx, &Var::constant(condition.clone()), &Var::constant(masks.clone()))?;
        Ok(out.value().clone())
    }
}
