//! PatchGAN discriminator over channel-concatenated pairs.

use fast_nn::layers::{BatchNorm2d, Conv2d};
use fast_nn::{Ctx, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FastError, Result};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Channels of the first block; later blocks double it.
    pub base_channels: usize,
    /// Channels of each image in the pair.
    pub pair_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64, pair_channels: 3 }
    }
}

#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    config: DiscriminatorConfig,
    params: ParamSet,
    blocks: Vec<(Conv2d, Option<BatchNorm2d>)>,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 || config.pair_channels == 0 {
            return Err(FastError::InvalidConfig("discriminator channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let mut cin = 2 * config.pair_channels;
        let blocks = (0..4)
            .map(|i| {
                let cout = config.base_channels << i;
                let norm = i > 0;
                let conv = Conv2d::new(&mut set, &format!("block{}.conv", i + 1), cin, cout, 4, 2, 1, !norm, &mut rng);
                let bn = norm.then(|| BatchNorm2d::new(&mut set, &format!("block{}.bn", i + 1), cout));
                cin = cout;
                (conv, bn)
            })
            .collect();
        let head = Conv2d::new(&mut set, "head", cin, 1, 1, 1, 0, true, &mut rng);
        Ok(Self { config, params: set, blocks, head })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Probability map `N × 1 × H/16 × W/16` that `(a, b)` is a real pair.
    pub fn forward(&self, ctx: &Ctx, a: &Var, b: &Var) -> Result<Var> {
        let expect = |v: &Var| {
            let s = v.shape();
            s.len() == 4 && s[1] == self.config.pair_channels && s[2].is_multiple_of(16) && s[3].is_multiple_of(16) && s[2] > 0 && s[3] > 0
        };
        if !expect(a) || a.shape() != b.shape() {
            return Err(FastError::ShapeMismatch(format!(
                "discriminator expects two N×{}×H×W inputs, got {:?} and {:?}",
                self.config.pair_channels,
                a.shape(),
                b.shape()
            )));
        }
        let set = &self.params;
        let mut h = Var::cat_channels(&[a, b]);
        for (conv, bn) in &self.blocks {
            h = conv.forward(ctx, set, &h);
            if let Some(bn) = bn {
                h = bn.forward(ctx, set, &h);
            }
            h = h.leaky_relu(LEAKY_SLOPE);
        }
        Ok(self.head.forward(ctx, set, &h).sigmoid())
    }

    pub fn infer(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let ctx = Ctx::eval();
        Ok(self.forward(&ctx, &Var::constant(a.clone()), &Var::constant(b.clone()))?.value().clone())
    }
}
