//! Parameterised building blocks. Each layer registers its tensors in a
//! [`ParamSet`] at construction and reads them back through a [`Ctx`].

use rand::Rng;

use crate::autograd::Var;
use crate::ops::BatchNormMode;
use crate::params::{Ctx, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Uniform `±1/sqrt(fan_in)`, the default initialisation of common frameworks.
fn default_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = set.add(format!("{name}.weight"), default_init(&[cout, cin, kernel, kernel], fan_in, rng));
        let bias = bias.then(|| set.add(format!("{name}.bias"), default_init(&[cout], fan_in, rng)));
        Self { weight, bias, stride, pad }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let w = ctx.param(set, self.weight);
        let b = self.bias.map(|b| ctx.param(set, b));
        x.conv2d(&w, b.as_ref(), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cout * kernel * kernel;
        let weight = set.add(format!("{name}.weight"), default_init(&[cin, cout, kernel, kernel], fan_in, rng));
        Self { weight, stride, pad }
    }

    pub fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        x.conv_transpose2d(&ctx.param(set, self.weight), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(set: &mut ParamSet, name: &str, channels: usize) -> Self {
        Self {
            gamma: set.add(format!("{name}.weight"), Tensor::ones(&[channels])),
            beta: set.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: set.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: set.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let gamma = ctx.param(set, self.gamma);
        let beta = ctx.param(set, self.beta);
        if ctx.is_train() {
            let (y, stats) = x.batch_norm(&gamma, &beta, BatchNormMode::Train { eps: self.eps });
            if let Some(stats) = stats {
                ctx.record_bn(set, self.running_mean, self.running_var, self.momentum, stats);
            }
            y
        } else {
            let mode = BatchNormMode::Eval {
                running_mean: set.get(self.running_mean).data(),
                running_var: set.get(self.running_var).data(),
                eps: self.eps,
            };
            x.batch_norm(&gamma, &beta, mode).0
        }
    }
}

/// Basic residual block: conv3×3-BN-ReLU-conv3×3-BN, identity skip, ReLU after the sum.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(set, &format!("{name}.conv1"), channels, channels, 3, 1, 1, false, rng),
            bn1: BatchNorm2d::new(set, &format!("{name}.bn1"), channels),
            conv2: Conv2d::new(set, &format!("{name}.conv2"), channels, channels, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(set, &format!("{name}.bn2"), channels),
        }
    }

    pub fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let h = self.bn1.forward(ctx, set, &self.conv1.forward(ctx, set, x)).relu();
        let h = self.bn2.forward(ctx, set, &self.conv2.forward(ctx, set, &h));
        h.add(x).relu()
    }
}
