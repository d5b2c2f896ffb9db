use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. One instance per [`ParamSet`]; moment buffers
/// are indexed by parameter position and allocated lazily.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable entry of `set` that has a gradient.
    pub fn step(&mut self, set: &mut ParamSet, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), set.len(), "one gradient slot per parameter");
        if self.m.len() < set.len() {
            self.m.resize(set.len(), None);
            self.v.resize(set.len(), None);
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (i, entry) in set.entries_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !entry.trainable {
                continue;
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (j, (p, &gj)) in entry.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                md[j] = beta1 * md[j] + (1.0 - beta1) * gj;
                vd[j] = beta2 * vd[j] + (1.0 - beta2) * gj * gj;
                *p -= step_size * md[j] / (vd[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}
