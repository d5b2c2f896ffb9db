//! Checkpoint directories: one safetensors file per network plus `config.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fast_nn::ParamSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{DiscriminatorConfig, PatchDiscriminator};
use crate::error::{FastError, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::LossWeights;
use crate::mask_unet::{MaskUnet, UnetConfig};

pub const CONFIG_FILE: &str = "config.json";

/// The networks a checkpoint directory may hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Net {
    MaskGenerator,
    ImageGenerator,
    MaskDiscriminator,
    ImageDiscriminator,
    Unet,
}

impl Net {
    pub const ALL: [Net; 5] = [Net::MaskGenerator, Net::ImageGenerator, Net::MaskDiscriminator, Net::ImageDiscriminator, Net::Unet];

    pub fn file_name(self) -> &'static str {
        match self {
            Net::MaskGenerator => "gm.weights",
            Net::ImageGenerator => "gi.weights",
            Net::MaskDiscriminator => "dm.weights",
            Net::ImageDiscriminator => "di.weights",
            Net::Unet => "unet.weights",
        }
    }
}

/// Contents of `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointConfig {
    pub mask_generator: GeneratorConfig,
    pub image_generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub unet: UnetConfig,
    pub weights: LossWeights,
    pub format: String,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        Self {
            mask_generator: GeneratorConfig::stage1(),
            image_generator: GeneratorConfig::stage2(),
            discriminator: DiscriminatorConfig::default(),
            unet: UnetConfig::default(),
            weights: LossWeights::default(),
            format: "safetensors (f32, little-endian)".into(),
        }
    }
}

/// A checkpoint directory on disk.
#[derive(Clone, Debug)]
pub struct CheckpointDir {
    root: PathBuf,
}

impl CheckpointDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, net: Net) -> PathBuf {
        self.root.join(net.file_name())
    }

    pub fn has(&self, net: Net) -> bool {
        self.path(net).is_file()
    }

    /// Reads `config.json`, or the defaults when absent.
    pub fn read_config(&self) -> Result<CheckpointConfig> {
        let p = self.root.join(CONFIG_FILE);
        if !p.exists() {
            return Ok(CheckpointConfig::default());
        }
        Ok(serde_json::from_slice(&std::fs::read(p)?)?)
    }

    pub fn write_config(&self, cfg: &CheckpointConfig) -> Result<()> {
        std::fs::create_dir_all(&self.root)?;
        fast_nn::io::write_atomic(&self.root.join(CONFIG_FILE), &serde_json::to_vec_pretty(cfg)?)?;
        Ok(())
    }

    /// Applies `f` to the stored config and writes it back.
    pub fn update_config(&self, f: impl FnOnce(&mut CheckpointConfig)) -> Result<()> {
        let mut cfg = self.read_config()?;
        f(&mut cfg);
        self.write_config(&cfg)
    }

    pub fn save(&self, net: Net, params: &ParamSet) -> Result<()> {
        std::fs::create_dir_all(&self.root)?;
        let meta = HashMap::from([("net".to_string(), net.file_name().to_string())]);
        fast_nn::io::save(params, &self.path(net), Some(meta))?;
        Ok(())
    }

    fn load(&self, net: Net, params: &mut ParamSet) -> Result<()> {
        let p = self.path(net);
        if !p.is_file() {
            return Err(FastError::MissingCheckpoint(p.display().to_string()));
        }
        fast_nn::io::load_into(params, &p)?;
        Ok(())
    }

    pub fn load_generator(&self, net: Net) -> Result<Generator> {
        let cfg = self.read_config()?;
        let gc = match net {
            Net::MaskGenerator => cfg.mask_generator,
            Net::ImageGenerator => cfg.image_generator,
            other => return Err(FastError::InvalidRequest(format!("{other:?} is not a generator"))),
        };
        let mut g = Generator::new(gc, 0)?;
        self.load(net, g.params_mut())?;
        Ok(g)
    }

    pub fn load_discriminator(&self, net: Net) -> Result<PatchDiscriminator> {
        let mut d = PatchDiscriminator::new(self.read_config()?.discriminator, 0)?;
        self.load(net, d.params_mut())?;
        Ok(d)
    }

    pub fn load_unet(&self) -> Result<MaskUnet> {
        let mut u = MaskUnet::new(self.read_config()?.unet, 0)?;
        self.load(Net::Unet, u.params_mut())?;
        Ok(u)
    }

    /// SHA-256 over `config.json` and every present weight file, in a fixed order.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let mut names = vec![CONFIG_FILE];
        names.extend(Net::ALL.iter().map(|n| n.file_name()));
        for name in names {
            let p = self.root.join(name);
            if p.is_file() {
                h.update(name.as_bytes());
                h.update(std::fs::read(p)?);
            }
        }
        Ok(format!("{:x}", h.finalize()))
    }
}
