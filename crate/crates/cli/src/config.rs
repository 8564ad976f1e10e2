//! Run configuration: one TOML file per experiment, diff-able.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dscn_core::arprior::ArConfig;
use dscn_core::error::Error;
use dscn_core::evalpipe::ClassifierConfig;
use dscn_core::seddprior::{ScheduleKind, SeddConfig};
use dscn_core::siggen::{ModulationScheme, PulseShaping, WaveformConfig};
use dscn_core::vqvae::VqvaeConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub classes: Vec<String>,
    #[serde(default = "default_n_train")]
    pub n_train_per_class: usize,
    #[serde(default = "default_n_val")]
    pub n_val_per_class: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval_per_class: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_sps")]
    pub sps: usize,
    /// Root-raised-cosine roll-off; 0 disables pulse shaping.
    #[serde(default = "default_rolloff")]
    pub rrc_rolloff: f64,
    /// Optional AWGN level (dB SNR); omitted = noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

fn default_n_train() -> usize {
    512
}
fn default_n_val() -> usize {
    128
}
fn default_n_eval() -> usize {
    192
}
fn default_p() -> usize {
    1024
}
fn default_sps() -> usize {
    4
}
fn default_rolloff() -> f64 {
    0.35
}

impl DatasetSection {
    pub fn schemes(&self) -> Result<Vec<ModulationScheme>, Error> {
        if self.classes.is_empty() {
            return Err(Error::Config("dataset.classes is empty".into()));
        }
        self.classes.iter().map(|c| c.parse()).collect()
    }

    pub fn waveform(&self) -> WaveformConfig {
        WaveformConfig {
            sps: self.sps,
            shaping: if self.rrc_rolloff > 0.0 {
                PulseShaping::Rrc {
                    rolloff: self.rrc_rolloff,
                    span: 8,
                }
            } else {
                PulseShaping::None
            },
            snr_db: self.snr_db,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqvaeSection {
    #[serde(default = "d64")]
    pub n_codewords: usize,
    #[serde(default = "d32")]
    pub codeword_dim: usize,
    #[serde(default = "d128")]
    pub latent_len: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub stochastic_tau: f64,
    #[serde(default = "default_vq_epochs")]
    pub epochs: usize,
    #[serde(default = "d16")]
    pub batch_size: usize,
    #[serde(default = "default_vq_lr")]
    pub lr: f64,
}

fn d16() -> usize {
    16
}
fn d32() -> usize {
    32
}
fn d64() -> usize {
    64
}
fn d128() -> usize {
    128
}
fn default_beta() -> f64 {
    0.25
}
fn default_tau() -> f64 {
    1.0
}
fn default_vq_epochs() -> usize {
    18
}
fn default_vq_lr() -> f64 {
    2e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(default = "d4")]
    pub n_layers: usize,
    #[serde(default = "d4")]
    pub n_heads: usize,
    #[serde(default = "d128")]
    pub width: usize,
    #[serde(default = "default_prior_epochs")]
    pub epochs: usize,
    #[serde(default = "d16")]
    pub batch_size: usize,
    #[serde(default = "default_prior_lr")]
    pub lr: f64,
    /// Diffusion-only keys; ignored by the autoregressive prior.
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
}

fn d4() -> usize {
    4
}
fn default_prior_epochs() -> usize {
    30
}
fn default_prior_lr() -> f64 {
    1e-3
}
fn default_schedule() -> String {
    "linear".into()
}
fn default_steps() -> usize {
    64
}

impl PriorSection {
    pub fn schedule_kind(&self) -> Result<ScheduleKind, Error> {
        match self.schedule.as_str() {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!(
                "sedd.schedule must be linear or cosine, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "default_clf_epochs")]
    pub epochs: usize,
    #[serde(default = "d16")]
    pub batch_size: usize,
    #[serde(default = "default_prior_lr")]
    pub lr: f64,
}

fn default_clf_epochs() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Received-token exponents for the truncation grid: `t_e = 2^x`.
    #[serde(default = "default_exponents")]
    pub truncation_exponents: Vec<u32>,
    /// Contiguous-drop lengths for the puncture grid (`keep 1 in i+1`).
    #[serde(default = "default_bursts")]
    pub burst_lengths: Vec<usize>,
    /// Transmissions per sweep point (a slice of the eval split).
    #[serde(default = "default_sweep_n")]
    pub n_eval: usize,
    #[serde(default = "d32kb")]
    pub batch_size: usize,
}

fn default_exponents() -> Vec<u32> {
    vec![0, 1, 2, 3, 4, 5, 6, 7]
}
fn default_bursts() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}
fn default_sweep_n() -> usize {
    512
}
fn d32kb() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub vqvae: VqvaeSection,
    pub dot: PriorSection,
    pub sedd: PriorSection,
    pub classifier: ClassifierSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let schemes = self.dataset.schemes()?;
        if self.dataset.p % self.vqvae.latent_len != 0
            || !(self.dataset.p / self.vqvae.latent_len).is_power_of_two()
        {
            return Err(Error::Config(format!(
                "dataset.p = {} must be latent_len * 2^k (latent_len = {})",
                self.dataset.p, self.vqvae.latent_len
            )));
        }
        if self.dataset.p % 16 != 0 {
            return Err(Error::Config(
                "dataset.p must be divisible by 16 for the classifier".into(),
            ));
        }
        let d_s = self.vqvae.latent_len;
        for &x in &self.sweep.truncation_exponents {
            if (1usize << x) > d_s {
                return Err(Error::Config(format!(
                    "truncation exponent {x}: 2^{x} exceeds d_s = {d_s}"
                )));
            }
        }
        let _ = self.sedd.schedule_kind()?;
        let _ = schemes;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.dataset.classes.len()
    }

    pub fn vqvae_config(&self) -> VqvaeConfig {
        VqvaeConfig {
            n_codewords: self.vqvae.n_codewords,
            codeword_dim: self.vqvae.codeword_dim,
            latent_len: self.vqvae.latent_len,
            p: self.dataset.p,
            beta: self.vqvae.beta,
            stochastic_tau: self.vqvae.stochastic_tau,
            epochs: self.vqvae.epochs,
            batch_size: self.vqvae.batch_size,
            lr: self.vqvae.lr,
            seed: self.seed,
        }
    }

    pub fn ar_config(&self) -> ArConfig {
        ArConfig {
            n_codewords: self.vqvae.n_codewords,
            n_classes: self.n_classes(),
            d_s: self.vqvae.latent_len,
            n_layers: self.dot.n_layers,
            n_heads: self.dot.n_heads,
            width: self.dot.width,
            epochs: self.dot.epochs,
            batch_size: self.dot.batch_size,
            lr: self.dot.lr,
            seed: self.seed,
        }
    }

    pub fn sedd_config(&self) -> Result<SeddConfig, Error> {
        Ok(SeddConfig {
            n_codewords: self.vqvae.n_codewords,
            n_classes: self.n_classes(),
            d_s: self.vqvae.latent_len,
            n_layers: self.sedd.n_layers,
            n_heads: self.sedd.n_heads,
            width: self.sedd.width,
            schedule: self.sedd.schedule_kind()?,
            n_steps: self.sedd.n_steps,
            epochs: self.sedd.epochs,
            batch_size: self.sedd.batch_size,
            lr: self.sedd.lr,
            seed: self.seed,
        })
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            n_classes: self.n_classes(),
            p: self.dataset.p,
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            lr: self.classifier.lr,
            seed: self.seed,
        }
    }

    /// FNV-1a hash of the canonical (re-serialized) config text.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// A ready-to-edit template with the desk defaults.
pub fn example_config() -> &'static str {
    r#"seed = 7
# out_dir = "out"

[dataset]
classes = ["ASK4", "PSK16", "FSK2"]
n_train_per_class = 512
n_val_per_class = 128
n_eval_per_class = 192
p = 1024
sps = 4
rrc_rolloff = 0.35
# snr_db = 20.0

[vqvae]
n_codewords = 64
codeword_dim = 32
latent_len = 128
beta = 0.25
stochastic_tau = 1.0
epochs = 18
batch_size = 16
lr = 2e-3

[dot]
n_layers = 4
n_heads = 4
width = 128
epochs = 30
batch_size = 16
lr = 1e-3

[sedd]
schedule = "linear"
n_steps = 64
n_layers = 4
n_heads = 4
width = 128
epochs = 30
batch_size = 16
lr = 1e-3

[classifier]
epochs = 10
batch_size = 16
lr = 1e-3

[sweep]
truncation_exponents = [0, 1, 2, 3, 4, 5, 6, 7]
burst_lengths = [1, 2, 4, 8, 16, 32]
n_eval = 512
batch_size = 32
"#
}
