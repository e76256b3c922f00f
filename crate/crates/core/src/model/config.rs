use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::pooled_extent;
use crate::{Error, Result};

/// How history items reach the fine-grained interactor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Learned top-K selection with threshold gating.
    Learned,
    /// The K most recent valid items with unit weight.
    Recent,
}

/// Every hyperparameter of the model and its training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub title_len: usize,
    pub max_history: usize,
    /// One dilated conv layer per entry; the level count L is its length.
    pub dilations: Vec<usize>,
    pub kernel_width: usize,
    pub filters: usize,
    pub top_k: usize,
    pub gamma: f64,
    pub select_dim: usize,
    pub selection: SelectionMode,
    pub conv3d_channels: Vec<usize>,
    pub conv3d_kernel: usize,
    pub pool: [usize; 3],
    pub negatives: usize,
    pub dropout: f64,
    pub embed_init: f64,
    pub freeze_embeddings: bool,
    pub lr: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_train: usize,
    pub batch_predict: usize,
    pub sample_shards: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2,
            embed_dim: 300,
            title_len: 20,
            max_history: 50,
            dilations: vec![1, 2, 3],
            kernel_width: 3,
            filters: 150,
            top_k: 5,
            gamma: 0.2,
            select_dim: 150,
            selection: SelectionMode::Learned,
            conv3d_channels: vec![32, 16],
            conv3d_kernel: 3,
            pool: [3, 3, 3],
            negatives: 4,
            dropout: 0.2,
            embed_init: 0.1,
            freeze_embeddings: false,
            lr: 1e-4,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            epochs: 5,
            batch_train: 100,
            batch_predict: 400,
            sample_shards: 4,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by finite-difference gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: 20,
            embed_dim: 6,
            title_len: 6,
            max_history: 6,
            dilations: vec![1, 2],
            filters: 4,
            top_k: 3,
            select_dim: 4,
            conv3d_channels: vec![4, 2],
            negatives: 2,
            ..Self::default()
        }
    }

    /// Desk-scale dimensions for synthetic experiments.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            title_len: 8,
            max_history: 25,
            filters: 32,
            select_dim: 32,
            lr: 1e-3,
            batch_train: 32,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.dilations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("title_len", self.title_len),
            ("max_history", self.max_history),
            ("kernel_width", self.kernel_width),
            ("filters", self.filters),
            ("top_k", self.top_k),
            ("select_dim", self.select_dim),
            ("conv3d_kernel", self.conv3d_kernel),
            ("negatives", self.negatives),
            ("batch_train", self.batch_train),
            ("batch_predict", self.batch_predict),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must cover the padding and unknown ids".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be a non-empty list of positive rates".into()));
        }
        if self.kernel_width.is_multiple_of(2) || self.conv3d_kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel widths must be odd".into()));
        }
        if self.conv3d_channels.is_empty() || self.conv3d_channels.contains(&0) {
            return Err(Error::Config("conv3d_channels must be a non-empty list of positive counts".into()));
        }
        if self.pool.contains(&0) {
            return Err(Error::Config("pool extents must be positive".into()));
        }
        if self.top_k > self.max_history {
            return Err(Error::Config(format!("top_k {} exceeds max_history {}", self.top_k, self.max_history)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !self.gamma.is_finite() || !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("gamma and lr must be finite, lr positive".into()));
        }
        Ok(())
    }

    /// Spatial extents `(K, N, N)` after each conv+pool stage.
    pub fn phi_stages(&self) -> Vec<[usize; 3]> {
        let mut dims = [self.top_k, self.title_len, self.title_len];
        let mut out = Vec::with_capacity(self.conv3d_channels.len());
        for _ in &self.conv3d_channels {
            for (d, s) in dims.iter_mut().zip(self.pool) {
                *d = pooled_extent(*d, s);
            }
            out.push(dims);
        }
        out
    }

    /// Length of the flattened fine-grained feature φ.
    pub fn phi_dim(&self) -> usize {
        let last = self.phi_stages().last().copied().unwrap_or([1, 1, 1]);
        self.conv3d_channels.last().copied().unwrap_or(0) * last.iter().product::<usize>()
    }

    /// Input width of the click predictor: φ followed by one ψ per history slot.
    pub fn predictor_dim(&self) -> usize {
        self.phi_dim() + self.max_history
    }

    /// Hash over every field that determines parameter shapes or forward
    /// semantics. Training-loop settings are excluded.
    pub fn arch_hash(&self) -> [u8; 8] {
        let arch = serde_json::json!({
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "title_len": self.title_len,
            "max_history": self.max_history,
            "dilations": self.dilations,
            "kernel_width": self.kernel_width,
            "filters": self.filters,
            "top_k": self.top_k,
            "gamma": self.gamma.to_bits(),
            "select_dim": self.select_dim,
            "selection": self.selection,
            "conv3d_channels": self.conv3d_channels,
            "conv3d_kernel": self.conv3d_kernel,
            "pool": self.pool,
        });
        let digest = Sha256::digest(arch.to_string().as_bytes());
        digest[..8].try_into().unwrap()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Applies the `key = value` entries of a config file on top of `self`.
    pub fn merge_toml_str(&self, text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            if !base.contains_key(&k) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
            base.insert(k, v);
        }
        base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn merge_file(&self, path: impl AsRef<Path>) -> Result<Self> {
        self.merge_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
