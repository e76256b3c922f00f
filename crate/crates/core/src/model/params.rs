use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::encoder::{EncoderParams, EncoderVars};
use crate::interactor::{InteractorParams, InteractorVars};
use crate::numerics::{Graph, Tensor, Var};
use crate::selector::{SelectorParams, SelectorVars};
use crate::{Error, Result};

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub selector: SelectorParams,
    pub interactor: InteractorParams,
    /// `[1 × (F_φ + M_max)]`
    pub predictor_weight: Tensor,
    /// `[1]`
    pub predictor_bias: Tensor,
}

impl ModelParams {
    /// Seeded initialization; identical seeds give identical parameters.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(cfg, &mut rng);
        let selector = SelectorParams::init(cfg, &mut rng);
        let interactor = InteractorParams::init(cfg, &mut rng);
        let p = cfg.predictor_dim();
        let bound = 1.0 / (p as f64).sqrt();
        Ok(ModelParams {
            encoder,
            selector,
            interactor,
            predictor_weight: Tensor::uniform(&[1, p], -bound, bound, &mut rng),
            predictor_bias: Tensor::zeros(&[1]),
        })
    }

    /// Every tensor with its dotted name, in a fixed order shared by
    /// [`ModelParams::named_mut`], [`ModelVars::all`] and checkpoints.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.encoder.embedding)];
        for (i, c) in self.encoder.convs.iter().enumerate() {
            out.push((format!("encoder.conv.{i}.kernel"), &c.kernel));
            out.push((format!("encoder.conv.{i}.bias"), &c.bias));
        }
        out.push(("encoder.layer_query".into(), &self.encoder.layer_query));
        out.push(("encoder.word_query".into(), &self.encoder.word_query));
        out.push(("selector.proj.weight".into(), &self.selector.weight));
        out.push(("selector.proj.bias".into(), &self.selector.bias));
        for (i, k) in self.interactor.kernels.iter().enumerate() {
            out.push((format!("interactor.conv3d.{i}.kernel"), k));
        }
        out.push(("predictor.weight".into(), &self.predictor_weight));
        out.push(("predictor.bias".into(), &self.predictor_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &mut self.encoder.embedding)];
        for (i, c) in self.encoder.convs.iter_mut().enumerate() {
            out.push((format!("encoder.conv.{i}.kernel"), &mut c.kernel));
            out.push((format!("encoder.conv.{i}.bias"), &mut c.bias));
        }
        out.push(("encoder.layer_query".into(), &mut self.encoder.layer_query));
        out.push(("encoder.word_query".into(), &mut self.encoder.word_query));
        out.push(("selector.proj.weight".into(), &mut self.selector.weight));
        out.push(("selector.proj.bias".into(), &mut self.selector.bias));
        for (i, k) in self.interactor.kernels.iter_mut().enumerate() {
            out.push((format!("interactor.conv3d.{i}.kernel"), k));
        }
        out.push(("predictor.weight".into(), &mut self.predictor_weight));
        out.push(("predictor.bias".into(), &mut self.predictor_bias));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Replaces the tensor called `name`; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let mut named = self.named_mut();
        let slot = named
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if slot.1.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.1.shape(),
                value.shape()
            )));
        }
        *slot.1 = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every tensor on `g`. Frozen tensors become constants and
    /// receive no gradient.
    pub fn attach<'a>(&'a self, g: &mut Graph<'a>, trainable: bool, freeze_embeddings: bool) -> ModelVars {
        let mut encoder = self.encoder.attach(g, trainable);
        if trainable && freeze_embeddings {
            encoder.embedding = g.constant(&self.encoder.embedding);
        }
        let selector = self.selector.attach(g, trainable);
        let interactor = self.interactor.attach(g, trainable);
        let (w_c, b_c) = if trainable {
            (g.param(&self.predictor_weight), g.param(&self.predictor_bias))
        } else {
            (g.constant(&self.predictor_weight), g.constant(&self.predictor_bias))
        };
        ModelVars { encoder, selector, interactor, w_c, b_c }
    }
}

/// Graph handles for every model tensor.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub selector: SelectorVars,
    pub interactor: InteractorVars,
    pub w_c: Var,
    pub b_c: Var,
}

impl ModelVars {
    /// Same order as [`ModelParams::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        v.extend([self.selector.weight, self.selector.bias]);
        v.extend(self.interactor.kernels.iter().copied());
        v.extend([self.w_c, self.b_c]);
        v
    }
}
