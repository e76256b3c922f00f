//! Title encoder: embedding lookup, stacked dilated convolutions, attentive
//! pooling across levels and then across words.
//!
//! Output per title is the level stack `fine` of shape `[L×N×f_s]` (one level
//! per conv layer) and the pooled news vector `coarse` of shape `[f_s]`.
//! Padded positions take part in convolutions as ordinary tokens but are
//! excluded from word-level pooling.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, RngCore};

use crate::dataio::{NewsRecord, Vocabulary};
use crate::model::ModelConfig;
use crate::numerics::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[width × d_in × f_s]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `[V × D]`
    pub embedding: Tensor,
    pub convs: Vec<ConvLayer>,
    pub layer_query: Tensor,
    pub word_query: Tensor,
}

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let embedding = Tensor::uniform(&[cfg.vocab_size, cfg.embed_dim], -cfg.embed_init, cfg.embed_init, rng);
        let mut d_in = cfg.embed_dim;
        let convs = cfg
            .dilations
            .iter()
            .map(|_| {
                let kernel = fan_in_uniform(&[cfg.kernel_width, d_in, cfg.filters], cfg.kernel_width * d_in, rng);
                d_in = cfg.filters;
                ConvLayer { kernel, bias: Tensor::zeros(&[cfg.filters]) }
            })
            .collect();
        EncoderParams {
            embedding,
            convs,
            layer_query: fan_in_uniform(&[cfg.filters], cfg.filters, rng),
            word_query: fan_in_uniform(&[cfg.filters], cfg.filters, rng),
        }
    }

    pub fn attach<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> EncoderVars {
        let mut leaf = |t: &'a Tensor| if trainable { g.param(t) } else { g.constant(t) };
        EncoderVars {
            embedding: leaf(&self.embedding),
            convs: self.convs.iter().map(|c| (leaf(&c.kernel), leaf(&c.bias))).collect(),
            layer_query: leaf(&self.layer_query),
            word_query: leaf(&self.word_query),
        }
    }

    /// Overwrites embedding rows for tokens found in a GloVe-style text file
    /// (`token v1 … vD` per line). Returns the number of rows loaded.
    pub fn load_glove(&mut self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<usize> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let dim = self.embedding.shape()[1];
        let mut loaded = 0;
        for (n, line) in file.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let id = vocab.id(token);
            if vocab.token(id) != Some(token) {
                continue;
            }
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("glove line {}: {e}", n + 1))))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Data(format!("glove line {}: {} values, expected {dim}", n + 1, values.len())));
            }
            self.embedding.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Encoder parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub convs: Vec<(Var, Var)>,
    pub layer_query: Var,
    pub word_query: Var,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embedding];
        for &(k, b) in &self.convs {
            v.extend([k, b]);
        }
        v.extend([self.layer_query, self.word_query]);
        v
    }
}

pub enum Mode<'r> {
    Eval,
    /// Embedding dropout at `dropout` rate, masks drawn from `rng`.
    Train {
        dropout: f64,
        rng: &'r mut dyn RngCore,
    },
}

/// Graph handles for one encoded title.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    /// `[L × N × f_s]`
    pub fine: Var,
    /// `[f_s]`
    pub coarse: Var,
    /// `[N × L]` level-attention weights.
    pub layer_weights: Var,
    /// `[N]` word-attention weights; `None` for an all-padding title.
    pub word_weights: Option<Var>,
    /// Set when no real token exists: the coarse vector is then zero.
    pub degenerate: bool,
}

/// Frozen-parameter encoding of one news title.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedNews {
    pub fine: Tensor,
    pub coarse: Tensor,
    pub token_mask: Vec<bool>,
    pub degenerate: bool,
}

pub fn embed(g: &mut Graph<'_>, vars: &EncoderVars, tokens: &[usize], mode: &mut Mode<'_>) -> Result<Var> {
    let rows: Vec<Option<usize>> = tokens.iter().map(|&t| Some(t)).collect();
    let e = g.gather(vars.embedding, &rows)?;
    match mode {
        Mode::Eval => Ok(e),
        Mode::Train { dropout, rng } => {
            if *dropout == 0.0 {
                return Ok(e);
            }
            let keep = 1.0 - *dropout;
            let mask: Vec<f64> =
                (0..g.value(e).numel()).map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }).collect();
            let mask = g.leaf(Tensor::new(g.shape(e).to_vec(), mask)?, false);
            Ok(g.mul(e, mask)?)
        }
    }
}

pub fn encode_title(
    g: &mut Graph<'_>,
    vars: &EncoderVars,
    cfg: &ModelConfig,
    tokens: &[usize],
    mask: &[bool],
    mode: &mut Mode<'_>,
) -> Result<EncodedVars> {
    let n = cfg.title_len;
    let f = cfg.filters;
    let levels = cfg.levels();
    if tokens.len() != n || mask.len() != n {
        return Err(Error::Config(format!("title has {} tokens, expected {n}", tokens.len())));
    }
    let mut h = embed(g, vars, tokens, mode)?;
    let mut outputs = Vec::with_capacity(levels);
    for (&(kernel, bias), &dilation) in vars.convs.iter().zip(&cfg.dilations) {
        h = g.conv1d_dilated(h, kernel, bias, dilation)?;
        outputs.push(h);
    }
    let fine = g.stack(&outputs)?;

    // Level attention: a softmax over the L levels of each word.
    let flat = g.reshape(fine, &[levels * n, f])?;
    let ql = g.reshape(vars.layer_query, &[f, 1])?;
    let logits = g.matmul(flat, ql)?;
    let logits = g.reshape(logits, &[levels, n])?;
    let logits = g.permute(logits, &[1, 0])?;
    let layer_weights = g.softmax(logits, None)?;
    let by_word = g.permute(fine, &[1, 0, 2])?;
    let lw = g.reshape(layer_weights, &[n, 1, levels])?;
    let mixed = g.bmm(lw, by_word)?;
    let mixed = g.reshape(mixed, &[n, f])?;

    if !mask.iter().any(|&m| m) {
        let coarse = g.leaf(Tensor::zeros(&[f]), false);
        return Ok(EncodedVars { fine, coarse, layer_weights, word_weights: None, degenerate: true });
    }

    // Word attention over real tokens only.
    let qw = g.reshape(vars.word_query, &[f, 1])?;
    let wl = g.matmul(mixed, qw)?;
    let wl = g.reshape(wl, &[n])?;
    let word_weights = g.softmax(wl, Some(mask))?;
    let ww = g.reshape(word_weights, &[1, n])?;
    let coarse = g.matmul(ww, mixed)?;
    let coarse = g.reshape(coarse, &[f])?;
    Ok(EncodedVars { fine, coarse, layer_weights, word_weights: Some(word_weights), degenerate: false })
}

/// Eval-mode encoding with frozen parameters.
pub fn encode_news(params: &EncoderParams, cfg: &ModelConfig, record: &NewsRecord) -> Result<EncodedNews> {
    let mut g = Graph::new();
    let vars = params.attach(&mut g, false);
    let mask = record.token_mask();
    let enc = encode_title(&mut g, &vars, cfg, &record.title_tokens, &mask, &mut Mode::Eval)?;
    Ok(EncodedNews {
        fine: g.value(enc.fine).clone(),
        coarse: g.value(enc.coarse).clone(),
        token_mask: mask,
        degenerate: enc.degenerate,
    })
}

/// Offline encodings of every news item in a store, keyed by store index.
#[derive(Clone, Debug, Default)]
pub struct EncodedCache {
    pub entries: HashMap<usize, EncodedNews>,
}

impl EncodedCache {
    pub fn build<'n>(
        params: &EncoderParams,
        cfg: &ModelConfig,
        news: impl IntoIterator<Item = (usize, &'n NewsRecord)>,
    ) -> Result<Self> {
        use rayon::prelude::*;
        let items: Vec<(usize, &NewsRecord)> = news.into_iter().collect();
        let entries = items
            .par_iter()
            .map(|&(i, r)| encode_news(params, cfg, r).map(|e| (i, e)))
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(EncodedCache { entries })
    }

    pub fn get(&self, idx: usize) -> Option<&EncodedNews> {
        self.entries.get(&idx)
    }
}
