use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::forward::{encode_in_graph, history_vars, sampled_softmax_loss, score_graph, NewsVars};
use super::{ModelConfig, ModelParams};
use crate::dataio::{history_slots, NewsStore, TrainSample};
use crate::encoder::Mode;
use crate::numerics::{Graph, NumericsError};
use crate::{Error, Result};

/// Adam moments aligned with [`ModelParams::named`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.named().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected update. A zero gradient leaves a parameter whose
    /// moments are also zero untouched.
    pub fn update(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], cfg: &ModelConfig) {
        self.step += 1;
        let [b1, b2] = cfg.adam_betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((_, t), g), (m, v)) in params.named_mut().into_iter().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Loss and per-tensor gradients for one training sample.
pub struct SampleGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    /// Distance of the forward pass to the nearest kink (ReLU, pooling tie,
    /// top-K cut or gate threshold).
    pub margin: f64,
    /// Hash of the same non-smooth decisions; see [`Graph::pattern`].
    pub pattern: u64,
}

fn describe(sample: &TrainSample) -> String {
    format!("history {:?}, positive {}, negatives {:?}", sample.history, sample.positive, sample.negatives)
}

/// Builds the graph for one sample (positive at index 0) and back-propagates.
pub fn sample_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    store: &NewsStore,
    sample: &TrainSample,
    mode: &mut Mode<'_>,
) -> Result<SampleGrad> {
    let wrap = |e: Error| match e {
        Error::Numerics(NumericsError::NonFinite(op)) => Error::NonFiniteLoss {
            sample: sample.impression_id.clone(),
            detail: format!("{op} produced a non-finite value; {}", describe(sample)),
        },
        other => other,
    };
    let run = |mode: &mut Mode<'_>| -> Result<SampleGrad> {
        let mut g = Graph::new();
        let vars = params.attach(&mut g, true, cfg.freeze_embeddings);
        let (slots, valid) = history_slots(&sample.history, cfg.max_history);
        let mut hist: Vec<Option<NewsVars>> = Vec::with_capacity(slots.len());
        for (&s, &v) in slots.iter().zip(&valid) {
            hist.push(if v { Some(encode_in_graph(&mut g, &vars, cfg, store, s, mode)?) } else { None });
        }
        let hv = history_vars(&mut g, cfg, &hist)?;
        let mut scores = Vec::with_capacity(1 + sample.negatives.len());
        for &c in std::iter::once(&sample.positive).chain(&sample.negatives) {
            let cv = encode_in_graph(&mut g, &vars, cfg, store, c, mode)?;
            scores.push(score_graph(&mut g, &vars, cfg, &hv, cv)?.score);
        }
        let loss = sampled_softmax_loss(&mut g, scores[0], &scores[1..])?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { sample: sample.impression_id.clone(), detail: describe(sample) });
        }
        g.backward(loss)?;
        let grads = vars
            .all()
            .into_iter()
            .zip(params.named())
            .map(|(v, (_, t))| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok(SampleGrad { loss: value, grads, margin: g.margin(), pattern: g.pattern() })
    };
    run(mode).map_err(wrap)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
    pub batches: usize,
}

fn sample_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (position as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// One pass over `samples` in a seeded shuffled order. Gradients inside a
/// minibatch may be computed in parallel; every sample draws dropout from its
/// own seeded generator and the batch is reduced in order, so results do not
/// depend on the thread count.
pub fn train_epoch(
    params: &mut ModelParams,
    adam: &mut Adam,
    cfg: &ModelConfig,
    store: &NewsStore,
    samples: &[TrainSample],
    epoch: usize,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, usize::MAX)));
    let mut total = 0.0;
    let mut batches = 0;
    for (b, batch) in order.chunks(cfg.batch_train).enumerate() {
        let frozen: &ModelParams = params;
        let results: Vec<Result<SampleGrad>> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, b * cfg.batch_train + j));
                let mut mode = Mode::Train { dropout: cfg.dropout, rng: &mut rng };
                sample_gradient(frozen, cfg, store, &samples[i], &mut mode)
            })
            .collect();
        let mut sum: Option<Vec<Vec<f64>>> = None;
        for r in results {
            let sg = r?;
            total += sg.loss;
            match &mut sum {
                None => sum = Some(sg.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&sg.grads) {
                        for (x, y) in a.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mut grads = sum.expect("chunks are non-empty");
        let scale = 1.0 / batch.len() as f64;
        for x in grads.iter_mut().flatten() {
            *x *= scale;
        }
        adam.update(params, &grads, cfg);
        batches += 1;
    }
    let n = samples.len();
    Ok(EpochStats { epoch, mean_loss: if n == 0 { 0.0 } else { total / n as f64 }, samples: n, batches })
}

/// Mean eval-mode loss over `samples` with the current parameters.
pub fn mean_loss(params: &ModelParams, cfg: &ModelConfig, store: &NewsStore, samples: &[TrainSample]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_gradient(params, cfg, store, s, &mut Mode::Eval).map(|g| g.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Runs `cfg.epochs` epochs, reporting each one to `on_epoch`.
pub fn fit(
    params: &mut ModelParams,
    adam: &mut Adam,
    cfg: &ModelConfig,
    store: &NewsStore,
    samples: &[TrainSample],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    (0..cfg.epochs)
        .map(|e| {
            let s = train_epoch(params, adam, cfg, store, samples, e)?;
            on_epoch(&s);
            Ok(s)
        })
        .collect()
}
