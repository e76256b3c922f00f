use std::time::{Duration, Instant};

use serde::Serialize;

use super::{evaluate, MetricSummary};
use crate::dataio::ResolvedImpression;
use crate::encoder::EncodedCache;
use crate::model::{score_cached, ModelConfig, ModelParams, SelectionMode};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub warmup: Duration,
    pub duration: Duration,
    /// 1 keeps scoring on the calling thread.
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { warmup: Duration::from_secs(5), duration: Duration::from_secs(30), threads: 1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    /// `SFI(K)` or `Recent(K)`.
    pub mode: String,
    pub k: usize,
    pub threads: usize,
    pub candidates_per_iteration: usize,
    pub iterations: usize,
    pub iterations_per_second: f64,
    pub measured_secs: f64,
    pub warmup_secs: f64,
    pub iter_ms_mean: f64,
    pub iter_ms_std: f64,
    pub iter_ms_min: f64,
    pub iter_ms_max: f64,
    pub interactor_flops_per_candidate: f64,
    pub metrics: MetricSummary,
}

/// Impression-grouped slices of one iteration's candidates.
type Batch = Vec<(usize, Vec<usize>)>;

fn batches(impressions: &[ResolvedImpression], per_iter: usize) -> Vec<Batch> {
    let flat: Vec<(usize, usize)> =
        impressions.iter().enumerate().flat_map(|(i, imp)| imp.candidates.iter().map(move |c| (i, c.0))).collect();
    let n_batches = flat.len().div_ceil(per_iter).max(1);
    (0..n_batches)
        .map(|b| {
            let mut out: Batch = Vec::new();
            for j in 0..per_iter {
                let (imp, cand) = flat[(b * per_iter + j) % flat.len()];
                match out.last_mut() {
                    Some((i, cs)) if *i == imp => cs.push(cand),
                    _ => out.push((imp, vec![cand])),
                }
            }
            out
        })
        .collect()
}

fn run_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
    batch: &Batch,
    pool: Option<&rayon::ThreadPool>,
) -> Result<u64> {
    let one = |(i, cands): &(usize, Vec<usize>)| -> Result<u64> {
        let t = score_cached(params, cfg, cache, &impressions[*i].history, cands)?;
        Ok(t.iter().map(|s| s.interactor_flops).sum())
    };
    match pool {
        None => batch.iter().map(one).sum(),
        Some(p) => {
            use rayon::prelude::*;
            p.install(|| batch.par_iter().map(one).sum())
        }
    }
}

/// Throughput of eval-mode scoring over a shared encoded cache. One
/// iteration scores `batch_predict` candidates; the warmup is discarded.
pub fn run_benchmark(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
    opts: BenchOptions,
) -> Result<BenchReport> {
    if opts.duration < opts.warmup {
        return Err(Error::Config(format!(
            "duration {:?} is shorter than the warmup {:?}",
            opts.duration, opts.warmup
        )));
    }
    if impressions.iter().all(|i| i.candidates.is_empty()) {
        return Err(Error::Data("benchmark workload has no candidates".into()));
    }
    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let work = batches(impressions, cfg.batch_predict);
    let mut next = 0;
    let warm_start = Instant::now();
    while warm_start.elapsed() < opts.warmup {
        run_batch(params, cfg, cache, impressions, &work[next % work.len()], pool.as_ref())?;
        next += 1;
    }
    let warmup_secs = warm_start.elapsed().as_secs_f64();
    let mut times = Vec::new();
    let mut flops = 0u64;
    let start = Instant::now();
    while start.elapsed() < opts.duration {
        let t = Instant::now();
        flops += run_batch(params, cfg, cache, impressions, &work[next % work.len()], pool.as_ref())?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        next += 1;
    }
    let measured_secs = start.elapsed().as_secs_f64();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (_, metrics) = evaluate(params, cfg, cache, impressions)?;
    let label = match cfg.selection {
        SelectionMode::Learned => "SFI",
        SelectionMode::Recent => "Recent",
    };
    Ok(BenchReport {
        mode: format!("{label}({})", cfg.top_k),
        k: cfg.top_k,
        threads: opts.threads.max(1),
        candidates_per_iteration: cfg.batch_predict,
        iterations: times.len(),
        iterations_per_second: n / measured_secs,
        measured_secs,
        warmup_secs,
        iter_ms_mean: mean,
        iter_ms_std: std,
        iter_ms_min: times.iter().copied().fold(f64::INFINITY, f64::min),
        iter_ms_max: times.iter().copied().fold(0.0, f64::max),
        interactor_flops_per_candidate: flops as f64 / (n * cfg.batch_predict as f64),
        metrics,
    })
}

/// Coefficient of determination of the least-squares line through `points`.
pub fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}
