//! Ranking metrics, batch evaluation, the throughput benchmark and the
//! informativeness-by-position analysis.

mod bench;
mod metrics;
mod profile;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

pub use bench::{r_squared, run_benchmark, BenchOptions, BenchReport};
pub use metrics::{auc, mrr, ndcg_at, ranking, ranks, summarize, ImpressionResult, MetricSummary};
pub use profile::{informativeness_profile, render_profile_svg, write_profile_csv, PositionStat};

use crate::dataio::ResolvedImpression;
use crate::encoder::EncodedCache;
use crate::model::{score_cached, ModelConfig, ModelParams, ScoreTrace};
use crate::Result;

/// Eval-mode traces for every candidate of every impression.
pub fn score_impressions(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
) -> Result<Vec<Vec<ScoreTrace>>> {
    impressions
        .par_iter()
        .map(|imp| {
            let cands: Vec<usize> = imp.candidates.iter().map(|c| c.0).collect();
            score_cached(params, cfg, cache, &imp.history, &cands)
        })
        .collect()
}

/// Scores and metrics over labeled impressions; unlabeled ones are skipped.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
) -> Result<(Vec<ImpressionResult>, MetricSummary)> {
    let labeled: Vec<ResolvedImpression> =
        impressions.iter().filter(|i| i.candidates.iter().all(|c| c.1.is_some())).cloned().collect();
    let traces = score_impressions(params, cfg, cache, &labeled)?;
    let results: Vec<ImpressionResult> = labeled
        .iter()
        .zip(traces)
        .map(|(imp, t)| ImpressionResult {
            impression_id: imp.impression_id.clone(),
            scores: t.iter().map(|s| s.score).collect(),
            labels: imp.candidates.iter().map(|c| c.1.unwrap_or(0)).collect(),
        })
        .collect();
    let mut summary = summarize(&results);
    summary.n_skipped += impressions.len() - labeled.len();
    Ok((results, summary))
}

/// One line per impression: `id [r1,r2,...]` with the 1-based rank of each
/// candidate in candidate order.
pub fn write_predictions<'s, W: Write>(
    mut w: W,
    rows: impl IntoIterator<Item = (&'s str, &'s [f64])>,
) -> std::io::Result<()> {
    for (id, scores) in rows {
        let r: Vec<String> = ranks(scores).iter().map(usize::to_string).collect();
        writeln!(w, "{id} [{}]", r.join(","))?;
    }
    Ok(())
}

/// Mean fraction of selected history positions that are planted, measured on
/// the clicked candidates of impressions listed in `planted`.
pub fn planted_precision(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
    planted: &BTreeMap<String, Vec<usize>>,
) -> Result<f64> {
    let relevant: Vec<&ResolvedImpression> =
        impressions.iter().filter(|i| planted.contains_key(&i.impression_id)).collect();
    let per_imp: Vec<Option<f64>> = relevant
        .par_iter()
        .map(|imp| {
            let clicked: Vec<usize> = imp.candidates.iter().filter(|c| c.1 == Some(1)).map(|c| c.0).collect();
            let traces = score_cached(params, cfg, cache, &imp.history, &clicked)?;
            let truth = &planted[&imp.impression_id];
            let mut hits = 0usize;
            let mut total = 0usize;
            for t in &traces {
                for &i in t.indices.iter().flatten() {
                    total += 1;
                    hits += usize::from(truth.contains(&i));
                }
            }
            Ok((total > 0).then(|| hits as f64 / total as f64))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = per_imp.into_iter().flatten().collect();
    Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
}

/// Metrics and the mean fraction of selected items passing the gate, for each
/// threshold in `gammas`, with all other parameters fixed.
pub fn threshold_sweep(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
    gammas: &[f64],
) -> Result<Vec<(f64, MetricSummary, f64)>> {
    gammas
        .iter()
        .map(|&gamma| {
            let c = ModelConfig { gamma, ..cfg.clone() };
            let (_, summary) = evaluate(params, &c, cache, impressions)?;
            let traces = score_impressions(params, &c, cache, impressions)?;
            let (mut active, mut slots) = (0usize, 0usize);
            for t in traces.iter().flatten() {
                for (w, i) in t.soft_weights.iter().zip(&t.indices) {
                    if i.is_some() {
                        slots += 1;
                        active += usize::from(*w != 0.0);
                    }
                }
            }
            Ok((gamma, summary, active as f64 / slots.max(1) as f64))
        })
        .collect()
}
