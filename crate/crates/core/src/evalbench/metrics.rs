use serde::{Deserialize, Serialize};

/// Scores for one impression, aligned with its candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpressionResult {
    pub impression_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Candidate positions by descending score; ties keep candidate order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// 1-based rank of each candidate, in candidate order.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut r = vec![0; scores.len()];
    for (pos, i) in ranking(scores).into_iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

/// Probability that a random positive outscores a random negative; ties
/// count one half. `None` without both classes.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney with midranks over tie groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] > 0).count() as f64 * mid;
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l > 0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Mean reciprocal rank of the positives.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let order = ranking(scores);
    let mut total = 0.0;
    let mut n = 0;
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] > 0 {
            total += 1.0 / (pos + 1) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

fn dcg(labels_in_order: impl Iterator<Item = u8>, k: usize) -> f64 {
    labels_in_order.take(k).enumerate().map(|(p, l)| (2f64.powi(i32::from(l)) - 1.0) / ((p + 2) as f64).log2()).sum()
}

pub fn ndcg_at(scores: &[f64], labels: &[u8], k: usize) -> Option<f64> {
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter(), k);
    if best == 0.0 {
        return None;
    }
    Some(dcg(ranking(scores).into_iter().map(|i| labels[i]), k) / best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    pub n_skipped: usize,
}

/// Means over impressions that have both a click and a non-click; the rest
/// are skipped and counted.
pub fn summarize(results: &[ImpressionResult]) -> MetricSummary {
    let mut s = MetricSummary::default();
    for r in results {
        let Some(a) = auc(&r.scores, &r.labels) else {
            s.n_skipped += 1;
            continue;
        };
        s.auc += a;
        s.mrr += mrr(&r.scores, &r.labels).unwrap_or(0.0);
        s.ndcg5 += ndcg_at(&r.scores, &r.labels, 5).unwrap_or(0.0);
        s.ndcg10 += ndcg_at(&r.scores, &r.labels, 10).unwrap_or(0.0);
        s.n_impressions += 1;
    }
    if s.n_impressions > 0 {
        let n = s.n_impressions as f64;
        s.auc /= n;
        s.mrr /= n;
        s.ndcg5 /= n;
        s.ndcg10 /= n;
    }
    s
}
