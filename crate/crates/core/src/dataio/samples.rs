use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tsv::{Impression, RawNews};
use super::vocab::{Vocabulary, PAD_ID};

/// A news title as padded token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewsRecord {
    pub news_id: String,
    pub title_tokens: Vec<usize>,
    pub real_len: usize,
    pub raw_title: String,
}

impl NewsRecord {
    pub fn token_mask(&self) -> Vec<bool> {
        (0..self.title_tokens.len()).map(|i| i < self.real_len).collect()
    }
}

/// Index of the all-padding pseudo-news that stands in for unknown ids.
pub const UNKNOWN_NEWS: usize = 0;

/// All news titles, addressable by dense index. Index 0 is reserved for the
/// all-padding pseudo-news used for unknown ids and padding slots.
#[derive(Clone, Debug)]
pub struct NewsStore {
    records: Vec<NewsRecord>,
    index: HashMap<String, usize>,
    title_len: usize,
}

impl NewsStore {
    /// Duplicate ids: the later row wins. Returns the store and the duplicate count.
    pub fn build(rows: &[RawNews], vocab: &Vocabulary, title_len: usize) -> (Self, usize) {
        let mut store = NewsStore {
            records: vec![NewsRecord {
                news_id: String::new(),
                title_tokens: vec![PAD_ID; title_len],
                real_len: 0,
                raw_title: String::new(),
            }],
            index: HashMap::new(),
            title_len,
        };
        let mut duplicates = 0;
        for row in rows {
            let (title_tokens, real_len) = vocab.encode(&row.title, title_len);
            let rec = NewsRecord { news_id: row.news_id.clone(), title_tokens, real_len, raw_title: row.title.clone() };
            match store.index.get(&row.news_id) {
                Some(&i) => {
                    duplicates += 1;
                    store.records[i] = rec;
                }
                None => {
                    store.index.insert(row.news_id.clone(), store.records.len());
                    store.records.push(rec);
                }
            }
        }
        (store, duplicates)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.len() <= 1
    }

    pub fn title_len(&self) -> usize {
        self.title_len
    }

    pub fn get(&self, idx: usize) -> &NewsRecord {
        &self.records[idx]
    }

    pub fn records(&self) -> &[NewsRecord] {
        &self.records
    }

    pub fn lookup(&self, news_id: &str) -> usize {
        self.index.get(news_id).copied().unwrap_or(UNKNOWN_NEWS)
    }

    pub fn resolve(&self, imp: &Impression) -> ResolvedImpression {
        ResolvedImpression {
            impression_id: imp.impression_id.clone(),
            history: imp.history.iter().map(|id| self.lookup(id)).collect(),
            candidates: imp.candidates.iter().map(|c| (self.lookup(&c.news_id), c.label)).collect(),
        }
    }
}

/// Vocabulary and news store built together from news rows.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub store: NewsStore,
    pub duplicates: usize,
}

impl Corpus {
    /// Vocabulary over all titles, then the store at `title_len`.
    pub fn from_rows(rows: &[RawNews], title_len: usize) -> Self {
        let vocab = Vocabulary::from_titles(rows);
        let (store, duplicates) = NewsStore::build(rows, &vocab, title_len);
        Corpus { vocab, store, duplicates }
    }

    pub fn resolve_all(&self, imps: &[Impression]) -> Vec<ResolvedImpression> {
        imps.iter().map(|i| self.store.resolve(i)).collect()
    }
}

/// Impression with news ids replaced by store indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedImpression {
    pub impression_id: String,
    /// Most-recent-first; [`UNKNOWN_NEWS`] marks an unresolvable id.
    pub history: Vec<usize>,
    pub candidates: Vec<(usize, Option<u8>)>,
}

/// History slots padded to `max_history`, with a validity mask.
pub fn history_slots(history: &[usize], max_history: usize) -> (Vec<usize>, Vec<bool>) {
    let mut slots: Vec<usize> = history.iter().copied().take(max_history).collect();
    slots.resize(max_history, UNKNOWN_NEWS);
    let valid = slots.iter().map(|&s| s != UNKNOWN_NEWS).collect();
    (slots, valid)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSample {
    pub impression_id: String,
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSkip {
    NoNegatives,
    Unlabeled,
}

/// One sample per clicked candidate. Negatives are drawn uniformly without
/// replacement from the impression's non-clicked candidates, or with
/// replacement when fewer than `m` exist.
pub fn negative_sample<R: Rng + ?Sized>(
    imp: &ResolvedImpression,
    m: usize,
    rng: &mut R,
) -> Result<Vec<TrainSample>, SampleSkip> {
    assert!(m >= 1, "need at least one negative per sample");
    if imp.candidates.iter().any(|(_, l)| l.is_none()) {
        return Err(SampleSkip::Unlabeled);
    }
    let negatives: Vec<usize> = imp.candidates.iter().filter(|(_, l)| *l == Some(0)).map(|(n, _)| *n).collect();
    if negatives.is_empty() {
        return Err(SampleSkip::NoNegatives);
    }
    let samples = imp
        .candidates
        .iter()
        .filter(|(_, l)| *l == Some(1))
        .map(|&(pos, _)| {
            let drawn = if negatives.len() >= m {
                index::sample(rng, negatives.len(), m).into_iter().map(|i| negatives[i]).collect()
            } else {
                (0..m).map(|_| negatives[rng.gen_range(0..negatives.len())]).collect()
            };
            TrainSample {
                impression_id: imp.impression_id.clone(),
                history: imp.history.clone(),
                positive: pos,
                negatives: drawn,
            }
        })
        .collect();
    Ok(samples)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub samples: usize,
    pub skipped_no_negatives: usize,
    pub skipped_unlabeled: usize,
}

/// Assembles training samples over `shards` contiguous impression shards in
/// parallel; shard `s` draws from a generator seeded with `base_seed + s`, so
/// output depends only on the seed and shard count.
pub fn build_train_samples(
    impressions: &[ResolvedImpression],
    m: usize,
    base_seed: u64,
    shards: usize,
) -> (Vec<TrainSample>, SampleStats) {
    let shards = shards.max(1);
    let chunk = impressions.len().div_ceil(shards).max(1);
    let parts: Vec<(Vec<TrainSample>, SampleStats)> = impressions
        .par_chunks(chunk)
        .enumerate()
        .map(|(s, imps)| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s as u64));
            let mut out = Vec::new();
            let mut stats = SampleStats::default();
            for imp in imps {
                match negative_sample(imp, m, &mut rng) {
                    Ok(v) => out.extend(v),
                    Err(SampleSkip::NoNegatives) => stats.skipped_no_negatives += 1,
                    Err(SampleSkip::Unlabeled) => stats.skipped_unlabeled += 1,
                }
            }
            (out, stats)
        })
        .collect();
    let mut stats = SampleStats::default();
    let mut samples = Vec::new();
    for (v, s) in parts {
        samples.extend(v);
        stats.skipped_no_negatives += s.skipped_no_negatives;
        stats.skipped_unlabeled += s.skipped_unlabeled;
    }
    stats.samples = samples.len();
    (samples, stats)
}
