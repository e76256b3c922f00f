//! Seeded planted-interest datasets in MIND format.
//!
//! Every topic owns a disjoint token cluster. For each impression one of the
//! user's topics is the active interest: the clicked candidate is drawn from
//! it, and the planted history items each share `shared_tokens` tokens with
//! that candidate. The remaining history items are distractors spread evenly
//! over a few unrelated topics. Non-clicked candidates come from the
//! distractor topics but use only tokens that appear in no history title, so
//! topic-level similarity alone cannot separate clicks from non-clicks.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tsv::{write_behaviors_tsv, write_news_tsv, Candidate, Impression, RawNews};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Planted items scattered uniformly over the history.
    Random,
    /// Planted items occupy the most recent positions.
    Front,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_topics: usize,
    pub cluster_size: usize,
    pub n_users: usize,
    pub topics_per_user: usize,
    pub min_history: usize,
    pub max_history: usize,
    /// Fraction of each history that is distractor news.
    pub distractor_ratio: f64,
    pub distractor_topics: usize,
    /// Real tokens per title.
    pub title_len: usize,
    /// Tokens each planted item shares with the clicked candidate.
    pub shared_tokens: usize,
    pub negatives: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub placement: Placement,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_topics: 40,
            cluster_size: 48,
            n_users: 500,
            topics_per_user: 3,
            min_history: 25,
            max_history: 25,
            distractor_ratio: 0.8,
            distractor_topics: 4,
            title_len: 6,
            shared_tokens: 2,
            negatives: 4,
            n_train: 5000,
            n_eval: 1000,
            placement: Placement::Random,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.topics_per_user + self.distractor_topics > self.n_topics {
            return err(format!(
                "{} user topics + {} distractor topics exceed {} token clusters",
                self.topics_per_user, self.distractor_topics, self.n_topics
            ));
        }
        if self.topics_per_user == 0 || self.distractor_topics == 0 || self.n_users == 0 {
            return err("need at least one user, one user topic and one distractor topic".into());
        }
        if self.title_len == 0 || self.title_len > self.cluster_size {
            return err(format!("title_len {} must be in 1..={}", self.title_len, self.cluster_size));
        }
        if self.shared_tokens == 0 || self.shared_tokens > self.title_len {
            return err(format!("shared_tokens {} must be in 1..={}", self.shared_tokens, self.title_len));
        }
        if self.min_history == 0 || self.min_history > self.max_history {
            return err("history length range is empty".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_ratio) {
            return err("distractor_ratio must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn split(&self, len: usize) -> (usize, usize) {
        let distract = ((len as f64 * self.distractor_ratio).round() as usize).min(len - 1);
        (len - distract, distract)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub news: Vec<RawNews>,
    pub train: Vec<Impression>,
    pub eval: Vec<Impression>,
    /// Impression id → planted history positions (most-recent-first indices).
    pub planted: BTreeMap<String, Vec<usize>>,
}

pub fn token_name(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

struct Builder<'c> {
    cfg: &'c SynthConfig,
    news: Vec<RawNews>,
    user_topics: Vec<Vec<usize>>,
}

impl Builder<'_> {
    fn add_news(&mut self, topic: usize, tokens: &[usize]) -> String {
        let id = format!("N{}", self.news.len() + 1);
        let title: Vec<String> = tokens.iter().map(|&j| token_name(topic, j)).collect();
        self.news.push(RawNews {
            news_id: id.clone(),
            category: format!("topic{topic}"),
            subcategory: String::new(),
            title: title.join(" "),
            abstract_text: String::new(),
            url: String::new(),
            title_entities: "[]".into(),
            abstract_entities: "[]".into(),
        });
        id
    }

    fn impression<R: Rng>(&mut self, id: String, rng: &mut R) -> Result<(Impression, Vec<usize>)> {
        let cfg = self.cfg;
        let user = rng.gen_range(0..cfg.n_users);
        let mine = self.user_topics[user].clone();
        let interest = *mine.choose(rng).unwrap();
        let others: Vec<usize> = (0..cfg.n_topics).filter(|t| !mine.contains(t)).collect();
        let distractor_topics: Vec<usize> =
            index::sample(rng, others.len(), cfg.distractor_topics).into_iter().map(|i| others[i]).collect();

        let len = rng.gen_range(cfg.min_history..=cfg.max_history);
        let (n_planted, n_distract) = cfg.split(len);

        let positive: Vec<usize> = index::sample(rng, cfg.cluster_size, cfg.title_len).into_vec();

        // (topic, tokens, planted?)
        let mut items: Vec<(usize, Vec<usize>, bool)> = Vec::with_capacity(len);
        for _ in 0..n_planted {
            let mut tokens: Vec<usize> =
                index::sample(rng, cfg.title_len, cfg.shared_tokens).into_iter().map(|i| positive[i]).collect();
            let rest: Vec<usize> = (0..cfg.cluster_size).filter(|t| !tokens.contains(t)).collect();
            tokens
                .extend(index::sample(rng, rest.len(), cfg.title_len - cfg.shared_tokens).into_iter().map(|i| rest[i]));
            tokens.shuffle(rng);
            items.push((interest, tokens, true));
        }
        let mut distractors = Vec::with_capacity(n_distract);
        for k in 0..n_distract {
            let topic = distractor_topics[k % distractor_topics.len()];
            distractors.push((topic, index::sample(rng, cfg.cluster_size, cfg.title_len).into_vec(), false));
        }
        match cfg.placement {
            Placement::Random => {
                items.extend(distractors);
                items.shuffle(rng);
            }
            Placement::Front => {
                distractors.shuffle(rng);
                items.extend(distractors);
            }
        }

        let mut used: Vec<HashSet<usize>> = vec![HashSet::new(); cfg.n_topics];
        for (topic, tokens, _) in &items {
            used[*topic].extend(tokens.iter().copied());
        }
        let planted: Vec<usize> = items.iter().enumerate().filter(|(_, it)| it.2).map(|(i, _)| i).collect();
        let history: Vec<String> = items.iter().map(|(topic, tokens, _)| self.add_news(*topic, tokens)).collect();

        let mut candidates = vec![Candidate { news_id: self.add_news(interest, &positive), label: Some(1) }];
        for _ in 0..cfg.negatives {
            let topic = *distractor_topics.choose(rng).unwrap();
            let fresh: Vec<usize> = (0..cfg.cluster_size).filter(|t| !used[topic].contains(t)).collect();
            if fresh.len() < cfg.title_len {
                return Err(Error::Config(format!(
                    "cluster_size {} leaves only {} unused tokens in a distractor topic; need {}",
                    cfg.cluster_size,
                    fresh.len(),
                    cfg.title_len
                )));
            }
            let tokens: Vec<usize> =
                index::sample(rng, fresh.len(), cfg.title_len).into_iter().map(|i| fresh[i]).collect();
            candidates.push(Candidate { news_id: self.add_news(topic, &tokens), label: Some(0) });
        }
        candidates.shuffle(rng);

        let imp =
            Impression { impression_id: id, user_id: format!("U{user}"), time: String::new(), history, candidates };
        Ok((imp, planted))
    }
}

pub fn generate_synthetic<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let user_topics =
        (0..cfg.n_users).map(|_| index::sample(rng, cfg.n_topics, cfg.topics_per_user).into_vec()).collect();
    let mut b = Builder { cfg, news: Vec::new(), user_topics };
    let mut planted = BTreeMap::new();
    let mut split = |n: usize, offset: usize, b: &mut Builder, rng: &mut R| -> Result<Vec<Impression>> {
        (0..n)
            .map(|i| {
                let (imp, p) = b.impression((offset + i + 1).to_string(), rng)?;
                planted.insert(imp.impression_id.clone(), p);
                Ok(imp)
            })
            .collect()
    };
    let train = split(cfg.n_train, 0, &mut b, rng)?;
    let eval = split(cfg.n_eval, cfg.n_train, &mut b, rng)?;
    Ok(SyntheticDataset { news: b.news, train, eval, planted })
}

impl SyntheticDataset {
    /// Writes `news.tsv`, `train_behaviors.tsv`, `eval_behaviors.tsv` and
    /// `planted.tsv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_news_tsv(std::io::BufWriter::new(std::fs::File::create(dir.join("news.tsv"))?), &self.news)?;
        write_behaviors_tsv(
            std::io::BufWriter::new(std::fs::File::create(dir.join("train_behaviors.tsv"))?),
            &self.train,
        )?;
        write_behaviors_tsv(
            std::io::BufWriter::new(std::fs::File::create(dir.join("eval_behaviors.tsv"))?),
            &self.eval,
        )?;
        write_planted(std::io::BufWriter::new(std::fs::File::create(dir.join("planted.tsv"))?), &self.planted)?;
        Ok(())
    }
}

pub fn write_planted<W: Write>(mut w: W, planted: &BTreeMap<String, Vec<usize>>) -> std::io::Result<()> {
    for (id, idx) in planted {
        let idx: Vec<String> = idx.iter().map(usize::to_string).collect();
        writeln!(w, "{id}\t{}", idx.join(" "))?;
    }
    Ok(())
}

pub fn parse_planted(text: &str) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, rest) = line.split_once('\t').unwrap_or((line, ""));
        let idx = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Data(format!("planted line {}: {e}", n + 1))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(id.to_string(), idx);
    }
    Ok(out)
}
