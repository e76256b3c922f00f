use std::io::Write;
use std::path::Path;

use crate::Result;

/// One row of `news.tsv`, all eight columns kept verbatim.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawNews {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    pub abstract_text: String,
    pub url: String,
    pub title_entities: String,
    pub abstract_entities: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub news_id: String,
    /// `None` for unlabeled (prediction-mode) candidates.
    pub label: Option<u8>,
}

/// One row of `behaviors.tsv`. History is most-recent-first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    pub time: String,
    pub history: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl Impression {
    pub fn is_labeled(&self) -> bool {
        self.candidates.iter().all(|c| c.label.is_some())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub rows: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

impl ParseStats {
    fn warn(&mut self, line: usize, msg: impl Into<String>) {
        self.warnings.push(format!("line {line}: {}", msg.into()));
    }
}

pub fn read_news_tsv(path: impl AsRef<Path>) -> Result<(Vec<RawNews>, ParseStats)> {
    Ok(parse_news_str(&std::fs::read_to_string(path)?))
}

/// Rows with fewer than four columns or an empty id are skipped and counted.
/// Missing trailing columns are read as empty.
pub fn parse_news_str(text: &str) -> (Vec<RawNews>, ParseStats) {
    let mut stats = ParseStats::default();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols[0].trim().is_empty() {
            stats.malformed += 1;
            stats.warn(n + 1, format!("expected >= 4 columns, got {}", cols.len()));
            continue;
        }
        let col = |i: usize| cols.get(i).copied().unwrap_or("").to_string();
        stats.rows += 1;
        out.push(RawNews {
            news_id: cols[0].trim().to_string(),
            category: col(1),
            subcategory: col(2),
            title: col(3),
            abstract_text: col(4),
            url: col(5),
            title_entities: col(6),
            abstract_entities: col(7),
        });
    }
    (out, stats)
}

pub fn read_behaviors_tsv(path: impl AsRef<Path>, max_history: usize) -> Result<(Vec<Impression>, ParseStats)> {
    Ok(parse_behaviors_str(&std::fs::read_to_string(path)?, max_history))
}

/// The file stores history oldest-first; it is reversed on load and
/// truncated to the `max_history` most recent items.
pub fn parse_behaviors_str(text: &str, max_history: usize) -> (Vec<Impression>, ParseStats) {
    let mut stats = ParseStats::default();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 || cols[0].trim().is_empty() {
            stats.malformed += 1;
            stats.warn(n + 1, format!("expected 5 columns, got {}", cols.len()));
            continue;
        }
        let mut history: Vec<String> = cols[3].split_whitespace().rev().map(str::to_string).collect();
        history.truncate(max_history);
        let candidates = cols[4].split_whitespace().map(parse_candidate).collect();
        stats.rows += 1;
        out.push(Impression {
            impression_id: cols[0].trim().to_string(),
            user_id: cols[1].to_string(),
            time: cols[2].to_string(),
            history,
            candidates,
        });
    }
    (out, stats)
}

fn parse_candidate(tok: &str) -> Candidate {
    match tok.rsplit_once('-') {
        Some((id, "1")) => Candidate { news_id: id.to_string(), label: Some(1) },
        Some((id, "0")) => Candidate { news_id: id.to_string(), label: Some(0) },
        _ => Candidate { news_id: tok.to_string(), label: None },
    }
}

pub fn write_news_tsv<W: Write>(mut w: W, news: &[RawNews]) -> std::io::Result<()> {
    for r in news {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.news_id,
            r.category,
            r.subcategory,
            r.title,
            r.abstract_text,
            r.url,
            r.title_entities,
            r.abstract_entities
        )?;
    }
    Ok(())
}

/// Writes history back in file order (oldest-first).
pub fn write_behaviors_tsv<W: Write>(mut w: W, impressions: &[Impression]) -> std::io::Result<()> {
    for imp in impressions {
        let history: Vec<&str> = imp.history.iter().rev().map(String::as_str).collect();
        let candidates: Vec<String> = imp
            .candidates
            .iter()
            .map(|c| match c.label {
                Some(l) => format!("{}-{l}", c.news_id),
                None => c.news_id.clone(),
            })
            .collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            imp.impression_id,
            imp.user_id,
            imp.time,
            history.join(" "),
            candidates.join(" ")
        )?;
    }
    Ok(())
}
