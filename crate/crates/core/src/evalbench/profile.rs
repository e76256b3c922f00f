use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::dataio::ResolvedImpression;
use crate::encoder::EncodedCache;
use crate::model::{score_cached, ModelConfig, ModelParams, SelectionMode};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionStat {
    /// 0 is the most recent history item.
    pub position: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

/// Informativeness by history position, pooled over the clicked candidates
/// of each impression (all candidates when unlabeled). One row per slot.
pub fn informativeness_profile(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    impressions: &[ResolvedImpression],
) -> Result<Vec<PositionStat>> {
    if cfg.selection != SelectionMode::Learned {
        return Err(Error::Config("the informativeness profile needs learned selection".into()));
    }
    let m = cfg.max_history;
    let parts: Vec<Vec<(f64, f64, usize)>> = impressions
        .par_iter()
        .map(|imp| {
            let clicked: Vec<usize> = imp.candidates.iter().filter(|c| c.1 == Some(1)).map(|c| c.0).collect();
            let cands = if clicked.is_empty() { imp.candidates.iter().map(|c| c.0).collect() } else { clicked };
            let traces = score_cached(params, cfg, cache, &imp.history, &cands)?;
            let mut acc = vec![(0.0, 0.0, 0usize); m];
            for t in &traces {
                for (p, &s) in t.raw_scores.iter().enumerate() {
                    if s > crate::numerics::INVALID_SCORE {
                        acc[p].0 += s;
                        acc[p].1 += s * s;
                        acc[p].2 += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![(0.0, 0.0, 0usize); m];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.0 += p.0;
            t.1 += p.1;
            t.2 += p.2;
        }
    }
    Ok(total
        .into_iter()
        .enumerate()
        .map(|(position, (s, sq, count))| {
            if count == 0 {
                return PositionStat { position, mean: 0.0, std: 0.0, count };
            }
            let mean = s / count as f64;
            let var = (sq / count as f64 - mean * mean).max(0.0);
            PositionStat { position, mean, std: var.sqrt(), count }
        })
        .collect())
}

pub fn write_profile_csv<W: Write>(mut w: W, stats: &[PositionStat]) -> std::io::Result<()> {
    writeln!(w, "position,mean,std,count")?;
    for s in stats {
        writeln!(w, "{},{},{},{}", s.position, s.mean, s.std, s.count)?;
    }
    Ok(())
}

/// Line plot of the mean with a ±1 std band.
pub fn render_profile_svg(stats: &[PositionStat]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let lo = stats.iter().map(|s| s.mean - s.std).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = stats.iter().map(|s| s.mean + s.std).fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    let n = stats.len().max(2) as f64 - 1.0;
    let x = |p: usize| pad + (w - 2.0 * pad) * p as f64 / n;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let band: Vec<String> = stats
        .iter()
        .map(|s| format!("{:.2},{:.2}", x(s.position), y(s.mean + s.std)))
        .chain(stats.iter().rev().map(|s| format!("{:.2},{:.2}", x(s.position), y(s.mean - s.std))))
        .collect();
    let _ = writeln!(svg, r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5"/>"##, band.join(" "));
    let line: Vec<String> = stats.iter().map(|s| format!("{:.2},{:.2}", x(s.position), y(s.mean))).collect();
    let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, line.join(" "));
    let _ = writeln!(svg, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(svg, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">history position (0 = most recent)</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="13" transform="rotate(-90 14 {})" text-anchor="middle">informativeness</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ =
        writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{hi:.3}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{lo:.3}</text>"#, pad - 4.0, h - pad);
    svg.push_str("</svg>\n");
    svg
}
