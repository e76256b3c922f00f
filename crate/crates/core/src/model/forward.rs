use super::{ModelConfig, ModelParams, ModelVars};
use crate::dataio::{history_slots, NewsStore};
use crate::encoder::{encode_title, EncodedCache, Mode};
use crate::interactor::{interact, MatchFeatures};
use crate::numerics::{Graph, Tensor, Var};
use crate::selector::{select, SelectionResult};
use crate::{Error, Result};

/// One encoded title on a graph.
#[derive(Clone, Copy, Debug)]
pub struct NewsVars {
    /// `[L × N × f_s]`
    pub fine: Var,
    /// `[f_s]`
    pub coarse: Var,
}

/// A padded history on a graph.
#[derive(Clone, Debug)]
pub struct HistoryVars {
    /// `None` marks a padding slot.
    pub fine: Vec<Option<Var>>,
    /// `[M × f_s]` with zero rows at padding.
    pub coarse: Var,
    pub valid: Vec<bool>,
}

/// Stacks slot encodings; `slots.len()` must equal `max_history`.
pub fn history_vars(g: &mut Graph<'_>, cfg: &ModelConfig, slots: &[Option<NewsVars>]) -> Result<HistoryVars> {
    if slots.len() != cfg.max_history {
        return Err(Error::Config(format!("history has {} slots, expected {}", slots.len(), cfg.max_history)));
    }
    let zero = g.leaf(Tensor::zeros(&[cfg.filters]), false);
    let rows: Vec<Var> = slots.iter().map(|s| s.map_or(zero, |n| n.coarse)).collect();
    let coarse = g.stack(&rows)?;
    Ok(HistoryVars {
        fine: slots.iter().map(|s| s.map(|n| n.fine)).collect(),
        coarse,
        valid: slots.iter().map(Option::is_some).collect(),
    })
}

/// Graph handles for one click score.
pub struct ScoreVars {
    /// `[1]`
    pub score: Var,
    pub selection: SelectionResult,
    pub features: MatchFeatures,
}

/// `W_c·[φ, ψ] + b_c` for one candidate.
pub fn score_graph(
    g: &mut Graph<'_>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    history: &HistoryVars,
    candidate: NewsVars,
) -> Result<ScoreVars> {
    let selection = select(g, vars.selector, cfg, history.coarse, candidate.coarse, &history.fine)?;
    let features = interact(
        g,
        &vars.interactor,
        cfg,
        selection.selected_fine,
        candidate.fine,
        history.coarse,
        candidate.coarse,
        &history.valid,
    )?;
    let joined = g.concat(&[features.phi, features.psi])?;
    let p = g.value(joined).numel();
    let w = g.reshape(vars.w_c, &[p])?;
    let dot = g.dot(w, joined)?;
    let score = g.add(dot, vars.b_c)?;
    Ok(ScoreVars { score, selection, features })
}

/// Plain-data record of one scored candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrace {
    pub score: f64,
    /// Selected history positions; `None` for padding.
    pub indices: Vec<Option<usize>>,
    /// Informativeness per history slot; empty in recent mode.
    pub raw_scores: Vec<f64>,
    pub soft_weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub interactor_flops: u64,
}

impl ScoreTrace {
    fn read(g: &Graph<'_>, s: ScoreVars) -> Self {
        ScoreTrace {
            score: g.value(s.score).item(),
            raw_scores: s.selection.raw_scores.map(|v| g.value(v).data().to_vec()).unwrap_or_default(),
            indices: s.selection.indices,
            soft_weights: g.value(s.selection.soft_weights).data().to_vec(),
            phi: g.value(s.features.phi).data().to_vec(),
            psi: g.value(s.features.psi).data().to_vec(),
            interactor_flops: s.features.flops,
        }
    }
}

/// Eval-mode scores from pre-encoded news. `history` holds store indices,
/// most recent first; slots missing from the cache count as padding.
pub fn score_cached(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &EncodedCache,
    history: &[usize],
    candidates: &[usize],
) -> Result<Vec<ScoreTrace>> {
    let mut g = Graph::new();
    let vars = params.attach(&mut g, false, false);
    let (slots, valid) = history_slots(history, cfg.max_history);
    let mut hist = Vec::with_capacity(slots.len());
    for (&s, &v) in slots.iter().zip(&valid) {
        hist.push(if v && cache.get(s).is_some() { Some(cached_news(&mut g, cache, s)?) } else { None });
    }
    let hv = history_vars(&mut g, cfg, &hist)?;
    let mut out = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let cv = cached_news(&mut g, cache, c)?;
        let s = score_graph(&mut g, &vars, cfg, &hv, cv)?;
        out.push(ScoreTrace::read(&g, s));
    }
    Ok(out)
}

fn cached_news<'a>(g: &mut Graph<'a>, cache: &'a EncodedCache, idx: usize) -> Result<NewsVars> {
    let e = cache.get(idx).ok_or_else(|| Error::Data(format!("news index {idx} missing from the encoded cache")))?;
    Ok(NewsVars { fine: g.constant(&e.fine), coarse: g.constant(&e.coarse) })
}

/// Eval-mode scores that encode every title on the fly.
pub fn score_uncached(
    params: &ModelParams,
    cfg: &ModelConfig,
    store: &NewsStore,
    history: &[usize],
    candidates: &[usize],
) -> Result<Vec<ScoreTrace>> {
    let mut g = Graph::new();
    let vars = params.attach(&mut g, false, false);
    let (slots, valid) = history_slots(history, cfg.max_history);
    let mut hist = Vec::with_capacity(slots.len());
    for (&s, &v) in slots.iter().zip(&valid) {
        hist.push(if v { Some(encode_in_graph(&mut g, &vars, cfg, store, s, &mut Mode::Eval)?) } else { None });
    }
    let hv = history_vars(&mut g, cfg, &hist)?;
    let mut out = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let cv = encode_in_graph(&mut g, &vars, cfg, store, c, &mut Mode::Eval)?;
        let s = score_graph(&mut g, &vars, cfg, &hv, cv)?;
        out.push(ScoreTrace::read(&g, s));
    }
    Ok(out)
}

pub(crate) fn encode_in_graph(
    g: &mut Graph<'_>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    store: &NewsStore,
    idx: usize,
    mode: &mut Mode<'_>,
) -> Result<NewsVars> {
    let rec = store.get(idx);
    let enc = encode_title(g, &vars.encoder, cfg, &rec.title_tokens, &rec.token_mask(), mode)?;
    Ok(NewsVars { fine: enc.fine, coarse: enc.coarse })
}

/// Negative log-probability of the first score under a softmax over all.
pub fn sampled_softmax_loss(g: &mut Graph<'_>, pos: Var, negs: &[Var]) -> Result<Var> {
    let mut all = vec![pos];
    all.extend_from_slice(negs);
    let logits = g.concat(&all)?;
    Ok(g.cross_entropy(logits, 0)?)
}

/// Scalar form of [`sampled_softmax_loss`].
pub fn sampled_softmax_value(pos: f64, negs: &[f64]) -> f64 {
    let mx = negs.iter().copied().fold(pos, f64::max);
    let total: f64 = std::iter::once(pos).chain(negs.iter().copied()).map(|s| (s - mx).exp()).sum();
    total.ln() + mx - pos
}
