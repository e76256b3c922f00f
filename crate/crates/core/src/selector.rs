//! Learning-to-select over the browsing history.
//!
//! News vectors are projected into a shared selection space and each history
//! item is scored by cosine similarity with the candidate. Hard selection
//! keeps the top K items (pure routing, no gradient through the choice); soft
//! selection zeroes those scoring below `gamma` and scales the rest by their
//! score, which is the path through which the projection learns.

use rand::Rng;

use crate::model::{ModelConfig, SelectionMode};
use crate::numerics::{Graph, Tensor, Var, INVALID_SCORE};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorParams {
    /// `[d_sel × f_s]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SelectorParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let bound = 1.0 / (cfg.filters as f64).sqrt();
        SelectorParams {
            weight: Tensor::uniform(&[cfg.select_dim, cfg.filters], -bound, bound, rng),
            bias: Tensor::zeros(&[cfg.select_dim]),
        }
    }

    pub fn attach<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> SelectorVars {
        if trainable {
            SelectorVars { weight: g.param(&self.weight), bias: g.param(&self.bias) }
        } else {
            SelectorVars { weight: g.constant(&self.weight), bias: g.constant(&self.bias) }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SelectorVars {
    pub weight: Var,
    pub bias: Var,
}

/// Affine projection `W_p r + b_p` of a `[f_s]` vector or each row of `[M × f_s]`.
pub fn project(g: &mut Graph<'_>, vars: SelectorVars, x: Var) -> Result<Var> {
    let wt = g.permute(vars.weight, &[1, 0])?;
    match g.shape(x).len() {
        1 => {
            let f = g.shape(x)[0];
            let row = g.reshape(x, &[1, f])?;
            let p = g.matmul(row, wt)?;
            let d = g.shape(p)[1];
            let p = g.reshape(p, &[d])?;
            Ok(g.add(p, vars.bias)?)
        }
        _ => {
            let p = g.matmul(x, wt)?;
            Ok(g.add_broadcast(p, vars.bias)?)
        }
    }
}

/// Cosine informativeness of each history row against the candidate;
/// invalid slots score [`INVALID_SCORE`].
pub fn informativeness(
    g: &mut Graph<'_>,
    vars: SelectorVars,
    history_coarse: Var,
    candidate_coarse: Var,
    valid: &[bool],
) -> Result<Var> {
    let h = project(g, vars, history_coarse)?;
    let c = project(g, vars, candidate_coarse)?;
    Ok(g.cosine_rows(h, c, valid)?)
}

/// Positions of the `k` highest valid scores, ties toward the smaller
/// (more recent) position, returned in history order. Short histories are
/// padded with `None`.
pub fn top_k_indices(scores: &[f64], valid: &[bool], k: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| valid[i]).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    let mut out: Vec<Option<usize>> = order.into_iter().map(Some).collect();
    out.resize(k, None);
    out
}

/// The `k` most recent valid positions.
pub fn recent_indices(valid: &[bool], k: usize) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = (0..valid.len()).filter(|&i| valid[i]).take(k).map(Some).collect();
    out.resize(k, None);
    out
}

/// Gap between the weakest selected and the strongest rejected valid score.
fn cut_margin(scores: &[f64], valid: &[bool], picked: &[Option<usize>]) -> f64 {
    let chosen: Vec<usize> = picked.iter().flatten().copied().collect();
    let min_in = chosen.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let max_out = (0..scores.len())
        .filter(|i| valid[*i] && !chosen.contains(i))
        .map(|i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    min_in - max_out
}

pub struct HardSelection {
    pub indices: Vec<Option<usize>>,
    /// `[K]`; padding entries are [`INVALID_SCORE`].
    pub selected_scores: Var,
    /// `[K × L × N × f_s]`; padding entries are zero.
    pub selected_fine: Var,
}

/// Slices the chosen history items out of `fine_all`. Equivalent to
/// multiplying by the one-hot matrix of `indices`.
fn gather_items(
    g: &mut Graph<'_>,
    fine_all: &[Option<Var>],
    indices: &[Option<usize>],
    fine_shape: &[usize],
) -> Result<Var> {
    let mut zero = None;
    let mut items = Vec::with_capacity(indices.len());
    for idx in indices {
        match idx.and_then(|i| fine_all[i]) {
            Some(v) => items.push(v),
            None => items.push(*zero.get_or_insert_with(|| g.leaf(Tensor::zeros(fine_shape), false))),
        }
    }
    Ok(g.stack(&items)?)
}

/// Hard top-K selection. `fine_all[i]` is `None` for invalid slots.
pub fn hard_select(
    g: &mut Graph<'_>,
    scores: Var,
    fine_all: &[Option<Var>],
    fine_shape: &[usize],
    k: usize,
) -> Result<HardSelection> {
    let valid: Vec<bool> = fine_all.iter().map(Option::is_some).collect();
    let raw = g.value(scores).data().to_vec();
    let indices = top_k_indices(&raw, &valid, k);
    g.note_margin(cut_margin(&raw, &valid, &indices));
    g.note_pattern(indices.iter().map(|i| i.map_or(u64::MAX, |i| i as u64)));
    let picked = g.gather(scores, &indices)?;
    let keep: Vec<bool> = indices.iter().map(Option::is_some).collect();
    let selected_scores = g.mask_fill(picked, &keep, INVALID_SCORE)?;
    let selected_fine = gather_items(g, fine_all, &indices, fine_shape)?;
    Ok(HardSelection { indices, selected_scores, selected_fine })
}

pub struct SoftSelection {
    /// `[K]`: the score where it reaches `gamma`, else 0.
    pub weights: Var,
    /// Selected fine representations scaled by `weights`.
    pub fine: Var,
}

pub fn soft_select(g: &mut Graph<'_>, selected_scores: Var, selected_fine: Var, gamma: f64) -> Result<SoftSelection> {
    let weights = g.threshold(selected_scores, gamma)?;
    let fine = g.scale_rows(selected_fine, weights)?;
    Ok(SoftSelection { weights, fine })
}

/// Everything the selector produced for one (history, candidate) pair.
pub struct SelectionResult {
    pub indices: Vec<Option<usize>>,
    /// `[M]` informativeness; `None` in recent mode.
    pub raw_scores: Option<Var>,
    pub selected_scores: Var,
    pub soft_weights: Var,
    /// `[K × L × N × f_s]` after gating.
    pub selected_fine: Var,
}

/// Runs the configured selection mode.
pub fn select(
    g: &mut Graph<'_>,
    vars: SelectorVars,
    cfg: &ModelConfig,
    history_coarse: Var,
    candidate_coarse: Var,
    fine_all: &[Option<Var>],
) -> Result<SelectionResult> {
    let fine_shape = [cfg.levels(), cfg.title_len, cfg.filters];
    let valid: Vec<bool> = fine_all.iter().map(Option::is_some).collect();
    match cfg.selection {
        SelectionMode::Learned => {
            let raw = informativeness(g, vars, history_coarse, candidate_coarse, &valid)?;
            let hard = hard_select(g, raw, fine_all, &fine_shape, cfg.top_k)?;
            let soft = soft_select(g, hard.selected_scores, hard.selected_fine, cfg.gamma)?;
            Ok(SelectionResult {
                indices: hard.indices,
                raw_scores: Some(raw),
                selected_scores: hard.selected_scores,
                soft_weights: soft.weights,
                selected_fine: soft.fine,
            })
        }
        SelectionMode::Recent => {
            let indices = recent_indices(&valid, cfg.top_k);
            let ones: Vec<f64> = indices.iter().map(|i| if i.is_some() { 1.0 } else { 0.0 }).collect();
            let weights = g.leaf(Tensor::vector(ones), false);
            let fine = gather_items(g, fine_all, &indices, &fine_shape)?;
            Ok(SelectionResult {
                indices,
                raw_scores: None,
                selected_scores: weights,
                soft_weights: weights,
                selected_fine: fine,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn identity_selector(d: usize) -> SelectorParams {
        let mut w = Tensor::zeros(&[d, d]);
        for i in 0..d {
            w.data_mut()[i * d + i] = 1.0;
        }
        SelectorParams { weight: w, bias: Tensor::zeros(&[d]) }
    }

    #[test]
    fn identity_projection_and_bias() {
        let p = identity_selector(3);
        let mut g = Graph::new();
        let vars = p.attach(&mut g, false);
        let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]), false);
        let y = project(&mut g, vars, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5]);

        let q = SelectorParams { weight: Tensor::full(&[2, 3], 0.3), bias: Tensor::vector(vec![0.7, -0.1]) };
        let mut g = Graph::new();
        let vars = q.attach(&mut g, false);
        let z = g.leaf(Tensor::zeros(&[3]), false);
        let y = project(&mut g, vars, z).unwrap();
        assert_eq!(g.value(y).data(), &[0.7, -0.1]);
    }

    #[test]
    fn cosine_examples() {
        let p = identity_selector(2);
        let mut g = Graph::new();
        let vars = p.attach(&mut g, false);
        let h = g.leaf(Tensor::new(vec![4, 2], vec![1.0, 1.0, 0.0, 3.0, -3.0, 0.0, 5.0, 5.0]).unwrap(), false);
        let c = g.leaf(Tensor::vector(vec![3.0, 0.0]), false);
        let s = informativeness(&mut g, vars, h, c, &[true, true, true, false]).unwrap();
        let s = g.value(s).data();
        assert!((s[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!((s[2] + 1.0).abs() < 1e-12);
        assert_eq!(s[3], INVALID_SCORE);

        let c = g.leaf(Tensor::vector(vec![1.0, 1.0]), false);
        let s = informativeness(&mut g, vars, h, c, &[true; 4]).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);

        let zero = g.leaf(Tensor::zeros(&[2]), false);
        let s = informativeness(&mut g, vars, h, zero, &[true; 4]).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn top_k_examples() {
        let v = [true; 5];
        assert_eq!(top_k_indices(&[0.9, 0.1, 0.8, 0.2, 0.7], &v, 3), vec![Some(0), Some(2), Some(4)]);
        assert_eq!(top_k_indices(&[0.3, 0.1, 0.2], &[true; 3], 3), vec![Some(0), Some(1), Some(2)]);
        // ties go to the more recent item
        assert_eq!(top_k_indices(&[0.5, 0.5, 0.5], &[true; 3], 2), vec![Some(0), Some(1)]);
        assert_eq!(top_k_indices(&[0.5, -2.0, 0.1], &[true, false, true], 3), vec![Some(0), Some(2), None]);
        assert_eq!(recent_indices(&[false, true, true, true], 2), vec![Some(1), Some(2)]);
    }

    #[test]
    fn soft_select_gates_below_threshold() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::vector(vec![0.5, 0.15, 0.25]), false);
        let h = g.leaf(Tensor::full(&[3, 1, 2, 2], 1.0), false);
        let soft = soft_select(&mut g, s, h, 0.2).unwrap();
        assert_eq!(g.value(soft.weights).data(), &[0.5, 0.0, 0.25]);
        let fine = g.value(soft.fine).data();
        assert!(fine[..4].iter().all(|&v| v == 0.5));
        assert!(fine[4..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hard_select_matches_one_hot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let fine_t: Vec<Tensor> = (0..5).map(|_| Tensor::uniform(&[2, 3, 2], -1.0, 1.0, &mut rng)).collect();
        let fine: Vec<Option<Var>> = fine_t.iter().map(|t| Some(g.leaf(t.clone(), false))).collect();
        let scores = g.leaf(Tensor::vector(vec![0.9, 0.1, 0.8, 0.2, 0.7]), false);
        let hard = hard_select(&mut g, scores, &fine, &[2, 3, 2], 3).unwrap();

        // X ⊗ H with X the 3×5 one-hot matrix
        let all = g.stack(&fine.iter().map(|v| v.unwrap()).collect::<Vec<_>>()).unwrap();
        let flat = g.reshape(all, &[5, 12]).unwrap();
        let mut x = Tensor::zeros(&[3, 5]);
        for (r, c) in [0, 2, 4].iter().enumerate() {
            x.data_mut()[r * 5 + c] = 1.0;
        }
        let xv = g.leaf(x, false);
        let prod = g.matmul(xv, flat).unwrap();
        assert_eq!(g.value(prod).data(), g.value(hard.selected_fine).data());
        assert_eq!(g.value(hard.selected_scores).data(), &[0.9, 0.8, 0.7]);
    }

    #[test]
    fn short_history_pads_with_zero_rows_and_invalid_score() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full(&[1, 1, 1], 2.0), false);
        let scores = g.leaf(Tensor::vector(vec![0.4, INVALID_SCORE]), false);
        let hard = hard_select(&mut g, scores, &[Some(a), None], &[1, 1, 1], 3).unwrap();
        assert_eq!(hard.indices, vec![Some(0), None, None]);
        assert_eq!(g.value(hard.selected_scores).data(), &[0.4, INVALID_SCORE, INVALID_SCORE]);
        assert_eq!(g.value(hard.selected_fine).data(), &[2.0, 0.0, 0.0]);
    }

    /// Brute force: the best k-subset under (score desc, position asc).
    fn brute_force(scores: &[f64], k: usize) -> Vec<usize> {
        let n = scores.len();
        let mut best: Option<Vec<usize>> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k.min(n) {
                continue;
            }
            let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let dominated = set.iter().any(|&i| {
                (0..n).any(|j| !set.contains(&j) && (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)))
            });
            if !dominated {
                best = Some(set);
            }
        }
        best.unwrap()
    }

    #[test]
    fn thousand_random_vectors_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=10);
            let k = rng.gen_range(1..=n);
            // coarse grid so ties actually happen
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-4..=4)) / 4.0).collect();
            let got: Vec<usize> = top_k_indices(&scores, &vec![true; n], k).into_iter().flatten().collect();
            assert_eq!(got, brute_force(&scores, k), "scores {scores:?} k {k}");
        }
    }

    proptest! {
        #[test]
        fn monotone_transform_keeps_selection(scores in proptest::collection::vec(-1.0f64..1.0, 1..20), k in 1usize..8) {
            let valid = vec![true; scores.len()];
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(top_k_indices(&scores, &valid, k), top_k_indices(&moved, &valid, k));
        }

        #[test]
        fn selection_is_permutation_equivariant(scores in proptest::collection::vec(-1.0f64..1.0, 2..15), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            let n = scores.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&p| scores[p]).collect();
            let k = n / 2 + 1;
            let a: Vec<f64> = top_k_indices(&scores, &vec![true; n], k).into_iter().flatten().map(|i| scores[i]).collect();
            let b: Vec<f64> = top_k_indices(&permuted, &vec![true; n], k).into_iter().flatten().map(|i| permuted[i]).collect();
            let (mut a, mut b) = (a, b);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn selected_dominate_unselected(scores in proptest::collection::vec(-1.0f64..1.0, 1..20), k in 1usize..10) {
            let valid = vec![true; scores.len()];
            let picked: Vec<usize> = top_k_indices(&scores, &valid, k).into_iter().flatten().collect();
            let min_in = picked.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
            for (i, s) in scores.iter().enumerate() {
                if !picked.contains(&i) {
                    prop_assert!(*s <= min_in);
                }
            }
        }
    }
}
