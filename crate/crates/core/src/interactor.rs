//! Fine-grained matching between the candidate and the selected history
//! items, plus coarse dot-product signals over the whole history.
//!
//! The 3-D convolutions carry no bias: a zero cube (empty history, or every
//! selected item gated off) then yields an exactly zero φ.

use rand::Rng;

use crate::model::ModelConfig;
use crate::numerics::{Graph, Tensor, Var};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractorParams {
    /// `[C_out × C_in × k × k × k]` per stage.
    pub kernels: Vec<Tensor>,
}

impl InteractorParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let k = cfg.conv3d_kernel;
        let mut c_in = cfg.levels();
        let kernels = cfg
            .conv3d_channels
            .iter()
            .map(|&c_out| {
                let bound = 1.0 / ((c_in * k * k * k) as f64).sqrt();
                let t = Tensor::uniform(&[c_out, c_in, k, k, k], -bound, bound, rng);
                c_in = c_out;
                t
            })
            .collect();
        InteractorParams { kernels }
    }

    pub fn attach<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> InteractorVars {
        let kernels = self.kernels.iter().map(|t| if trainable { g.param(t) } else { g.constant(t) }).collect();
        let biases = self.kernels.iter().map(|t| g.leaf(Tensor::zeros(&[t.shape()[0]]), false)).collect();
        InteractorVars { kernels, biases }
    }
}

#[derive(Clone, Debug)]
pub struct InteractorVars {
    pub kernels: Vec<Var>,
    /// Constant zeros.
    biases: Vec<Var>,
}

/// `[L × K × N × N]`: entry `[l,v,i,j]` is the scaled dot product of word `i`
/// of selected item `v` with candidate word `j` at level `l`.
pub fn similarity_matrices(g: &mut Graph<'_>, selected_fine: Var, candidate_fine: Var) -> Result<Var> {
    let s = g.shape(selected_fine).to_vec();
    let (k, levels, n, f) = (s[0], s[1], s[2], s[3]);
    let by_level = g.permute(selected_fine, &[1, 0, 2, 3])?;
    let rows = g.reshape(by_level, &[levels, k * n, f])?;
    let cand_t = g.permute(candidate_fine, &[0, 2, 1])?;
    let prod = g.bmm(rows, cand_t)?;
    let cube = g.reshape(prod, &[levels, k, n, n])?;
    Ok(g.scale(cube, 1.0 / (f as f64).sqrt())?)
}

/// Conv3d+ReLU and max-pool per stage, flattened to φ.
pub fn extract_phi(g: &mut Graph<'_>, vars: &InteractorVars, cfg: &ModelConfig, cube: Var) -> Result<Var> {
    let mut x = cube;
    for (&kernel, &bias) in vars.kernels.iter().zip(&vars.biases) {
        x = g.conv3d(x, kernel, bias)?;
        x = g.maxpool3d(x, cfg.pool, cfg.pool)?;
    }
    let numel = g.value(x).numel();
    Ok(g.reshape(x, &[numel])?)
}

/// Unscaled dot product of every history row with the candidate; padding is 0.
pub fn coarse_signals(g: &mut Graph<'_>, history_coarse: Var, candidate_coarse: Var, valid: &[bool]) -> Result<Var> {
    let f = g.shape(candidate_coarse)[0];
    let col = g.reshape(candidate_coarse, &[f, 1])?;
    let dots = g.matmul(history_coarse, col)?;
    let dots = g.reshape(dots, &[valid.len()])?;
    Ok(g.mask_fill(dots, valid, 0.0)?)
}

pub struct MatchFeatures {
    pub phi: Var,
    pub psi: Var,
    /// Operations spent on the cube and φ.
    pub flops: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn interact(
    g: &mut Graph<'_>,
    vars: &InteractorVars,
    cfg: &ModelConfig,
    selected_fine: Var,
    candidate_fine: Var,
    history_coarse: Var,
    candidate_coarse: Var,
    valid: &[bool],
) -> Result<MatchFeatures> {
    let before = g.flops();
    let cube = similarity_matrices(g, selected_fine, candidate_fine)?;
    let phi = extract_phi(g, vars, cfg, cube)?;
    let flops = g.flops() - before;
    let psi = coarse_signals(g, history_coarse, candidate_coarse, valid)?;
    Ok(MatchFeatures { phi, psi, flops })
}
