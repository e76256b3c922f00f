//! Raw slice kernels for the convolution and pooling ops. Shapes are
//! validated by the graph layer before these are called.

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1dDims {
    pub len: usize,
    pub d_in: usize,
    pub filters: usize,
    pub taps: usize,
    pub dilation: usize,
}

impl Conv1dDims {
    fn source(&self, i: usize, t: usize) -> Option<usize> {
        let half = (self.taps / 2) as isize;
        let j = i as isize + (t as isize - half) * self.dilation as isize;
        (j >= 0 && (j as usize) < self.len).then_some(j as usize)
    }
}

/// Returns (pre-activation, ReLU output).
pub(crate) fn conv1d_forward(seq: &[f64], kernel: &[f64], bias: &[f64], d: Conv1dDims) -> (Vec<f64>, Vec<f64>) {
    let f = d.filters;
    let mut pre = vec![0.0; d.len * f];
    for i in 0..d.len {
        let out = &mut pre[i * f..(i + 1) * f];
        out.copy_from_slice(bias);
        for t in 0..d.taps {
            let Some(j) = d.source(i, t) else { continue };
            for c in 0..d.d_in {
                let x = seq[j * d.d_in + c];
                let row = &kernel[(t * d.d_in + c) * f..(t * d.d_in + c + 1) * f];
                for (o, k) in out.iter_mut().zip(row) {
                    *o += x * k;
                }
            }
        }
    }
    let out = pre.iter().map(|&v| v.max(0.0)).collect();
    (pre, out)
}

/// `grad_pre` is the output gradient already masked by the ReLU.
pub(crate) fn conv1d_backward(
    seq: &[f64],
    kernel: &[f64],
    grad_pre: &[f64],
    d: Conv1dDims,
    grad_seq: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let f = d.filters;
    if let Some(gb) = grad_bias {
        for i in 0..d.len {
            for (b, g) in gb.iter_mut().zip(&grad_pre[i * f..(i + 1) * f]) {
                *b += g;
            }
        }
    }
    if let Some(gs) = grad_seq {
        for i in 0..d.len {
            let gp = &grad_pre[i * f..(i + 1) * f];
            for t in 0..d.taps {
                let Some(j) = d.source(i, t) else { continue };
                for c in 0..d.d_in {
                    let row = &kernel[(t * d.d_in + c) * f..(t * d.d_in + c + 1) * f];
                    gs[j * d.d_in + c] += row.iter().zip(gp).map(|(k, g)| k * g).sum::<f64>();
                }
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for i in 0..d.len {
            let gp = &grad_pre[i * f..(i + 1) * f];
            for t in 0..d.taps {
                let Some(j) = d.source(i, t) else { continue };
                for c in 0..d.d_in {
                    let x = seq[j * d.d_in + c];
                    let row = &mut gk[(t * d.d_in + c) * f..(t * d.d_in + c + 1) * f];
                    for (k, g) in row.iter_mut().zip(gp) {
                        *k += x * g;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv3dDims {
    pub c_in: usize,
    pub c_out: usize,
    /// Spatial extents of input and output (same-padding).
    pub spatial: [usize; 3],
    pub kernel: [usize; 3],
}

impl Conv3dDims {
    fn volume(&self) -> usize {
        self.spatial.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Valid output range along one axis for a given kernel offset.
    fn range(&self, axis: usize, offset: usize) -> (usize, usize) {
        let pad = self.kernel[axis] / 2;
        let n = self.spatial[axis];
        let lo = pad.saturating_sub(offset);
        let hi = (n + pad).saturating_sub(offset).min(n);
        (lo, hi.max(lo))
    }

    /// Calls `f(out_offset, in_offset, run_len)` for each contiguous row
    /// touched by the kernel tap `(a, b, c)`.
    fn for_each_row(&self, a: usize, b: usize, c: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [_, h, w] = self.spatial;
        let [pd, ph, pw] = [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2];
        let (d0, d1) = self.range(0, a);
        let (h0, h1) = self.range(1, b);
        let (w0, w1) = self.range(2, c);
        if w1 <= w0 {
            return;
        }
        for dd in d0..d1 {
            let sd = dd + a - pd;
            for hh in h0..h1 {
                let sh = hh + b - ph;
                let out = (dd * h + hh) * w + w0;
                let src = (sd * h + sh) * w + w0 + c - pw;
                f(out, src, w1 - w0);
            }
        }
    }
}

pub(crate) fn conv3d_forward(input: &[f64], kernel: &[f64], bias: &[f64], d: Conv3dDims) -> (Vec<f64>, Vec<f64>) {
    let vol = d.volume();
    let taps = d.taps();
    let [ka, kb, kc] = d.kernel;
    let mut pre = vec![0.0; d.c_out * vol];
    for co in 0..d.c_out {
        let out = &mut pre[co * vol..(co + 1) * vol];
        out.fill(bias[co]);
        for ci in 0..d.c_in {
            let src = &input[ci * vol..(ci + 1) * vol];
            let kbase = (co * d.c_in + ci) * taps;
            for a in 0..ka {
                for b in 0..kb {
                    for c in 0..kc {
                        let k = kernel[kbase + (a * kb + b) * kc + c];
                        d.for_each_row(a, b, c, |o, s, n| {
                            for (y, x) in out[o..o + n].iter_mut().zip(&src[s..s + n]) {
                                *y += k * x;
                            }
                        });
                    }
                }
            }
        }
    }
    let out = pre.iter().map(|&v| v.max(0.0)).collect();
    (pre, out)
}

pub(crate) fn conv3d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_pre: &[f64],
    d: Conv3dDims,
    mut grad_input: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let vol = d.volume();
    let taps = d.taps();
    let [ka, kb, kc] = d.kernel;
    if let Some(gb) = grad_bias {
        for co in 0..d.c_out {
            gb[co] += grad_pre[co * vol..(co + 1) * vol].iter().sum::<f64>();
        }
    }
    for co in 0..d.c_out {
        let gp = &grad_pre[co * vol..(co + 1) * vol];
        if gp.iter().all(|&g| g == 0.0) {
            continue;
        }
        for ci in 0..d.c_in {
            let kbase = (co * d.c_in + ci) * taps;
            for a in 0..ka {
                for b in 0..kb {
                    for c in 0..kc {
                        let tap = kbase + (a * kb + b) * kc + c;
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let k = kernel[tap];
                            let dst = &mut gi[ci * vol..(ci + 1) * vol];
                            d.for_each_row(a, b, c, |o, s, n| {
                                for (x, g) in dst[s..s + n].iter_mut().zip(&gp[o..o + n]) {
                                    *x += k * g;
                                }
                            });
                        }
                        if let Some(gk) = grad_kernel.as_deref_mut() {
                            let src = &input[ci * vol..(ci + 1) * vol];
                            let mut acc = 0.0;
                            d.for_each_row(a, b, c, |o, s, n| {
                                acc += src[s..s + n].iter().zip(&gp[o..o + n]).map(|(x, g)| x * g).sum::<f64>();
                            });
                            gk[tap] += acc;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_flops(d: Conv3dDims) -> u64 {
    2 * (d.c_out * d.c_in * d.taps() * d.volume()) as u64
}

/// Output extent of a pooled axis: partial trailing windows are kept.
pub fn pooled_extent(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

pub(crate) struct PoolOutput {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
    pub out_spatial: [usize; 3],
    /// Smallest gap between a positive window maximum and its runner-up.
    pub margin: f64,
}

pub(crate) fn maxpool3d_forward(
    input: &[f64],
    channels: usize,
    spatial: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
) -> PoolOutput {
    let [d, h, w] = spatial;
    let out_spatial = [pooled_extent(d, stride[0]), pooled_extent(h, stride[1]), pooled_extent(w, stride[2])];
    let [od, oh, ow] = out_spatial;
    let n_out = channels * od * oh * ow;
    let mut values = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);
    let mut margin = f64::INFINITY;
    for ch in 0..channels {
        let base = ch * d * h * w;
        for x in 0..od {
            for y in 0..oh {
                for z in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    // Flat order scan with strict comparison keeps the lowest index on ties.
                    for a in x * stride[0]..(x * stride[0] + window[0]).min(d) {
                        for b in y * stride[1]..(y * stride[1] + window[1]).min(h) {
                            for c in z * stride[2]..(z * stride[2] + window[2]).min(w) {
                                let idx = base + (a * h + b) * w + c;
                                let v = input[idx];
                                if v > best {
                                    second = best;
                                    best = v;
                                    best_idx = idx;
                                } else if v > second {
                                    second = v;
                                }
                            }
                        }
                    }
                    if best > 0.0 {
                        margin = margin.min(best - second);
                    }
                    values.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    PoolOutput { values, argmax, out_spatial, margin }
}
