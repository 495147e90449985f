//! Dense and strided-convolution layers with hand-written backward passes.

use crate::error::{Error, Result};

use super::Tensor;

/// Gradients of [`dense_forward`].
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d_forward`]. The input gradient is only computed on request.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

fn dims2(t: &Tensor, op: &'static str, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("{what} must be 2-D, got {s:?}"))),
    }
}

/// `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c`, with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every strided access
    // for the given (m, k, n); c is a dense m×n row-major block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[b,o] = Σ_i input[b,i]·weights[i,o] + bias[o]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, fan_in) = dims2(input, "dense_forward", "input")?;
    let (w_in, fan_out) = dims2(weights, "dense_forward", "weights")?;
    if w_in != fan_in {
        return Err(Error::shape(
            "dense_forward",
            format!("input has {fan_in} features but weights expect {w_in}"),
        ));
    }
    if bias.shape() != [fan_out] {
        return Err(Error::shape(
            "dense_forward",
            format!("bias shape {:?}, expected [{fan_out}]", bias.shape()),
        ));
    }
    let mut out = vec![0.0; batch * fan_out];
    for row in out.chunks_exact_mut(fan_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        batch,
        fan_in,
        fan_out,
        1.0,
        input.data(),
        (fan_in as isize, 1),
        weights.data(),
        (fan_out as isize, 1),
        1.0,
        &mut out,
    );
    Tensor::from_vec(&[batch, fan_out], out)
}

pub fn dense_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    weights: &Tensor,
) -> Result<DenseGrads> {
    let (batch, fan_in) = dims2(cached_input, "dense_backward", "input")?;
    let (w_in, fan_out) = dims2(weights, "dense_backward", "weights")?;
    let (g_batch, g_out) = dims2(grad_out, "dense_backward", "grad_out")?;
    if w_in != fan_in || g_batch != batch || g_out != fan_out {
        return Err(Error::shape(
            "dense_backward",
            format!(
                "grad_out {:?}, input {:?}, weights {:?} do not conform",
                grad_out.shape(),
                cached_input.shape(),
                weights.shape()
            ),
        ));
    }
    let g = grad_out.data();
    let x = cached_input.data();

    let mut grad_input = vec![0.0; batch * fan_in];
    // g[B×O] · Wᵀ[O×I]
    gemm(
        batch,
        fan_out,
        fan_in,
        1.0,
        g,
        (fan_out as isize, 1),
        weights.data(),
        (1, fan_out as isize),
        0.0,
        &mut grad_input,
    );

    let mut grad_weights = vec![0.0; fan_in * fan_out];
    // xᵀ[I×B] · g[B×O]
    gemm(
        fan_in,
        batch,
        fan_out,
        1.0,
        x,
        (1, fan_in as isize),
        g,
        (fan_out as isize, 1),
        0.0,
        &mut grad_weights,
    );

    let mut grad_bias = vec![0.0; fan_out];
    for row in g.chunks_exact(fan_out) {
        for (acc, v) in grad_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }

    Ok(DenseGrads {
        input: Tensor::from_vec(&[batch, fan_in], grad_input)?,
        weights: Tensor::from_vec(&[fan_in, fan_out], grad_weights)?,
        bias: Tensor::from_vec(&[fan_out], grad_bias)?,
    })
}

/// Output extent of a 3×3, stride-2, pad-1 convolution.
pub const fn conv_out_extent(extent: usize) -> usize {
    extent.div_ceil(2)
}

/// For input coordinate `i`, the (kernel tap, output coordinate) pairs it feeds.
/// With stride 2 and padding 1 an input row/column reaches at most two outputs.
fn taps(i: usize, out_extent: usize) -> ([(usize, usize); 2], usize) {
    let mut pairs = [(0, 0); 2];
    let mut n = 0;
    for k in 0..3 {
        let shifted = i + 1;
        if shifted < k || (shifted - k) % 2 != 0 {
            continue;
        }
        let o = (shifted - k) / 2;
        if o < out_extent {
            pairs[n] = (k, o);
            n += 1;
        }
    }
    (pairs, n)
}

struct ConvDims {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_dims(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    op: &'static str,
) -> Result<ConvDims> {
    let [batch, channels, height, width] = *input.shape() else {
        return Err(Error::shape(
            op,
            format!("input must be 4-D, got {:?}", input.shape()),
        ));
    };
    let [filters, k_channels, 3, 3] = *kernels.shape() else {
        return Err(Error::shape(
            op,
            format!("kernels must be F×C×3×3, got {:?}", kernels.shape()),
        ));
    };
    if k_channels != channels {
        return Err(Error::shape(
            op,
            format!("input has {channels} channels, kernels expect {k_channels}"),
        ));
    }
    if height < 3 || width < 3 {
        return Err(Error::shape(
            op,
            format!("spatial extent {height}×{width} below 3×3"),
        ));
    }
    if bias.shape() != [filters] {
        return Err(Error::shape(
            op,
            format!("bias shape {:?}, expected [{filters}]", bias.shape()),
        ));
    }
    Ok(ConvDims {
        batch,
        channels,
        height,
        width,
        filters,
        out_h: conv_out_extent(height),
        out_w: conv_out_extent(width),
    })
}

/// Kernels rearranged to `[c][ky][kx][f]` so the filter loop is contiguous.
fn kernels_cyxf(kernels: &Tensor, filters: usize, channels: usize) -> Vec<f64> {
    let k = kernels.data();
    let mut out = vec![0.0; filters * channels * 9];
    for f in 0..filters {
        for c in 0..channels {
            for tap in 0..9 {
                out[(c * 9 + tap) * filters + f] = k[(f * channels + c) * 9 + tap];
            }
        }
    }
    out
}

/// 3×3 cross-correlation with stride 2 and zero padding 1.
///
/// Accumulates by scattering each nonzero input element into the outputs it
/// reaches; rendered observations are mostly zero so this skips most work.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernels, bias, "conv2d_forward")?;
    let wt = kernels_cyxf(kernels, d.filters, d.channels);
    let f_n = d.filters;
    let plane = d.out_h * d.out_w;
    let in_plane = d.height * d.width;
    let x = input.data();

    let mut out = vec![0.0; d.batch * f_n * plane];
    // [oy][ox][f] scratch for one sample
    let mut acc = vec![0.0; plane * f_n];
    for b in 0..d.batch {
        for cell in acc.chunks_exact_mut(f_n) {
            cell.copy_from_slice(bias.data());
        }
        for c in 0..d.channels {
            let xc = &x[(b * d.channels + c) * in_plane..][..in_plane];
            for iy in 0..d.height {
                let (ty, ny) = taps(iy, d.out_h);
                for ix in 0..d.width {
                    let v = xc[iy * d.width + ix];
                    if v == 0.0 {
                        continue;
                    }
                    let (tx, nx) = taps(ix, d.out_w);
                    for &(ky, oy) in &ty[..ny] {
                        for &(kx, ox) in &tx[..nx] {
                            let w = &wt[(c * 9 + ky * 3 + kx) * f_n..][..f_n];
                            let dst = &mut acc[(oy * d.out_w + ox) * f_n..][..f_n];
                            for (o, wf) in dst.iter_mut().zip(w) {
                                *o += v * wf;
                            }
                        }
                    }
                }
            }
        }
        let ob = &mut out[b * f_n * plane..][..f_n * plane];
        for p in 0..plane {
            for f in 0..f_n {
                ob[f * plane + p] = acc[p * f_n + f];
            }
        }
    }
    Tensor::from_vec(&[d.batch, f_n, d.out_h, d.out_w], out)
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    kernels: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let filters = kernels.shape().first().copied().unwrap_or(0);
    let bias_probe = Tensor::zeros(&[filters.max(1)]);
    let d = conv_dims(cached_input, kernels, &bias_probe, "conv2d_backward")?;
    if grad_out.shape() != [d.batch, d.filters, d.out_h, d.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?}, expected {:?}",
                grad_out.shape(),
                [d.batch, d.filters, d.out_h, d.out_w]
            ),
        ));
    }
    let f_n = d.filters;
    let plane = d.out_h * d.out_w;
    let in_plane = d.height * d.width;
    let x = cached_input.data();
    let g = grad_out.data();
    let wt = kernels_cyxf(kernels, f_n, d.channels);

    let mut gw = vec![0.0; d.channels * 9 * f_n];
    let mut gb = vec![0.0; f_n];
    let mut gx = if want_input_grad {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let mut gs = vec![0.0; plane * f_n];

    for b in 0..d.batch {
        let gb_src = &g[b * f_n * plane..][..f_n * plane];
        for f in 0..f_n {
            let mut s = 0.0;
            for p in 0..plane {
                let v = gb_src[f * plane + p];
                gs[p * f_n + f] = v;
                s += v;
            }
            gb[f] += s;
        }
        for c in 0..d.channels {
            let base = (b * d.channels + c) * in_plane;
            for iy in 0..d.height {
                let (ty, ny) = taps(iy, d.out_h);
                for ix in 0..d.width {
                    let v = x[base + iy * d.width + ix];
                    if v == 0.0 && !want_input_grad {
                        continue;
                    }
                    let (tx, nx) = taps(ix, d.out_w);
                    let mut gin = 0.0;
                    for &(ky, oy) in &ty[..ny] {
                        for &(kx, ox) in &tx[..nx] {
                            let tap = (c * 9 + ky * 3 + kx) * f_n;
                            let gcell = &gs[(oy * d.out_w + ox) * f_n..][..f_n];
                            if v != 0.0 {
                                for (acc, gv) in gw[tap..tap + f_n].iter_mut().zip(gcell) {
                                    *acc += v * gv;
                                }
                            }
                            if want_input_grad {
                                gin += wt[tap..tap + f_n]
                                    .iter()
                                    .zip(gcell)
                                    .map(|(w, gv)| w * gv)
                                    .sum::<f64>();
                            }
                        }
                    }
                    if want_input_grad {
                        gx[base + iy * d.width + ix] = gin;
                    }
                }
            }
        }
    }

    let mut kernels_grad = vec![0.0; f_n * d.channels * 9];
    for f in 0..f_n {
        for c in 0..d.channels {
            for tap in 0..9 {
                kernels_grad[(f * d.channels + c) * 9 + tap] = gw[(c * 9 + tap) * f_n + f];
            }
        }
    }

    Ok(ConvGrads {
        input: if want_input_grad {
            Some(Tensor::from_vec(cached_input.shape(), gx)?)
        } else {
            None
        },
        kernels: Tensor::from_vec(kernels.shape(), kernels_grad)?,
        bias: Tensor::from_vec(&[f_n], gb)?,
    })
}
