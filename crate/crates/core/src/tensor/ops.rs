//! Forward kernels over `[c, h, w]` feature maps.
//!
//! All spatial ops use zero-same padding: output spatial size equals input
//! spatial size and out-of-bounds reads are zero. Each output element
//! accumulates its products in ascending `(input channel, u, v)` order, so
//! ops that reduce to one another (conv2d with one channel vs depthwise,
//! per-position vs shared weights) agree bit-for-bit.

use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Column range `[lo, hi)` of output positions whose tap at kernel offset
/// `off` (relative to the centre) stays inside a row of length `len`.
#[inline]
pub(crate) fn valid_range(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

pub(crate) fn odd_kernel(k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::EvenKernel(k));
    }
    Ok(())
}

/// Channel-wise convolution with one `k x k` filter per channel.
pub fn depthwise_conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("input")?;
    let (wc, k, k2) = weight.chw("weight")?;
    if k != k2 {
        return Err(Error::InvalidDims {
            dims: weight.dims().to_vec(),
            reason: "depthwise weight must be square [c, k, k]".into(),
        });
    }
    odd_kernel(k)?;
    if wc != c {
        return Err(Error::shape(
            "depthwise_conv2d channel count",
            "input",
            input.dims(),
            "weight",
            weight.dims(),
        ));
    }
    let r = (k / 2) as isize;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        let oc = &mut out[ch * h * w..(ch + 1) * h * w];
        for u in 0..k {
            let du = u as isize - r;
            let (ilo, ihi) = valid_range(du, h);
            for v in 0..k {
                let dv = v as isize - r;
                let (jlo, jhi) = valid_range(dv, w);
                if jlo == jhi {
                    continue;
                }
                let wv = wt[(ch * k + u) * k + v];
                for i in ilo..ihi {
                    let ii = (i as isize + du) as usize;
                    let src = &xc[ii * w..(ii + 1) * w];
                    let dst = &mut oc[i * w..(i + 1) * w];
                    let off = (jlo as isize + dv) as usize;
                    for (o, &s) in dst[jlo..jhi].iter_mut().zip(&src[off..off + (jhi - jlo)]) {
                        *o += wv * s;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Standard multi-channel cross-correlation, weight `[c_out, c_in, k, k]`.
pub fn conv2d<T: Element>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (ci_n, h, w) = input.chw("input")?;
    let (co_n, wci, k) = match weight.dims()[..] {
        [co, ci, k, k2] if k == k2 => (co, ci, k),
        _ => {
            return Err(Error::InvalidDims {
                dims: weight.dims().to_vec(),
                reason: "conv weight must be [c_out, c_in, k, k]".into(),
            })
        }
    };
    odd_kernel(k)?;
    if wci != ci_n {
        return Err(Error::shape(
            "conv2d input channels",
            "input",
            input.dims(),
            "weight",
            weight.dims(),
        ));
    }
    let r = (k / 2) as isize;
    let hw = h * w;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); co_n * hw];
    for co in 0..co_n {
        let oc = &mut out[co * hw..(co + 1) * hw];
        for ci in 0..ci_n {
            let xc = &x[ci * hw..(ci + 1) * hw];
            let wbase = (co * ci_n + ci) * k * k;
            if k == 1 {
                let wv = wt[wbase];
                for (o, &s) in oc.iter_mut().zip(xc) {
                    *o += wv * s;
                }
                continue;
            }
            for u in 0..k {
                let du = u as isize - r;
                let (ilo, ihi) = valid_range(du, h);
                for v in 0..k {
                    let dv = v as isize - r;
                    let (jlo, jhi) = valid_range(dv, w);
                    if jlo == jhi {
                        continue;
                    }
                    let wv = wt[wbase + u * k + v];
                    for i in ilo..ihi {
                        let ii = (i as isize + du) as usize;
                        let src = &xc[ii * w..(ii + 1) * w];
                        let dst = &mut oc[i * w..(i + 1) * w];
                        let off = (jlo as isize + dv) as usize;
                        for (o, &s) in dst[jlo..jhi].iter_mut().zip(&src[off..off + (jhi - jlo)]) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![co_n, h, w], out))
}

/// Per-sample normalisation statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormStats<T: Element> {
    pub normalized: Tensor<T>,
    pub inv_std: T,
}

/// Layer norm over all `c*h*w` elements of one sample, per-channel affine.
pub fn layer_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_with_stats(input, gamma, beta, eps).map(|(out, _)| out)
}

pub fn layer_norm_with_stats<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormStats<T>)> {
    let (c, h, w) = input.chw("input")?;
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("layer_norm eps must be > 0".into()));
    }
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.dims() != [c] {
            return Err(Error::shape("layer_norm affine", "input", input.dims(), name, t.dims()));
        }
    }
    let n = T::from_f64((c * h * w) as f64);
    let x = input.data();
    let mean = input.sum().quotient(n);
    let mut var = T::zero();
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var = var.quotient(n);
    let inv_std = T::one().quotient((var + eps).sqrt());
    let hw = h * w;
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        out.extend(xhat[ch * hw..(ch + 1) * hw].iter().map(|&v| g * v + b));
    }
    Ok((
        Tensor::from_parts(vec![c, h, w], out),
        LayerNormStats {
            normalized: Tensor::from_parts(vec![c, h, w], xhat),
            inv_std,
        },
    ))
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x < T::zero() { T::zero() } else { x })
}

/// Exact tiling of `len` into `parts` near-equal contiguous ranges.
pub(crate) fn partition(len: usize, parts: usize, idx: usize) -> (usize, usize) {
    (idx * len / parts, (idx + 1) * len / parts)
}

/// Adaptive average pooling to `out_h x out_w`; partitions tile the input.
pub fn downsample_mean<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("input")?;
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::InvalidArgument(format!(
            "downsample_mean target {out_h}x{out_w} must be within 1..={h} x 1..={w}"
        )));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oi in 0..out_h {
            let (i0, i1) = partition(h, out_h, oi);
            for oj in 0..out_w {
                let (j0, j1) = partition(w, out_w, oj);
                let mut acc = T::zero();
                for i in i0..i1 {
                    for j in j0..j1 {
                        acc += x[(ch * h + i) * w + j];
                    }
                }
                out.push(acc.quotient(T::from_f64(((i1 - i0) * (j1 - j0)) as f64)));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Keeps every `stride`-th row and column starting at 0.
pub fn subsample<T: Element>(input: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("input")?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if stride == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                out.push(x[(ch * h + i * stride) * w + j * stride]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

/// Spatial mean per channel: `[c, h, w] -> [c]`.
pub fn global_mean_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("input")?;
    let hw = h * w;
    let n = T::from_f64(hw as f64);
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|row| {
            let mut acc = T::zero();
            for &v in row {
                acc += v;
            }
            acc.quotient(n)
        })
        .collect();
    Ok(Tensor::from_parts(vec![c], out))
}

/// `[m, k] x [k, n] -> [m, n]`, inner products accumulated in ascending `k`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka, kb, n) = match (a.dims(), b.dims()) {
        ([m, ka], [kb, n]) => (*m, *ka, *kb, *n),
        _ => return Err(Error::shape("matmul needs 2-D operands", "a", a.dims(), "b", b.dims())),
    };
    if ka != kb {
        return Err(Error::shape("matmul inner dims", "a", a.dims(), "b", b.dims()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..ka {
            let av = ad[i * ka + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Affine map `weight [m, n] * x [n] + bias [m]`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match weight.dims() {
        [m, n] => (*m, *n),
        d => {
            return Err(Error::InvalidDims {
                dims: d.to_vec(),
                reason: "linear weight must be [out, in]".into(),
            })
        }
    };
    if x.dims() != [n] || bias.dims() != [m] {
        return Err(Error::shape("linear operands", "x", x.dims(), "weight", weight.dims()));
    }
    let out = (0..m)
        .map(|i| {
            let mut acc = bias.data()[i];
            for (&wv, &xv) in weight.data()[i * n..(i + 1) * n].iter().zip(x.data()) {
                acc += wv * xv;
            }
            acc
        })
        .collect();
    Ok(Tensor::from_parts(vec![m], out))
}
