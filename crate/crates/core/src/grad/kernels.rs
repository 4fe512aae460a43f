//! Backward kernels paired with the forward kernels in `tensor::ops` and
//! `tvconv`. Each takes the upstream gradient `gy` and returns gradients for
//! the requested operands.

use crate::tensor::ops::{partition, valid_range, LayerNormStats};
use crate::tensor::{Element, Tensor};

pub(crate) fn depthwise_backward<T: Element>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gy: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let k = wt.dims()[1];
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut gx = need_x.then(|| vec![T::zero(); c * hw]);
    let mut gw = need_w.then(|| vec![T::zero(); c * k * k]);
    let (xd, wd, gd) = (x.data(), wt.data(), gy.data());
    for ch in 0..c {
        for u in 0..k {
            let du = u as isize - r;
            let (ilo, ihi) = valid_range(du, h);
            for v in 0..k {
                let dv = v as isize - r;
                let (jlo, jhi) = valid_range(dv, w);
                if jlo == jhi {
                    continue;
                }
                let widx = (ch * k + u) * k + v;
                let n = jhi - jlo;
                let mut acc = T::zero();
                for i in ilo..ihi {
                    let ii = (i as isize + du) as usize;
                    let off = (jlo as isize + dv) as usize;
                    let g = &gd[ch * hw + i * w + jlo..][..n];
                    let s = ch * hw + ii * w + off;
                    if let Some(gx) = gx.as_mut() {
                        let wv = wd[widx];
                        for (o, &gv) in gx[s..s + n].iter_mut().zip(g) {
                            *o += wv * gv;
                        }
                    }
                    if need_w {
                        for (&xv, &gv) in xd[s..s + n].iter().zip(g) {
                            acc += xv * gv;
                        }
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    gw[widx] += acc;
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::from_parts(x.dims().to_vec(), d)),
        gw.map(|d| Tensor::from_parts(wt.dims().to_vec(), d)),
    )
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gy: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (ci_n, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (co_n, k) = (wt.dims()[0], wt.dims()[2]);
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut gx = need_x.then(|| vec![T::zero(); ci_n * hw]);
    let mut gw = need_w.then(|| vec![T::zero(); co_n * ci_n * k * k]);
    let (xd, wd, gd) = (x.data(), wt.data(), gy.data());
    for co in 0..co_n {
        let g = &gd[co * hw..(co + 1) * hw];
        for ci in 0..ci_n {
            let xc = &xd[ci * hw..(ci + 1) * hw];
            let wbase = (co * ci_n + ci) * k * k;
            for u in 0..k {
                let du = u as isize - r;
                let (ilo, ihi) = valid_range(du, h);
                for v in 0..k {
                    let dv = v as isize - r;
                    let (jlo, jhi) = valid_range(dv, w);
                    if jlo == jhi {
                        continue;
                    }
                    let n = jhi - jlo;
                    let wv = wd[wbase + u * k + v];
                    let mut acc = T::zero();
                    for i in ilo..ihi {
                        let ii = (i as isize + du) as usize;
                        let off = (jlo as isize + dv) as usize;
                        let grow = &g[i * w + jlo..][..n];
                        let s = ii * w + off;
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ci * hw + s..][..n];
                            for (o, &gv) in dst.iter_mut().zip(grow) {
                                *o += wv * gv;
                            }
                        }
                        if need_w {
                            for (&xv, &gv) in xc[s..s + n].iter().zip(grow) {
                                acc += xv * gv;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[wbase + u * k + v] += acc;
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::from_parts(x.dims().to_vec(), d)),
        gw.map(|d| Tensor::from_parts(wt.dims().to_vec(), d)),
    )
}

/// `field` is the `[c*k*k, h, w]` weight tensor.
pub(crate) fn tvconv_backward<T: Element>(
    x: &Tensor<T>,
    field: &Tensor<T>,
    kernel: usize,
    gy: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let k = kernel;
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut gx = need_x.then(|| vec![T::zero(); c * hw]);
    let mut gw = need_w.then(|| vec![T::zero(); c * k * k * hw]);
    let (xd, wd, gd) = (x.data(), field.data(), gy.data());
    for ch in 0..c {
        for u in 0..k {
            let du = u as isize - r;
            let (ilo, ihi) = valid_range(du, h);
            for v in 0..k {
                let dv = v as isize - r;
                let (jlo, jhi) = valid_range(dv, w);
                if jlo == jhi {
                    continue;
                }
                let n = jhi - jlo;
                let wbase = ((ch * k + u) * k + v) * hw;
                for i in ilo..ihi {
                    let ii = (i as isize + du) as usize;
                    let off = (jlo as isize + dv) as usize;
                    let grow = &gd[ch * hw + i * w + jlo..][..n];
                    let s = ch * hw + ii * w + off;
                    let t = wbase + i * w + jlo;
                    if let Some(gx) = gx.as_mut() {
                        for ((o, &gv), &wv) in gx[s..s + n].iter_mut().zip(grow).zip(&wd[t..t + n]) {
                            *o += wv * gv;
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        for ((o, &gv), &xv) in gw[t..t + n].iter_mut().zip(grow).zip(&xd[s..s + n]) {
                            *o = gv * xv;
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::from_parts(x.dims().to_vec(), d)),
        gw.map(|d| Tensor::from_parts(field.dims().to_vec(), d)),
    )
}

/// Returns `(d input, d gamma, d beta)`.
pub(crate) fn layer_norm_backward<T: Element>(
    stats: &LayerNormStats<T>,
    gamma: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let dims = gy.dims();
    let (c, hw) = (dims[0], dims[1] * dims[2]);
    let n = T::from_f64((c * hw) as f64);
    let xhat = stats.normalized.data();
    let g = gy.data();
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let mut ghat = Vec::with_capacity(g.len());
    for ch in 0..c {
        let gam = gamma.data()[ch];
        for p in ch * hw..(ch + 1) * hw {
            ggamma[ch] += g[p] * xhat[p];
            gbeta[ch] += g[p];
            ghat.push(g[p] * gam);
        }
    }
    let mut mean_g = T::zero();
    let mut mean_gx = T::zero();
    for (&gh, &xh) in ghat.iter().zip(xhat) {
        mean_g += gh;
        mean_gx += gh * xh;
    }
    mean_g /= n;
    mean_gx /= n;
    let gx = ghat
        .iter()
        .zip(xhat)
        .map(|(&gh, &xh)| stats.inv_std * (gh - mean_g - xh * mean_gx))
        .collect();
    (
        Tensor::from_parts(dims.to_vec(), gx),
        Tensor::from_parts(vec![c], ggamma),
        Tensor::from_parts(vec![c], gbeta),
    )
}

pub(crate) fn downsample_mean_backward<T: Element>(in_dims: &[usize], gy: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (in_dims[0], in_dims[1], in_dims[2]);
    let (oh, ow) = (gy.dims()[1], gy.dims()[2]);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oi in 0..oh {
            let (i0, i1) = partition(h, oh, oi);
            for oj in 0..ow {
                let (j0, j1) = partition(w, ow, oj);
                let share = gy.data()[(ch * oh + oi) * ow + oj] / T::from_f64(((i1 - i0) * (j1 - j0)) as f64);
                for i in i0..i1 {
                    for j in j0..j1 {
                        gx[(ch * h + i) * w + j] += share;
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_dims.to_vec(), gx)
}

pub(crate) fn subsample_backward<T: Element>(in_dims: &[usize], stride: usize, gy: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (in_dims[0], in_dims[1], in_dims[2]);
    let (oh, ow) = (gy.dims()[1], gy.dims()[2]);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                gx[(ch * h + i * stride) * w + j * stride] = gy.data()[(ch * oh + i) * ow + j];
            }
        }
    }
    Tensor::from_parts(in_dims.to_vec(), gx)
}

pub(crate) fn global_mean_pool_backward<T: Element>(in_dims: &[usize], gy: &Tensor<T>) -> Tensor<T> {
    let hw = in_dims[1] * in_dims[2];
    let n = T::from_f64(hw as f64);
    let mut gx = Vec::with_capacity(in_dims[0] * hw);
    for &g in gy.data() {
        gx.extend(std::iter::repeat(g / n).take(hw));
    }
    Tensor::from_parts(in_dims.to_vec(), gx)
}

/// For `C = A B`: `dA = dC B^T`, `dB = A^T dC`.
pub(crate) fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (m, kk, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let (ad, bd, gd) = (a.data(), b.data(), gy.data());
    let ga = need_a.then(|| {
        let mut out = vec![T::zero(); m * kk];
        for i in 0..m {
            for p in 0..kk {
                let mut acc = T::zero();
                for (&g, &bv) in gd[i * n..(i + 1) * n].iter().zip(&bd[p * n..(p + 1) * n]) {
                    acc += g * bv;
                }
                out[i * kk + p] = acc;
            }
        }
        Tensor::from_parts(vec![m, kk], out)
    });
    let gb = need_b.then(|| {
        let mut out = vec![T::zero(); kk * n];
        for i in 0..m {
            for p in 0..kk {
                let av = ad[i * kk + p];
                for (o, &g) in out[p * n..(p + 1) * n].iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                    *o += av * g;
                }
            }
        }
        Tensor::from_parts(vec![kk, n], out)
    });
    (ga, gb)
}

/// For `y = W x + b`; returns `(dx, dW, db)`.
pub(crate) fn linear_backward<T: Element>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    gy: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (m, n) = (wt.dims()[0], wt.dims()[1]);
    let (xd, wd, gd) = (x.data(), wt.data(), gy.data());
    let gx = need_x.then(|| {
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &wv) in out.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                *o += wv * gd[i];
            }
        }
        Tensor::from_parts(vec![n], out)
    });
    let mut gw = Vec::with_capacity(m * n);
    for &g in gd {
        gw.extend(xd.iter().map(|&xv| g * xv));
    }
    (gx, Tensor::from_parts(vec![m, n], gw), gy.clone())
}

/// Numerically stable softmax.
pub(crate) fn softmax<T: Element>(logits: &[T]) -> Vec<T> {
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - mx).exp()).collect();
    let mut total = T::zero();
    for &e in &exps {
        total += e;
    }
    exps.into_iter().map(|e| e.quotient(total)).collect()
}
