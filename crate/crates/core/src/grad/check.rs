use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
/// `f` may evaluate in a wider type than `f64`; the difference is taken in
/// that type before rounding back.
pub fn finite_diff_grad<S: Element>(mut f: impl FnMut(&Tensor) -> S, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push(Element::to_f64((up - down).quotient(S::from_f64(2.0 * eps))));
    }
    Tensor::from_parts(x.dims().to_vec(), grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
}

/// Per element `|a - n| / max(|a|, |n|, 1e-8)`; passes iff the maximum is
/// below `tol`.
pub fn grad_check(analytic: &Tensor, numeric: &Tensor, tol: f64) -> Result<GradReport> {
    analytic.same_dims(numeric, "grad_check")?;
    let (mut rel, mut abs) = (0.0f64, 0.0f64);
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let diff = (a - n).abs();
        abs = abs.max(diff);
        rel = rel.max(diff / a.abs().max(n.abs()).max(1e-8));
    }
    Ok(GradReport {
        max_rel_err: rel,
        max_abs_err: abs,
        pass: rel < tol,
    })
}
