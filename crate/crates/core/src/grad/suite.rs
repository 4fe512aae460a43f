//! Randomised finite-difference checks for every differentiable op.
//!
//! Each case draws a small random instance, records it on a tape, reduces the
//! output to a scalar through fixed random weights and compares
//! [`Tape::backward`] against [`finite_diff_grad`] for every input tensor.
//! The numeric side runs the same graph in double-double arithmetic, so the
//! central difference at `eps = 1e-6` is limited by truncation rather than
//! by `f64` rounding of the loss.
//! Instances whose ReLU pre-activations come within `10 * eps` of zero are
//! re-drawn.

use rand::Rng as _;

use super::{finite_diff_grad, grad_check, NodeId, ParamId, Tape};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};
use crate::tensor::ops::DEFAULT_LN_EPS;
use crate::tensor::{Element, Tensor};
use num_traits::Float;
use twofloat::TwoFloat;
use crate::tvconv::{GeneratorConfig, GeneratorParams};

/// Finite-difference step used by the suite.
pub const SUITE_EPS: f64 = 1e-6;

/// Aggregate result for one op.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl OpCheck {
    pub fn pass(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

type Build<T> = Box<dyn Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>>;

/// High-precision element for the numeric side of each check.
type Wide = TwoFloat;

/// One random instance: the differentiable inputs and the graph over them,
/// recorded once in `f64` for backward and once in double-double for the
/// finite-difference oracle.
pub struct Case {
    pub inputs: Vec<Tensor>,
    build: Build<f64>,
    build_wide: Build<Wide>,
}

/// Builds a [`Case`] from one graph body; `[captures]` are cloned so the two
/// closures own separate copies.
macro_rules! case {
    ($inputs:expr, [$($cap:ident),*], |$t:ident, $p:ident| $body:expr) => {{
        let narrow = {
            $(let $cap = $cap.clone();)*
            move |$t: &mut Tape<f64>, $p: &[NodeId]| -> Result<NodeId> { $body }
        };
        let wide = move |$t: &mut Tape<Wide>, $p: &[NodeId]| -> Result<NodeId> { $body };
        Case {
            inputs: $inputs,
            build: Box::new(narrow),
            build_wide: Box::new(wide),
        }
    }};
}

fn record<T: Element>(build: &Build<T>, inputs: &[Tensor<T>]) -> Result<(Tape<T>, NodeId)> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(ParamId(i), t.clone()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    Ok((tape, loss))
}

impl Case {
    pub fn loss(&self, inputs: &[Tensor]) -> Result<f64> {
        let (tape, loss) = record(&self.build, inputs)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Analytic gradients per input, in order.
    pub fn analytic(&self) -> Result<Vec<Tensor>> {
        let (tape, loss) = record(&self.build, &self.inputs)?;
        let grads = tape.backward(loss)?;
        Ok((0..self.inputs.len())
            .map(|i| grads.param(ParamId(i)).cloned().expect("every input is a param"))
            .collect())
    }

    /// Central-difference gradients per input, in order. Perturbations are
    /// applied in `f64`; the loss and the difference are evaluated in
    /// double-double so rounding in the forward pass does not swamp small
    /// gradients.
    pub fn numeric(&self, eps: f64) -> Result<Vec<Tensor>> {
        let wide: Vec<Tensor<Wide>> = self.inputs.iter().map(|t| t.cast()).collect();
        let mut out = Vec::with_capacity(self.inputs.len());
        for i in 0..self.inputs.len() {
            let mut err = None;
            let mut probe = wide.clone();
            let g = finite_diff_grad(
                |x| {
                    probe[i] = x.cast();
                    match record(&self.build_wide, &probe) {
                        Ok((tape, loss)) => tape.value(loss).data()[0],
                        Err(e) => {
                            err.get_or_insert(e.to_string());
                            Wide::nan()
                        }
                    }
                },
                &self.inputs[i],
                eps,
            );
            if let Some(e) = err {
                return Err(Error::Tape(e));
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Central differences for selected `(input, element)` entries only.
    pub fn numeric_entries(&self, eps: f64, picks: &[(usize, usize)]) -> Result<Vec<f64>> {
        let base: Vec<Tensor<Wide>> = self.inputs.iter().map(|t| t.cast()).collect();
        let eval = |probe: &[Tensor<Wide>]| -> Result<Wide> {
            let (tape, loss) = record(&self.build_wide, probe)?;
            Ok(tape.value(loss).data()[0])
        };
        let mut out = Vec::with_capacity(picks.len());
        for &(i, e) in picks {
            let x = self.inputs[i].data()[e];
            let mut probe = base.clone();
            probe[i].data_mut()[e] = Wide::from_f64(x + eps);
            let up = eval(&probe)?;
            probe[i].data_mut()[e] = Wide::from_f64(x - eps);
            let down = eval(&probe)?;
            out.push(Element::to_f64((up - down).quotient(Wide::from_f64(2.0 * eps))));
        }
        Ok(out)
    }

    pub fn relu_margin(&self) -> Result<f64> {
        Ok(record(&self.build, &self.inputs)?.0.relu_margin())
    }
}

fn uniform(rng: &mut Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).expect("suite dims are positive")
}

/// `sum(out * r)` for a fixed random `r`, so no output direction is special.
fn weighted<T: Element>(tape: &mut Tape<T>, out: NodeId, r: &Tensor) -> Result<NodeId> {
    let r = tape.constant(r.cast());
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn odd(rng: &mut Rng, max: usize) -> usize {
    2 * rng.gen_range(0..=max / 2) + 1
}

fn chw(rng: &mut Rng, max_c: usize, max_hw: usize) -> [usize; 3] {
    [rng.gen_range(1..=max_c), rng.gen_range(1..=max_hw), rng.gen_range(1..=max_hw)]
}

/// Output weights for an op whose output dims are known up front.
fn draw_weights(rng: &mut Rng, out_dims: &[usize]) -> Tensor {
    uniform(rng, out_dims)
}

/// Names of all cases, in report order.
pub const OPS: &[&str] = &[
    "depthwise_conv2d",
    "conv2d",
    "layer_norm",
    "relu",
    "downsample_mean",
    "subsample",
    "global_mean_pool",
    "linear",
    "matmul",
    "reshape",
    "add",
    "mul",
    "scale",
    "sum",
    "softmax_cross_entropy",
    "tvconv_apply",
    "tvconv_layer",
];

/// Draws one random instance of `op`.
pub fn draw_case(op: &str, rng: &mut Rng) -> Result<Case> {
    let case = match op {
        "depthwise_conv2d" => {
            let d = chw(rng, 3, 6);
            let k = odd(rng, 5);
            let x = uniform(rng, &d);
            let w = uniform(rng, &[d[0], k, k]);
            let r = draw_weights(rng, &d);
            case!(vec![x, w], [r], |t, p| {
                let y = t.depthwise_conv2d(p[0], p[1])?;
                weighted(t, y, &r)
            })
        }
        "conv2d" => {
            let d = chw(rng, 3, 5);
            let co = rng.gen_range(1..=3);
            let k = odd(rng, 3);
            let x = uniform(rng, &d);
            let w = uniform(rng, &[co, d[0], k, k]);
            let r = draw_weights(rng, &[co, d[1], d[2]]);
            case!(vec![x, w], [r], |t, p| {
                let y = t.conv2d(p[0], p[1])?;
                weighted(t, y, &r)
            })
        }
        "layer_norm" => {
            let d = chw(rng, 3, 4);
            let x = uniform(rng, &d);
            let g = uniform(rng, &[d[0]]);
            let b = uniform(rng, &[d[0]]);
            let r = draw_weights(rng, &d);
            case!(vec![x, g, b], [r], |t, p| {
                let y = t.layer_norm(p[0], p[1], p[2], DEFAULT_LN_EPS)?;
                weighted(t, y, &r)
            })
        }
        "relu" => {
            let d = chw(rng, 3, 5);
            let x = uniform(rng, &d);
            let r = draw_weights(rng, &d);
            case!(vec![x], [r], |t, p| {
                let y = t.relu(p[0])?;
                weighted(t, y, &r)
            })
        }
        "downsample_mean" => {
            let d = chw(rng, 3, 7);
            let (oh, ow) = (rng.gen_range(1..=d[1]), rng.gen_range(1..=d[2]));
            let x = uniform(rng, &d);
            let r = draw_weights(rng, &[d[0], oh, ow]);
            case!(vec![x], [r], |t, p| {
                let y = t.downsample_mean(p[0], oh, ow)?;
                weighted(t, y, &r)
            })
        }
        "subsample" => {
            let d = chw(rng, 3, 7);
            let s = rng.gen_range(1..=3);
            let x = uniform(rng, &d);
            let r = draw_weights(rng, &[d[0], d[1].div_ceil(s), d[2].div_ceil(s)]);
            case!(vec![x], [r], |t, p| {
                let y = t.subsample(p[0], s)?;
                weighted(t, y, &r)
            })
        }
        "global_mean_pool" => {
            let d = chw(rng, 4, 5);
            let x = uniform(rng, &d);
            let r = draw_weights(rng, &[d[0]]);
            case!(vec![x], [r], |t, p| {
                let y = t.global_mean_pool(p[0])?;
                weighted(t, y, &r)
            })
        }
        "linear" => {
            let (m, n) = (rng.gen_range(1..=5), rng.gen_range(1..=6));
            let x = uniform(rng, &[n]);
            let w = uniform(rng, &[m, n]);
            let b = uniform(rng, &[m]);
            let r = draw_weights(rng, &[m]);
            case!(vec![x, w, b], [r], |t, p| {
                let y = t.linear(p[0], p[1], p[2])?;
                weighted(t, y, &r)
            })
        }
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = uniform(rng, &[m, k]);
            let b = uniform(rng, &[k, n]);
            let r = draw_weights(rng, &[m, n]);
            case!(vec![a, b], [r], |t, p| {
                let y = t.matmul(p[0], p[1])?;
                weighted(t, y, &r)
            })
        }
        "reshape" => {
            let d = chw(rng, 3, 4);
            let x = uniform(rng, &d);
            let flat = [d.iter().product::<usize>()];
            let r = draw_weights(rng, &flat);
            case!(vec![x], [r], |t, p| {
                let y = t.reshape(p[0], &flat)?;
                weighted(t, y, &r)
            })
        }
        "add" | "mul" => {
            let d = chw(rng, 3, 4);
            let a = uniform(rng, &d);
            let b = uniform(rng, &d);
            let r = draw_weights(rng, &d);
            let is_add = op == "add";
            case!(vec![a, b], [r], |t, p| {
                let y = if is_add { t.add(p[0], p[1])? } else { t.mul(p[0], p[1])? };
                weighted(t, y, &r)
            })
        }
        "scale" => {
            let d = chw(rng, 3, 4);
            let s = rng.gen_range(-2.0..2.0);
            let x = uniform(rng, &d);
            let r = draw_weights(rng, &d);
            case!(vec![x], [r], |t, p| {
                let y = t.scale(p[0], s)?;
                weighted(t, y, &r)
            })
        }
        "sum" => {
            let d = chw(rng, 3, 4);
            let x = uniform(rng, &d);
            // square first so the gradient is not constant
            case!(vec![x], [], |t, p| {
                let y = t.mul(p[0], p[0])?;
                t.sum(y)
            })
        }
        "softmax_cross_entropy" => {
            let n = rng.gen_range(2..=8);
            let label = rng.gen_range(0..n);
            let z = uniform(rng, &[n]).scale(3.0);
            case!(vec![z], [], |t, p| t.softmax_cross_entropy(p[0], label))
        }
        "tvconv_apply" => {
            let d = chw(rng, 4, 6);
            let k = odd(rng, 3);
            let x = uniform(rng, &d);
            let field = uniform(rng, &[d[0] * k * k, d[1], d[2]]);
            let r = draw_weights(rng, &d);
            case!(vec![x, field], [r], |t, p| {
                let y = t.tvconv_apply(p[0], p[1], k)?;
                weighted(t, y, &r)
            })
        }
        "tvconv_layer" => tvconv_layer_case(rng, 3, 5, 4)?,
        other => return Err(Error::InvalidArgument(format!("no gradient case for op '{other}'"))),
    };
    Ok(case)
}

/// A full layer: input, affinity maps and every generator tensor are
/// differentiable inputs, in that order.
fn tvconv_layer_case(rng: &mut Rng, max_c: usize, max_hw: usize, max_cb: usize) -> Result<Case> {
    let d = chw(rng, max_c, max_hw);
    let k = odd(rng, 3);
    let c_a = rng.gen_range(1..=3);
    let cfg = GeneratorConfig {
        layers: rng.gen_range(0..=3),
        channels: rng.gen_range(1..=max_cb),
        kernel: odd(rng, 3),
    };
    let mut gen = GeneratorParams::init(c_a, d[0], k, cfg, rng)?;
    for unit in &mut gen.hidden {
        unit.gamma = uniform(rng, unit.gamma.dims()).map(|v| v + 1.5);
        unit.beta = uniform(rng, unit.beta.dims()).scale(0.5);
    }
    let x = uniform(rng, &d);
    let a = uniform(rng, &[c_a, d[1], d[2]]);
    let r = draw_weights(rng, &d);
    let mut inputs = vec![x, a];
    inputs.extend(gen.tensors().into_iter().cloned());
    Ok(case!(inputs, [gen, r], |t, p| {
        let field = gen.record(t, p[1], &p[2..])?;
        let y = t.tvconv_apply(p[0], field, k)?;
        weighted(t, y, &r)
    }))
}

/// The full layer with the default generator (`L = 3`, `c_B = 64`,
/// `k_B = 3`) and `c_A = 4`, on a `c x h x w` input with `k = 3`.
pub fn default_layer_case(rng: &mut Rng, c: usize, h: usize, w: usize) -> Result<Case> {
    let gen = GeneratorParams::init(4, c, 3, GeneratorConfig::default(), rng)?;
    let x = uniform(rng, &[c, h, w]);
    let a = uniform(rng, &[4, h, w]);
    let r = draw_weights(rng, &[c, h, w]);
    let mut inputs = vec![x, a];
    inputs.extend(gen.tensors().into_iter().cloned());
    Ok(case!(inputs, [gen, r], |t, p| {
        let field = gen.record(t, p[1], &p[2..])?;
        let y = t.tvconv_apply(p[0], field, 3)?;
        weighted(t, y, &r)
    }))
}

/// Draws a case for `op`, re-drawing while a ReLU sits within `10 * eps`
/// of its kink.
pub fn draw_smooth_case(op: &str, rng: &mut Rng, eps: f64) -> Result<Case> {
    for _ in 0..1000 {
        let case = draw_case(op, rng)?;
        if case.relu_margin()? > 10.0 * eps {
            return Ok(case);
        }
    }
    Err(Error::InvalidArgument(format!("could not draw a kink-free instance of '{op}'")))
}

/// Checks `instances` random instances of `op`.
pub fn check_op(op: &'static str, seed: u64, instances: usize, tol: f64) -> Result<OpCheck> {
    let mut rng = rng_for(seed, &format!("gradcheck/{op}"));
    let mut res = OpCheck {
        op,
        instances,
        failures: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for _ in 0..instances {
        let case = draw_smooth_case(op, &mut rng, SUITE_EPS)?;
        let analytic = case.analytic()?;
        let numeric = case.numeric(SUITE_EPS)?;
        let mut ok = true;
        for (a, n) in analytic.iter().zip(&numeric) {
            let rep = grad_check(a, n, tol)?;
            res.max_rel_err = res.max_rel_err.max(rep.max_rel_err);
            res.max_abs_err = res.max_abs_err.max(rep.max_abs_err);
            ok &= rep.pass;
        }
        if !ok {
            res.failures += 1;
        }
    }
    Ok(res)
}

/// Runs every case in [`OPS`].
pub fn run_suite(seed: u64, instances: usize, tol: f64) -> Result<Vec<OpCheck>> {
    OPS.iter().map(|op| check_op(op, seed, instances, tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_has_a_case() {
        let mut rng = rng_for(0, "t");
        for op in OPS {
            let case = draw_case(op, &mut rng).unwrap();
            assert_eq!(case.analytic().unwrap().len(), case.inputs.len());
        }
        assert!(draw_case("nope", &mut rng).is_err());
    }

    #[test]
    fn small_run_passes() {
        for op in OPS {
            let r = check_op(op, 3, 3, 1e-5).unwrap();
            assert!(r.pass(), "{r:?}");
        }
    }
}
