use crate::error::{Error, Result};
use crate::tensor::ops::{odd_kernel, valid_range};
use crate::tensor::{Element, Tensor};

/// Per-position depthwise filters, stored as `[c*k*k, h, w]`.
///
/// Channel `(ch * k + u) * k + v` at `(i, j)` is tap `(u, v)` of the filter
/// applied to channel `ch` at output position `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField<T: Element = f64> {
    field: Tensor<T>,
    channels: usize,
    kernel: usize,
}

impl<T: Element> WeightField<T> {
    pub fn new(field: Tensor<T>, channels: usize, kernel: usize) -> Result<Self> {
        odd_kernel(kernel)?;
        let (ck2, _, _) = field.chw("weight field")?;
        if channels == 0 || ck2 != channels * kernel * kernel {
            return Err(Error::InvalidArgument(format!(
                "weight field has {ck2} channels, expected c*k*k = {channels}*{kernel}*{kernel}"
            )));
        }
        Ok(WeightField {
            field,
            channels,
            kernel,
        })
    }

    /// Same filter `slice` (`[c, k, k]`) at every position of an `h x w` grid.
    pub fn broadcast(slice: &Tensor<T>, h: usize, w: usize) -> Result<Self> {
        let (c, k, k2) = slice.chw("slice")?;
        if k != k2 {
            return Err(Error::InvalidDims {
                dims: slice.dims().to_vec(),
                reason: "filter slice must be [c, k, k]".into(),
            });
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(c * k * k * hw);
        for &v in slice.data() {
            data.extend(std::iter::repeat(v).take(hw));
        }
        Self::new(Tensor::new(vec![c * k * k, h, w], data)?, c, k)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn height(&self) -> usize {
        self.field.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.field.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.field
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.field
    }

    /// The `[c, k, k]` filter used at position `(i, j)`.
    pub fn slice_at(&self, i: usize, j: usize) -> Tensor<T> {
        let (h, w) = (self.height(), self.width());
        let n = self.channels * self.kernel * self.kernel;
        let data = (0..n).map(|ch| self.field.data()[(ch * h + i) * w + j]).collect();
        Tensor::from_parts(vec![self.channels, self.kernel, self.kernel], data)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input.chw("input")?;
        if c != self.channels || h != self.height() || w != self.width() {
            return Err(Error::shape(
                "tvconv weight field does not match input",
                "input",
                input.dims(),
                "weight field",
                &[self.channels, self.kernel, self.kernel, self.height(), self.width()],
            ));
        }
        Ok((c, h, w))
    }
}

/// `O[ch, i, j] = sum_{u,v} W[(ch,u,v), i, j] * I[ch, i+u-r, j+v-r]`,
/// zero-same padding, no bias.
pub fn tvconv_apply<T: Element>(input: &Tensor<T>, wf: &WeightField<T>) -> Result<Tensor<T>> {
    let (c, h, w) = wf.check_input(input)?;
    let k = wf.kernel;
    let r = (k / 2) as isize;
    let hw = h * w;
    let x = input.data();
    let wt = wf.field.data();
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let xc = &x[ch * hw..(ch + 1) * hw];
        let oc = &mut out[ch * hw..(ch + 1) * hw];
        for u in 0..k {
            let du = u as isize - r;
            let (ilo, ihi) = valid_range(du, h);
            for v in 0..k {
                let dv = v as isize - r;
                let (jlo, jhi) = valid_range(dv, w);
                if jlo == jhi {
                    continue;
                }
                let wc = &wt[((ch * k + u) * k + v) * hw..][..hw];
                for i in ilo..ihi {
                    let ii = (i as isize + du) as usize;
                    let off = (jlo as isize + dv) as usize;
                    let n = jhi - jlo;
                    let src = &xc[ii * w + off..][..n];
                    let wrow = &wc[i * w + jlo..][..n];
                    let dst = &mut oc[i * w + jlo..][..n];
                    for ((o, &s), &wv) in dst.iter_mut().zip(src).zip(wrow) {
                        *o += wv * s;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Unoptimised per-position loop nest with the same contract as
/// [`tvconv_apply`]; only used as a correctness reference.
pub fn tvconv_naive_oracle<T: Element>(input: &Tensor<T>, wf: &WeightField<T>) -> Result<Tensor<T>> {
    let (c, h, w) = wf.check_input(input)?;
    let k = wf.kernel;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[c, h, w])?;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = T::zero();
                for u in 0..k {
                    for v in 0..k {
                        let ii = i as isize + u as isize - r;
                        let jj = j as isize + v as isize - r;
                        if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                            continue;
                        }
                        let wv = wf.field.get(&[(ch * k + u) * k + v, i, j])?;
                        acc += wv * input.get(&[ch, ii as usize, jj as usize])?;
                    }
                }
                out.set(&[ch, i, j], acc)?;
            }
        }
    }
    Ok(out)
}

/// Linear factorisation `W' = basis x coeff`, basis `[c*k*k, c_A]`,
/// coeff `[c_A, h*w]`, reshaped to a `[c*k*k, h, w]` field.
pub fn factorized_weights<T: Element>(
    basis: &Tensor<T>,
    coeff: &Tensor<T>,
    channels: usize,
    kernel: usize,
    h: usize,
    w: usize,
) -> Result<WeightField<T>> {
    if coeff.dims().get(1) != Some(&(h * w)) {
        return Err(Error::shape(
            "coefficient columns must equal h*w",
            "coeff",
            coeff.dims(),
            "grid",
            &[h, w],
        ));
    }
    let prod = crate::tensor::ops::matmul(basis, coeff)?;
    let rows = prod.dims()[0];
    WeightField::new(prod.reshape(&[rows, h, w])?, channels, kernel)
}

/// Elements of an unfactorised per-position weight tensor, `c*k*k*h*w`.
pub fn param_count_naive(c: usize, k: usize, h: usize, w: usize) -> usize {
    c * k * k * h * w
}

/// Elements of basis plus coefficients, `c*k*k*c_A + c_A*h*w`.
pub fn param_count_factorized(c: usize, k: usize, h: usize, w: usize, c_a: usize) -> usize {
    c * k * k * c_a + c_a * h * w
}

pub fn reduction_ratio(c: usize, k: usize, h: usize, w: usize, c_a: usize) -> f64 {
    param_count_naive(c, k, h, w) as f64 / param_count_factorized(c, k, h, w, c_a) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::depthwise_conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn constant_field_is_depthwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_t(&[3, 5, 4], &mut rng);
        let slice = rand_t(&[3, 3, 3], &mut rng);
        let wf = WeightField::broadcast(&slice, 5, 4).unwrap();
        assert_eq!(tvconv_apply(&x, &wf).unwrap(), depthwise_conv2d(&x, &slice).unwrap());
        assert_eq!(wf.slice_at(2, 3), slice);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let wf = WeightField::new(rand_t(&[18, 5, 5], &mut rng), 2, 3).unwrap();
        let y = tvconv_apply(&Tensor::zeros(&[2, 5, 5]).unwrap(), &wf).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_t(&[2, 5, 5], &mut rng);
        let wf = WeightField::new(rand_t(&[18, 5, 5], &mut rng), 2, 3).unwrap();
        let a = tvconv_apply(&x, &wf).unwrap();
        let b = tvconv_naive_oracle(&x, &wf).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn metadata_mismatch_is_rejected() {
        let wf = WeightField::new(Tensor::<f64>::zeros(&[18, 5, 5]).unwrap(), 2, 3).unwrap();
        assert!(tvconv_apply(&Tensor::zeros(&[2, 4, 5]).unwrap(), &wf).is_err());
        assert!(tvconv_naive_oracle(&Tensor::zeros(&[3, 5, 5]).unwrap(), &wf).is_err());
        assert!(WeightField::new(Tensor::<f64>::zeros(&[17, 5, 5]).unwrap(), 2, 3).is_err());
        assert!(WeightField::new(Tensor::<f64>::zeros(&[8, 5, 5]).unwrap(), 2, 2).is_err());
    }

    #[test]
    fn factorized_cases() {
        // c_A = 1 with all-ones coefficients: every position carries the basis column
        let basis = Tensor::from_fn(&[9, 1], |i| i as f64 - 4.0).unwrap();
        let coeff = Tensor::filled(&[1, 6], 1.0).unwrap();
        let wf = factorized_weights(&basis, &coeff, 1, 3, 2, 3).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(wf.slice_at(i, j).data(), basis.data());
            }
        }
        // identity basis reproduces the coefficients
        let eye = Tensor::from_fn(&[9, 9], |p| if p / 9 == p % 9 { 1.0 } else { 0.0 }).unwrap();
        let coeff = Tensor::from_fn(&[9, 4], |p| p as f64 * 0.5).unwrap();
        let wf = factorized_weights(&eye, &coeff, 1, 3, 2, 2).unwrap();
        assert_eq!(wf.tensor().data(), coeff.data());
        assert!(factorized_weights(&eye, &coeff, 1, 3, 3, 2).is_err());
    }

    #[test]
    fn factorized_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        // c = 4, k = 1 keeps c*k*k = 4 rows
        let basis = rand_t(&[4, 2], &mut rng);
        let coeff = rand_t(&[2, 6], &mut rng);
        let wf = factorized_weights(&basis, &coeff, 4, 1, 2, 3).unwrap();
        for row in 0..4 {
            for p in 0..6 {
                let mut acc = 0.0;
                for q in 0..2 {
                    acc += basis.data()[row * 2 + q] * coeff.data()[q * 6 + p];
                }
                assert_eq!(wf.tensor().data()[row * 6 + p], acc);
            }
        }
    }

    #[test]
    fn parameter_arithmetic() {
        assert_eq!(param_count_naive(8, 3, 4, 4), 1152);
        assert_eq!(param_count_factorized(8, 3, 4, 4, 1), 88);
        assert!((reduction_ratio(8, 3, 4, 4, 1) - 1152.0 / 88.0).abs() < 1e-12);
        assert_eq!(param_count_naive(32, 3, 56, 56), 903_168);
        assert_eq!(param_count_factorized(32, 3, 56, 56, 1), 3424);
        let r = reduction_ratio(32, 3, 56, 56, 1);
        assert!((r - 263.78).abs() < 0.01);
        assert!((r - 288.0).abs() / 288.0 < 0.10);
        assert_eq!(param_count_naive(1, 1, 1, 1), 1);
        assert_eq!(param_count_factorized(1, 1, 1, 1, 1), 2);
    }
}
