//! SGD with momentum and coupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// One update slot. Frozen slots are left untouched and keep no velocity
/// history.
pub struct SgdParam<'a> {
    pub value: &'a mut Tensor,
    pub decay: bool,
    pub trainable: bool,
}

/// Velocity per parameter slot, created on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

/// `v <- m v + g + wd p` (decay only where enabled), then `p <- p - lr v`.
pub fn sgd_step(params: &mut [SgdParam<'_>], grads: &[Tensor], state: &mut SgdState, hp: SgdHyper) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if state.velocity.is_empty() {
        state.velocity = params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect::<Result<_>>()?;
    }
    if state.velocity.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state has {} slots, got {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(&mut state.velocity).enumerate() {
        if g.dims() != p.value.dims() || v.dims() != p.value.dims() {
            return Err(Error::shape(format!("sgd slot {i}"), "param", p.value.dims(), "grad", g.dims()));
        }
        if !p.trainable {
            continue;
        }
        let wd = if p.decay { hp.weight_decay } else { 0.0 };
        for ((pv, &gv), vv) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = hp.momentum * *vv + gv + wd * *pv;
            *pv -= hp.lr * *vv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &mut Tensor, g: &Tensor, state: &mut SgdState, hp: SgdHyper) {
        let mut slots = [SgdParam { value: p, decay: true, trainable: true }];
        sgd_step(&mut slots, std::slice::from_ref(g), state, hp).unwrap();
    }

    #[test]
    fn two_momentum_steps_by_hand() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut st = SgdState::default();
        let hp = SgdHyper { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        step(&mut p, &g, &mut st, hp);
        assert_eq!(st.velocity[0].data(), &[1.0]);
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
        step(&mut p, &g, &mut st, hp);
        assert!((st.velocity[0].data()[0] - 1.9).abs() < 1e-15);
        assert!((p.data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn plain_descent_without_momentum() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.5, 4.0]).unwrap();
        let mut st = SgdState::default();
        step(&mut p, &g, &mut st, SgdHyper { lr: 0.25, momentum: 0.0, weight_decay: 0.0 });
        assert_eq!(p.data(), &[0.875, -3.0]);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let mut p = Tensor::scalar(3.0);
        let mut st = SgdState { velocity: vec![Tensor::scalar(0.0)] };
        step(&mut p, &Tensor::scalar(2.0), &mut st, SgdHyper { lr: 0.0, momentum: 0.5, weight_decay: 0.0 });
        for want in [1.0, 0.5, 0.25] {
            step(&mut p, &Tensor::scalar(0.0), &mut st, SgdHyper { lr: 0.0, momentum: 0.5, weight_decay: 0.0 });
            assert_eq!(st.velocity[0].data(), &[want]);
            assert_eq!(p.data(), &[3.0]);
        }
    }

    #[test]
    fn decay_flag_and_frozen_slots() {
        let (mut a, mut b, mut c) = (Tensor::scalar(2.0), Tensor::scalar(2.0), Tensor::scalar(2.0));
        let mut slots = [
            SgdParam { value: &mut a, decay: true, trainable: true },
            SgdParam { value: &mut b, decay: false, trainable: true },
            SgdParam { value: &mut c, decay: true, trainable: false },
        ];
        let g = vec![Tensor::scalar(1.0); 3];
        let hp = SgdHyper { lr: 0.5, momentum: 0.9, weight_decay: 0.1 };
        sgd_step(&mut slots, &g, &mut SgdState::default(), hp).unwrap();
        assert!((a.data()[0] - 1.4).abs() < 1e-15);
        assert_eq!(b.data(), &[1.5]);
        assert_eq!(c.data(), &[2.0]);
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        let mut p = Tensor::zeros(&[2]).unwrap();
        let mut slots = [SgdParam { value: &mut p, decay: true, trainable: true }];
        let hp = SgdHyper { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        assert!(sgd_step(&mut slots, &[Tensor::zeros(&[3]).unwrap()], &mut SgdState::default(), hp).is_err());
        assert!(sgd_step(&mut slots, &[], &mut SgdState::default(), hp).is_err());
    }
}
