use crate::error::{Error, Result};

use super::Tensor;

pub const DEFAULT_LR: f64 = 1e-4;

/// Adam optimiser state for one ordered parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr: DEFAULT_LR,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the step
    /// without touching parameters or moments.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            p.expect_same_shape(g, "adam_step")?;
            p.expect_same_shape(m, "adam_step")?;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", i)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_fn(&[4], |i| i as f64);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[4])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::new(&[3], vec![0.5, -3.0, 1e3]).unwrap();
        let mut st = AdamState::new([&p]);
        st.step(&mut [&mut p], &[g.clone()]).unwrap();
        // t = 1: mhat = g, vhat = g^2, update = -lr * g / (|g| + eps)
        for (pv, gv) in p.data().iter().zip(g.data()) {
            let expect = -DEFAULT_LR * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-18);
            assert!((pv + DEFAULT_LR * gv.signum()).abs() < 1e-11);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Tensor::ones(&[2]);
        let mut st = AdamState::new([&p]);
        let g = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(st.step(&mut [&mut p], &[g]), Err(Error::NonFinite(_))));
        assert_eq!(p, Tensor::ones(&[2]));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn step_counter_increments() {
        let mut p = Tensor::ones(&[2]);
        let mut st = AdamState::new([&p]);
        for i in 1..=5 {
            st.step(&mut [&mut p], &[Tensor::ones(&[2])]).unwrap();
            assert_eq!(st.step_count(), i);
        }
    }
}
