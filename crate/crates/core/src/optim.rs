//! Adam with decoupled weight decay.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for one group of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'p>(params: impl IntoIterator<Item = &'p Matrix>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("learning rate must be positive, got {lr}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Adam { lr, weight_decay })
    }

    /// One update. `names` labels parameters in diagnostics; all gradients are
    /// checked before anything is modified.
    pub fn step(
        &self,
        params: &mut [&mut Matrix],
        grads: &[Matrix],
        state: &mut AdamState,
        names: &dyn Fn(usize) -> String,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: names(i) });
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - libm::pow(BETA1, t as f64);
        let bc2 = 1.0 - libm::pow(BETA2, t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = state.m[i].as_mut_slice();
            let v = state.v[i].as_mut_slice();
            for (j, w) in p.as_mut_slice().iter_mut().enumerate() {
                *w -= self.lr * self.weight_decay * *w;
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * m_hat / (libm::sqrt(v_hat) + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn name(i: usize) -> String {
        format!("p{i}")
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Matrix::scalar(0.0);
        let mut st = AdamState::new([&p]);
        let opt = Adam::new(0.1, 0.0).unwrap();
        opt.step(&mut [&mut p], &[Matrix::scalar(1.0)], &mut st, &name).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-8, "{:?}", p);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        Adam::new(0.1, 0.0)
            .unwrap()
            .step(&mut [&mut p], &[Matrix::zeros(1, 2)], &mut st, &name)
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn decay_only() {
        let mut p = Matrix::scalar(1.0);
        let mut st = AdamState::new([&p]);
        Adam::new(0.01, 0.1)
            .unwrap()
            .step(&mut [&mut p], &[Matrix::scalar(0.0)], &mut st, &name)
            .unwrap();
        assert!((p.get(0, 0) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Matrix::scalar(1.0);
        let mut q = Matrix::scalar(1.0);
        let mut st = AdamState::new([&p, &q]);
        let err = Adam::new(0.01, 0.0)
            .unwrap()
            .step(
                &mut [&mut p, &mut q],
                &[Matrix::scalar(0.0), Matrix::scalar(f64::NAN)],
                &mut st,
                &name,
            )
            .unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { param: "p1".into() });
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_lr() {
        assert!(Adam::new(0.0, 0.0).is_err());
        assert!(Adam::new(-1.0, 0.0).is_err());
    }
}
