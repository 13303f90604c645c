use super::ParamSet;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: ParamSet::new(),
            v: ParamSet::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update (gradient descent on `grads`). A non-finite
    /// gradient aborts the step and leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::shape("adam", format!("no parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("`{name}` gradient shape")));
            }
        }
        if self.m.is_empty() {
            self.m = params.zeros_like();
            self.v = params.zeros_like();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked");
            let m = self.m.get_mut(name).expect("same names");
            let v = self.v.get_mut(name).expect("same names");
            for (((p, m), v), g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam update on `params` in place.
pub fn adam_step(state: &mut Adam, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
    state.step(params, grads)
}
