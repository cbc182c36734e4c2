//! Adam with bias correction, and the cosine-annealing learning-rate schedule.

use crate::error::{dim_err, usage_err, Result};
use crate::tensor::Tensor;

/// Moment buffers and hyperparameters for [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper<'a>(
        params: impl IntoIterator<Item = &'a Tensor>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }
}

/// One in-place Adam update.
///
/// Uses the folded bias correction
/// `θ ← θ − lr·√(1−β2ᵗ)/(1−β1ᵗ) · m / (√v + ε)`, so ε is compared against
/// the uncorrected second moment.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(usage_err!("adam_step: lr must be positive, got {lr}"));
    }
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(dim_err!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(dim_err!(
                "adam_step: param {i} shape {:?}, grad {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.first[i].shape()
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let step_size = lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gr;
            *vi = b2 * *vi + (1.0 - b2) * gr * gr;
            *w -= step_size * *mi / (vi.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// `0.5·base_lr·(1 + cos(π·step/total_steps))`, no warmup, reaching 0 at the end.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(usage_err!(
            "cosine_lr: step {step} outside 0..={total_steps} (total must be ≥ 1)"
        ));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(0.5 * base_lr * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut w = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[&g], &mut st, 0.1).unwrap();
        // 1 − 0.1 / (1 + 1e-8/√0.001)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8 / 0.001f64.sqrt());
        assert!((w.item() - expected).abs() < 1e-15);
        assert!((w.item() - 0.9000000316).abs() < 1e-10);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_param_and_decays_moments() {
        let mut w = Tensor::scalar(2.0);
        let mut st = AdamState::new([&w]);
        adam_step(&mut [&mut w], &[&Tensor::scalar(1.0)], &mut st, 0.1).unwrap();
        let before = w.item();
        let (m0, v0) = (st.first_moment(0).item(), st.second_moment(0).item());
        adam_step(&mut [&mut w], &[&Tensor::scalar(0.0)], &mut st, 0.1).unwrap();
        // The carried momentum still moves the parameter; a fresh state does not.
        assert!(st.first_moment(0).item().abs() < m0.abs());
        assert!(st.second_moment(0).item() < v0);
        assert_ne!(w.item(), before);

        let mut fresh = Tensor::scalar(2.0);
        let mut st2 = AdamState::new([&fresh]);
        adam_step(&mut [&mut fresh], &[&Tensor::scalar(0.0)], &mut st2, 0.1).unwrap();
        assert_eq!(fresh.item(), 2.0);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut w = Tensor::zeros([2]);
        let g = Tensor::zeros([3]);
        let mut st = AdamState::new([&w]);
        assert!(adam_step(&mut [&mut w], &[&g], &mut st, 0.1).is_err());
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 5e-4).unwrap(), 5e-4);
        assert!(cosine_lr(10, 10, 5e-4).unwrap().abs() < 1e-20);
        assert!((cosine_lr(5, 10, 5e-4).unwrap() - 2.5e-4).abs() < 1e-18);
        assert!(cosine_lr(11, 10, 1.0).is_err());
        assert!(cosine_lr(0, 0, 1.0).is_err());
    }
}
