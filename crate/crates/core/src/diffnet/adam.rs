use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state; one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    /// One bias-corrected Adam update in place.
    ///
    /// Moment buffers are allocated lazily on the first call and must keep
    /// the same shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam parameter list", &[params.len()], &[grads.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("adam parameter {i}"), p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::shape("adam state", &[self.first.len()], &[params.len()]));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::row(&[1.0, -2.0]);
        let before = p.clone();
        let mut st = AdamState::new(1e-2);
        for _ in 0..5 {
            st.step(&mut [&mut p], &[Tensor::zeros(&[1, 2])]).unwrap();
        }
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!((a - b).abs() <= st.lr * st.eps);
        }
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_matches_formula() {
        let lr = 0.05;
        let g = [0.3, -4.0, 1e-3];
        let mut p = Tensor::row(&[0.0; 3]);
        let mut st = AdamState::new(lr);
        st.step(&mut [&mut p], &[Tensor::row(&g)]).unwrap();
        for (w, gi) in p.data().iter().zip(g) {
            // bias correction makes mhat = g and vhat = g^2 on the first step
            let want = -lr * gi / (gi.abs() + st.eps);
            assert!((w - want).abs() < 1e-15, "{w} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let lr = 1e-3;
        let mut p = Tensor::row(&[0.0]);
        let mut st = AdamState::new(lr);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.data()[0];
            st.step(&mut [&mut p], &[Tensor::row(&[2.5])]).unwrap();
            last = before - p.data()[0];
        }
        assert!((last - lr).abs() < 1e-9 * 1e3 * lr, "update {last}");
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::row(&[0.0]);
        let mut st = AdamState::new(1e-3);
        let err = st.step(&mut [&mut p], &[Tensor::row(&[f64::NAN])]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.data()[0], 0.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::row(&[3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
