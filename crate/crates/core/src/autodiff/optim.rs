use super::{ParamSet, Tensor};

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Applies one update; `grads[i]` belongs to the i-th tensor of `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        let values = params.values_mut();
        assert_eq!(values.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = values.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let m = m.data_mut();
            let v = v.data_mut();
            for (i, (w, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn one_step_on_square_moves_toward_zero() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(1.0));
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let loss = b.var(w).square();
        let g = b.grads(&tape.backward(loss).unwrap());
        assert_eq!(g[0].item(), 2.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps, &g);
        // first bias-corrected step has magnitude lr * g / (|g| + eps)
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((ps.get(w).item() - expected).abs() < 1e-12);
        assert!(ps.get(w).item() < 1.0);
    }
}
