//! Adam optimizer with bias correction.

use super::tensor::{ParamVisitor, Tensor};

pub const ADAM_LR: f64 = 1e-3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first/second moment state, laid out in parameter visit
/// order. The model must present its parameters in the same order on every
/// step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients currently accumulated in the
    /// model's parameters, then leaves gradients untouched (callers zero them).
    pub fn step<T: ParamVisitor + ?Sized>(&mut self, model: &mut T) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = self.lr;
        let eps = self.eps;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut idx = 0usize;
        model.visit_params(&mut |p| {
            if m_all.len() <= idx {
                m_all.push(Tensor::zeros(&p.value.shape));
                v_all.push(Tensor::zeros(&p.value.shape));
            }
            let m = &mut m_all[idx];
            let v = &mut v_all[idx];
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * g;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::tensor::Param;

    struct One {
        p: Param,
    }

    impl ParamVisitor for One {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.p);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut m = One {
            p: Param::new(Tensor::from_vec(&[2], vec![1.5, -2.0])),
        };
        let mut opt = Adam::new(ADAM_LR);
        for _ in 0..5 {
            opt.step(&mut m);
        }
        assert_eq!(m.p.value.data, vec![1.5, -2.0]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut m = One {
            p: Param::new(Tensor::from_vec(&[1], vec![0.0])),
        };
        let mut opt = Adam::new(1e-3);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..500 {
            m.p.grad.data[0] = 0.7;
            opt.step(&mut m);
            last_step = (m.p.value.data[0] - prev).abs();
            prev = m.p.value.data[0];
        }
        assert!(
            (last_step - 1e-3).abs() < 1e-4,
            "step size {last_step} should approach lr"
        );
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut m = One {
                p: Param::new(Tensor::from_vec(&[1], vec![1.0])),
            };
            let mut opt = Adam::new(1e-2);
            for i in 0..50 {
                m.p.grad.data[0] = (i as f64 * 0.1).sin();
                opt.step(&mut m);
            }
            m.p.value.data[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
