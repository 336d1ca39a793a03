use crate::error::Result;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

use super::config::OptimizerKind;

/// Decoupled-weight-decay Adam, or plain SGD with the same decay.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` is in store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if grads.len() != ids.len() {
            return Err(crate::GresError::shape(&[ids.len()], &[grads.len()]));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, id) in ids.into_iter().enumerate() {
            let param = store.get_mut(id);
            if param.shape() != grads[k].shape() {
                return Err(crate::GresError::shape(param.shape(), grads[k].shape()));
            }
            let g = grads[k].data();
            let w = param.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (wi, &gi) in w.iter_mut().zip(g) {
                        *wi -= self.lr * (gi + self.weight_decay * *wi);
                    }
                }
                OptimizerKind::Adamw => {
                    let m = self.m[k].data_mut();
                    let v = self.v[k].data_mut();
                    for i in 0..w.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w[i]);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![3.0, -2.0]));
        s
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut s = quadratic_store();
        let mut opt = Optimizer::new(OptimizerKind::Adamw, &s, 0.1, 0.0);
        opt.step(&mut s, &[Tensor::vector(vec![5.0, -0.01])]).unwrap();
        let w = s.get(s.ids().next().unwrap()).data().to_vec();
        assert!((w[0] - 2.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-4);
    }

    #[test]
    fn both_kinds_minimize_a_quadratic() {
        for kind in [OptimizerKind::Adamw, OptimizerKind::Sgd] {
            let mut s = quadratic_store();
            let mut opt = Optimizer::new(kind, &s, 0.05, 0.0);
            let id = s.ids().next().unwrap();
            for _ in 0..500 {
                let grad = s.get(id).map(|x| 2.0 * x);
                opt.step(&mut s, &[grad]).unwrap();
            }
            assert!(s.get(id).data().iter().all(|x| x.abs() < 1e-2), "{kind:?}");
        }
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut s = quadratic_store();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &s, 0.1, 0.0);
        assert!(opt.step(&mut s, &[]).is_err());
        assert!(opt.step(&mut s, &[Tensor::vector(vec![1.0])]).is_err());
    }
}
