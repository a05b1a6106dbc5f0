use cpseg_tensor::{ParamKind, ParameterStore, Scalar};

use crate::error::{Error, Result};

/// Adam with bias correction and L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(store: &ParameterStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |(_, e): (_, &cpseg_tensor::ParamEntry<T>)| match e.kind {
            ParamKind::Learnable => vec![0.0; e.value.numel()],
            ParamKind::Buffer => Vec::new(),
        };
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: store.entries().map(zeros).collect(),
            v: store.entries().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every learnable entry. Missing gradients count as zero.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<T: Scalar>(&mut self, store: &mut ParameterStore<T>, lr: f64, weight_decay: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::config("optimizer state does not match the parameter store"));
        }
        for id in store.ids() {
            if let Some(g) = store.grad(id) {
                if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient in `{}` at element {i}",
                        store.path(id)
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.kind(id) != ParamKind::Learnable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let (value, grad) = store.value_and_grad_mut(id);
            let grad = grad.map(|g| g.data());
            for (i, theta) in value.data_mut().iter_mut().enumerate() {
                let th = theta.as_f64();
                let g = grad.map_or(0.0, |g| g[i].as_f64()) + weight_decay * th;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *theta = T::from_f64_lossy(th - lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpseg_tensor::Tensor;

    fn single(theta: f64) -> (ParameterStore<f64>, cpseg_tensor::ParamId) {
        let mut store = ParameterStore::new();
        let id = store.register("p", ParamKind::Learnable, Tensor::full([1], theta)).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut store, id) = single(2.5);
        store.zero_grad();
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        adam.step(&mut store, 1e-3, 0.0).unwrap();
        assert_eq!(store.value(id).data()[0], 2.5);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = single(0.0);
        store.accumulate_grad(id, &[1.0]);
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        adam.step(&mut store, 1e-3, 0.0).unwrap();
        // mhat = 1, vhat = 1: update = lr / (1 + eps)
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((store.value(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn coupled_decay_shrinks_weights() {
        let (mut store, id) = single(10.0);
        store.zero_grad();
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        adam.step(&mut store, 1e-3, 1e-4).unwrap();
        // effective gradient 1e-3 > 0, normalized step of size ~lr
        let th = store.value(id).data()[0];
        assert!(th < 10.0 && (10.0 - th - 1e-3).abs() < 1e-8, "{th}");
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (mut store, id) = single(1.0);
        store.accumulate_grad(id, &[f64::NAN]);
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        let err = adam.step(&mut store, 1e-3, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("`p`")));
        assert_eq!(store.value(id).data()[0], 1.0);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut store = ParameterStore::<f64>::new();
        let id = store.register("rv", ParamKind::Buffer, Tensor::full([2], 1.0)).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        adam.step(&mut store, 1.0, 1.0).unwrap();
        assert_eq!(store.value(id).data(), &[1.0, 1.0]);
    }
}
