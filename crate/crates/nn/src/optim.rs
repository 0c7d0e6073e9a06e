use crate::params::{Gradients, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Moment accumulators for every parameter of one store.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f32, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            kind,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn adam(lr: f32, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::ADAM, lr, store)
    }

    pub fn sgd(lr: f32, store: &ParamStore) -> Self {
        Self::new(OptimizerKind::Sgd, lr, store)
    }

    /// Moves every trainable parameter of `store` against its gradient.
    ///
    /// Parameters without a gradient are left alone; a tensor whose gradient
    /// holds a non-finite value is skipped with a warning. Returns the number
    /// of tensors updated.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> usize {
        assert_eq!(self.first.len(), store.len(), "optimizer/store layout mismatch");
        self.step += 1;
        let t = self.step as i32;
        let mut updated = 0;
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.kind)).collect();
        for (id, kind) in ids {
            if kind != ParamKind::Trainable {
                continue;
            }
            let Some(g) = grads.param(store, id) else {
                continue;
            };
            if !g.all_finite() {
                log::warn!(
                    "skipping update of `{}`: non-finite gradient",
                    store.get(id).name
                );
                continue;
            }
            let i = id.index();
            let param = store.value_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, gv) in param.iter_mut().zip(g.data()) {
                        *p -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for k in 0..param.len() {
                        let gv = g.data()[k];
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        let mhat = m[k] / bc1;
                        let vhat = v[k] / bc2;
                        param[k] -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            updated += 1;
        }
        updated
    }
}
