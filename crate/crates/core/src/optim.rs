//! Adam optimizer over a [`ParamStore`].

use std::io::{Read, Write};

use crate::params::ParamStore;
use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, one pair of buffers per parameter.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. `grads` is aligned with the store; `None` entries
    /// (parameters untouched by the loss) are treated as zero gradient and
    /// still advance their moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} gradient slots for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (idx, id) in store.ids().enumerate().map(|(i, id)| (i, id)).collect::<Vec<_>>() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = store.get_mut(id).data_mut();
            match &grads[idx] {
                Some(g) => {
                    for i in 0..data.len() {
                        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
                None => {
                    for i in 0..data.len() {
                        m[i] *= cfg.beta1;
                        v[i] *= cfg.beta2;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes step count plus moment buffers (resume support).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        for (m, v) in self.m.iter().zip(&self.v) {
            w.write_all(&(m.len() as u64).to_le_bytes())?;
            for x in m.iter().chain(v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            let len = u64::from_le_bytes(b8) as usize;
            let mut read_vec = |n: usize| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(n);
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut b)?;
                    out.push(f64::from_le_bytes(b));
                }
                Ok(out)
            };
            m.push(read_vec(len)?);
            v.push(read_vec(len)?);
        }
        Ok(AdamState { m, v, step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(value));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = one_param_store(1.5);
        let mut state = AdamState::new(&store);
        state
            .step(&mut store, &[Some(vec![0.0])], &AdamConfig::default())
            .unwrap();
        assert_eq!(store.get(store.ids().next().unwrap()).item(), 1.5);
    }

    #[test]
    fn single_step_matches_reference_recurrence() {
        // g=1, m=v=0, betas (0.9, 0.999), lr=0.1:
        //   m1 = 0.1, v1 = 0.001, mhat = 1, vhat = 1,
        //   delta = -0.1 * 1/(1 + eps).
        let mut store = one_param_store(0.0);
        let mut state = AdamState::new(&store);
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        state.step(&mut store, &[Some(vec![1.0])], &cfg).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        let got = store.get(store.ids().next().unwrap()).item();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn equal_gradients_produce_equal_updates() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::scalar(2.0));
        store.add("b", Tensor::scalar(2.0));
        let mut state = AdamState::new(&store);
        state
            .step(
                &mut store,
                &[Some(vec![0.3]), Some(vec![0.3])],
                &AdamConfig::default(),
            )
            .unwrap();
        let vals: Vec<f64> = store.ids().map(|id| store.get(id).item()).collect();
        assert_eq!(vals[0], vals[1]);
    }

    #[test]
    fn state_roundtrips_through_bytes() {
        let mut store = one_param_store(1.0);
        let mut state = AdamState::new(&store);
        let cfg = AdamConfig::default();
        state.step(&mut store, &[Some(vec![0.5])], &cfg).unwrap();
        let mut buf = Vec::new();
        state.write_to(&mut buf).unwrap();
        let back = AdamState::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.step, state.step);
        assert_eq!(back.m, state.m);
        assert_eq!(back.v, state.v);
    }
}
