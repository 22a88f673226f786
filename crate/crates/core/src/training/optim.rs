use crate::diffcore::ParameterStore;
use crate::error::{Error, Result};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update from the accumulated gradients. Gradients are checked for
    /// finiteness before any parameter is touched.
    pub fn step(&self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        if let Some(e) = store.entries().iter().find(|e| e.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::Numerical(format!("non-finite gradient in {}", e.name)));
        }
        store.steps += 1;
        let t = store.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for e in store.entries_mut() {
            for k in 0..e.values.len() {
                let g = e.grad[k];
                e.m[k] = self.beta1 * e.m[k] + (1.0 - self.beta1) * g;
                e.v[k] = self.beta2 * e.v[k] + (1.0 - self.beta2) * g * g;
                let mhat = e.m[k] / c1;
                let vhat = e.v[k] / c2;
                e.values[k] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * e.values[k]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_fixed_point() {
        let mut s = ParameterStore::new();
        s.add("w", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = s.flat_values();
        AdamW::new(0.0).step(&mut s, 1e-2).unwrap();
        assert_eq!(s.flat_values(), before);
    }

    #[test]
    fn scalar_constant_gradient_oracle() {
        let mut s = ParameterStore::new();
        s.add("w", &[1], vec![0.8]).unwrap();
        let opt = AdamW::new(1e-3);
        let (g, lr) = (0.25, 1e-2);
        let (mut theta, mut m, mut v) = (0.8f64, 0.0f64, 0.0f64);
        for t in 1..=25 {
            s.entries_mut()[0].grad[0] = g;
            opt.step(&mut s, lr).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * (mh / (vh.sqrt() + 1e-8) + 1e-3 * theta);
            assert!((s.entries()[0].values[0] - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_contracts() {
        let mut s = ParameterStore::new();
        s.add("w", &[2], vec![3.0, -4.0]).unwrap();
        let opt = AdamW::new(0.1);
        let mut prev = s.flat_values();
        for _ in 0..10 {
            opt.step(&mut s, 0.5).unwrap();
            let now = s.flat_values();
            for (a, b) in now.iter().zip(&prev) {
                assert!(a.abs() < b.abs());
            }
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = ParameterStore::new();
        s.add("gen.dec.fc2.w", &[1], vec![0.0]).unwrap();
        s.entries_mut()[0].grad[0] = f64::NAN;
        match AdamW::new(0.0).step(&mut s, 1e-3) {
            Err(Error::Numerical(m)) => assert!(m.contains("gen.dec.fc2.w")),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.steps, 0);
    }
}
