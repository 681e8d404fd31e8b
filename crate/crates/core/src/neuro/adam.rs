use serde::{Deserialize, Serialize};

use super::{NeuroError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
        }
    }
}

/// Adam with global-norm clipping. Moment buffers are created lazily on
/// the first step to match the store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clip, update and zero the gradients. Returns the pre-clip norm.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64, NeuroError> {
        let scale_norm = clip_grads(store, self.config.clip)?;
        let (_, values, grads) = store.parts_mut();
        if self.m.len() != values.len() {
            self.m = values.iter().map(|v| vec![0.0; v.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = c.lr * bc2.sqrt() / bc1;
        for (i, (value, grad)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (x, g)) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .enumerate()
            {
                let gk = *g;
                if gk == 0.0 && m[k] == 0.0 {
                    continue;
                }
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                *x -= step * m[k] / (v[k].sqrt() + c.eps * bc2.sqrt());
                *g = 0.0;
            }
        }
        Ok(scale_norm)
    }
}

/// Rescale all gradients so their global L2 norm is at most `clip`.
/// Returns the norm before clipping. Fails on the first non-finite
/// gradient.
pub fn clip_grads(store: &mut ParamStore, clip: f64) -> Result<f64, NeuroError> {
    let (names, _, grads) = store.parts_mut();
    let mut total = 0.0;
    for (name, g) in names.iter().zip(grads.iter()) {
        if !g.is_finite() {
            return Err(NeuroError::NonFinite(format!("gradient of `{name}`")));
        }
        total += g.norm_sq();
    }
    let norm = total.sqrt();
    if clip > 0.0 && norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::Init;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = ParamStore::new(3);
        let w = s.add("w", &[5], Init::Uniform { fan_in: 5 }).unwrap();
        let before = s.value(w).clone();
        Adam::new(AdamConfig::default()).step(&mut s).unwrap();
        assert_eq!(s.value(w), &before);
    }

    #[test]
    fn one_step_by_hand() {
        let mut s = ParamStore::new(0);
        let w = s.add("w", &[1], Init::Constant(1.0)).unwrap();
        s.grad_mut(w).data_mut()[0] = 0.5;
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 0.0,
        };
        Adam::new(cfg).step(&mut s).unwrap();
        // m̂ = 0.5, v̂ = 0.25, update = 0.1 * 0.5 / (0.5 + 1e-8)
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((s.value(w).data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.grad(w).data()[0], 0.0);
    }

    #[test]
    fn clipping_to_unit_norm() {
        let mut s = ParamStore::new(0);
        let a = s.add("a", &[2], Init::Zeros).unwrap();
        let b = s.add("b", &[1], Init::Zeros).unwrap();
        s.grad_mut(a).data_mut().copy_from_slice(&[6.0, 0.0]);
        s.grad_mut(b).data_mut()[0] = 8.0;
        assert_eq!(clip_grads(&mut s, 1.0).unwrap(), 10.0);
        let n = (s.grad(a).norm_sq() + s.grad(b).norm_sq()).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = ParamStore::new(0);
        s.add("fine", &[1], Init::Zeros).unwrap();
        let bad = s.add("broken", &[1], Init::Zeros).unwrap();
        s.grad_mut(bad).data_mut()[0] = f64::NAN;
        let err = Adam::new(AdamConfig::default()).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("broken"));
    }
}
