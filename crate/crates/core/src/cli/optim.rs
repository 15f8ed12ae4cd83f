use crate::encoders::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numcore::{lit, Checkpoint, Scalar, Tensor};

/// Linear warmup from `floor` to `peak`, then linear decay back to `floor`.
pub fn lr_at(step: u64, total_steps: u64, warmup_steps: u64, peak: f64, floor: f64) -> Result<f64> {
    if total_steps < warmup_steps {
        return Err(Error::config(format!(
            "total steps {total_steps} are fewer than warmup steps {warmup_steps}"
        )));
    }
    if step > total_steps {
        return Err(Error::contract(format!("step {step} beyond total {total_steps}")));
    }
    let lerp = |frac: f64, from: f64, to: f64| to * frac + from * (1.0 - frac);
    if step <= warmup_steps {
        let frac = if warmup_steps == 0 { 1.0 } else { step as f64 / warmup_steps as f64 };
        Ok(lerp(frac, floor, peak))
    } else {
        let frac = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
        Ok(lerp(frac, peak, floor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Scalar> {
    pub config: AdamWConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    /// Per-parameter multiplier on the step size; 1 unless set.
    lr_scale: Vec<f64>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
            lr_scale: vec![1.0; params.len()],
        }
    }

    /// Scales the step size of one parameter; decay still uses the base rate.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.0] = scale;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Non-finite gradients abort the step and leave all state untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim("one gradient per parameter"));
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::numeric(format!("non-finite gradient for '{}'", params.names()[i])));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let one = T::one();
        let bc1 = lit::<T>(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(self.t as i32));
        let eps = lit::<T>(c.eps);
        for i in 0..params.len() {
            let id = ParamId(i);
            let shrink = if params.decays(id) { lit::<T>(1.0 - lr * c.weight_decay) } else { one };
            let lr_t = lit::<T>(lr * self.lr_scale[i]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(id).data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let update = lr_t * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p[j] = p[j] * shrink - update;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, params: &ParamStore<T>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (i, name) in params.names().iter().enumerate() {
            let shape = params.tensors()[i].shape();
            ck.push(&format!("adam.m.{name}"), &Tensor::new(shape.to_vec(), self.m[i].clone()).unwrap());
            ck.push(&format!("adam.v.{name}"), &Tensor::new(shape.to_vec(), self.v[i].clone()).unwrap());
        }
        ck.push("adam.t", &Tensor::<f64>::scalar(self.t as f64));
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint, params: &ParamStore<T>) -> Result<()> {
        for (i, name) in params.names().iter().enumerate() {
            let m: Tensor<T> = ck.tensor(&format!("adam.m.{name}"))?;
            let v: Tensor<T> = ck.tensor(&format!("adam.v.{name}"))?;
            if m.len() != self.m[i].len() || v.len() != self.v[i].len() {
                return Err(Error::CheckpointMismatch(format!("optimizer state for '{name}' has the wrong size")));
            }
            self.m[i] = m.into_data();
            self.v[i] = v.into_data();
        }
        self.t = ck.tensor::<f64>("adam.t")?.data()[0] as u64;
        Ok(())
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`; returns the norm before.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&x| {
            let x = x.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
        let s = lit::<T>(max_norm / norm);
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
    fn schedule_endpoints() {
        assert_eq!(lr_at(0, 10000, 2600, 1e-4, 1e-5).unwrap(), 1e-5);
        assert_eq!(lr_at(2600, 10000, 2600, 1e-4, 1e-5).unwrap(), 1e-4);
        assert_eq!(lr_at(10000, 10000, 2600, 1e-4, 1e-5).unwrap(), 1e-5);
        assert!(matches!(lr_at(0, 100, 2600, 1e-4, 1e-5), Err(Error::Config(_))));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut small = vec![Tensor::<f64>::from_f64(&[1], &[0.5]).unwrap()];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.5);
    }
}
