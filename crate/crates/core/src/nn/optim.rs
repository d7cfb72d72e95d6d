//! SGD with momentum and Adam, written against `Var` lists so the strategy
//! engine can observe per-step parameter deltas (synaptic-intelligence needs
//! gradient x update products at every step).

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

pub trait Optimizer {
    /// Applies one update. Returns `(grad, delta)` per parameter, where
    /// `delta` is the applied change `theta_new - theta_old`. Parameters
    /// without a gradient in `grads` report zero tensors.
    fn step(&mut self, vars: &[Var], grads: &GradStore) -> Result<Vec<(Tensor, Tensor)>>;

    fn learning_rate(&self) -> f64;
}

pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, vars: &[Var], grads: &GradStore) -> Result<Vec<(Tensor, Tensor)>> {
        if self.velocity.is_empty() {
            self.velocity = vars
                .iter()
                .map(|v| Tensor::zeros(v.dims(), v.dtype(), v.device()).map_err(Into::into))
                .collect::<Result<_>>()?;
        }
        let mut out = Vec::with_capacity(vars.len());
        for (var, vel) in vars.iter().zip(self.velocity.iter_mut()) {
            let g = match grads.get(var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(var.dims(), var.dtype(), var.device())?,
            };
            *vel = ((&*vel * self.momentum)? + &g)?;
            let delta = (&*vel * (-self.lr))?;
            var.set(&(var.as_tensor() + &delta)?)?;
            out.push((g, delta));
        }
        Ok(out)
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, vars: &[Var], grads: &GradStore) -> Result<Vec<(Tensor, Tensor)>> {
        if self.m.is_empty() {
            self.m = vars
                .iter()
                .map(|v| Tensor::zeros(v.dims(), v.dtype(), v.device()).map_err(Into::into))
                .collect::<Result<_>>()?;
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut out = Vec::with_capacity(vars.len());
        for (i, var) in vars.iter().enumerate() {
            let g = match grads.get(var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(var.dims(), var.dtype(), var.device())?,
            };
            self.m[i] = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            self.v[i] = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&self.m[i] / bc1)?;
            let v_hat = (&self.v[i] / bc2)?;
            let delta = (m_hat * (-self.lr))?.div(&(v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() + &delta)?)?;
            out.push((g, delta));
        }
        Ok(out)
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn sgd_momentum_matches_hand_rollout() {
        let dev = Device::Cpu;
        let var = Var::from_tensor(&Tensor::from_vec(vec![1.0f64], (1,), &dev).unwrap()).unwrap();
        let mut opt = Sgd::new(0.1, 0.9);
        // loss = 0.5 * x^2, grad = x
        let mut x = 1.0f64;
        let mut v = 0.0f64;
        for _ in 0..5 {
            let loss = (var.as_tensor().sqr().unwrap() * 0.5).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&[var.clone()], &grads).unwrap();
            v = 0.9 * v + x;
            x -= 0.1 * v;
        }
        let got = var.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - x).abs() < 1e-12, "{got} vs {x}");
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let dev = Device::Cpu;
        let var = Var::from_tensor(&Tensor::from_vec(vec![3.0f64], (1,), &dev).unwrap()).unwrap();
        let mut opt = Adam::new(0.01, 0.9, 0.999);
        let loss = (var.as_tensor() * 2.0).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&[var.clone()], &grads).unwrap();
        let got = var.as_tensor().to_vec1::<f64>().unwrap()[0];
        // bias-corrected first step is -lr * g/|g| (up to eps)
        assert!((got - (3.0 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn step_reports_grad_and_delta() {
        let dev = Device::Cpu;
        let var = Var::from_tensor(&Tensor::from_vec(vec![1.0f32, 2.0], (2,), &dev).unwrap()).unwrap();
        let mut opt = Sgd::new(0.5, 0.0);
        let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let report = opt.step(&[var.clone()], &grads).unwrap();
        let g: Vec<f32> = report[0].0.to_vec1().unwrap();
        let d: Vec<f32> = report[0].1.to_vec1().unwrap();
        assert_eq!(g, vec![2.0, 4.0]);
        assert_eq!(d, vec![-1.0, -2.0]);
        let dt = DType::F32;
        assert_eq!(report[0].0.dtype(), dt);
    }
}
