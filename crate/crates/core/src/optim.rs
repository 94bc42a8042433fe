//! Optimizers and the plateau learning-rate schedule.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Parameter;

pub trait Optimizer<T: Scalar> {
    /// Apply one update from the parameters' current gradients.
    fn step(&mut self, params: &[Arc<Parameter<T>>]) -> Result<()>;

    fn lr(&self) -> f64;

    fn set_lr(&mut self, lr: f64);
}

/// SGD with classical momentum; weight decay enters as a gradient term
/// `λ·w` before the velocity update.
pub struct SgdMomentum<T: Scalar> {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if lr <= 0.0 || !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "sgd: lr must be > 0, momentum in [0,1), weight_decay >= 0 (got {lr}, {momentum}, {weight_decay})"
            )));
        }
        Ok(SgdMomentum {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }
}

impl<T: Scalar> Optimizer<T> for SgdMomentum<T> {
    fn step(&mut self, params: &[Arc<Parameter<T>>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.shape().numel()]).collect();
        }
        let lr = T::from_f64(self.lr);
        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        for (p, vel) in params.iter().zip(self.velocity.iter_mut()) {
            let grad = p.grad();
            let value = p.value();
            let mut next = value.values().to_vec();
            for ((w, v), &g) in next.iter_mut().zip(vel.iter_mut()).zip(grad.values()) {
                let g = g + wd * *w;
                *v = mu * *v + g;
                *w = *w - lr * *v;
            }
            p.set_value(&crate::tensor::Tensor::from_vec(p.shape(), next)?)?;
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias correction.
pub struct Adam<T: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, weight_decay)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        if lr <= 0.0 || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam: invalid hyperparameters (lr {lr}, betas {beta1}/{beta2}, eps {eps})"
            )));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &[Arc<Parameter<T>>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.shape().numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let wd = T::from_f64(self.weight_decay);
        for ((p, m), v) in params.iter().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let grad = p.grad();
            let mut next = p.value().values().to_vec();
            for (((w, mi), vi), &g) in next.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.values()) {
                let g = g + wd * *w;
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
            p.set_value(&crate::tensor::Tensor::from_vec(p.shape(), next)?)?;
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Reduce-on-plateau schedule: multiply the rate by `factor` whenever the
/// monitored metric fails to improve by `min_delta` for `patience`
/// consecutive observations.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    min_delta: f64,
    lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, min_delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&factor) || factor == 0.0 {
            return Err(Error::Config(format!("plateau factor must be in (0,1), got {factor}")));
        }
        if patience == 0 {
            return Err(Error::Config("plateau patience must be >= 1".into()));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            min_delta,
            lr: initial_lr,
            best: None,
            stale: 0,
        })
    }

    /// Feed one observation of the monitored metric (lower is better);
    /// returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64) -> f64 {
        match self.best {
            None => {
                self.best = Some(metric);
            }
            Some(best) if metric < best - self.min_delta => {
                self.best = Some(metric);
                self.stale = 0;
            }
            Some(_) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr *= self.factor;
                    self.stale = 0;
                }
            }
        }
        self.lr
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}

/// Fold a whole metric history through a fresh schedule; the final rate.
pub fn reduce_on_plateau(
    history: &[f64],
    initial_lr: f64,
    factor: f64,
    patience: usize,
    min_delta: f64,
) -> Result<f64> {
    let mut sched = PlateauScheduler::new(initial_lr, factor, patience, min_delta)?;
    let mut lr = initial_lr;
    for &m in history {
        lr = sched.observe(m);
    }
    Ok(lr)
}
