//! Update-direction producers and step-size schedules.
//!
//! Optimizers here never move the iterate themselves. Each step returns the
//! unscaled direction `Δ_t`; the caller draws `s_t` from a [`ScalingPolicy`]
//! and applies `x_{t+1} = x_t + s_t Δ_t`. Weight decay lives inside `Δ_t`,
//! so random scaling multiplies the whole displacement.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::ParamVector;
use crate::rng::{stream_rng, Stream};

/// Momentum in `Δ`-form: `Δ_t = β (Δ_{t−1} − η_t g_t)`.
///
/// `β = 0` is plain gradient descent, `Δ_t = −η_t g_t`.
#[derive(Clone, Debug)]
pub struct Sgdm {
    delta: ParamVector,
    beta: f64,
}

impl Sgdm {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config(
                "optimizer.momentum",
                format!("must be in [0, 1), got {beta}"),
            ));
        }
        Ok(Sgdm {
            delta: ParamVector::zeros(dim),
            beta,
        })
    }

    pub fn with_delta(mut self, delta: ParamVector) -> Self {
        assert_eq!(delta.dim(), self.delta.dim());
        self.delta = delta;
        self
    }

    pub fn delta(&self) -> &ParamVector {
        &self.delta
    }

    pub fn step(&mut self, grad: &ParamVector, eta: f64) -> Result<&ParamVector> {
        grad.ensure_dim(self.delta.dim())?;
        grad.ensure_finite("sgdm gradient")?;
        check_eta(eta)?;
        let beta = self.beta;
        if beta == 0.0 {
            for (d, g) in self.delta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *d = -eta * g;
            }
        } else {
            for (d, g) in self.delta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *d = beta * (*d - eta * g);
            }
        }
        Ok(&self.delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamwParams {
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwParams {
    fn default() -> Self {
        AdamwParams {
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay folded into `Δ`.
#[derive(Clone, Debug)]
pub struct Adamw {
    m: ParamVector,
    v: ParamVector,
    t: u64,
    params: AdamwParams,
}

impl Adamw {
    pub fn new(dim: usize, params: AdamwParams) -> Result<Self> {
        if !(0.0..1.0).contains(&params.b1) {
            return Err(Error::config("optimizer.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&params.b2) {
            return Err(Error::config("optimizer.beta2", "must be in [0, 1)"));
        }
        if !(params.eps > 0.0 && params.eps.is_finite()) {
            return Err(Error::config("optimizer.eps", "must be > 0"));
        }
        if !(params.weight_decay >= 0.0 && params.weight_decay.is_finite()) {
            return Err(Error::config("optimizer.weight_decay", "must be >= 0"));
        }
        Ok(Adamw {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            t: 0,
            params,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&ParamVector, &ParamVector) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, grad: &ParamVector, eta: f64, x: &ParamVector) -> Result<ParamVector> {
        grad.ensure_dim(self.m.dim())?;
        x.ensure_dim(self.m.dim())?;
        grad.ensure_finite("adamw gradient")?;
        check_eta(eta)?;
        let AdamwParams {
            b1,
            b2,
            eps,
            weight_decay,
        } = self.params;
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut delta = Vec::with_capacity(grad.dim());
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for i in 0..m.len() {
            let g = grad.as_slice()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            delta.push(-eta * (m_hat / (v_hat.sqrt() + eps) + weight_decay * x.as_slice()[i]));
        }
        let delta = ParamVector::from(delta);
        delta.ensure_finite("adamw update")?;
        Ok(delta)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("learning rate must be > 0, got {eta}")))
    }
}

/// One of the supported optimizers behind a common step interface.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgdm(Sgdm),
    Adamw(Adamw),
}

impl Optimizer {
    /// Returns the unscaled update direction `Δ_t`.
    pub fn step(&mut self, grad: &ParamVector, eta: f64, x: &ParamVector) -> Result<ParamVector> {
        match self {
            Optimizer::Sgdm(s) => s.step(grad, eta).cloned(),
            Optimizer::Adamw(a) => a.step(grad, eta, x),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// `s_t = 1`.
    #[default]
    None,
    /// `s_t ~ Exp(1)` i.i.d.
    Exp1,
}

/// Source of the per-step scale `s_t`.
#[derive(Clone, Debug)]
pub struct ScalingPolicy {
    mode: ScalingMode,
    rng: ChaCha8Rng,
}

impl ScalingPolicy {
    pub fn new(mode: ScalingMode, seed: u64) -> Self {
        ScalingPolicy {
            mode,
            rng: stream_rng(seed, Stream::Scaling),
        }
    }

    pub fn mode(&self) -> ScalingMode {
        self.mode
    }

    /// Inverse-CDF draw `−ln(1 − u)`, one uniform per call in `Exp1` mode.
    pub fn sample(&mut self) -> f64 {
        match self.mode {
            ScalingMode::None => 1.0,
            ScalingMode::Exp1 => {
                let u: f64 = self.rng.random();
                -(-u).ln_1p()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    Cosine,
    LinearDecay,
    /// Divide by 10 every `step_period` steps.
    StepDecay,
}

/// Learning-rate schedule with optional linear warmup.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub step_period: u64,
}

impl Schedule {
    pub fn constant(base_lr: f64, total_steps: u64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant,
            base_lr,
            warmup_steps: 0,
            total_steps,
            step_period: 1,
        }
    }

    /// `η_t` for `0 ≤ t < total_steps`.
    pub fn lr(&self, t: u64) -> Result<f64> {
        if t >= self.total_steps {
            return Err(Error::Contract(format!(
                "schedule step {t} outside [0, {})",
                self.total_steps
            )));
        }
        let base = self.base_lr;
        if t < self.warmup_steps {
            return Ok(base * (t + 1) as f64 / self.warmup_steps as f64);
        }
        let progress = (t - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(match self.kind {
            ScheduleKind::Constant => base,
            ScheduleKind::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
            ScheduleKind::LinearDecay => base * (1.0 - progress),
            ScheduleKind::StepDecay => {
                let drops = (t / self.step_period.max(1)).min(i32::MAX as u64) as i32;
                base * 10f64.powi(-drops)
            }
        })
    }
}
