//! Flat-vector kernels shared by every other module.
//!
//! All reductions run sequentially in index order with Neumaier compensated
//! summation, so results are bitwise reproducible for identical inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::Batch;

/// Flat parameter (or gradient, or update) vector of fixed dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("parameter vector must have d >= 1".into()));
        }
        let v = ParamVector(values);
        v.ensure_finite("parameter vector")?;
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::non_finite(context))
        }
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            })
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + alpha * b).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| alpha * a).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    /// Unchecked conversion; boundaries call [`ParamVector::ensure_finite`].
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Which vector norm to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

/// Neumaier-compensated sum in iteration order.
pub(crate) fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// `Σ a_i b_i` with compensated summation.
pub fn inner_product(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    b.ensure_dim(a.dim())?;
    a.ensure_finite("inner_product lhs")?;
    b.ensure_finite("inner_product rhs")?;
    Ok(compensated_sum(a.0.iter().zip(&b.0).map(|(x, y)| x * y)))
}

pub fn norm(a: &ParamVector, order: Norm) -> Result<f64> {
    a.ensure_finite("norm input")?;
    Ok(match order {
        Norm::L1 => compensated_sum(a.0.iter().map(|x| x.abs())),
        Norm::L2 => compensated_sum(a.0.iter().map(|x| x * x)).sqrt(),
    })
}

/// A stochastic objective `f(x, z)` with closed-form value and gradient.
///
/// Implementations must be pure: the same `(x, batch)` always gives the same
/// bits back.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Mean loss over `batch` and its gradient at `x`.
    fn loss_grad(&self, x: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)>;

    fn loss(&self, x: &ParamVector, batch: &Batch) -> Result<f64> {
        Ok(self.loss_grad(x, batch)?.0)
    }

    /// The batch covering the whole dataset; stands in for `F` and `∇F`.
    fn full_batch(&self) -> Batch;
}

/// Central-difference Hessian-vector product
/// `(∇f(x + εv) − ∇f(x − εv)) / 2ε` with `ε = √machine_eps · (1 + ‖x‖) / ‖v‖`.
pub fn hvp_finite_diff<O: Objective + ?Sized>(
    obj: &O,
    x: &ParamVector,
    v: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    x.ensure_dim(obj.dim())?;
    v.ensure_dim(obj.dim())?;
    let v_norm = norm(v, Norm::L2)?;
    if v_norm == 0.0 {
        return Err(Error::DegenerateDirection(
            "hessian-vector product along a zero vector".into(),
        ));
    }
    let x_norm = norm(x, Norm::L2)?;
    let eps = f64::EPSILON.sqrt() * (1.0 + x_norm) / v_norm;
    let (_, g_plus) = obj.loss_grad(&x.add_scaled(eps, v), batch)?;
    let (_, g_minus) = obj.loss_grad(&x.add_scaled(-eps, v), batch)?;
    g_plus.ensure_finite("gradient at x + eps v")?;
    g_minus.ensure_finite("gradient at x - eps v")?;
    let inv = 1.0 / (2.0 * eps);
    Ok(ParamVector(
        g_plus.0.iter().zip(&g_minus.0).map(|(p, m)| (p - m) * inv).collect(),
    ))
}
