//! Closed-form objectives with known curvature, used as oracles for the
//! metrics and the sharpness estimator. They ignore the batch argument.

use rand::Rng;

use crate::error::Result;
use crate::num::{compensated_sum, Objective, ParamVector};
use crate::tasks::Batch;

/// `f(x) = ½ (x − c)ᵀ A (x − c)` with symmetric `A`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    dim: usize,
    /// Row-major `dim × dim`.
    matrix: Vec<f64>,
    center: Vec<f64>,
}

impl Quadratic {
    pub fn new(dim: usize, matrix: Vec<f64>, center: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), dim * dim);
        assert_eq!(center.len(), dim);
        Quadratic { dim, matrix, center }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            m[i * d + i] = *v;
        }
        Quadratic::new(d, m, vec![0.0; d])
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), self.dim);
        self.center = center;
        self
    }

    /// `Q diag(eigs) Qᵀ` for a random orthogonal `Q`.
    pub fn from_spectrum<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> Self {
        let d = eigs.len();
        let q = random_orthogonal(d, rng);
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = compensated_sum((0..d).map(|k| q[i * d + k] * eigs[k] * q[j * d + k]));
            }
        }
        // exact symmetry
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
                m[i * d + j] = avg;
                m[j * d + i] = avg;
            }
        }
        Quadratic::new(d, m, vec![0.0; d])
    }

    /// Random symmetric matrix with entries in [-2, 2].
    pub fn random_symmetric<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v = rng.random_range(-2.0..2.0);
                m[i * dim + j] = v;
                m[j * dim + i] = v;
            }
        }
        Quadratic::new(dim, m, vec![0.0; dim])
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `A v`.
    pub fn apply(&self, v: &ParamVector) -> ParamVector {
        let d = self.dim;
        let v = v.as_slice();
        ParamVector::from(
            (0..d)
                .map(|i| compensated_sum((0..d).map(|j| self.matrix[i * d + j] * v[j])))
                .collect::<Vec<_>>(),
        )
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_grad(&self, x: &ParamVector, _batch: &Batch) -> Result<(f64, ParamVector)> {
        x.ensure_dim(self.dim)?;
        let e = ParamVector::from(
            x.as_slice()
                .iter()
                .zip(&self.center)
                .map(|(a, c)| a - c)
                .collect::<Vec<_>>(),
        );
        let g = self.apply(&e);
        let f = 0.5 * compensated_sum(e.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b));
        Ok((f, g))
    }

    fn full_batch(&self) -> Batch {
        Batch::full(1)
    }
}

/// `f(x) = ⟨w, x⟩`; zero Hessian.
#[derive(Clone, Debug)]
pub struct Linear {
    weights: Vec<f64>,
}

impl Linear {
    pub fn new(weights: Vec<f64>) -> Self {
        Linear { weights }
    }
}

impl Objective for Linear {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn loss_grad(&self, x: &ParamVector, _batch: &Batch) -> Result<(f64, ParamVector)> {
        x.ensure_dim(self.weights.len())?;
        let f = compensated_sum(x.as_slice().iter().zip(&self.weights).map(|(a, b)| a * b));
        Ok((f, ParamVector::from(self.weights.clone())))
    }

    fn full_batch(&self) -> Batch {
        Batch::full(1)
    }
}

/// One-dimensional polynomial `f(x) = Σ_k c_k x^k`.
#[derive(Clone, Debug)]
pub struct Polynomial1d {
    coeffs: Vec<f64>,
}

impl Polynomial1d {
    /// Coefficients in increasing degree.
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial1d { coeffs }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }
}

impl Objective for Polynomial1d {
    fn dim(&self) -> usize {
        1
    }

    fn loss_grad(&self, x: &ParamVector, _batch: &Batch) -> Result<(f64, ParamVector)> {
        x.ensure_dim(1)?;
        let x = x.as_slice()[0];
        Ok((self.value(x), ParamVector::from(vec![self.derivative(x)])))
    }

    fn full_batch(&self) -> Batch {
        Batch::full(1)
    }
}

/// Gram-Schmidt on a Gaussian-ish random matrix; columns of the result are
/// orthonormal. Row-major.
fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in &cols {
            let p: f64 = compensated_sum(v.iter().zip(c).map(|(a, b)| a * b));
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= p * ci;
            }
        }
        let n = compensated_sum(v.iter().map(|a| a * a)).sqrt();
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= n);
        cols.push(v);
    }
    let mut q = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[i * d + j] = c[i];
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn polynomial_value_and_derivative() {
        // 1 + 2x + 3x^2 at x = 2
        let p = Polynomial1d::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.value(2.0), 17.0);
        assert_eq!(p.derivative(2.0), 14.0);
    }

    #[test]
    fn from_spectrum_preserves_trace() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let q = Quadratic::from_spectrum(&[4.0, 2.0, -1.0], &mut rng);
        let tr: f64 = (0..3).map(|i| q.matrix()[i * 3 + i]).sum();
        assert!((tr - 5.0).abs() < 1e-12);
    }
}
