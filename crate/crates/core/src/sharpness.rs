//! Top Hessian eigenvalue ("sharpness") by power iteration on
//! finite-difference Hessian-vector products of the full-data objective.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::num::{hvp_finite_diff, inner_product, norm, Norm, Objective, ParamVector};
use crate::rng::{stream_rng, Stream};

const MAX_RESTARTS: u64 = 3;
const ZERO_HV: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct SharpnessConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig {
            max_iters: 100,
            rel_tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpnessEstimate {
    /// Rayleigh quotient of the largest-magnitude eigenvalue, sign kept.
    pub lambda: f64,
    pub iters: usize,
    pub converged: bool,
}

fn random_unit(dim: usize, seed: u64, attempt: u64) -> Result<ParamVector> {
    let mut rng = stream_rng(seed, Stream::Sharpness { attempt });
    let v = ParamVector::from((0..dim).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
    let n = norm(&v, Norm::L2)?;
    Ok(v.scale(1.0 / n))
}

/// Power iteration `v ← Hv / ‖Hv‖` from a seeded random unit vector.
///
/// Stops once successive Rayleigh quotients differ by less than
/// `rel_tol · (1 + |λ|)`. If `Hv` vanishes for the start vector, retries
/// with fresh directions up to three times before reporting `λ = 0`
/// unconverged.
pub fn power_iteration_lambda_max<O: Objective + ?Sized>(
    obj_full: &O,
    x: &ParamVector,
    cfg: &SharpnessConfig,
) -> Result<SharpnessEstimate> {
    x.ensure_dim(obj_full.dim())?;
    let batch = obj_full.full_batch();
    let mut iters = 0;
    for attempt in 0..=MAX_RESTARTS {
        let mut v = random_unit(obj_full.dim(), cfg.seed, attempt)?;
        let mut hv = hvp_finite_diff(obj_full, x, &v, &batch)?;
        iters += 1;
        let mut hv_norm = norm(&hv, Norm::L2)?;
        if hv_norm < ZERO_HV {
            continue;
        }
        let mut lambda = inner_product(&v, &hv)?;
        for _ in 0..cfg.max_iters {
            v = hv.scale(1.0 / hv_norm);
            hv = hvp_finite_diff(obj_full, x, &v, &batch)?;
            iters += 1;
            hv_norm = norm(&hv, Norm::L2)?;
            let next = inner_product(&v, &hv)?;
            let done = (next - lambda).abs() < cfg.rel_tol * (1.0 + next.abs());
            lambda = next;
            if done {
                return Ok(SharpnessEstimate {
                    lambda,
                    iters,
                    converged: true,
                });
            }
            if hv_norm < ZERO_HV {
                break;
            }
        }
        return Ok(SharpnessEstimate {
            lambda,
            iters,
            converged: false,
        });
    }
    Ok(SharpnessEstimate {
        lambda: 0.0,
        iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{Linear, Quadratic};

    fn at(d: usize) -> ParamVector {
        ParamVector::from(vec![0.5; d])
    }

    #[test]
    fn diagonal_spectrum() {
        let est =
            power_iteration_lambda_max(&Quadratic::diagonal(&[3.0, 1.0]), &at(2), &SharpnessConfig::default()).unwrap();
        assert!(est.converged);
        assert!((est.lambda - 3.0).abs() <= 1e-3 * 3.0, "{est:?}");
    }

    #[test]
    fn negative_dominant_eigenvalue_keeps_sign() {
        let est = power_iteration_lambda_max(&Quadratic::diagonal(&[-4.0, 1.0]), &at(2), &SharpnessConfig::default())
            .unwrap();
        assert!(est.converged);
        assert!((est.lambda + 4.0).abs() <= 1e-3 * 4.0, "{est:?}");
    }

    #[test]
    fn zero_hessian_exhausts_restarts() {
        let est =
            power_iteration_lambda_max(&Linear::new(vec![1.0, 2.0, 3.0]), &at(3), &SharpnessConfig::default()).unwrap();
        assert_eq!(est.lambda, 0.0);
        assert!(!est.converged);
        assert_eq!(est.iters, (MAX_RESTARTS + 1) as usize);
    }

    #[test]
    fn seed_invariance_when_converged() {
        let q = Quadratic::diagonal(&[6.0, 2.0, 1.0, -3.0]);
        let a = power_iteration_lambda_max(
            &q,
            &at(4),
            &SharpnessConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = power_iteration_lambda_max(
            &q,
            &at(4),
            &SharpnessConfig {
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.converged && b.converged);
        assert!((a.lambda - b.lambda).abs() <= 1e-3 * 6.0);
    }
}
