//! Unbiasedness of the randomly scaled update correlation:
//! `E_s[⟨∇F(x + sΔ), Δ⟩] = E_s[F(x + sΔ)] − F(x)` for `s ~ Exp(1)`.

use optdiag::analytic::Polynomial1d;
use optdiag::metrics::correlations_from;
use optdiag::num::{Objective, ParamVector};
use optdiag::optim::{ScalingMode, ScalingPolicy};
use optdiag::tasks::Batch;

fn pv(v: f64) -> ParamVector {
    ParamVector::from(vec![v])
}

/// `(update_corr_rs, loss_diff)` after moving from `x` by `s Δ`.
fn pair(f: &Polynomial1d, x: f64, delta: f64, s: f64) -> (f64, f64) {
    let b = Batch::full(1);
    let x_next = x + s * delta;
    let (f_next, g_next) = f.loss_grad(&pv(x_next), &b).unwrap();
    let f_prev = f.loss(&pv(x), &b).unwrap();
    let c = correlations_from(f_next, &g_next, f_prev, &pv(s * delta), &pv(delta)).unwrap();
    (c.update_corr_rs, c.loss_diff)
}

/// `∫₀^∞ e^{−s} h(s) ds` by composite Simpson on `[0, 80]`.
fn exp_expectation(h: impl Fn(f64) -> f64) -> f64 {
    let (upper, m) = (80.0, 160_000);
    let step = upper / m as f64;
    let mut acc = 0.0;
    for k in 0..=m {
        let s = k as f64 * step;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (-s).exp() * h(s);
    }
    acc * step / 3.0
}

#[test]
fn quadrature_identity_on_quadratic_and_cubic() {
    let cases = [
        (Polynomial1d::new(vec![0.0, 0.0, 0.5]), 1.0, -0.5),
        (Polynomial1d::new(vec![0.3, -1.0, 2.0]), -0.7, 0.4),
        (Polynomial1d::new(vec![1.0, 0.5, -0.25, 0.125]), 0.8, -0.3),
        (Polynomial1d::new(vec![0.0, 2.0, 0.0, -1.0]), -0.2, 0.6),
    ];
    for (f, x, delta) in cases {
        let lhs = exp_expectation(|s| pair(&f, x, delta, s).0);
        let rhs = exp_expectation(|s| pair(&f, x, delta, s).1);
        assert!((lhs - rhs).abs() <= 1e-6, "{lhs} vs {rhs}");
    }
}

#[test]
fn worked_quadratic_case_has_closed_form_expectation() {
    // F = x²/2, x = 1, Δ = −1/2: both sides are xΔ + Δ²·E[s] = xΔE[s] + Δ²E[s²]/2 = −1/4.
    let f = Polynomial1d::new(vec![0.0, 0.0, 0.5]);
    let lhs = exp_expectation(|s| pair(&f, 1.0, -0.5, s).0);
    let rhs = exp_expectation(|s| pair(&f, 1.0, -0.5, s).1);
    assert!((lhs + 0.25).abs() <= 1e-9);
    assert!((rhs + 0.25).abs() <= 1e-9);
}

#[test]
fn monte_carlo_means_within_three_standard_errors() {
    let f = Polynomial1d::new(vec![0.0, 0.0, 0.5]);
    let mut policy = ScalingPolicy::new(ScalingMode::Exp1, 2024);
    let n = 100_000;
    let draws: Vec<(f64, f64)> = (0..n).map(|_| pair(&f, 1.0, -0.5, policy.sample())).collect();
    for side in [0usize, 1] {
        let vals: Vec<f64> = draws.iter().map(|p| if side == 0 { p.0 } else { p.1 }).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean + 0.25).abs() <= 3.0 * se, "side {side}: mean {mean}, se {se}");
    }
}

#[test]
fn unscaled_policy_never_draws() {
    let mut p = ScalingPolicy::new(ScalingMode::None, 1);
    assert!((0..100).all(|_| p.sample() == 1.0));
}
