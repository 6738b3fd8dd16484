//! Trajectory measures: convexity gaps, smoothness, the convexity ratio,
//! update correlations and gradient statistics.
//!
//! Per-step measures are free functions over an [`Objective`]; the running
//! aggregates live in [`MetricState`], which applies the epoch-reset rules.

mod record;

pub use record::{MetricRecord, FIELDS, NUMERIC_FIELDS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{inner_product, norm, Norm, Objective, ParamVector};
use crate::tasks::Batch;

/// Which point `y_t` the gap and smoothness are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `y_t = x_{t−1}`.
    #[default]
    PrevIterate,
    /// `y_t = x*`, the final iterate of an earlier run.
    FixedPoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub ema_beta: f64,
    pub cadence: u64,
    pub epoch_reset: bool,
    pub reference: Reference,
    pub zero_disp_epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ema_beta: 0.99,
            cadence: 1,
            epoch_reset: true,
            reference: Reference::PrevIterate,
            zero_disp_epsilon: 1e-12,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_beta > 0.0 && self.ema_beta < 1.0) {
            return Err(Error::config(
                "metrics.ema_beta",
                format!("must be in (0, 1), got {}", self.ema_beta),
            ));
        }
        if self.cadence == 0 {
            return Err(Error::config("metrics.cadence", "must be >= 1"));
        }
        if !(self.zero_disp_epsilon >= 0.0 && self.zero_disp_epsilon.is_finite()) {
            return Err(Error::config(
                "metrics.zero_disp_epsilon",
                "must be a finite value >= 0",
            ));
        }
        Ok(())
    }
}

/// Exponential moving average initialized to its first observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema {
    beta: f64,
    value: Option<f64>,
}

impl Ema {
    pub fn new(beta: f64) -> Self {
        Ema { beta, value: None }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let v = match self.value {
            None => x,
            Some(prev) => self.beta * prev + (1.0 - self.beta) * x,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn reset(&mut self) {
        self.value = None;
    }
}

/// `f(x,z) − f(y,z) − ⟨∇f(x,z), x − y⟩` from precomputed evaluations.
pub fn gap_from_evals(f_x: f64, grad_x: &ParamVector, f_y: f64, x: &ParamVector, y: &ParamVector) -> Result<f64> {
    let lin = inner_product(grad_x, &x.sub(y))?;
    let gap = f_x - f_y - lin;
    if gap.is_finite() {
        Ok(gap)
    } else {
        Err(Error::non_finite("convexity gap"))
    }
}

/// Instantaneous convexity gap of `obj` at `x` against `y` on one batch.
pub fn inst_gap<O: Objective + ?Sized>(obj: &O, x: &ParamVector, y: &ParamVector, batch: &Batch) -> Result<f64> {
    y.ensure_dim(x.dim())?;
    let (f_x, g_x) = obj.loss_grad(x, batch)?;
    let f_y = obj.loss(y, batch)?;
    gap_from_evals(f_x, &g_x, f_y, x, y)
}

/// `‖g_x − g_y‖ / ‖x − y‖`, or `None` when `‖x − y‖ < eps`.
pub fn smooth_from_grads(
    grad_x: &ParamVector,
    grad_y: &ParamVector,
    x: &ParamVector,
    y: &ParamVector,
    eps: f64,
) -> Result<Option<f64>> {
    grad_x.ensure_finite("gradient at x_t")?;
    grad_y.ensure_finite("gradient at y_t")?;
    let disp = norm(&x.sub(y), Norm::L2)?;
    if disp < eps || disp == 0.0 {
        return Ok(None);
    }
    Ok(Some(norm(&grad_x.sub(grad_y), Norm::L2)? / disp))
}

/// Instantaneous smoothness of `obj` between `x` and `y` on one batch.
pub fn inst_smooth<O: Objective + ?Sized>(
    obj: &O,
    x: &ParamVector,
    y: &ParamVector,
    batch: &Batch,
    eps: f64,
) -> Result<Option<f64>> {
    y.ensure_dim(x.dim())?;
    let (_, g_x) = obj.loss_grad(x, batch)?;
    let (_, g_y) = obj.loss_grad(y, batch)?;
    smooth_from_grads(&g_x, &g_y, x, y, eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlations {
    /// `⟨∇f(x_t, z_t), x_t − x_{t−1}⟩`.
    pub update_corr: f64,
    /// `⟨∇f(x_t, z_t), Δ_{t−1}⟩` with unscaled `Δ`.
    pub update_corr_rs: f64,
    /// `f(x_t, z_t) − f(x_{t−1}, z_t)`.
    pub loss_diff: f64,
}

/// Correlations from evaluations at the current and previous iterate on the
/// fresh batch; `displacement` is the applied move `s_{t−1} Δ_{t−1}`.
pub fn correlations_from(
    f_curr: f64,
    grad_curr: &ParamVector,
    f_prev: f64,
    displacement: &ParamVector,
    delta_prev: &ParamVector,
) -> Result<Correlations> {
    let out = Correlations {
        update_corr: inner_product(grad_curr, displacement)?,
        update_corr_rs: inner_product(grad_curr, delta_prev)?,
        loss_diff: f_curr - f_prev,
    };
    if out.loss_diff.is_finite() {
        Ok(out)
    } else {
        Err(Error::non_finite("loss difference"))
    }
}

/// Update correlation family at `x_curr` on the batch drawn after the move
/// from `x_prev`. `None` when there is no previous update yet.
pub fn update_correlations<O: Objective + ?Sized>(
    obj: &O,
    x_prev: &ParamVector,
    x_curr: &ParamVector,
    delta_prev: Option<&ParamVector>,
    batch_curr: &Batch,
) -> Result<Option<Correlations>> {
    let Some(delta_prev) = delta_prev else {
        return Ok(None);
    };
    x_prev.ensure_dim(x_curr.dim())?;
    let (f_curr, g_curr) = obj.loss_grad(x_curr, batch_curr)?;
    let f_prev = obj.loss(x_prev, batch_curr)?;
    correlations_from(f_curr, &g_curr, f_prev, &x_curr.sub(x_prev), delta_prev).map(Some)
}

/// Convexity-ratio state after one accumulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioObservation {
    /// `None` while the denominator is numerically zero.
    pub ratio: Option<f64>,
    /// Sign of the accumulated denominator (−1, 0 or +1).
    pub den_sign: f64,
    /// `F(x_t)`.
    pub full_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradStats {
    pub grad_l1: f64,
    pub grad_l2: f64,
    pub grad_std_running: Option<f64>,
    pub param_l2: f64,
}

/// All running accumulators of one run.
#[derive(Clone, Debug)]
pub struct MetricState {
    beta: f64,
    gap_sum: f64,
    gap_count: u64,
    exp_gap: Ema,
    max_smooth: Option<f64>,
    exp_smooth: Ema,
    ratio_num_sum: f64,
    ratio_den_sum: f64,
    cum_update_corr: f64,
    cum_update_corr_rs: f64,
    cum_loss_diff: f64,
    grad_dev_sum: f64,
    grad_dev_count: u64,
    x_star: Option<ParamVector>,
    f_star: Option<f64>,
}

impl MetricState {
    pub fn new(beta: f64) -> Self {
        MetricState {
            beta,
            gap_sum: 0.0,
            gap_count: 0,
            exp_gap: Ema::new(beta),
            max_smooth: None,
            exp_smooth: Ema::new(beta),
            ratio_num_sum: 0.0,
            ratio_den_sum: 0.0,
            cum_update_corr: 0.0,
            cum_update_corr_rs: 0.0,
            cum_loss_diff: 0.0,
            grad_dev_sum: 0.0,
            grad_dev_count: 0,
            x_star: None,
            f_star: None,
        }
    }

    pub fn with_reference_point(mut self, x_star: ParamVector) -> Self {
        self.x_star = Some(x_star);
        self.f_star = None;
        self
    }

    pub fn reference_point(&self) -> Option<&ParamVector> {
        self.x_star.as_ref()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Adds one gap observation; returns `(avg_gap, exp_gap)`.
    pub fn update_gap(&mut self, gap: f64) -> (f64, f64) {
        self.gap_sum += gap;
        self.gap_count += 1;
        let exp = self.exp_gap.update(gap);
        (self.gap_sum / self.gap_count as f64, exp)
    }

    pub fn avg_gap(&self) -> Option<f64> {
        (self.gap_count > 0).then(|| self.gap_sum / self.gap_count as f64)
    }

    pub fn exp_gap(&self) -> Option<f64> {
        self.exp_gap.value()
    }

    pub fn gap_count(&self) -> u64 {
        self.gap_count
    }

    /// Adds one smoothness observation; returns `(max_smooth, exp_smooth)`.
    pub fn update_smooth(&mut self, smooth: f64) -> (f64, f64) {
        let max = self.max_smooth.map_or(smooth, |m| m.max(smooth));
        self.max_smooth = Some(max);
        (max, self.exp_smooth.update(smooth))
    }

    pub fn max_smooth(&self) -> Option<f64> {
        self.max_smooth
    }

    pub fn exp_smooth(&self) -> Option<f64> {
        self.exp_smooth.value()
    }

    /// Clears the per-epoch aggregates. Cumulative sums, ratio sums, the
    /// gradient-deviation sum and the reference point survive.
    pub fn epoch_reset(&mut self) {
        self.gap_sum = 0.0;
        self.gap_count = 0;
        self.exp_gap.reset();
        self.max_smooth = None;
        self.exp_smooth.reset();
    }

    /// Adds to the trajectory-level sums; returns the new cumulative values
    /// `(update_corr, update_corr_rs, loss_diff)`.
    pub fn accumulate_correlations(&mut self, c: &Correlations) -> (f64, f64, f64) {
        self.cum_update_corr += c.update_corr;
        self.cum_update_corr_rs += c.update_corr_rs;
        self.cum_loss_diff += c.loss_diff;
        self.cumulative()
    }

    pub fn cumulative(&self) -> (f64, f64, f64) {
        (self.cum_update_corr, self.cum_update_corr_rs, self.cum_loss_diff)
    }

    /// Adds `⟨∇F(x_t), x_t − x*⟩` and `F(x_t) − F(x*)` to the ratio sums
    /// using the full-data objective.
    pub fn ratio_accumulate<O: Objective + ?Sized>(
        &mut self,
        obj_full: &O,
        x: &ParamVector,
    ) -> Result<RatioObservation> {
        let full = obj_full.full_batch();
        let (f_x, g_x) = obj_full.loss_grad(x, &full)?;
        self.ratio_accumulate_with(obj_full, x, f_x, &g_x)
    }

    /// As [`MetricState::ratio_accumulate`] with `F(x_t)`, `∇F(x_t)` already
    /// evaluated.
    pub fn ratio_accumulate_with<O: Objective + ?Sized>(
        &mut self,
        obj_full: &O,
        x: &ParamVector,
        f_x: f64,
        g_x: &ParamVector,
    ) -> Result<RatioObservation> {
        let x_star = self
            .x_star
            .as_ref()
            .ok_or_else(|| Error::config("run.x_star_path", "convexity ratio needs a reference point x*"))?;
        let f_star = match self.f_star {
            Some(f) => f,
            None => {
                let f = obj_full.loss(x_star, &obj_full.full_batch())?;
                self.f_star = Some(f);
                f
            }
        };
        let num = inner_product(g_x, &x.sub(x_star))?;
        let den = f_x - f_star;
        if !den.is_finite() {
            return Err(Error::non_finite("convexity ratio denominator"));
        }
        self.ratio_num_sum += num;
        self.ratio_den_sum += den;
        let degenerate = self.ratio_den_sum.abs() < 1e-12 * (1.0 + f_star.abs());
        let den_sign = if degenerate { 0.0 } else { self.ratio_den_sum.signum() };
        Ok(RatioObservation {
            ratio: (!degenerate).then(|| self.ratio_num_sum / self.ratio_den_sum),
            den_sign,
            full_loss: f_x,
        })
    }

    pub fn ratio_sums(&self) -> (f64, f64) {
        (self.ratio_num_sum, self.ratio_den_sum)
    }

    /// Norms of the batch gradient and parameters; when the full gradient is
    /// given, also folds `‖g_batch − ∇F‖` into the running deviation mean.
    pub fn grad_stats(
        &mut self,
        grad_batch: &ParamVector,
        grad_full: Option<&ParamVector>,
        x: &ParamVector,
    ) -> Result<GradStats> {
        if let Some(full) = grad_full {
            full.ensure_dim(grad_batch.dim())?;
            self.grad_dev_sum += norm(&grad_batch.sub(full), Norm::L2)?;
            self.grad_dev_count += 1;
        }
        Ok(GradStats {
            grad_l1: norm(grad_batch, Norm::L1)?,
            grad_l2: norm(grad_batch, Norm::L2)?,
            grad_std_running: (self.grad_dev_count > 0).then(|| self.grad_dev_sum / self.grad_dev_count as f64),
            param_l2: norm(x, Norm::L2)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{Linear, Polynomial1d, Quadratic};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn half_square() -> Polynomial1d {
        Polynomial1d::new(vec![0.0, 0.0, 0.5])
    }

    #[test]
    fn gap_examples() {
        let b = Batch::full(1);
        assert_eq!(inst_gap(&half_square(), &pv(&[2.0]), &pv(&[0.0]), &b).unwrap(), -2.0);
        let lin = Linear::new(vec![1.5, -2.0]);
        assert_eq!(inst_gap(&lin, &pv(&[1.0, 3.0]), &pv(&[-4.0, 0.5]), &b).unwrap(), 0.0);
        let neg = Polynomial1d::new(vec![0.0, 0.0, -1.0]);
        assert_eq!(inst_gap(&neg, &pv(&[1.0]), &pv(&[0.0]), &b).unwrap(), 1.0);
    }

    #[test]
    fn gap_accumulators() {
        let mut s = MetricState::new(0.99);
        s.update_gap(1.0);
        let (avg, exp) = s.update_gap(3.0);
        assert_eq!(avg, 2.0);
        assert!((exp - (0.99 * 1.0 + 0.01 * 3.0)).abs() < 1e-15);

        let mut s = MetricState::new(0.99);
        assert_eq!(s.update_gap(-0.7).1, -0.7);
        let mut s = MetricState::new(0.99);
        s.update_gap(0.0);
        assert!((s.update_gap(1.0).1 - 0.01).abs() < 1e-15);
        assert_eq!(s.gap_count(), 2);
    }

    #[test]
    fn smooth_examples() {
        let b = Batch::full(1);
        let iso = Quadratic::diagonal(&[1.0, 1.0, 1.0]);
        let s = inst_smooth(&iso, &pv(&[1.0, -2.0, 0.5]), &pv(&[0.0, 4.0, 3.0]), &b, 1e-12).unwrap();
        assert!((s.unwrap() - 1.0).abs() < 1e-15);
        let five = Polynomial1d::new(vec![0.0, 0.0, 2.5]);
        assert_eq!(
            inst_smooth(&five, &pv(&[1.0]), &pv(&[0.0]), &b, 1e-12).unwrap(),
            Some(5.0)
        );
        assert_eq!(inst_smooth(&five, &pv(&[1.0]), &pv(&[1.0]), &b, 1e-12).unwrap(), None);
    }

    #[test]
    fn smooth_accumulators() {
        let mut s = MetricState::new(0.99);
        s.update_smooth(3.0);
        assert_eq!(s.update_smooth(1.0).0, 3.0);
        assert_eq!(s.update_smooth(5.0).0, 5.0);

        let mut s = MetricState::new(0.99);
        s.update_smooth(3.0);
        let (_, exp) = s.update_smooth(5.0);
        assert!((exp - 3.02).abs() < 1e-12);
    }

    #[test]
    fn correlation_examples() {
        let b = Batch::full(1);
        // GD on ½x² with lr 0.1 from 1: Δ = −0.1
        let delta = pv(&[-0.1]);
        let c = update_correlations(&half_square(), &pv(&[1.0]), &pv(&[0.9]), Some(&delta), &b)
            .unwrap()
            .unwrap();
        assert!((c.update_corr + 0.09).abs() < 1e-15);
        assert!((c.update_corr_rs + 0.09).abs() < 1e-15);

        let still = update_correlations(&half_square(), &pv(&[0.4]), &pv(&[0.4]), Some(&pv(&[0.0])), &b)
            .unwrap()
            .unwrap();
        assert_eq!(
            (still.update_corr, still.update_corr_rs, still.loss_diff),
            (0.0, 0.0, 0.0)
        );

        let sq = Polynomial1d::new(vec![0.0, 0.0, 1.0]);
        let c = update_correlations(&sq, &pv(&[1.0]), &pv(&[0.5]), Some(&pv(&[-0.5])), &b)
            .unwrap()
            .unwrap();
        assert_eq!(c.loss_diff, -0.75);

        assert!(update_correlations(&sq, &pv(&[1.0]), &pv(&[0.5]), None, &b)
            .unwrap()
            .is_none());
    }

    #[test]
    fn ratio_centered_quadratic() {
        let f = half_square();
        let mut s = MetricState::new(0.99).with_reference_point(pv(&[0.0]));
        s.ratio_accumulate(&f, &pv(&[2.0])).unwrap();
        let obs = s.ratio_accumulate(&f, &pv(&[1.0])).unwrap();
        assert_eq!(s.ratio_sums(), (5.0, 2.5));
        assert_eq!(obs.ratio, Some(2.0));
        assert_eq!(obs.den_sign, 1.0);
    }

    #[test]
    fn ratio_degenerate_and_concave() {
        let f = half_square();
        let mut s = MetricState::new(0.99).with_reference_point(pv(&[0.3]));
        for _ in 0..3 {
            let obs = s.ratio_accumulate(&f, &pv(&[0.3])).unwrap();
            assert_eq!(obs.ratio, None);
            assert_eq!(obs.den_sign, 0.0);
        }

        let concave = Quadratic::diagonal(&[-1.0]);
        let mut s = MetricState::new(0.99).with_reference_point(pv(&[0.0]));
        let obs = s.ratio_accumulate(&concave, &pv(&[1.0])).unwrap();
        assert_eq!(s.ratio_sums(), (-1.0, -0.5));
        assert_eq!(obs.ratio, Some(2.0));
        assert_eq!(obs.den_sign, -1.0);
    }

    #[test]
    fn ratio_without_reference_is_config_error() {
        let mut s = MetricState::new(0.99);
        assert!(matches!(
            s.ratio_accumulate(&half_square(), &pv(&[1.0])),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn grad_stats_examples() {
        let mut s = MetricState::new(0.99);
        let g = pv(&[3.0, 4.0]);
        let st = s.grad_stats(&g, None, &pv(&[0.0, 0.0])).unwrap();
        assert_eq!((st.grad_l1, st.grad_l2, st.param_l2), (7.0, 5.0, 0.0));
        assert_eq!(st.grad_std_running, None);
        for _ in 0..3 {
            let st = s.grad_stats(&g, Some(&g), &pv(&[1.0, 0.0])).unwrap();
            assert_eq!(st.grad_std_running, Some(0.0));
        }
        let st = s.grad_stats(&g, Some(&pv(&[3.0, 0.0])), &pv(&[1.0, 0.0])).unwrap();
        assert_eq!(st.grad_std_running, Some(1.0));
    }

    #[test]
    fn epoch_reset_semantics() {
        let mut s = MetricState::new(0.99).with_reference_point(pv(&[0.0]));
        s.update_smooth(7.0);
        s.update_gap(-1.0);
        s.accumulate_correlations(&Correlations {
            update_corr: -1.0,
            update_corr_rs: -2.0,
            loss_diff: -3.0,
        });
        s.ratio_accumulate(&half_square(), &pv(&[1.0])).unwrap();
        s.grad_stats(&pv(&[1.0]), Some(&pv(&[0.0])), &pv(&[1.0])).unwrap();
        s.epoch_reset();
        assert_eq!(s.avg_gap(), None);
        assert_eq!(s.exp_gap(), None);
        assert_eq!(s.max_smooth(), None);
        assert_eq!(s.update_smooth(2.0).0, 2.0);
        assert_eq!(s.cumulative(), (-1.0, -2.0, -3.0));
        assert_eq!(s.ratio_sums(), (1.0, 0.5));
        assert!(s.reference_point().is_some());
        let st = s.grad_stats(&pv(&[1.0]), None, &pv(&[1.0])).unwrap();
        assert_eq!(st.grad_std_running, Some(1.0));
    }

    #[test]
    fn streaming_mode_carries_accumulators() {
        let mut s = MetricState::new(0.99);
        s.update_smooth(7.0);
        // no reset between epochs
        assert_eq!(s.update_smooth(2.0).0, 7.0);
    }

    #[test]
    fn config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        for beta in [0.0, 1.0, -0.5, f64::NAN] {
            let c = MetricConfig {
                ema_beta: beta,
                ..MetricConfig::default()
            };
            assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "metrics.ema_beta"));
        }
    }
}
