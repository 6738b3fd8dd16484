use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of every exported record.
pub const FIELDS: [&str; 26] = [
    "step",
    "epoch",
    "loss",
    "eta_t",
    "s_t",
    "inst_gap",
    "avg_gap",
    "exp_gap",
    "inst_smooth",
    "max_smooth",
    "exp_smooth",
    "update_corr",
    "update_corr_rs",
    "loss_diff",
    "cum_update_corr",
    "cum_update_corr_rs",
    "cum_loss_diff",
    "full_loss",
    "convexity_ratio",
    "ratio_den_sign",
    "grad_l1",
    "grad_l2",
    "grad_std_running",
    "param_l2",
    "sharpness",
    "batch_digest",
];

/// Fields that can be plotted (everything but the batch digest).
pub const NUMERIC_FIELDS: [&str; 25] = [
    "step",
    "epoch",
    "loss",
    "eta_t",
    "s_t",
    "inst_gap",
    "avg_gap",
    "exp_gap",
    "inst_smooth",
    "max_smooth",
    "exp_smooth",
    "update_corr",
    "update_corr_rs",
    "loss_diff",
    "cum_update_corr",
    "cum_update_corr_rs",
    "cum_loss_diff",
    "full_loss",
    "convexity_ratio",
    "ratio_den_sign",
    "grad_l1",
    "grad_l2",
    "grad_std_running",
    "param_l2",
    "sharpness",
];

/// One row of measurements at step `t`. `None` means "not measured here".
///
/// `eta_t` and `s_t` are the step size and scale applied to the move out of
/// `x_t`; the correlation family refers to the move into `x_t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub eta_t: Option<f64>,
    pub s_t: Option<f64>,
    pub inst_gap: Option<f64>,
    pub avg_gap: Option<f64>,
    pub exp_gap: Option<f64>,
    pub inst_smooth: Option<f64>,
    pub max_smooth: Option<f64>,
    pub exp_smooth: Option<f64>,
    pub update_corr: Option<f64>,
    pub update_corr_rs: Option<f64>,
    pub loss_diff: Option<f64>,
    pub cum_update_corr: f64,
    pub cum_update_corr_rs: f64,
    pub cum_loss_diff: f64,
    pub full_loss: Option<f64>,
    pub convexity_ratio: Option<f64>,
    pub ratio_den_sign: Option<f64>,
    pub grad_l1: f64,
    pub grad_l2: f64,
    pub grad_std_running: Option<f64>,
    pub param_l2: f64,
    pub sharpness: Option<f64>,
    pub batch_digest: String,
}

/// Seventeen significant digits; parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl MetricRecord {
    /// Value of a numeric field by name; `None` for an unknown name.
    pub fn get(&self, field: &str) -> Option<Option<f64>> {
        Some(match field {
            "step" => Some(self.step as f64),
            "epoch" => Some(self.epoch as f64),
            "loss" => Some(self.loss),
            "eta_t" => self.eta_t,
            "s_t" => self.s_t,
            "inst_gap" => self.inst_gap,
            "avg_gap" => self.avg_gap,
            "exp_gap" => self.exp_gap,
            "inst_smooth" => self.inst_smooth,
            "max_smooth" => self.max_smooth,
            "exp_smooth" => self.exp_smooth,
            "update_corr" => self.update_corr,
            "update_corr_rs" => self.update_corr_rs,
            "loss_diff" => self.loss_diff,
            "cum_update_corr" => Some(self.cum_update_corr),
            "cum_update_corr_rs" => Some(self.cum_update_corr_rs),
            "cum_loss_diff" => Some(self.cum_loss_diff),
            "full_loss" => self.full_loss,
            "convexity_ratio" => self.convexity_ratio,
            "ratio_den_sign" => self.ratio_den_sign,
            "grad_l1" => Some(self.grad_l1),
            "grad_l2" => Some(self.grad_l2),
            "grad_std_running" => self.grad_std_running,
            "param_l2" => Some(self.param_l2),
            "sharpness" => self.sharpness,
            _ => return None,
        })
    }

    /// Cells in [`FIELDS`] order.
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.epoch.to_string(),
            fmt_f64(self.loss),
            fmt_opt(self.eta_t),
            fmt_opt(self.s_t),
            fmt_opt(self.inst_gap),
            fmt_opt(self.avg_gap),
            fmt_opt(self.exp_gap),
            fmt_opt(self.inst_smooth),
            fmt_opt(self.max_smooth),
            fmt_opt(self.exp_smooth),
            fmt_opt(self.update_corr),
            fmt_opt(self.update_corr_rs),
            fmt_opt(self.loss_diff),
            fmt_f64(self.cum_update_corr),
            fmt_f64(self.cum_update_corr_rs),
            fmt_f64(self.cum_loss_diff),
            fmt_opt(self.full_loss),
            fmt_opt(self.convexity_ratio),
            fmt_opt(self.ratio_den_sign),
            fmt_f64(self.grad_l1),
            fmt_f64(self.grad_l2),
            fmt_opt(self.grad_std_running),
            fmt_f64(self.param_l2),
            fmt_opt(self.sharpness),
            self.batch_digest.clone(),
        ]
    }

    /// Inverse of [`MetricRecord::csv_cells`]; `line` is used in errors.
    pub fn from_csv_cells(cells: &[&str], line: usize) -> Result<Self> {
        if cells.len() != FIELDS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} cells, got {}", FIELDS.len(), cells.len()),
            });
        }
        let perr = |i: usize, c: &str| Error::Parse {
            line,
            message: format!("bad value `{c}` for {}", FIELDS[i]),
        };
        let int = |i: usize| cells[i].parse::<u64>().map_err(|_| perr(i, cells[i]));
        let req = |i: usize| cells[i].parse::<f64>().map_err(|_| perr(i, cells[i]));
        let opt = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() {
                Ok(None)
            } else {
                req(i).map(Some)
            }
        };
        Ok(MetricRecord {
            step: int(0)?,
            epoch: int(1)?,
            loss: req(2)?,
            eta_t: opt(3)?,
            s_t: opt(4)?,
            inst_gap: opt(5)?,
            avg_gap: opt(6)?,
            exp_gap: opt(7)?,
            inst_smooth: opt(8)?,
            max_smooth: opt(9)?,
            exp_smooth: opt(10)?,
            update_corr: opt(11)?,
            update_corr_rs: opt(12)?,
            loss_diff: opt(13)?,
            cum_update_corr: req(14)?,
            cum_update_corr_rs: req(15)?,
            cum_loss_diff: req(16)?,
            full_loss: opt(17)?,
            convexity_ratio: opt(18)?,
            ratio_den_sign: opt(19)?,
            grad_l1: req(20)?,
            grad_l2: req(21)?,
            grad_std_running: opt(22)?,
            param_l2: req(23)?,
            sharpness: opt(24)?,
            batch_digest: cells[25].to_string(),
        })
    }
}
