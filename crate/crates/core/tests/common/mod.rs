#![allow(dead_code)]

use std::path::Path;

use optdiag::harness::{parse_config, ExperimentConfig};
use optdiag::num::{Objective, ParamVector};
use optdiag::tasks::Batch;

/// Parses `body` with `run.output_dir` pointed at `dir`.
pub fn config_in(dir: &Path, body: &str) -> ExperimentConfig {
    let mut cfg = parse_config(body).unwrap_or_else(|e| panic!("{e}\n{body}"));
    cfg.run.output_dir = dir.to_path_buf();
    cfg
}

/// Central-difference gradient, one coordinate at a time.
pub fn fd_grad<O: Objective>(obj: &O, x: &ParamVector, batch: &Batch) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.dim());
    for i in 0..x.dim() {
        let h = 1e-6 * x.as_slice()[i].abs().max(1.0);
        let mut plus = x.as_slice().to_vec();
        let mut minus = x.as_slice().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fp = obj.loss(&ParamVector::from(plus), batch).unwrap();
        let fm = obj.loss(&ParamVector::from(minus), batch).unwrap();
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
    l2(&diff) / l2(want).max(f64::MIN_POSITIVE)
}

/// A small 3-class dataset in LibSVM text form.
pub fn three_class_libsvm(n: usize) -> String {
    let mut s = String::new();
    for i in 0..n {
        let c = i % 3;
        let a = ((i * 7919) % 97) as f64 / 97.0 - 0.5;
        let b = ((i * 104729) % 89) as f64 / 89.0 - 0.5;
        s.push_str(&format!(
            "{} 1:{} 2:{} 4:{}\n",
            c + 1,
            a + c as f64,
            b - c as f64,
            a * b
        ));
    }
    s
}
