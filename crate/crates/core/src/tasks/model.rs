use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{dot, Dataset, Labels};
use super::Batch;
use crate::error::{Error, Result};
use crate::num::{compensated_sum, Objective, ParamVector};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Linear predictor with ½-scaled mean squared error.
    SquaredLinear,
    /// Multinomial logistic regression (softmax cross-entropy), with bias.
    Logistic,
    /// Fully connected tanh network with a softmax cross-entropy head.
    MlpTanh,
}

/// Architecture of a model; determines the parameter dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored by `SquaredLinear`.
    pub classes: usize,
    /// Hidden widths, `MlpTanh` only.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn squared_linear(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::SquaredLinear,
            input_dim,
            classes: 1,
            hidden: Vec::new(),
            seed: 0,
        }
    }

    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            classes,
            hidden: Vec::new(),
            seed: 0,
        }
    }

    pub fn mlp_tanh(input_dim: usize, hidden: Vec<usize>, classes: usize, seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::MlpTanh,
            input_dim,
            classes,
            hidden,
            seed,
        }
    }

    /// `(fan_in, fan_out)` of each affine layer, input to output.
    fn layers(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::SquaredLinear => vec![],
            ModelKind::Logistic => vec![(self.input_dim, self.classes)],
            ModelKind::MlpTanh => {
                let mut widths = vec![self.input_dim];
                widths.extend(&self.hidden);
                widths.push(self.classes);
                widths.windows(2).map(|w| (w[0], w[1])).collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::SquaredLinear => self.input_dim,
            _ => self.layers().iter().map(|(i, o)| i * o + o).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Contract("model input dimension must be >= 1".into()));
        }
        if self.kind != ModelKind::SquaredLinear && self.classes == 0 {
            return Err(Error::Contract("classifier needs at least one class".into()));
        }
        if self.kind == ModelKind::MlpTanh && self.hidden.contains(&0) {
            return Err(Error::Contract("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Initial parameters: zeros for the linear models, seeded
    /// `U(−1/√fan_in, 1/√fan_in)` for every MLP weight and bias.
    pub fn init(&self) -> ParamVector {
        match self.kind {
            ModelKind::SquaredLinear | ModelKind::Logistic => ParamVector::zeros(self.param_count()),
            ModelKind::MlpTanh => {
                let mut rng = stream_rng(self.seed, Stream::Init);
                let mut out = Vec::with_capacity(self.param_count());
                for (fan_in, fan_out) in self.layers() {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..fan_in * fan_out + fan_out {
                        out.push(rng.random_range(-bound..=bound));
                    }
                }
                ParamVector::from(out)
            }
        }
    }

    /// SHA-256 of the parameter layout (kind and widths; not the seed).
    pub fn digest(&self) -> [u8; 32] {
        let canon = format!(
            "kind={:?};input={};classes={};hidden={:?};params={}",
            self.kind,
            self.input_dim,
            self.classes,
            self.hidden,
            self.param_count()
        );
        Sha256::digest(canon.as_bytes()).into()
    }
}

/// A model bound to a dataset: the stochastic objective `f(x, z)`.
#[derive(Clone, Debug)]
pub struct ModelObjective {
    spec: ModelSpec,
    data: Arc<Dataset>,
}

impl ModelObjective {
    pub fn new(spec: ModelSpec, data: Arc<Dataset>) -> Result<Self> {
        spec.validate()?;
        if data.d() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                got: data.d(),
            });
        }
        match (spec.kind, data.labels()) {
            (ModelKind::SquaredLinear, Labels::Real(_)) => {}
            (ModelKind::SquaredLinear, Labels::Class { .. }) => {
                return Err(Error::Contract("squared_linear needs real-valued labels".into()))
            }
            (_, Labels::Real(_)) => return Err(Error::Contract("classifier needs class labels".into())),
            (_, Labels::Class { classes, .. }) => {
                if *classes > spec.classes {
                    return Err(Error::Contract(format!(
                        "dataset has {classes} classes but model has {}",
                        spec.classes
                    )));
                }
            }
        }
        Ok(ModelObjective { spec, data })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn squared_linear(&self, w: &[f64], rows: &[usize]) -> Result<(f64, ParamVector)> {
        let Labels::Real(y) = self.data.labels() else {
            unreachable!()
        };
        let d = self.data.d();
        let mut grad = vec![0.0; d];
        let mut losses = Vec::with_capacity(rows.len());
        for &i in rows {
            let x = self.data.row(i);
            let r = dot(x, w) - y[i];
            losses.push(0.5 * r * r);
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi;
            }
        }
        let b = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        let loss = compensated_sum(losses) / b;
        finish(loss, grad, "squared_linear output")
    }

    fn logistic(&self, params: &[f64], rows: &[usize]) -> Result<(f64, ParamVector)> {
        let Labels::Class { ids, .. } = self.data.labels() else {
            unreachable!()
        };
        let (d, c) = (self.data.d(), self.spec.classes);
        let (weights, bias) = params.split_at(c * d);
        let mut grad = vec![0.0; params.len()];
        let mut losses = Vec::with_capacity(rows.len());
        let mut logits = vec![0.0; c];
        for &i in rows {
            let x = self.data.row(i);
            for (k, z) in logits.iter_mut().enumerate() {
                *z = dot(&weights[k * d..(k + 1) * d], x) + bias[k];
            }
            let (loss, probs) = softmax_xent(&logits, ids[i]);
            if !loss.is_finite() {
                return Err(Error::non_finite("logistic logits"));
            }
            losses.push(loss);
            let (gw, gb) = grad.split_at_mut(c * d);
            for k in 0..c {
                let delta = probs[k] - if k == ids[i] { 1.0 } else { 0.0 };
                for (g, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *g += delta * xi;
                }
                gb[k] += delta;
            }
        }
        let b = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        finish(compensated_sum(losses) / b, grad, "logistic output")
    }

    fn mlp(&self, params: &[f64], rows: &[usize]) -> Result<(f64, ParamVector)> {
        let Labels::Class { ids, .. } = self.data.labels() else {
            unreachable!()
        };
        let layers = self.spec.layers();
        let depth = layers.len();
        let mut offsets = Vec::with_capacity(depth);
        let mut off = 0;
        for &(fi, fo) in &layers {
            offsets.push(off);
            off += fi * fo + fo;
        }
        let mut grad = vec![0.0; params.len()];
        let mut losses = Vec::with_capacity(rows.len());

        for &i in rows {
            // activations[0] = input; activations[l] = tanh output of hidden layer l
            let mut activations: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
            activations.push(self.data.row(i).to_vec());
            let mut logits = Vec::new();
            for (l, &(fi, fo)) in layers.iter().enumerate() {
                let w = &params[offsets[l]..offsets[l] + fi * fo];
                let b = &params[offsets[l] + fi * fo..offsets[l] + fi * fo + fo];
                let input = &activations[l];
                let pre: Vec<f64> = (0..fo).map(|k| dot(&w[k * fi..(k + 1) * fi], input) + b[k]).collect();
                if pre.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("mlp layer {l} pre-activation")));
                }
                if l + 1 == depth {
                    logits = pre;
                } else {
                    activations.push(pre.into_iter().map(f64::tanh).collect());
                }
            }
            let (loss, probs) = softmax_xent(&logits, ids[i]);
            if !loss.is_finite() {
                return Err(Error::non_finite(format!("mlp layer {} softmax", depth - 1)));
            }
            losses.push(loss);

            let mut delta: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(k, p)| p - if k == ids[i] { 1.0 } else { 0.0 })
                .collect();
            for l in (0..depth).rev() {
                let (fi, fo) = layers[l];
                let input = &activations[l];
                let (gw, gb) = grad[offsets[l]..offsets[l] + fi * fo + fo].split_at_mut(fi * fo);
                for k in 0..fo {
                    for (g, a) in gw[k * fi..(k + 1) * fi].iter_mut().zip(input) {
                        *g += delta[k] * a;
                    }
                    gb[k] += delta[k];
                }
                if l > 0 {
                    let w = &params[offsets[l]..offsets[l] + fi * fo];
                    delta = (0..fi)
                        .map(|j| {
                            let back: f64 = (0..fo).map(|k| w[k * fi + j] * delta[k]).sum();
                            back * (1.0 - input[j] * input[j])
                        })
                        .collect();
                }
            }
        }
        let b = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        finish(compensated_sum(losses) / b, grad, "mlp gradient")
    }
}

/// Cross-entropy of `logits` against `target` via log-sum-exp, plus softmax
/// probabilities.
fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp = compensated_sum(logits.iter().map(|z| (z - max).exp()));
    let lse = max + sum_exp.ln();
    let probs = logits.iter().map(|z| (z - lse).exp()).collect();
    (lse - logits[target], probs)
}

fn finish(loss: f64, grad: Vec<f64>, context: &str) -> Result<(f64, ParamVector)> {
    if !loss.is_finite() {
        return Err(Error::non_finite(format!("{context} loss")));
    }
    let grad = ParamVector::from(grad);
    grad.ensure_finite(&format!("{context} gradient"))?;
    Ok((loss, grad))
}

impl Objective for ModelObjective {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_grad(&self, x: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        x.ensure_dim(self.dim())?;
        x.ensure_finite("model parameters")?;
        batch.validate(self.data.n())?;
        let rows = batch.indices();
        match self.spec.kind {
            ModelKind::SquaredLinear => self.squared_linear(x.as_slice(), rows),
            ModelKind::Logistic => self.logistic(x.as_slice(), rows),
            ModelKind::MlpTanh => self.mlp(x.as_slice(), rows),
        }
    }

    fn full_batch(&self) -> Batch {
        Batch::full(self.data.n())
    }
}

/// Mean loss and closed-form gradient of `model` at `x` over `batch`.
pub fn objective_eval_grad(
    model: &ModelSpec,
    x: &ParamVector,
    data: &Arc<Dataset>,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    ModelObjective::new(model.clone(), Arc::clone(data))?.loss_grad(x, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{gen_synthetic, SyntheticKind};

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::squared_linear(3).param_count(), 3);
        assert_eq!(ModelSpec::logistic(3, 2).param_count(), 8);
        // 3->4: 16, 4->2: 10
        assert_eq!(ModelSpec::mlp_tanh(3, vec![4], 2, 0).param_count(), 26);
    }

    #[test]
    fn logistic_at_zero_is_ln2() {
        let ds = Arc::new(gen_synthetic(SyntheticKind::LogisticBlobs, 10, 3, 0.5, 2).unwrap());
        let spec = ModelSpec::logistic(3, 2);
        let x = spec.init();
        let batch = Batch::new(vec![1, 4, 7], 0, 0).unwrap();
        let (loss, _) = objective_eval_grad(&spec, &x, &ds, &batch).unwrap();
        assert_eq!(loss, std::f64::consts::LN_2);
    }

    #[test]
    fn squared_loss_vanishes_at_truth() {
        let ds = Arc::new(gen_synthetic(SyntheticKind::LeastSquares, 20, 4, 0.0, 5).unwrap());
        let spec = ModelSpec::squared_linear(4);
        let x = ParamVector::new(ds.ground_truth().unwrap().to_vec()).unwrap();
        let (loss, grad) = objective_eval_grad(&spec, &x, &ds, &Batch::full(20)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn mlp_init_is_bounded_and_seeded() {
        let spec = ModelSpec::mlp_tanh(4, vec![8], 2, 3);
        let x = spec.init();
        assert_eq!(x, spec.init());
        assert_ne!(
            x,
            ModelSpec {
                seed: 4,
                ..spec.clone()
            }
            .init()
        );
        // first layer bound 1/2, second 1/sqrt(8)
        assert!(x.as_slice()[..40].iter().all(|v| v.abs() <= 0.5));
        assert!(x.as_slice()[40..].iter().all(|v| v.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn mismatched_labels_rejected() {
        let ds = Arc::new(gen_synthetic(SyntheticKind::LogisticBlobs, 4, 2, 0.5, 2).unwrap());
        assert!(ModelObjective::new(ModelSpec::squared_linear(2), ds.clone()).is_err());
        assert!(ModelObjective::new(ModelSpec::logistic(3, 2), ds).is_err());
    }

    #[test]
    fn non_finite_intermediate_names_layer() {
        let ds = Arc::new(gen_synthetic(SyntheticKind::LogisticBlobs, 4, 2, 0.5, 2).unwrap());
        let spec = ModelSpec::mlp_tanh(2, vec![3], 2, 0);
        let obj = ModelObjective::new(spec.clone(), ds).unwrap();
        let mut x = spec.init().into_vec();
        x[0] = f64::MAX;
        x[1] = f64::MAX;
        let err = obj.loss_grad(&ParamVector::from(x), &Batch::full(4)).unwrap_err();
        assert!(
            matches!(&err, Error::NonFinite { context } if context.contains("layer 0")),
            "{err}"
        );
    }

    #[test]
    fn digest_ignores_seed_but_not_layout() {
        let a = ModelSpec::mlp_tanh(4, vec![8], 2, 3);
        let b = ModelSpec { seed: 99, ..a.clone() };
        let c = ModelSpec::mlp_tanh(4, vec![9], 2, 3);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
