use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::compensated_sum;
use crate::rng::{stream_rng, Stream};

/// Targets attached to each row.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// Real-valued regression targets.
    Real(Vec<f64>),
    /// Class indices in `0..classes`.
    Class { ids: Vec<usize>, classes: usize },
}

impl Labels {
    fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Class { ids, .. } => ids.len(),
        }
    }
}

/// Dense `n × d` feature matrix with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Labels,
    truth: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, n: usize, d: usize, features: Vec<f64>, labels: Labels) -> Result<Self> {
        let name = name.into();
        if n == 0 || d == 0 {
            return Err(Error::EmptyDataset(format!("{name}: n={n}, d={d}")));
        }
        if features.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: features.len(),
            });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("{name}: feature at row {}", i / d)));
        }
        match &labels {
            Labels::Real(v) => {
                if let Some(i) = v.iter().position(|y| !y.is_finite()) {
                    return Err(Error::non_finite(format!("{name}: label at row {i}")));
                }
            }
            Labels::Class { ids, classes } => {
                if let Some(i) = ids.iter().position(|c| c >= classes) {
                    return Err(Error::Contract(format!(
                        "{name}: class id {} at row {i} outside [0, {classes})",
                        ids[i]
                    )));
                }
            }
        }
        Ok(Dataset {
            name,
            n,
            d,
            features,
            labels,
            truth: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Number of classes, or `None` for regression targets.
    pub fn classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Class { classes, .. } => Some(*classes),
            Labels::Real(_) => None,
        }
    }

    /// Generating weights of a synthetic least-squares dataset.
    pub fn ground_truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    /// Copy with row `i` replaced; used by index-hygiene tests.
    pub fn with_row(&self, i: usize, row: &[f64]) -> Result<Dataset> {
        let mut features = self.features.clone();
        features[i * self.d..(i + 1) * self.d].copy_from_slice(row);
        let mut out = Dataset::new(self.name.clone(), self.n, self.d, features, self.labels.clone())?;
        out.truth = self.truth.clone();
        Ok(out)
    }
}

/// Synthetic dataset families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `y = X w* + noise ξ` with standard-normal `X`, `w*`, `ξ`.
    LeastSquares,
    /// Two Gaussian clouds at `±u` (unit `u`) with spread `noise`.
    LogisticBlobs,
    /// `n = d` rows `√d e_i` with targets `√d c_i`, so the squared loss is
    /// exactly `½‖x − c‖²`.
    IsotropicQuadratic,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn gen_synthetic(kind: SyntheticKind, n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Contract(format!(
            "synthetic dataset needs n, d >= 1 (n={n}, d={d})"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Contract(format!(
            "noise must be a finite value >= 0, got {noise}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::DataGen);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    match kind {
        SyntheticKind::LeastSquares => {
            let truth: Vec<f64> = (0..d).map(|_| normal()).collect();
            let features: Vec<f64> = (0..n * d).map(|_| normal()).collect();
            let labels = (0..n)
                .map(|i| {
                    let xi = normal();
                    let clean = dot(&features[i * d..(i + 1) * d], &truth);
                    if noise == 0.0 {
                        clean
                    } else {
                        clean + noise * xi
                    }
                })
                .collect();
            let name = format!("least_squares(n={n},d={d},noise={noise},seed={seed})");
            let mut ds = Dataset::new(name, n, d, features, Labels::Real(labels))?;
            ds.truth = Some(truth);
            Ok(ds)
        }
        SyntheticKind::LogisticBlobs => {
            let mut u: Vec<f64> = (0..d).map(|_| normal()).collect();
            let un = dot(&u, &u).sqrt();
            u.iter_mut().for_each(|v| *v /= un);
            let mut features = Vec::with_capacity(n * d);
            let mut ids = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % 2;
                let sign = if class == 1 { 1.0 } else { -1.0 };
                features.extend(u.iter().map(|c| sign * c + noise * normal()));
                ids.push(class);
            }
            let name = format!("logistic_blobs(n={n},d={d},noise={noise},seed={seed})");
            Dataset::new(name, n, d, features, Labels::Class { ids, classes: 2 })
        }
        SyntheticKind::IsotropicQuadratic => {
            if n != d {
                return Err(Error::Contract(format!(
                    "isotropic_quadratic needs n == d (n={n}, d={d})"
                )));
            }
            let scale = (d as f64).sqrt();
            let center: Vec<f64> = (0..d).map(|_| normal()).collect();
            let mut features = vec![0.0; d * d];
            for i in 0..d {
                features[i * d + i] = scale;
            }
            let labels = center.iter().map(|c| scale * c).collect();
            let name = format!("isotropic_quadratic(d={d},seed={seed})");
            let mut ds = Dataset::new(name, n, d, features, Labels::Real(labels))?;
            ds.truth = Some(center);
            Ok(ds)
        }
    }
}

/// Reads a LibSVM file (`label idx:val ...`, 1-based indices) into a dense
/// classification dataset.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "libsvm".into());
    parse_libsvm(&text, &stem)
}

/// Parses LibSVM text. Labels are remapped to contiguous class ids in order
/// of first appearance; the mapping is appended to the dataset name.
pub fn parse_libsvm(text: &str, source: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut ids = Vec::new();
    let mut label_ids: HashMap<u64, usize> = HashMap::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut d = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: lineno, message };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| perr(format!("invalid label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(perr(format!("non-finite label `{label_tok}`")));
        }
        // +1 and 1 are the same class
        let key = (label + 0.0).to_bits();
        let next_id = label_ids.len();
        let id = *label_ids.entry(key).or_insert_with(|| {
            label_names.push(label_tok.trim_start_matches('+').to_string());
            next_id
        });

        let mut row = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("expected idx:val, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| perr(format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(perr("feature indices are 1-based; got 0".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| perr(format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(perr(format!("non-finite feature value `{val}`")));
            }
            if !seen.insert(idx) {
                return Err(perr(format!("duplicate feature index {idx}")));
            }
            d = d.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        ids.push(id);
    }

    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{source}: no data lines")));
    }
    if d == 0 {
        return Err(Error::EmptyDataset(format!("{source}: no features")));
    }
    let n = rows.len();
    let mut features = vec![0.0; n * d];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[i * d + j] = v;
        }
    }
    let mapping: Vec<String> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{l}->{i}"))
        .collect();
    let name = format!("{source} labels[{}] preprocessing=none", mapping.join(","));
    let classes = label_names.len();
    Dataset::new(name, n, d, features, Labels::Class { ids, classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_zero_noise_is_exact() {
        let ds = gen_synthetic(SyntheticKind::LeastSquares, 4, 2, 0.0, 7).unwrap();
        let w = ds.ground_truth().unwrap();
        let Labels::Real(y) = ds.labels() else { panic!() };
        for (i, yi) in y.iter().enumerate() {
            assert_eq!(dot(ds.row(i), w) - yi, 0.0);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        for kind in [SyntheticKind::LeastSquares, SyntheticKind::LogisticBlobs] {
            let a = gen_synthetic(kind, 4, 2, 0.3, 7).unwrap();
            let b = gen_synthetic(kind, 4, 2, 0.3, 7).unwrap();
            let bits = |ds: &Dataset| {
                (0..ds.n())
                    .flat_map(|i| ds.row(i).to_vec())
                    .map(f64::to_bits)
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(&a), bits(&b));
            assert_eq!(a, b);
            let c = gen_synthetic(kind, 4, 2, 0.3, 8).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn isotropic_requires_square() {
        assert!(gen_synthetic(SyntheticKind::IsotropicQuadratic, 3, 2, 0.0, 0).is_err());
        let ds = gen_synthetic(SyntheticKind::IsotropicQuadratic, 3, 3, 0.0, 0).unwrap();
        assert_eq!(ds.row(1), &[0.0, 3f64.sqrt(), 0.0]);
    }

    #[test]
    fn blobs_are_balanced() {
        let ds = gen_synthetic(SyntheticKind::LogisticBlobs, 10, 3, 0.1, 1).unwrap();
        let Labels::Class { ids, classes } = ds.labels() else {
            panic!()
        };
        assert_eq!(*classes, 2);
        assert_eq!(ids.iter().filter(|&&c| c == 1).count(), 5);
    }

    #[test]
    fn libsvm_hand_parse() {
        let ds = parse_libsvm("1 1:0.5 3:-2\n2 2:1\n", "t").unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 3));
        assert_eq!(ds.row(0), &[0.5, 0.0, -2.0]);
        assert_eq!(ds.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(
            ds.labels(),
            &Labels::Class {
                ids: vec![0, 1],
                classes: 2
            }
        );
        assert!(ds.name().contains("1->0,2->1"));
    }

    #[test]
    fn libsvm_remaps_signed_labels() {
        let ds = parse_libsvm("-1 1:1\n+1 1:2\n1 2:3\n-1 1:0\n", "t").unwrap();
        assert_eq!(
            ds.labels(),
            &Labels::Class {
                ids: vec![0, 1, 1, 0],
                classes: 2
            }
        );
    }

    #[test]
    fn libsvm_errors() {
        let err = parse_libsvm("1 1:abc\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_libsvm("1 1:1\n\n2 0:1\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(parse_libsvm("1 4\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_libsvm("1 1:1 1:2\n", "t"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_libsvm("", "t"), Err(Error::EmptyDataset(_))));
        assert!(matches!(parse_libsvm("\n  \n", "t"), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn libsvm_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.svm");
        std::fs::write(&path, "1 1:0.5 3:-2\n2 2:1\n").unwrap();
        let ds = load_libsvm(&path).unwrap();
        assert!(ds.name().starts_with("toy.svm"));
        assert_eq!(ds.d(), 3);
    }

    #[test]
    fn dataset_rejects_bad_values() {
        assert!(Dataset::new("x", 1, 1, vec![f64::NAN], Labels::Real(vec![0.0])).is_err());
        assert!(Dataset::new(
            "x",
            1,
            1,
            vec![1.0],
            Labels::Class {
                ids: vec![2],
                classes: 2
            }
        )
        .is_err());
        assert!(Dataset::new("x", 0, 1, vec![], Labels::Real(vec![])).is_err());
    }
}
