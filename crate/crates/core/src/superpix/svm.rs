//! One-vs-rest linear SVM trained with Pegasos stochastic subgradient steps.

use std::str::FromStr;

use rand::seq::SliceRandom;

use super::SuperpixelFeature;
use crate::error::{Error, Result};
use crate::raster::{load_tensor, save_tensor, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// `classes x dims`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dims: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 15,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

/// How a superpixel's classification confidence is read off the decision values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfidenceMode {
    /// Best minus runner-up decision value.
    Margin,
    /// The winning decision value itself.
    Raw,
}

impl FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "margin" => Ok(ConfidenceMode::Margin),
            "raw" => Ok(ConfidenceMode::Raw),
            other => Err(Error::Config(format!("unknown confidence mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConfidenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConfidenceMode::Margin => "margin",
            ConfidenceMode::Raw => "raw",
        })
    }
}

/// Trains one binary hinge-loss classifier per class, all visiting the
/// examples in the same seeded order.
///
/// The bias is learned as the weight of an extra constant feature whose
/// value is the mean feature norm, so it is regularized like the other
/// weights and rescaling every feature by `a` together with `lambda` by
/// `a^2` rescales the whole run exactly.
pub fn train_sp_svm(
    feats: &[SuperpixelFeature],
    labels: &[usize],
    num_classes: usize,
    cfg: &SvmConfig,
) -> Result<SvmModel> {
    if feats.is_empty() || feats.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need equally many features and labels, got {} and {}",
            feats.len(),
            labels.len()
        )));
    }
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::InvalidArgument(format!("bad SVM config {cfg:?}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let dims = feats[0].dim();
    if feats.iter().any(|f| f.dim() != dims) {
        return Err(Error::Shape("superpixel features differ in length".into()));
    }
    let mut seen = vec![false; num_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        log::warn!("SVM trained on a single class; confidence ranking will be degenerate");
    }

    let bias_feature = feats
        .iter()
        .map(|f| f.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / feats.len() as f64;
    let bias_feature = if bias_feature > 0.0 {
        bias_feature
    } else {
        1.0
    };

    // each row: dims weights followed by the bias weight
    let stride = dims + 1;
    let mut w = vec![0.0; num_classes * stride];
    let mut rng = crate::seeded_rng(cfg.seed, 0);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let decay = 1.0 - eta * cfg.lambda;
            let x = feats[i].as_slice();
            for c in 0..num_classes {
                let row = &mut w[c * stride..(c + 1) * stride];
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let score = row[..dims].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + row[dims] * bias_feature;
                row.iter_mut().for_each(|v| *v *= decay);
                if y * score < 1.0 {
                    for (v, xv) in row[..dims].iter_mut().zip(x) {
                        *v += eta * y * xv;
                    }
                    row[dims] += eta * y * bias_feature;
                }
            }
        }
    }

    let mut weights = Vec::with_capacity(num_classes * dims);
    let mut bias = Vec::with_capacity(num_classes);
    for row in w.chunks(stride) {
        weights.extend_from_slice(&row[..dims]);
        bias.push(row[dims] * bias_feature);
    }
    if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            msg: "SVM weights became non-finite".into(),
        });
    }
    Ok(SvmModel {
        weights,
        bias,
        dims,
        classes: num_classes,
    })
}

/// `w_c . x + b_c` for every class.
pub fn decision_values(model: &SvmModel, feat: &SuperpixelFeature) -> Result<Vec<f64>> {
    if feat.dim() != model.dims {
        return Err(Error::Shape(format!(
            "feature has {} dims, SVM expects {}",
            feat.dim(),
            model.dims
        )));
    }
    Ok((0..model.classes)
        .map(|c| {
            model.bias[c]
                + model.weights[c * model.dims..(c + 1) * model.dims]
                    .iter()
                    .zip(feat.as_slice())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect())
}

/// Winning class (ties to the lowest index) and its confidence.
pub fn classify_sp(
    model: &SvmModel,
    feat: &SuperpixelFeature,
    mode: ConfidenceMode,
) -> Result<(usize, f64)> {
    let d = decision_values(model, feat)?;
    Ok(pick(&d, mode))
}

pub(crate) fn pick(d: &[f64], mode: ConfidenceMode) -> (usize, f64) {
    let best = crate::labeldist::argmax(d);
    let confidence = match mode {
        ConfidenceMode::Raw => d[best],
        ConfidenceMode::Margin => {
            let runner_up = d
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != best)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if runner_up == f64::NEG_INFINITY {
                d[best]
            } else {
                d[best] - runner_up
            }
        }
    };
    (best, confidence)
}

impl SvmModel {
    /// Writes `<prefix>.weights.cdat` and `<prefix>.bias.cdat`.
    pub fn save(&self, prefix: impl AsRef<std::path::Path>) -> Result<()> {
        let prefix = prefix.as_ref().to_string_lossy().into_owned();
        save_tensor(
            &Tensor::from_f64(vec![self.classes, self.dims], &self.weights)?,
            format!("{prefix}.weights.cdat"),
        )?;
        save_tensor(
            &Tensor::from_f64(vec![self.classes], &self.bias)?,
            format!("{prefix}.bias.cdat"),
        )
    }

    pub fn load(prefix: impl AsRef<std::path::Path>) -> Result<Self> {
        let prefix = prefix.as_ref().to_string_lossy().into_owned();
        let w = load_tensor(format!("{prefix}.weights.cdat"))?;
        let b = load_tensor(format!("{prefix}.bias.cdat"))?;
        if w.shape.len() != 2 || b.shape != [w.shape[0]] {
            return Err(Error::Shape(format!("{prefix}: inconsistent SVM tensors")));
        }
        Ok(SvmModel {
            weights: w.to_f64(),
            bias: b.to_f64(),
            dims: w.shape[1],
            classes: w.shape[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(n: usize, seed: u64) -> (Vec<SuperpixelFeature>, Vec<usize>) {
        let mut rng = crate::seeded_rng(seed, 0);
        let centers = [[2.0, 0.0, 1.0], [-2.0, 1.0, 0.0], [0.0, -2.5, -1.0]];
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            let f: Vec<f64> = centers[c]
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + 0.3 * z
                })
                .collect();
            feats.push(SuperpixelFeature(f));
            labels.push(c);
        }
        (feats, labels)
    }

    fn predictions(model: &SvmModel, feats: &[SuperpixelFeature]) -> Vec<usize> {
        feats
            .iter()
            .map(|f| classify_sp(model, f, ConfidenceMode::Margin).unwrap().0)
            .collect()
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let (feats, labels) = blobs(150, 1);
        let cfg = SvmConfig {
            epochs: 20,
            lambda: 1e-3,
            seed: 4,
        };
        let m = train_sp_svm(&feats, &labels, 3, &cfg).unwrap();
        assert_eq!(predictions(&m, &feats), labels);
    }

    #[test]
    fn joint_rescaling_keeps_predictions() {
        let (feats, labels) = blobs(90, 2);
        let cfg = SvmConfig {
            epochs: 5,
            lambda: 1e-2,
            seed: 8,
        };
        let m1 = train_sp_svm(&feats, &labels, 3, &cfg).unwrap();
        let doubled: Vec<SuperpixelFeature> = feats
            .iter()
            .map(|f| SuperpixelFeature(f.0.iter().map(|v| 2.0 * v).collect()))
            .collect();
        let cfg2 = SvmConfig {
            lambda: 4.0 * cfg.lambda,
            ..cfg
        };
        let m2 = train_sp_svm(&doubled, &labels, 3, &cfg2).unwrap();
        assert_eq!(predictions(&m1, &feats), predictions(&m2, &doubled));
    }

    #[test]
    fn same_seed_same_weights() {
        let (feats, labels) = blobs(60, 3);
        let cfg = SvmConfig::default();
        assert_eq!(
            train_sp_svm(&feats, &labels, 3, &cfg).unwrap(),
            train_sp_svm(&feats, &labels, 3, &cfg).unwrap()
        );
    }

    #[test]
    fn single_class_still_trains() {
        let feats = vec![SuperpixelFeature(vec![1.0, 2.0]); 5];
        let m = train_sp_svm(&feats, &[1; 5], 3, &SvmConfig::default()).unwrap();
        assert_eq!(
            classify_sp(&m, &feats[0], ConfidenceMode::Margin)
                .unwrap()
                .0,
            1
        );
    }

    #[test]
    fn confidence_is_margin() {
        assert_eq!(pick(&[3.0, 1.0], ConfidenceMode::Margin), (0, 2.0));
        assert_eq!(pick(&[1.0, 1.0], ConfidenceMode::Margin), (0, 0.0));
        assert_eq!(pick(&[-1.0, 2.0, 0.5], ConfidenceMode::Raw), (1, 2.0));
        let m = SvmModel {
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
            dims: 2,
            classes: 2,
        };
        let f = SuperpixelFeature(vec![3.0, 1.0]);
        assert_eq!(
            classify_sp(&m, &f, ConfidenceMode::Margin).unwrap(),
            (0, 2.0)
        );
        assert!(classify_sp(&m, &SuperpixelFeature(vec![1.0]), ConfidenceMode::Margin).is_err());
    }

    #[test]
    fn argmax_survives_positive_rescaling() {
        let mut rng = crate::seeded_rng(6, 0);
        for _ in 0..100 {
            let m = SvmModel {
                weights: (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                dims: 3,
                classes: 4,
            };
            let scale = rng.random_range(0.1..10.0);
            let scaled = SvmModel {
                weights: m.weights.iter().map(|w| w * scale).collect(),
                bias: m.bias.iter().map(|b| b * scale).collect(),
                ..m.clone()
            };
            let f = SuperpixelFeature((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            assert_eq!(
                classify_sp(&m, &f, ConfidenceMode::Margin).unwrap().0,
                classify_sp(&scaled, &f, ConfidenceMode::Margin).unwrap().0
            );
        }
    }

    #[test]
    fn persistence() {
        let dir = tempfile::tempdir().unwrap();
        let m = SvmModel {
            weights: vec![0.5, -1.0, 0.25, 2.0],
            bias: vec![1.5, -0.5],
            dims: 2,
            classes: 2,
        };
        m.save(dir.path().join("svm")).unwrap();
        assert_eq!(SvmModel::load(dir.path().join("svm")).unwrap(), m);
    }
}
